"""Adaptive time-domain harmonic control for NVH reduction in a PSM drive."""

from .analysis import (
    HarmonicAmplitudeSeries,
    IndicatorConfig,
    Indicators,
    harmonic_series,
    indicators,
    lyapunov_monitor,
    period_dft,
    theorem_certificate,
)
from .errors import (
    AnalysisError,
    ConfigurationError,
    HarmonicControlError,
    IdentificationError,
    NumericalBlowUp,
    ScenarioError,
    SingularityError,
    UsageError,
)
from .estimator import DeltaEstimator, HarmonicEstimator
from .fd import FdConfig, FdController
from .lut import FeedforwardLut, OperatingPoint, ProbeRecord, identify_offline
from .phasor import PhasorPair, TransferPhasor, control_law, excitation_law
from .quality import QualityEvaluator, convergence_rate
from .scenario import Scenario, dump_scenario, load_scenario, parse_scenario
from .sim import SimResult, collect_probes, simulate

__all__ = [
    "AnalysisError",
    "ConfigurationError",
    "DeltaEstimator",
    "FdConfig",
    "FdController",
    "FeedforwardLut",
    "HarmonicAmplitudeSeries",
    "HarmonicControlError",
    "HarmonicEstimator",
    "IdentificationError",
    "IndicatorConfig",
    "Indicators",
    "NumericalBlowUp",
    "OperatingPoint",
    "PhasorPair",
    "ProbeRecord",
    "QualityEvaluator",
    "Scenario",
    "ScenarioError",
    "SimResult",
    "SingularityError",
    "TransferPhasor",
    "UsageError",
    "collect_probes",
    "control_law",
    "convergence_rate",
    "dump_scenario",
    "excitation_law",
    "harmonic_series",
    "identify_offline",
    "indicators",
    "load_scenario",
    "lyapunov_monitor",
    "parse_scenario",
    "period_dft",
    "simulate",
    "theorem_certificate",
]
