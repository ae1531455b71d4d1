"""Wiring of the harmonic controller output into the FOC current loop.

Every structure acts on the q axis only and exposes the same per-step
interface used by the simulator:

1. :meth:`set_output` receives the HC signal for this step (already scaled
   to volts or amperes),
2. :meth:`reference` and :meth:`feedback` give what controller ``K`` sees,
3. :meth:`voltage` adds any HC voltage to ``u_K``,
4. :meth:`advance` moves internal model states after the plant step.

S1 adds a voltage and removes its effect from K's feedback through a
parallel linear PSM model. S2 converts a current command into a voltage
through a causal (delayed) inverse PSM model and removes the delayed
current from K's feedback. S3 adds the current command to K's reference.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigurationError
from .plant import PsmParams, psm_step

VARIANTS = ("S1_voltage", "S2_measured_current", "S3_reference_current")
ALIASES = {"s1": "S1_voltage", "s2": "S2_measured_current", "s3": "S3_reference_current"}

# HC output scale per structure, so that the transfer phasor seen by the
# estimator is of order one at the default operating points.
DEFAULT_OUTPUT_SCALE = {"S1_voltage": 0.3, "S2_measured_current": 1.0, "S3_reference_current": 1.0}


@dataclass(frozen=True)
class StructureConfig:
    variant: str = "S1_voltage"
    r_factor: float = 1.0
    l_factor: float = 1.0
    delay: int = 1

    def __post_init__(self):
        v = ALIASES.get(self.variant.lower(), self.variant)
        if v not in VARIANTS:
            raise ConfigurationError(f"unknown structure {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", v)
        if self.delay < 1:
            raise ConfigurationError("inverse-model delay must be >= 1 sample")
        if not (self.r_factor > 0 and self.l_factor > 0):
            raise ConfigurationError("model mismatch factors must be > 0")


class Structure:
    """Nominal loop: the HC output is ignored."""

    variant = "none"

    def __init__(self, prm: PsmParams, ts: float):
        self.prm = prm
        self.ts = ts
        self.out = 0.0

    def set_output(self, value: float) -> None:
        self.out = value

    def reference(self, i_ref: Sequence[float]) -> tuple[float, float]:
        return i_ref[0], i_ref[1]

    def feedback(self, i_meas: Sequence[float]) -> tuple[float, float]:
        return i_meas[0], i_meas[1]

    def voltage(self, u_k: Sequence[float], omega_el: float) -> tuple[float, float]:
        return u_k[0], u_k[1]

    def advance(self, omega_el: float) -> None:
        pass

    @property
    def hc_current(self) -> tuple[float, float]:
        """HC current component removed from K's feedback (zero by default)."""
        return 0.0, 0.0


class VoltageStructure(Structure):
    """S1: ``u_PSM = u_K + u_HC``; K sees ``i_PSM - G_hat[u_HC]``."""

    variant = "S1_voltage"

    def __init__(self, prm: PsmParams, ts: float, model: PsmParams | None = None):
        super().__init__(prm, ts)
        self.model = model or prm
        self.i_hc = (0.0, 0.0)

    def feedback(self, i_meas):
        return i_meas[0] - self.i_hc[0], i_meas[1] - self.i_hc[1]

    def voltage(self, u_k, omega_el):
        return u_k[0], u_k[1] + self.out

    def advance(self, omega_el):
        self.i_hc = psm_step(self.i_hc, (0.0, self.out), omega_el, self.model, self.ts, psi_pm=0.0)

    @property
    def hc_current(self):
        return self.i_hc


class InverseModelStructure(Structure):
    """S2: the current command is delayed by ``d`` samples and inverted through the PSM model.

    With ``j_k`` the delayed command, the inverse of the Euler model gives
    ``u_q = Lq (j_{k+1} - j_k)/ts + R j_k`` and the d-axis coupling
    compensation ``u_d = -omega Lq j_k``. K sees ``i_PSM - j_k``.
    """

    variant = "S2_measured_current"

    def __init__(self, prm: PsmParams, ts: float, model: PsmParams | None = None, delay: int = 1):
        super().__init__(prm, ts)
        if delay < 1:
            raise ConfigurationError("inverse-model delay must be >= 1 sample")
        self.model = model or prm
        self.delay = delay
        # hist[0] = c_{k-d}, hist[-1] = c_k after set_output
        self.hist: deque[float] = deque([0.0] * (delay + 1), maxlen=delay + 1)

    def set_output(self, value):
        self.out = value
        self.hist.append(value)

    @property
    def j_now(self) -> float:
        return self.hist[0]

    @property
    def j_next(self) -> float:
        return self.hist[1]

    def feedback(self, i_meas):
        return i_meas[0], i_meas[1] - self.j_now

    def voltage(self, u_k, omega_el):
        m = self.model
        j0 = self.j_now
        u_q = m.Lq * (self.j_next - j0) / self.ts + m.R * j0
        u_d = -omega_el * m.Lq * j0
        return u_k[0] + u_d, u_k[1] + u_q

    @property
    def hc_current(self):
        return 0.0, self.j_now


class ReferenceStructure(Structure):
    """S3: ``i_K = i_ref + i_HC``; the K closed loop is part of the estimated plant."""

    variant = "S3_reference_current"

    def reference(self, i_ref):
        return i_ref[0], i_ref[1] + self.out


def s3_wire(i_hc: float, i_ref: Sequence[float]) -> tuple[float, float]:
    return i_ref[0], i_ref[1] + i_hc


def build_structure(cfg: StructureConfig | None, prm: PsmParams, ts: float) -> Structure:
    if cfg is None:
        return Structure(prm, ts)
    model = prm.scaled(cfg.r_factor, cfg.l_factor)
    if cfg.variant == "S1_voltage":
        return VoltageStructure(prm, ts, model)
    if cfg.variant == "S2_measured_current":
        return InverseModelStructure(prm, ts, model, cfg.delay)
    return ReferenceStructure(prm, ts)
