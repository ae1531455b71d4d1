"""Closed-loop simulation of the drive with a harmonic controller.

Per sample ``k``:

1. speed and torque come from the scenario profiles (speed plus noise),
2. ``y_k`` is measured from the plant state at ``k`` (NVH path, disturbance, noise),
3. the controller adapts with the output that produced ``y_k`` and computes a new one,
4. the structure wires the HC signal into the FOC loop and the plant advances one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import HarmonicAmplitudeSeries, IndicatorConfig, Indicators, harmonic_series, indicators
from .errors import ConfigurationError, NumericalBlowUp, SingularityError
from .estimator import DeltaEstimator, HarmonicEstimator, build_regressor
from .fd import FdConfig, FdController
from .lut import FeedforwardLut, OperatingPoint, ProbeRecord
from .phasor import ActiveLearningConfig as AlCfg
from .phasor import TWO_PI, PhasorPair, control_law, excitation_law, excitation_signal
from .plant import DisturbanceSpec, FocController, NoiseSource, NoiseSpec, NvhPath, PsmModel, PsmParams
from .quality import QualityEvaluator
from .scenario import Scenario, profile_value
from .structures import DEFAULT_OUTPUT_SCALE, Structure, StructureConfig, build_structure

STRUCTURE_OF = {"td_s1": "S1_voltage", "td_s2": "S2_measured_current", "td_s3": "S3_reference_current"}


# -- controllers ------------------------------------------------------------


class NoController:
    q = 0

    def step(self, k: int, y: float, theta_el: float, op: OperatingPoint) -> float:
        return 0.0


class FixedOutputController:
    """Constant output phasors (used for probing the plant)."""

    def __init__(self, orders: Sequence[int], theta_u: Sequence[Sequence[float]], scales: Sequence[float]):
        self.orders = list(orders)
        self.theta_u = [tuple(map(float, t)) for t in theta_u]
        self.scales = list(scales)
        self.q = len(self.orders)

    def step(self, k, y, theta_el, op):
        s = 0.0
        for m, (us, uc), sc in zip(self.orders, self.theta_u, self.scales):
            ph = m * theta_el
            s += sc * (math.sin(ph) * us + math.cos(ph) * uc)
        return s


class TdController:
    """Time-domain adaptive HC, optionally with delta learning, active learning and LUT adaptation."""

    def __init__(
        self,
        orders: Sequence[int],
        estimator: HarmonicEstimator,
        scales: Sequence[float],
        lut: FeedforwardLut | None = None,
        active_learning: AlCfg | None = None,
        quality: QualityEvaluator | None = None,
        adapt_lut: bool = False,
        beta: float = 0.5,
        max_step: float | None = None,
    ):
        self.orders = list(orders)
        self.q = len(self.orders)
        self.est = estimator
        self.scales = list(scales)
        self.lut = lut
        self.delta = isinstance(estimator, DeltaEstimator)
        if self.delta and lut is None:
            raise ConfigurationError("delta learning needs a feedforward LUT")
        self.al = active_learning
        self.quality = quality
        self.adapt_lut = adapt_lut
        if adapt_lut and quality is None:
            raise ConfigurationError("LUT adaptation needs the quality evaluator")
        self.beta = beta
        self.max_step = max_step
        self.theta_u: list[PhasorPair] = [PhasorPair(0.0, 0.0)] * self.q
        self.rho = [1.0] * self.q
        self.eta = 1.0
        self.singular_holds = 0
        self.lut_updates = 0
        self._started = False

    def _rho_for_lut(self) -> list[float]:
        if self.max_step is None:
            return self.rho
        cap = self.max_step / self.beta
        return [1.0 - min(1.0 - r, cap) if r < 1.0 else r for r in self.rho]

    def step(self, k, y, theta_el, op):
        phases = [m * theta_el for m in self.orders]
        if self.delta and not self._started:
            self.est.set_feedforward(self.lut.query(op))
        if self._started:
            regs = [build_regressor(ph, tu) for ph, tu in zip(phases, self.theta_u)]
            eta = self.est.eta(self.theta_u)
            self.eta = eta
            self.est.adapt(y, regs, eta)
            if self.quality is not None and math.isfinite(y):
                self.rho = [r.rho for r in self.quality.update(y, regs, eta)]
            if self.adapt_lut and self.lut.adapt(op, self.est.delta, self._rho_for_lut(), self.beta):
                self.lut_updates += 1
        self._started = True
        if self.delta:
            self.est.set_feedforward(self.lut.query(op))
        new = []
        s = 0.0
        for i, ph in enumerate(phases):
            g = self.est.transfer(i)
            tp = self.est.disturbance(i)
            try:
                if self.al is not None and self.delta:
                    y_des = excitation_signal(k, None, self.rho[i], self.est.delta_norm(i), self.al)
                    tu = excitation_law(g, tp, y_des, self.est.eps_sing)
                else:
                    tu = control_law(g, tp, self.est.eps_sing)
            except SingularityError:
                self.singular_holds += 1
                tu = self.theta_u[i]
            new.append(tu)
            s += self.scales[i] * (math.sin(ph) * tu[0] + math.cos(ph) * tu[1])
        self.theta_u = new
        return s

    def state(self):
        x = [self.est.parameters(i) for i in range(self.q)]
        dx = [list(self.est.delta[i]) for i in range(self.q)] if self.delta else None
        return x, dx


class FdWrapper:
    def __init__(self, orders, fd: FdController, scales):
        self.orders = list(orders)
        self.q = len(self.orders)
        self.fd = fd
        self.scales = list(scales)

    def step(self, k, y, theta_el, op):
        self.fd.observe(y, theta_el)
        s = 0.0
        for m, st, sc in zip(self.orders, self.fd.modes, self.scales):
            ph = m * theta_el
            s += sc * (math.sin(ph) * st.theta_u.real + math.cos(ph) * st.theta_u.imag)
        return s

    @property
    def theta_u(self):
        return self.fd.theta_u

    def state(self):
        return [[st.g_hat.real, st.g_hat.imag, 0.0, 0.0] for st in self.fd.modes], None


# -- trace ------------------------------------------------------------------


SCALAR_COLUMNS = (
    "time_s", "speed_rpm", "torque_pu", "theta_el_rad", "i_d_a", "i_q_a", "i_k_d_a", "i_k_q_a",
    "u_d_v", "u_q_v", "u_k_d_v", "u_k_q_v", "y", "hc_out", "eta",
)


@dataclass
class SimTrace:
    orders: list[int]
    ts: float
    scalars: np.ndarray  # (N, len(SCALAR_COLUMNS))
    x: np.ndarray  # (N, q, 4) estimate used for the output at each step
    dx: np.ndarray  # (N, q, 4)
    theta_u: np.ndarray  # (N, q, 2)
    rho: np.ndarray  # (N, q)

    def col(self, name: str) -> np.ndarray:
        return self.scalars[:, SCALAR_COLUMNS.index(name)]

    @property
    def time(self) -> np.ndarray:
        return self.col("time_s")

    def columns(self) -> list[str]:
        cols = list(SCALAR_COLUMNS)
        for m in self.orders:
            cols += [f"x1_m{m}", f"x2_m{m}", f"theta_p_s_m{m}", f"theta_p_c_m{m}"]
            cols += [f"dx1_m{m}", f"dx2_m{m}", f"dx3_m{m}", f"dx4_m{m}"]
            cols += [f"theta_u_s_m{m}", f"theta_u_c_m{m}", f"rho_m{m}"]
        return cols

    def table(self) -> np.ndarray:
        parts = [self.scalars]
        for i in range(len(self.orders)):
            parts += [self.x[:, i], self.dx[:, i], self.theta_u[:, i], self.rho[:, i : i + 1]]
        return np.hstack(parts)


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    trace: SimTrace
    series: HarmonicAmplitudeSeries
    lut_before: FeedforwardLut | None = None
    lut_after: FeedforwardLut | None = None
    stats: dict = field(default_factory=dict)

    def indicators(self, order: int | None = None, cfg: IndicatorConfig = IndicatorConfig()) -> Indicators:
        order = self.series.orders[0] if order is None else order
        return indicators(self.series.time, self.series.column(order), cfg)


# -- assembly ---------------------------------------------------------------


def plant_params(sc: Scenario) -> PsmParams:
    p = sc.plant
    return PsmParams(p.R_ohm, p.Ld_uH * 1e-6, p.Lq_uH * 1e-6, p.psi_pm_mWb * 1e-3, p.pole_pairs)


def structure_variant(sc: Scenario) -> str | None:
    if sc.controller == "none":
        return None
    return STRUCTURE_OF.get(sc.controller, StructureConfig(sc.structure.variant).variant)


def output_scales(sc: Scenario, variant: str | None) -> list[float]:
    base = DEFAULT_OUTPUT_SCALE.get(variant, 1.0) if variant else 1.0
    v = sc.structure.output_scale
    if v is None:
        return [base] * len(sc.orders)
    if isinstance(v, dict):
        return [float(v.get(m, base)) for m in sc.orders]
    return [float(v)] * len(sc.orders)


def _per_order(value, q: int, width: int, what: str) -> list[list[float]]:
    if value and isinstance(value[0], (list, tuple)):
        if len(value) != q:
            raise ConfigurationError(f"{what}: expected {q} entries, got {len(value)}")
        rows = [list(map(float, r)) for r in value]
    else:
        rows = [list(map(float, value))] * q
    for r in rows:
        if len(r) != width:
            raise ConfigurationError(f"{what}: entries must have {width} values")
    return rows


def initial_parameters(sc: Scenario) -> list[list[float]]:
    q = len(sc.orders)
    g = _per_order(sc.estimator.g_init, q, 2, "estimator.g_init")
    p = _per_order(sc.estimator.theta_p_init, q, 2, "estimator.theta_p_init")
    return [gi + pi for gi, pi in zip(g, p)]


def build_controller(sc: Scenario, scales: list[float], lut: FeedforwardLut | None):
    e = sc.estimator
    q = len(sc.orders)
    if sc.controller == "none":
        return NoController()
    if sc.controller == "fd":
        g0 = [complex(r[0], r[1]) for r in _per_order(e.g_init, q, 2, "estimator.g_init")]
        cfg = FdConfig(sc.fd.mu, sc.fd.g_step, sc.fd.update_periods, eps_sing=e.eps_sing)
        return FdWrapper(sc.orders, FdController(sc.orders, g0, cfg), scales)
    gamma_g = e.gamma_g if e.adapt_transfer else 0.0
    al = None
    if sc.active_learning.enabled:
        a = sc.active_learning
        al = AlCfg(TWO_PI * a.freq1_hz, TWO_PI * a.freq2_hz, a.delta, a.threshold, sc.ts)
    if sc.controller in STRUCTURE_OF:
        est = HarmonicEstimator(initial_parameters(sc), gamma_g, e.gamma_p, e.eps_sing, e.normalize)
        return TdController(sc.orders, est, scales)
    if lut is None:
        raise ConfigurationError(f"controller {sc.controller} needs a feedforward LUT (lut.dir)")
    est = DeltaEstimator(q, gamma_g, e.gamma_p, e.sigma, e.eps_sing)
    adapt = sc.controller == "td_delta_adaptive_lut"
    quality = None
    if adapt or al is not None:
        quality = QualityEvaluator(q, gamma_g or e.gamma_p, e.gamma_p, sc.quality.time_constants, sc.quality.decimation)
    return TdController(sc.orders, est, scales, lut, al, quality, adapt, sc.lut.beta, sc.lut.max_step)


def load_lut(sc: Scenario) -> FeedforwardLut | None:
    if sc.lut.dir is None:
        return None
    return FeedforwardLut.load(sc.lut.dir, sc.orders)


# -- main loop --------------------------------------------------------------


def simulate(
    sc: Scenario,
    seed: int | None = None,
    lut: FeedforwardLut | None = None,
    controller=None,
    variant: str | None = "auto",
    abort_abs_y: float | None = None,
) -> SimResult:
    """Run one scenario for one noise seed.

    ``lut`` overrides the scenario's LUT directory; it is copied, so the
    caller's object is left untouched. ``controller`` replaces the one built
    from the scenario (``variant`` then selects the structure). With
    ``abort_abs_y`` the run stops early once ``|y|`` exceeds that level and
    the trace is truncated (``stats["aborted_at"]`` holds the step).
    """
    sc.validate()
    seed = sc.seeds[0] if seed is None else seed
    prm = plant_params(sc)
    ts = sc.ts
    prm.check_step(ts)
    if variant == "auto":
        variant = structure_variant(sc)
    scales = output_scales(sc, variant)
    if lut is None and sc.controller in ("td_delta", "td_delta_adaptive_lut") and controller is None:
        lut = load_lut(sc)
    lut = lut.copy() if lut is not None else None
    lut_before = lut.copy() if lut is not None else None
    ctrl = controller if controller is not None else build_controller(sc, scales, lut)

    s_cfg = None
    if variant is not None:
        st = sc.structure
        s_cfg = StructureConfig(variant, st.r_factor, st.l_factor, st.delay_samples)
    structure: Structure = build_structure(s_cfg, prm, ts)
    plant = PsmModel(prm, ts)
    p = sc.plant
    foc = FocController.from_bandwidth(prm, ts, p.foc_bandwidth_hz, p.u_max_v)
    nvh = NvhPath(TWO_PI * sc.nvh.natural_freq_hz, sc.nvh.damping, ts, sc.nvh.gain)
    dist = DisturbanceSpec(list(sc.disturbance))
    noise = NoiseSource(NoiseSpec(sc.noise.speed_rpm, sc.noise.current_a, sc.noise.y, seed))

    n = sc.n_steps
    q = len(sc.orders)
    scal = np.empty((n, len(SCALAR_COLUMNS)))
    xs = np.zeros((n, q, 4))
    dxs = np.zeros((n, q, 4))
    tus = np.zeros((n, q, 2))
    rhos = np.ones((n, q))
    has_state = hasattr(ctrl, "state")
    rated = p.rated_current_a
    rpm2el = prm.p * TWO_PI / 60.0
    theta_el = 0.0
    speed_prof = sc.speed_profile
    torque_prof = sc.torque_profile
    aborted_at = None
    for k in range(n):
        t = k * ts
        n_cmd = profile_value(speed_prof, t)
        torque = profile_value(torque_prof, t)
        n_act = n_cmd + noise.speed()
        omega = rpm2el * n_act
        i_d, i_q = plant.i_d, plant.i_q
        nd, nq = noise.currents()
        y = nvh.step(i_q) + dist.value(theta_el, n_cmd, torque) + noise.y()
        if abort_abs_y is not None and abs(y) > abort_abs_y:
            aborted_at = k
            break
        op = OperatingPoint(n_cmd, torque)
        s = ctrl.step(k, y, theta_el, op)
        if not math.isfinite(s):
            raise NumericalBlowUp(k, "HC output")
        structure.set_output(s)
        i_seen = structure.feedback((i_d + nd, i_q + nq))
        i_ref = structure.reference((0.0, torque * rated))
        u_k = foc.step(i_ref, i_seen, omega)
        u = structure.voltage(u_k, omega)
        plant.step(u[0], u[1], omega)
        structure.advance(omega)
        if not (math.isfinite(plant.i_d) and math.isfinite(plant.i_q)):
            raise NumericalBlowUp(k + 1, "PSM current")
        row = scal[k]
        row[0] = t
        row[1] = n_act
        row[2] = torque
        row[3] = theta_el
        row[4] = i_d
        row[5] = i_q
        row[6] = i_seen[0]
        row[7] = i_seen[1]
        row[8] = u[0]
        row[9] = u[1]
        row[10] = u_k[0]
        row[11] = u_k[1]
        row[12] = y
        row[13] = s
        row[14] = getattr(ctrl, "eta", 1.0)
        if has_state:
            x, dx = ctrl.state()
            xs[k] = x
            if dx is not None:
                dxs[k] = dx
            tus[k] = ctrl.theta_u
            r = getattr(ctrl, "rho", None)
            if r is not None:
                rhos[k] = r
        theta_el += omega * ts

    if aborted_at is not None:
        scal, xs, dxs, tus, rhos = (a[:aborted_at] for a in (scal, xs, dxs, tus, rhos))
    trace = SimTrace(list(sc.orders), ts, scal, xs, dxs, tus, rhos)
    series = harmonic_series(trace.time, trace.col("theta_el_rad"), trace.col("y"), sc.orders)
    stats = {
        "singular_holds": getattr(ctrl, "singular_holds", 0),
        "lut_updates": getattr(ctrl, "lut_updates", 0),
        "aborted_at": aborted_at,
    }
    lut_after = getattr(ctrl, "lut", None)
    return SimResult(sc, seed, trace, series, lut_before, lut_after.copy() if lut_after is not None else None, stats)


# -- probing for offline identification ---------------------------------------


def probe_operating_point(
    sc: Scenario,
    op: OperatingPoint,
    theta_u: Sequence[Sequence[float]],
    variant: str,
    settle_s: float = 0.15,
    measure_s: float = 0.15,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Steady-state output phasor per order for constant ``theta_u`` (normalized units)."""
    from dataclasses import replace

    from .scenario import Segment

    probe = replace(
        sc,
        controller="td_s1",
        duration_s=settle_s + measure_s,
        speed_profile=[Segment(0.0, op.speed_rpm)],
        torque_profile=[Segment(0.0, op.torque_pu)],
    )
    scales = output_scales(sc, variant)
    ctrl = FixedOutputController(sc.orders, theta_u, scales)
    res = simulate(probe, seed, controller=ctrl, variant=variant)
    sel = res.series.time > settle_s
    if not np.any(sel):
        raise ConfigurationError("probe measurement window contains no complete electrical period")
    amp = res.series.amplitude[sel]
    ph = res.series.phase[sel]
    s = np.mean(amp * np.cos(ph), axis=0)
    c = np.mean(amp * np.sin(ph), axis=0)
    return list(zip(s.tolist(), c.tolist()))


def collect_probes(
    sc: Scenario,
    speeds: Sequence[float],
    torques: Sequence[float],
    probes: Sequence[Sequence[float]] = ((0.0, 0.0), (0.3, 0.0), (0.0, 0.3)),
    variant: str | None = None,
    seed: int = 0,
    settle_s: float = 0.15,
    measure_s: float = 0.15,
) -> list[ProbeRecord]:
    """Probe every (speed, torque) node with each ``theta_u`` (applied to all orders at once).

    With several orders a single probe drives all of them; the orders are
    separated by the per-period DFT.
    """
    variant = variant or StructureConfig(sc.structure.variant).variant
    out = []
    for n in speeds:
        for t in torques:
            op = OperatingPoint(float(n), float(t))
            for tu in probes:
                ys = probe_operating_point(sc, op, [tu] * len(sc.orders), variant, settle_s, measure_s, seed)
                for m, y in zip(sc.orders, ys):
                    out.append(ProbeRecord(op, m, (float(tu[0]), float(tu[1])), y))
    return out
