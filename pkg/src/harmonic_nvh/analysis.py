"""Post-processing: per-period harmonic amplitudes, performance indicators,
and the Lyapunov monitor for the adaptive law on the algebraic plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AnalysisError, ConfigurationError

TWO_PI = 2.0 * math.pi
DEFAULT_RESAMPLE = 256


# -- per-period DFT --------------------------------------------------------


def period_dft(samples: Sequence[float], orders: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Single-bin Fourier projection of one period sampled uniformly in angle.

    ``samples[k]`` is taken at angle ``2 pi k / N``. Returns ``(amplitude,
    phase)`` per order where ``A sin(m theta + phi)`` yields ``(A, phi)``.
    """
    y = np.asarray(samples, dtype=float)
    n = y.size
    if not orders:
        raise AnalysisError("at least one harmonic order is required")
    if n <= 2 * max(orders):
        raise AnalysisError(f"{n} samples cannot resolve order {max(orders)} (need more than {2 * max(orders)})")
    ang = TWO_PI * np.arange(n) / n
    m = np.asarray(orders, dtype=float)[:, None]
    s = 2.0 / n * (np.sin(m * ang) @ y)
    c = 2.0 / n * (np.cos(m * ang) @ y)
    return np.hypot(s, c), np.arctan2(c, s)


@dataclass
class HarmonicAmplitudeSeries:
    """One row per completed electrical period; columns follow ``orders``."""

    orders: list[int]
    time: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    def column(self, order: int) -> np.ndarray:
        return self.amplitude[:, self.orders.index(order)]

    def __len__(self) -> int:
        return self.time.size


def harmonic_series(
    t: np.ndarray,
    theta_el: np.ndarray,
    y: np.ndarray,
    orders: Sequence[int],
    n_resample: int = DEFAULT_RESAMPLE,
) -> HarmonicAmplitudeSeries:
    """Split a trace into electrical periods by accumulated angle and analyse each.

    The signal is resampled uniformly in angle with a cubic spline, so
    periods that do not contain an integer number of samples, and speed
    changes within a period, are handled. The timestamp of a period is the
    instant its end angle is reached.
    """
    t = np.asarray(t, dtype=float)
    th = np.asarray(theta_el, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (t.size == th.size == y.size) or t.size < 4:
        raise AnalysisError("trace arrays must have equal length >= 4")
    if np.any(np.diff(th) <= 0):
        raise AnalysisError("electrical angle must be strictly increasing")
    first = math.ceil(th[0] / TWO_PI)
    last = math.floor(th[-1] / TWO_PI)
    q = len(orders)
    if last - first < 1:
        return HarmonicAmplitudeSeries(list(orders), np.empty(0), np.empty((0, q)), np.empty((0, q)))
    spline = CubicSpline(th, y)
    frac = np.arange(n_resample) / n_resample
    periods = np.arange(first, last)
    grid = TWO_PI * (periods[:, None] + frac[None, :])
    ys = spline(grid.ravel()).reshape(grid.shape)
    ang = TWO_PI * frac
    m = np.asarray(orders, dtype=float)[:, None]
    s = 2.0 / n_resample * ys @ np.sin(m * ang).T
    c = 2.0 / n_resample * ys @ np.cos(m * ang).T
    ends = np.interp(TWO_PI * (periods + 1), th, t)
    return HarmonicAmplitudeSeries(list(orders), ends, np.hypot(s, c), np.arctan2(c, s))


# -- performance indicators -----------------------------------------------


@dataclass(frozen=True)
class IndicatorConfig:
    threshold: float = 0.05
    max_after_s: float = 0.5
    interval_1: tuple[float, float] = (0.2, 0.5)
    interval_2: tuple[float, float] = (0.7, 1.0)


@dataclass(frozen=True)
class Indicators:
    time_to_threshold_s: float
    mean: float
    max_after: float
    mean_interval_1: float
    mean_interval_2: float

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return [getattr(self, n) for n in self.names()]


def _window_mean(time: np.ndarray, a: np.ndarray, lo: float, hi: float) -> float:
    sel = (time >= lo) & (time <= hi)
    return float(np.mean(a[sel])) if np.any(sel) else math.nan


def indicators(time: np.ndarray, amplitude: np.ndarray, cfg: IndicatorConfig = IndicatorConfig()) -> Indicators:
    """Indicators of one amplitude column. ``inf`` marks a threshold never reached."""
    time = np.asarray(time, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    if a.size == 0:
        raise AnalysisError("empty amplitude series")
    hit = np.nonzero(a <= cfg.threshold)[0]
    ttt = float(time[hit[0]]) if hit.size else math.inf
    after = a[time > cfg.max_after_s]
    return Indicators(
        ttt,
        float(np.mean(a)),
        float(np.max(after)) if after.size else math.nan,
        _window_mean(time, a, *cfg.interval_1),
        _window_mean(time, a, *cfg.interval_2),
    )


# -- Lyapunov monitor -----------------------------------------------------


def alpha_lower_bound(q: int, gamma_g: float, gamma_p: float) -> float:
    return gamma_g / 2.0 + q * gamma_p


def default_alpha(q: int, gamma_g: float, gamma_p: float) -> float:
    return 2.0 * alpha_lower_bound(q, gamma_g, gamma_p)


@dataclass
class LyapunovTrace:
    alpha: float
    scaled_target: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    bound: np.ndarray
    violations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_violations(self) -> int:
        return int(self.violations.size)


def lyapunov_value(x: np.ndarray, x_star: np.ndarray, alpha: float, gamma_g: float, gamma_p: float) -> np.ndarray:
    """``V = (2/g_p) sum |theta_p err|^2 + (1/g_G) sum |G err|_F^2`` over the last two axes ``(q, 4)``.

    ``|G err|_F^2 = 2 (e1^2 + e2^2)`` for the rotation-scaling block.
    """
    e = np.asarray(x) - alpha * np.asarray(x_star)
    g_part = 2.0 * np.sum(e[..., 0] ** 2 + e[..., 1] ** 2, axis=-1)
    p_part = np.sum(e[..., 2] ** 2 + e[..., 3] ** 2, axis=-1)
    return g_part / gamma_g + 2.0 * p_part / gamma_p


def lyapunov_monitor(
    x_hist: np.ndarray,
    y_hist: np.ndarray,
    eta_hist: np.ndarray,
    x_star: np.ndarray,
    gamma_g: float,
    gamma_p: float,
    alpha: float | None = None,
    tol: float = 1e-9,
) -> LyapunovTrace:
    """Check ``dV_k <= -4 eta_k (alpha - q g_p - g_G/2) y_k^2`` along a recorded run.

    ``x_hist`` has shape ``(K+1, q, 4)`` (estimate before each step plus the
    final one); ``y_hist`` and ``eta_hist`` have length ``K``.
    """
    x_hist = np.asarray(x_hist, dtype=float)
    q = x_hist.shape[1]
    lb = alpha_lower_bound(q, gamma_g, gamma_p)
    if alpha is None:
        alpha = 2.0 * lb
    if not alpha > lb:
        raise ConfigurationError(f"alpha = {alpha} must exceed gamma_G/2 + q gamma_p = {lb}")
    x_star = np.asarray(x_star, dtype=float)
    V = lyapunov_value(x_hist, x_star, alpha, gamma_g, gamma_p)
    dV = np.diff(V)
    y = np.asarray(y_hist, dtype=float)
    bound = -4.0 * np.asarray(eta_hist, dtype=float) * (alpha - lb) * y * y
    slack = tol * np.maximum(1.0, V[:-1])
    bad = np.nonzero(dV > bound + slack)[0]
    return LyapunovTrace(alpha, alpha * x_star, V, dV, bound, bad)


@dataclass
class CertificateResult:
    """Outcome of :func:`theorem_certificate` for a batch of initial estimates."""

    violations: int
    y_initial_envelope: np.ndarray
    y_final_envelope: np.ndarray
    max_state_norm: np.ndarray
    max_theta_u_norm: np.ndarray
    guard_events: int

    @property
    def y_ratio(self) -> np.ndarray:
        return self.y_final_envelope / self.y_initial_envelope


def theorem_certificate(
    x0: np.ndarray,
    g_true: Sequence[float],
    p_true: Sequence[float],
    omega: float,
    ts: float,
    n_steps: int,
    gamma_g: float = 1e-3,
    gamma_p: float = 1e-3,
    alpha: float | None = None,
    eps_sing: float = 1e-6,
    envelope_steps: int | None = None,
    tol: float = 1e-9,
) -> CertificateResult:
    """Run the single-mode adaptive law on the algebraic plant for a batch of initial estimates.

    Vectorized over the batch axis of ``x0`` (shape ``(B, 4)``). At every
    step ``Delta V`` is compared to its bound; the envelope of ``|y|`` over
    the first and the last ``envelope_steps`` samples is returned.
    """
    x = np.array(x0, dtype=float)
    b = x.shape[0]
    lb = alpha_lower_bound(1, gamma_g, gamma_p)
    alpha = 2.0 * lb if alpha is None else alpha
    if not alpha > lb:
        raise ConfigurationError(f"alpha = {alpha} must exceed {lb}")
    if envelope_steps is None:
        envelope_steps = max(1, int(round(TWO_PI / (omega * ts))))
    xs = np.array([g_true[0], g_true[1], p_true[0], p_true[1]], dtype=float)
    g1, g2, ps, pc = xs
    gam = np.array([gamma_g, gamma_g, gamma_p, gamma_p])
    w_scale = np.array([2.0 / gamma_g, 2.0 / gamma_g, 2.0 / gamma_p, 2.0 / gamma_p])

    def lyap(xx):
        e = xx - alpha * xs
        return (e * e) @ w_scale

    V = lyap(x)
    env0 = np.zeros(b)
    env1 = np.zeros(b)
    max_x = np.linalg.norm(x, axis=1)
    max_u = np.zeros(b)
    violations = 0
    guard_events = 0
    tail_start = n_steps - envelope_steps
    for k in range(n_steps):
        ph = math.fmod(omega * k * ts, TWO_PI)
        sn, cs = math.sin(ph), math.cos(ph)
        den = x[:, 0] ** 2 + x[:, 1] ** 2
        us = -(x[:, 0] * x[:, 2] + x[:, 1] * x[:, 3]) / den
        uc = -(-x[:, 1] * x[:, 2] + x[:, 0] * x[:, 3]) / den
        y = sn * (g1 * us - g2 * uc + ps) + cs * (g2 * us + g1 * uc + pc)
        eta = 1.0 / (1.0 + us * us + uc * uc)
        w = np.stack((us * sn + uc * cs, us * cs - uc * sn, np.full(b, sn), np.full(b, cs)), axis=1)
        y_hat = np.einsum("ij,ij->i", w, x)
        eps = eta * (y - y_hat)
        x_new = x + gam * w * eps[:, None]
        new_sq = x_new[:, 0] ** 2 + x_new[:, 1] ** 2
        frozen = (new_sq <= eps_sing) & (new_sq <= den)
        if np.any(frozen):
            guard_events += int(np.count_nonzero(frozen))
            x_new[frozen, :2] = x[frozen, :2]
        V_new = lyap(x_new)
        bound = -4.0 * eta * (alpha - lb) * y * y
        violations += int(np.count_nonzero(V_new - V > bound + tol * np.maximum(1.0, V)))
        V = V_new
        x = x_new
        ay = np.abs(y)
        if k < envelope_steps:
            np.maximum(env0, ay, out=env0)
        if k >= tail_start:
            np.maximum(env1, ay, out=env1)
        np.maximum(max_x, np.linalg.norm(x, axis=1), out=max_x)
        np.maximum(max_u, np.hypot(us, uc), out=max_u)
    return CertificateResult(violations, env0, env1, max_x, max_u, guard_events)
