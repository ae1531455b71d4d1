"""Joint online gradient estimator of transfer phasor and disturbance phasor.

Per harmonic mode the estimator keeps ``x = [Re G, Im G, theta_p_s, theta_p_c]``
and applies the normalized gradient law ``x <- x + Gamma w eps`` with
``eps = eta (y - sum_i w_i^T x_i)`` and ``Gamma = diag(g_G, g_G, g_p, g_p)``.

The hot path works on plain Python floats; a 4-vector update per mode is
cheaper that way than through numpy.
"""

from __future__ import annotations

import math
from typing import Sequence

from .errors import ConfigurationError, UsageError
from .phasor import DEFAULT_EPS_SING, PhasorPair, TransferPhasor

Vec4 = list[float]


def build_regressor(phase: float, theta_u: Sequence[float]) -> tuple[float, float, float, float]:
    """Regressor ``w`` such that ``f^T (G theta_u + theta_p) = w^T x``."""
    sn = math.sin(phase)
    cs = math.cos(phase)
    ts, tc = theta_u
    return (ts * sn + tc * cs, ts * cs - tc * sn, sn, cs)


def normalization(theta_u_all: Sequence[Sequence[float]]) -> float:
    """``eta = 1 / (1 + sum_i |theta_u_i|^2)``."""
    acc = 1.0
    for s, c in theta_u_all:
        acc += s * s + c * c
    return 1.0 / acc


def guard_transfer_update(
    old: Sequence[float], new: Sequence[float], eps_sing: float = DEFAULT_EPS_SING
) -> tuple[bool, float, float]:
    """Interruption-style singularity guard for the ``(x1, x2)`` update.

    The update is rejected when it would leave ``x1^2 + x2^2`` at or below
    ``eps_sing`` without increasing it. Returns ``(frozen, x1, x2)``.
    """
    new_sq = new[0] * new[0] + new[1] * new[1]
    if new_sq > eps_sing:
        return False, new[0], new[1]
    old_sq = old[0] * old[0] + old[1] * old[1]
    if new_sq > old_sq:
        return False, new[0], new[1]
    return True, old[0], old[1]


def _check_finite(x: Sequence[float], what: str) -> None:
    for v in x:
        if not math.isfinite(v):
            raise ConfigurationError(f"{what} must be finite, got {list(x)}")


class HarmonicEstimator:
    """Gradient estimator for ``q`` harmonic modes.

    Parameters
    ----------
    x0 : sequence of 4-vectors
        Initial ``[Re G, Im G, theta_p_s, theta_p_c]`` per mode.
    gamma_g, gamma_p : float
        Learning rates of the transfer and disturbance parameters.
    eps_sing : float
        Singularity guard threshold on ``|G|^2``.
    normalize : bool
        Use the ``eta`` normalization. Only the non-adaptive comparison
        controller switches this off.
    """

    def __init__(
        self,
        x0: Sequence[Sequence[float]],
        gamma_g: float = 1e-3,
        gamma_p: float = 1e-3,
        eps_sing: float = DEFAULT_EPS_SING,
        normalize: bool = True,
    ):
        if gamma_g < 0 or gamma_p < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if not x0:
            raise ConfigurationError("at least one harmonic mode is required")
        self.x: list[Vec4] = []
        for row in x0:
            if len(row) != 4:
                raise ConfigurationError(f"parameter vector must have 4 entries, got {len(row)}")
            _check_finite(row, "initial parameters")
            self.x.append([float(v) for v in row])
        self.gamma_g = float(gamma_g)
        self.gamma_p = float(gamma_p)
        self.eps_sing = float(eps_sing)
        self.normalize = normalize
        self.mac_count = 0
        self.faults = 0
        self.guard_active = [False] * len(self.x)
        self.last_eps = 0.0

    @property
    def q(self) -> int:
        return len(self.x)

    @property
    def gains(self) -> tuple[float, float, float, float]:
        return (self.gamma_g, self.gamma_g, self.gamma_p, self.gamma_p)

    def parameters(self, i: int) -> Vec4:
        """Parameters used by the control law for mode ``i``."""
        return self.x[i]

    def transfer(self, i: int) -> TransferPhasor:
        p = self.parameters(i)
        return TransferPhasor(p[0], p[1])

    def disturbance(self, i: int) -> PhasorPair:
        p = self.parameters(i)
        return PhasorPair(p[2], p[3])

    def eta(self, theta_u_all: Sequence[Sequence[float]]) -> float:
        return normalization(theta_u_all) if self.normalize else 1.0

    def predict(self, regressors: Sequence[Sequence[float]]) -> float:
        if len(regressors) != self.q:
            raise UsageError(f"expected {self.q} regressors, got {len(regressors)}")
        y_hat = 0.0
        for i, w in enumerate(regressors):
            p = self.parameters(i)
            y_hat += w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + w[3] * p[3]
        return y_hat

    def adapt(self, y: float, regressors: Sequence[Sequence[float]], eta: float) -> float:
        """One step of the adaptive law. Returns the normalized error.

        A non-finite measurement freezes the estimator and returns ``nan``.
        """
        if not math.isfinite(y):
            self.faults += 1
            self.last_eps = math.nan
            return math.nan
        eps = eta * (y - self.predict(regressors))
        self.last_eps = eps
        gg = self.gamma_g * eps
        gp = self.gamma_p * eps
        for i, w in enumerate(regressors):
            self._apply_step(i, gg * w[0], gg * w[1], gp * w[2], gp * w[3])
            self.mac_count += 1
        return eps

    def _apply_step(self, i: int, d1: float, d2: float, d3: float, d4: float) -> None:
        x = self.x[i]
        frozen, n1, n2 = guard_transfer_update((x[0], x[1]), (x[0] + d1, x[1] + d2), self.eps_sing)
        self.guard_active[i] = frozen
        x[0] = n1
        x[1] = n2
        x[2] += d3
        x[3] += d4


class DeltaEstimator(HarmonicEstimator):
    """Estimator of the deviation ``dx`` from a feedforward prediction ``x_ff``.

    The prediction uses ``x_ff + dx``; the update adds leakage,
    ``dx <- (1 - sigma) dx + Gamma w eps``.
    """

    def __init__(
        self,
        q: int,
        gamma_g: float = 1e-3,
        gamma_p: float = 1e-3,
        sigma: float = 1e-3,
        eps_sing: float = DEFAULT_EPS_SING,
    ):
        if not 0.0 <= sigma < 1.0:
            raise ConfigurationError(f"leakage sigma must lie in [0, 1), got {sigma}")
        super().__init__([[0.0] * 4 for _ in range(q)], gamma_g, gamma_p, eps_sing)
        self.sigma = float(sigma)
        self.x_ff: list[Vec4] = [[0.0] * 4 for _ in range(q)]

    @property
    def delta(self) -> list[Vec4]:
        return self.x

    def set_feedforward(self, x_ff: Sequence[Sequence[float]]) -> None:
        if len(x_ff) != self.q:
            raise UsageError(f"expected {self.q} feedforward vectors, got {len(x_ff)}")
        self.x_ff = [list(map(float, v)) for v in x_ff]

    def parameters(self, i: int) -> Vec4:
        f = self.x_ff[i]
        d = self.x[i]
        return [f[0] + d[0], f[1] + d[1], f[2] + d[2], f[3] + d[3]]

    def delta_norm(self, i: int) -> float:
        d = self.x[i]
        return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3])

    def adapt_delta(
        self,
        x_ff: Sequence[Sequence[float]] | None,
        y: float,
        regressors: Sequence[Sequence[float]],
        eta: float,
    ) -> float:
        if x_ff is not None:
            self.set_feedforward(x_ff)
        return self.adapt(y, regressors, eta)

    def _apply_step(self, i: int, d1: float, d2: float, d3: float, d4: float) -> None:
        keep = 1.0 - self.sigma
        d = self.x[i]
        f = self.x_ff[i]
        n1 = keep * d[0] + d1
        n2 = keep * d[1] + d2
        frozen, _, _ = guard_transfer_update(
            (f[0] + d[0], f[1] + d[1]), (f[0] + n1, f[1] + n2), self.eps_sing
        )
        self.guard_active[i] = frozen
        if not frozen:
            d[0] = n1
            d[1] = n2
        d[2] = keep * d[2] + d3
        d[3] = keep * d[3] + d4
