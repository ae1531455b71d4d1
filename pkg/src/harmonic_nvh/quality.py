"""Convergence-quality estimation through dynamic regressor extension.

The scalar regression ``y_k = sum_i w_i^T x_i`` is passed through the filter
bank ``[1, H_1, H_2, H_3]`` with ``H_l(z) = (1 - T_l) z / (z - T_l)``. The
filtered data give a 4x4 regressor ``Phi`` per mode (row ``l`` is channel
``l``), the Hessian ``eta Phi^T Phi`` and from its extreme eigenvalues the
gradient-descent rate ``rho = 1 - 2 min(g_G, g_p) mu L / (mu + L)``.

``rho`` bounds the contraction of the *squared* parameter error,
``|x_{k+1} - x*|^2 <= rho |x_k - x*|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UsageError

DEFAULT_TIME_CONSTANTS = (0.90, 0.95, 0.99)
# relative eigenvalue floor: below this mu is indistinguishable from rounding
RANK_RTOL = 16 * np.finfo(float).eps


@dataclass(frozen=True)
class QualityReport:
    rho: float
    mu: float
    L: float


class DreFilterBank:
    """First-order filter bank for one scalar channel and ``q`` 4-vector channels."""

    def __init__(self, time_constants: Sequence[float] = DEFAULT_TIME_CONSTANTS, q: int = 1):
        t = np.asarray(time_constants, dtype=float)
        if t.shape != (3,):
            raise ConfigurationError("exactly three filter time constants are required")
        if np.any(t <= 0.0) or np.any(t >= 1.0):
            raise ConfigurationError(f"time constants must lie in (0, 1), got {t.tolist()}")
        if len(set(t.tolist())) != 3:
            raise ConfigurationError("time constants must be pairwise distinct")
        self.t = t
        self.q = q
        self._gain = 1.0 - t
        self.psi_state = np.zeros(3)
        self.phi_state = np.zeros((3, q, 4))

    def reset(self) -> None:
        self.psi_state[:] = 0.0
        self.phi_state[:] = 0.0

    def step(self, y: float, w) -> tuple[np.ndarray, np.ndarray]:
        """Advance every channel by one sample.

        ``w`` is a 4-vector (single mode) or a ``(q, 4)`` array. Returns
        ``psi`` of shape ``(4,)`` and ``Phi`` of shape ``(4, 4)`` or
        ``(q, 4, 4)`` accordingly.
        """
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        w2 = w.reshape(self.q, 4)
        self.psi_state = self.t * self.psi_state + self._gain * y
        self.phi_state = self.t[:, None, None] * self.phi_state + self._gain[:, None, None] * w2[None, :, :]
        psi = np.concatenate(([y], self.psi_state))
        phi = np.concatenate((w2[None, :, :], self.phi_state), axis=0).transpose(1, 0, 2)
        if single:
            return psi, phi[0]
        return psi, phi


def dre_step(bank: DreFilterBank, y: float, w) -> tuple[np.ndarray, np.ndarray]:
    return bank.step(y, w)


def hessian(phi: np.ndarray, eta: float) -> np.ndarray:
    """``eta Phi^T Phi`` (batched over leading axes)."""
    phi = np.asarray(phi, dtype=float)
    return eta * np.swapaxes(phi, -1, -2) @ phi


def convergence_rate(h: np.ndarray, gamma_g: float, gamma_p: float) -> QualityReport:
    """Rate estimate from the extreme eigenvalues of a symmetric PSD Hessian."""
    h = np.asarray(h, dtype=float)
    if h.shape != (4, 4):
        raise UsageError(f"Hessian must be 4x4, got {h.shape}")
    scale = max(1.0, float(np.max(np.abs(h))))
    if not np.allclose(h, h.T, rtol=0.0, atol=1e-12 * scale):
        raise UsageError("Hessian is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (h + h.T))
    return _report(float(ev[0]), float(ev[-1]), min(gamma_g, gamma_p))


def _report(lo: float, hi: float, gamma: float) -> QualityReport:
    L = max(hi, 0.0)
    mu = lo if lo > RANK_RTOL * L else 0.0
    if L == 0.0 or mu == 0.0:
        return QualityReport(1.0, mu, L)
    return QualityReport(1.0 - 2.0 * gamma * mu * L / (mu + L), mu, L)


class QualityEvaluator:
    """Per-mode convergence-rate monitor fed from the control loop.

    Runs the filter bank every ``decimation`` samples; between runs the last
    report is held.
    """

    def __init__(
        self,
        q: int,
        gamma_g: float,
        gamma_p: float,
        time_constants: Sequence[float] = DEFAULT_TIME_CONSTANTS,
        decimation: int = 1,
    ):
        if decimation < 1:
            raise ConfigurationError("decimation must be >= 1")
        self.bank = DreFilterBank(time_constants, q)
        self.gamma = min(gamma_g, gamma_p)
        self.decimation = int(decimation)
        self.reports = [QualityReport(1.0, 0.0, 0.0) for _ in range(q)]
        self._count = 0

    @property
    def rho(self) -> list[float]:
        return [r.rho for r in self.reports]

    def update(self, y: float, regressors: Sequence[Sequence[float]], eta: float) -> list[QualityReport]:
        self._count += 1
        if self._count < self.decimation:
            return self.reports
        self._count = 0
        _, phi = self.bank.step(y, np.asarray(regressors, dtype=float).reshape(-1, 4))
        h = hessian(phi, eta)
        ev = np.linalg.eigvalsh(h)
        self.reports = [_report(float(e[0]), float(e[-1]), self.gamma) for e in ev]
        return self.reports
