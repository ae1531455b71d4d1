"""Representative adaptive frequency-domain harmonic controller (comparison baseline).

Per harmonic the output phasor ``theta_u`` is held constant over an update
window of whole electrical periods. At the end of each window the output
phasor ``Y`` is extracted by a single-bin DFT; the transfer estimate is
corrected by normalized LMS on the window-to-window differences
``(Delta theta_u, Delta Y)``, and the output is moved by
``theta_u <- theta_u - mu G_hat^{-1} Y``.

Phasors are handled as complex numbers ``s + j c`` for the signal
``s sin(phase) + c cos(phase)``; the transfer phasor then acts by complex
multiplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigurationError
from .phasor import DEFAULT_EPS_SING

TWO_PI = 2.0 * math.pi


@dataclass
class FdModeState:
    g_hat: complex
    theta_u: complex = 0j
    prev_u: complex | None = None
    prev_y: complex | None = None
    acc_s: float = 0.0
    acc_c: float = 0.0
    count: int = 0
    singular: bool = False


@dataclass(frozen=True)
class FdConfig:
    mu: float = 0.5
    g_step: float = 0.5
    update_periods: int = 1
    regularization: float = 1e-6
    eps_sing: float = DEFAULT_EPS_SING

    def __post_init__(self):
        if int(self.update_periods) != self.update_periods or self.update_periods < 1:
            raise ConfigurationError("FD update period must be a whole number >= 1 of electrical periods")
        if not self.mu > 0:
            raise ConfigurationError("FD gain mu must be > 0")
        if not 0 <= self.g_step <= 2:
            raise ConfigurationError("FD transfer adaptation step must lie in [0, 2]")


def fd_update(st: FdModeState, y_phasor: complex, cfg: FdConfig) -> complex:
    """One window update of a single mode; returns the new ``theta_u``.

    A singular transfer estimate holds the previous output and sets ``st.singular``.
    """
    u = st.theta_u
    if st.prev_u is not None:
        du = u - st.prev_u
        dy = y_phasor - st.prev_y
        nu = abs(du) ** 2
        if nu > cfg.regularization:
            st.g_hat += cfg.g_step * (dy - st.g_hat * du) * du.conjugate() / (nu + cfg.regularization)
    st.prev_u = u
    st.prev_y = y_phasor
    if abs(st.g_hat) ** 2 <= cfg.eps_sing:
        st.singular = True
        return u
    st.singular = False
    st.theta_u = u - cfg.mu * y_phasor / st.g_hat
    return st.theta_u


def window_phasor(samples: Sequence[float], phases: Sequence[float]) -> complex:
    """Single-bin DFT over a window spanning whole periods of ``phases``."""
    n = len(samples)
    s = sum(y * math.sin(p) for y, p in zip(samples, phases))
    c = sum(y * math.cos(p) for y, p in zip(samples, phases))
    return complex(2.0 * s / n, 2.0 * c / n)


class FdController:
    """Frequency-domain HC for several harmonic orders of the electrical angle."""

    def __init__(self, orders: Sequence[int], g0: Sequence[complex], cfg: FdConfig = FdConfig()):
        if len(orders) != len(g0):
            raise ConfigurationError("one initial transfer phasor per order is required")
        self.orders = list(orders)
        self.cfg = cfg
        self.modes = [FdModeState(complex(g)) for g in g0]
        self.window_index: int | None = None
        self.updates = 0

    def _flush(self) -> None:
        for st in self.modes:
            if st.count > 0:
                y_ph = complex(2.0 * st.acc_s / st.count, 2.0 * st.acc_c / st.count)
                fd_update(st, y_ph, self.cfg)
            st.acc_s = st.acc_c = 0.0
            st.count = 0
        self.updates += 1

    def observe(self, y: float, theta_el: float) -> bool:
        """Accumulate one sample; returns True when a window closed and outputs changed."""
        w = int(math.floor(theta_el / (TWO_PI * self.cfg.update_periods)))
        changed = False
        if self.window_index is None:
            self.window_index = w
        elif w != self.window_index:
            self._flush()
            self.window_index = w
            changed = True
        for m, st in zip(self.orders, self.modes):
            ph = m * theta_el
            st.acc_s += y * math.sin(ph)
            st.acc_c += y * math.cos(ph)
            st.count += 1
        return changed

    @property
    def theta_u(self) -> list[tuple[float, float]]:
        return [(st.theta_u.real, st.theta_u.imag) for st in self.modes]
