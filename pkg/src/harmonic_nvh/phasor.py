"""Phasor algebra for harmonic steady-state signals and the HC control laws.

A harmonic signal of order ``m`` is written ``f(phase)^T theta`` with
``f = [sin(phase), cos(phase)]`` and ``phase = m * theta_el``. A transfer
function evaluated at that harmonic acts on ``theta`` as the 2x2
rotation-scaling block ``[[x1, -x2], [x2, x1]]``, which is the same as
complex multiplication of ``x1 + j x2`` with ``theta_s + j theta_c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, SingularityError, UsageError

TWO_PI = 2.0 * math.pi
DEFAULT_EPS_SING = 1e-6


class PhasorPair(NamedTuple):
    """Sine/cosine coefficients of one harmonic."""

    s: float
    c: float

    @property
    def amplitude(self) -> float:
        return math.hypot(self.s, self.c)

    def norm_sq(self) -> float:
        return self.s * self.s + self.c * self.c


class TransferPhasor(NamedTuple):
    """Real and imaginary part of a transfer function at one frequency."""

    x1: float
    x2: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.x1, -self.x2], [self.x2, self.x1]])

    def gain_sq(self) -> float:
        """``lambda_min(G G^T)``, which equals ``x1^2 + x2^2``."""
        return self.x1 * self.x1 + self.x2 * self.x2

    @property
    def phase(self) -> float:
        return math.atan2(self.x2, self.x1)

    @classmethod
    def from_complex(cls, g: complex) -> "TransferPhasor":
        return cls(g.real, g.imag)

    def apply(self, theta: Sequence[float]) -> PhasorPair:
        s, c = theta
        return PhasorPair(self.x1 * s - self.x2 * c, self.x2 * s + self.x1 * c)


def wrap_angle(angle: float) -> float:
    """Wrap to ``[0, 2*pi)``."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a value just below 0 can round to exactly 2*pi after the shift
    if a >= TWO_PI:
        a = 0.0
    return a


@dataclass
class HarmonicMode:
    """One controlled harmonic of the electrical frequency.

    ``phase`` is advanced from the accumulated electrical angle rather than
    from ``omega * k * ts`` so the basis stays coherent through speed ramps.
    """

    order: int
    phase: float = 0.0
    theta_u: PhasorPair = field(default_factory=lambda: PhasorPair(0.0, 0.0))

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ConfigurationError(f"harmonic order must be a positive integer, got {self.order!r}")
        self.order = int(self.order)
        self.phase = wrap_angle(self.phase)

    def advance(self, delta_theta_el: float) -> None:
        self.phase = wrap_angle(self.phase + self.order * delta_theta_el)

    def set_electrical_angle(self, theta_el: float) -> None:
        self.phase = wrap_angle(self.order * theta_el)

    @property
    def basis(self) -> tuple[float, float]:
        return math.sin(self.phase), math.cos(self.phase)


def hss_eval(modes: Sequence[HarmonicMode], coeffs: Sequence[Sequence[float]]) -> float:
    """Evaluate ``sum_i f_i^T theta_i`` at the current mode phases."""
    if len(modes) != len(coeffs):
        raise UsageError(f"{len(modes)} modes but {len(coeffs)} coefficient pairs")
    if not modes:
        raise UsageError("at least one harmonic mode is required")
    total = 0.0
    for mode, (s, c) in zip(modes, coeffs):
        total += math.sin(mode.phase) * s + math.cos(mode.phase) * c
    return total


def _inverse_apply(g: TransferPhasor, v_s: float, v_c: float, eps_sing: float) -> PhasorPair:
    den = g.x1 * g.x1 + g.x2 * g.x2
    if not den > eps_sing:
        raise SingularityError(f"|G|^2 = {den:.3e} <= {eps_sing:.1e}")
    return PhasorPair((g.x1 * v_s + g.x2 * v_c) / den, (-g.x2 * v_s + g.x1 * v_c) / den)


def control_law(g: TransferPhasor, theta_p: Sequence[float], eps_sing: float = DEFAULT_EPS_SING) -> PhasorPair:
    """Certainty-equivalence law ``theta_u = -G^{-1} theta_p``."""
    s, c = _inverse_apply(g, theta_p[0], theta_p[1], eps_sing)
    return PhasorPair(-s, -c)


def excitation_law(
    g: TransferPhasor,
    theta_p: Sequence[float],
    y_des: Sequence[float],
    eps_sing: float = DEFAULT_EPS_SING,
) -> PhasorPair:
    """``theta_u = G^{-1} (Y_des - theta_p)``; equals :func:`control_law` for ``Y_des = 0``."""
    return _inverse_apply(g, y_des[0] - theta_p[0], y_des[1] - theta_p[1], eps_sing)


@dataclass(frozen=True)
class ActiveLearningConfig:
    """Two-frequency excitation settings.

    Frequencies are absolute (rad/s) and do not scale with speed.
    """

    omega_1: float = TWO_PI * 5.0
    omega_2: float = TWO_PI * 8.0
    delta: float = 1.0
    threshold: float = 0.1
    ts: float = 1e-4

    def __post_init__(self):
        if self.omega_1 == self.omega_2:
            raise ConfigurationError("active learning needs two distinct frequencies")
        if not self.delta > 0:
            raise ConfigurationError("active learning delta must be > 0")
        if not self.threshold > 0:
            raise ConfigurationError("active learning threshold must be > 0")
        if not self.ts > 0:
            raise ConfigurationError("sampling time must be > 0")

    def amplitude(self, rho: float, delta_norm: float) -> float:
        gate = (self.threshold - (1.0 - rho)) / self.threshold
        if gate <= 0.0 or delta_norm == 0.0:
            return 0.0
        return gate * self.delta * delta_norm


def excitation_signal(
    k: int,
    mode: HarmonicMode | None,
    rho: float,
    delta_norm: float,
    cfg: ActiveLearningConfig,
) -> PhasorPair:
    """Desired output phasor for active learning at step ``k``.

    The amplitude fades out linearly as ``1 - rho`` approaches the threshold;
    ``mode`` is accepted for per-mode configurations but unused here.
    """
    amp = cfg.amplitude(rho, delta_norm)
    if amp == 0.0:
        return PhasorPair(0.0, 0.0)
    t = k * cfg.ts
    return PhasorPair(amp * math.cos(cfg.omega_1 * t), amp * math.cos(cfg.omega_2 * t))
