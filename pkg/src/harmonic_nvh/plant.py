"""Simulated drive: PSM dq model, FOC current loop, NVH path, disturbance and noise.

Also contains the exact algebraic harmonic plant ``y = sum f^T (G theta_u + theta_p)``
on which the stability certificate is checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import ConfigurationError

RPM_TO_RAD_S = 2.0 * math.pi / 60.0


@dataclass(frozen=True)
class PsmParams:
    """Permanent-magnet synchronous machine, small 48 V class by default."""

    R: float = 0.015
    Ld: float = 45e-6
    Lq: float = 60e-6
    psi_pm: float = 5e-3
    p: int = 4

    def __post_init__(self):
        for name in ("R", "Ld", "Lq", "psi_pm"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"PSM parameter {name} must be positive, got {v}")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigurationError(f"pole pair count must be a positive integer, got {self.p}")

    def check_step(self, ts: float) -> None:
        if not ts > 0:
            raise ConfigurationError("sampling time must be > 0")
        worst = ts * self.R / min(self.Ld, self.Lq)
        if worst >= 0.5:
            raise ConfigurationError(f"explicit Euler unstable: ts*R/L = {worst:.3g} >= 0.5")

    def scaled(self, r_factor: float = 1.0, l_factor: float = 1.0, psi_pm: float | None = None) -> "PsmParams":
        """Copy with multiplicative model errors (used for mismatched decoupling models)."""
        return PsmParams(
            self.R * r_factor,
            self.Ld * l_factor,
            self.Lq * l_factor,
            self.psi_pm if psi_pm is None else psi_pm,
            self.p,
        )

    def omega_el(self, speed_rpm: float) -> float:
        return self.p * speed_rpm * RPM_TO_RAD_S


def psm_step(i_dq: Sequence[float], u_dq: Sequence[float], omega_el: float, prm: PsmParams, ts: float,
             psi_pm: float | None = None) -> tuple[float, float]:
    """One explicit Euler step of the dq current dynamics.

    ``psi_pm`` overrides the magnet flux (the linear decoupling copy uses 0).
    """
    psi = prm.psi_pm if psi_pm is None else psi_pm
    i_d, i_q = i_dq
    u_d, u_q = u_dq
    did = (u_d - prm.R * i_d + omega_el * prm.Lq * i_q) / prm.Ld
    diq = (u_q - prm.R * i_q - omega_el * (prm.Ld * i_d + psi)) / prm.Lq
    return i_d + ts * did, i_q + ts * diq


def equilibrium_voltage(i_dq: Sequence[float], omega_el: float, prm: PsmParams) -> tuple[float, float]:
    i_d, i_q = i_dq
    return (prm.R * i_d - omega_el * prm.Lq * i_q, prm.R * i_q + omega_el * (prm.Ld * i_d + prm.psi_pm))


class PsmModel:
    """Stateful wrapper around :func:`psm_step`."""

    def __init__(self, prm: PsmParams, ts: float, psi_pm: float | None = None):
        prm.check_step(ts)
        self.prm = prm
        self.ts = ts
        self.psi_pm = prm.psi_pm if psi_pm is None else psi_pm
        self.i_d = 0.0
        self.i_q = 0.0

    @property
    def current(self) -> tuple[float, float]:
        return self.i_d, self.i_q

    def step(self, u_d: float, u_q: float, omega_el: float) -> tuple[float, float]:
        self.i_d, self.i_q = psm_step((self.i_d, self.i_q), (u_d, u_q), omega_el, self.prm, self.ts, self.psi_pm)
        return self.i_d, self.i_q


@dataclass
class FocController:
    """Per-axis PI current controller with decoupling feedforward.

    ``ki_*`` are per-sample integrator gains (``Ki_continuous * ts``). The
    integrator is clamped so that ``|integrator| <= u_max``; the output is
    clamped to ``+-u_max``.
    """

    prm: PsmParams
    kp_d: float
    ki_d: float
    kp_q: float
    ki_q: float
    u_max: float = 27.7
    decouple: bool = True
    int_d: float = 0.0
    int_q: float = 0.0

    @classmethod
    def from_bandwidth(cls, prm: PsmParams, ts: float, bandwidth_hz: float = 500.0, u_max: float = 27.7) -> "FocController":
        """Pole-zero cancellation tuning: ``Kp = wc L``, ``Ki = wc R``."""
        wc = 2.0 * math.pi * bandwidth_hz
        return cls(prm, wc * prm.Ld, wc * prm.R * ts, wc * prm.Lq, wc * prm.R * ts, u_max)

    def reset(self) -> None:
        self.int_d = 0.0
        self.int_q = 0.0

    def step(self, i_ref: Sequence[float], i_seen: Sequence[float], omega_el: float) -> tuple[float, float]:
        e_d = i_ref[0] - i_seen[0]
        e_q = i_ref[1] - i_seen[1]
        lim = self.u_max
        self.int_d = min(max(self.int_d + self.ki_d * e_d, -lim), lim)
        self.int_q = min(max(self.int_q + self.ki_q * e_q, -lim), lim)
        u_d = self.kp_d * e_d + self.int_d
        u_q = self.kp_q * e_q + self.int_q
        if self.decouple:
            u_d -= omega_el * self.prm.Lq * i_seen[1]
            u_q += omega_el * (self.prm.Ld * i_seen[0] + self.prm.psi_pm)
        return min(max(u_d, -lim), lim), min(max(u_q, -lim), lim)


class NvhPath:
    """Second-order band-pass from q current to normalized vibration, Tustin discretized.

    ``H(s) = gain * 2 zeta wn s / (s^2 + 2 zeta wn s + wn^2)`` has unity peak
    gain at ``wn`` for ``gain = 1``. The bilinear map is prewarped at ``wn``
    so the discrete peak sits exactly at ``wn``.
    """

    def __init__(self, omega_n: float, zeta: float, ts: float, gain: float = 1.0):
        if not zeta > 0:
            raise ConfigurationError("NVH path damping must be > 0")
        if not omega_n > 0 or omega_n * ts >= math.pi:
            raise ConfigurationError("NVH natural frequency must lie in (0, Nyquist)")
        self.omega_n = omega_n
        self.zeta = zeta
        self.ts = ts
        self.gain = gain
        wa = 2.0 / ts * math.tan(omega_n * ts / 2.0)
        b, a = signal.bilinear([gain * 2.0 * zeta * wa, 0.0], [1.0, 2.0 * zeta * wa, wa * wa], fs=1.0 / ts)
        self.b = [float(v) for v in b / a[0]]
        self.a = [float(v) for v in a / a[0]]
        self.z1 = 0.0
        self.z2 = 0.0

    @classmethod
    def default(cls, ts: float, prm: PsmParams = PsmParams(), order: int = 12, speed_rpm: float = 800.0,
                zeta: float = 0.2) -> "NvhPath":
        return cls(order * prm.omega_el(speed_rpm), zeta, ts)

    def reset(self) -> None:
        self.z1 = 0.0
        self.z2 = 0.0

    def step(self, i_q: float) -> float:
        b0, b1, b2 = self.b
        _, a1, a2 = self.a
        y = b0 * i_q + self.z1
        self.z1 = b1 * i_q - a1 * y + self.z2
        self.z2 = b2 * i_q - a2 * y
        return y

    def response(self, omega: float) -> complex:
        """Discrete frequency response ``H(e^{j omega ts})``."""
        z = complex(math.cos(omega * self.ts), math.sin(omega * self.ts))
        num = self.b[0] + self.b[1] / z + self.b[2] / (z * z)
        den = 1.0 + self.a[1] / z + self.a[2] / (z * z)
        return num / den

    def analog_response(self, omega: float) -> complex:
        s = 1j * omega
        wn = self.omega_n
        return self.gain * 2.0 * self.zeta * wn * s / (s * s + 2.0 * self.zeta * wn * s + wn * wn)


@dataclass(frozen=True)
class DisturbanceTerm:
    """``A sin(m theta_el + phi)`` with ``A`` and ``phi`` affine in torque and speed.

    ``A = amplitude + amp_per_torque * T`` and
    ``phi = phase + phase_per_torque * T + phase_per_krpm * n / 1000``.
    """

    order: int
    amplitude: float
    phase: float = 0.0
    amp_per_torque: float = 0.0
    phase_per_torque: float = 0.0
    phase_per_krpm: float = 0.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ConfigurationError(f"disturbance order must be a positive integer, got {self.order}")

    def amp_phase(self, speed_rpm: float, torque_pu: float) -> tuple[float, float]:
        amp = self.amplitude + self.amp_per_torque * torque_pu
        ph = self.phase + self.phase_per_torque * torque_pu + self.phase_per_krpm * speed_rpm / 1000.0
        return amp, ph

    def phasor(self, speed_rpm: float, torque_pu: float) -> tuple[float, float]:
        """(sine, cosine) coefficients in the ``m theta_el`` basis."""
        amp, ph = self.amp_phase(speed_rpm, torque_pu)
        return amp * math.cos(ph), amp * math.sin(ph)


@dataclass
class DisturbanceSpec:
    terms: list[DisturbanceTerm] = field(default_factory=list)

    @classmethod
    def default(cls) -> "DisturbanceSpec":
        return cls([DisturbanceTerm(12, 0.15, 0.4, 0.3, 1.2, 0.8)])

    def value(self, theta_el: float, speed_rpm: float, torque_pu: float) -> float:
        out = 0.0
        for t in self.terms:
            amp, ph = t.amp_phase(speed_rpm, torque_pu)
            out += amp * math.sin(t.order * theta_el + ph)
        return out

    def phasor(self, order: int, speed_rpm: float, torque_pu: float) -> tuple[float, float]:
        s = c = 0.0
        for t in self.terms:
            if t.order == order:
                ps, pc = t.phasor(speed_rpm, torque_pu)
                s += ps
                c += pc
        return s, c


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise levels. ``speed_rpm`` perturbs the actual speed each step."""

    speed_rpm: float = 0.0
    current_a: float = 0.0
    y: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("speed_rpm", "current_a", "y"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigurationError(f"noise level {name} must be >= 0, got {v}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("noise seed must be a 64-bit unsigned integer")


class _Stream:
    def __init__(self, seed_seq: np.random.SeedSequence, std: float, width: int, block: int):
        self.rng = np.random.Generator(np.random.PCG64(seed_seq))
        self.std = std
        self.width = width
        self.block = block
        self.buf = np.empty((0, width))
        self.pos = 0

    def next(self):
        if self.std == 0.0:
            return (0.0,) * self.width
        if self.pos >= len(self.buf):
            self.buf = self.std * self.rng.standard_normal((self.block, self.width))
            self.pos = 0
        row = self.buf[self.pos]
        self.pos += 1
        return tuple(float(v) for v in row)


class NoiseSource:
    """Independent speed, current and output noise streams derived from one seed."""

    BLOCK = 4096

    def __init__(self, spec: NoiseSpec):
        self.spec = spec
        ss_speed, ss_cur, ss_y = np.random.SeedSequence(int(spec.seed)).spawn(3)
        self._speed = _Stream(ss_speed, spec.speed_rpm, 1, self.BLOCK)
        self._cur = _Stream(ss_cur, spec.current_a, 2, self.BLOCK)
        self._y = _Stream(ss_y, spec.y, 1, self.BLOCK)

    def speed(self) -> float:
        return self._speed.next()[0]

    def currents(self) -> tuple[float, float]:
        return self._cur.next()

    def y(self) -> float:
        return self._y.next()[0]


def measure(y_clean: float, p_k: float, noise: float = 0.0) -> float:
    return y_clean + p_k + noise


# -- algebraic harmonic plant --------------------------------------------


def algebraic_hss_step(
    g_true: Sequence[Sequence[float]],
    p_true: Sequence[Sequence[float]],
    theta_u: Sequence[Sequence[float]],
    phases: Sequence[float],
) -> float:
    """``y = sum_i f_i^T (G*_i theta_u_i + theta*_p_i)`` with no transient."""
    y = 0.0
    for (x1, x2), (ps, pc), (us, uc), ph in zip(g_true, p_true, theta_u, phases):
        ys = x1 * us - x2 * uc + ps
        yc = x2 * us + x1 * uc + pc
        y += math.sin(ph) * ys + math.cos(ph) * yc
    return y


class AlgebraicPlant:
    """Exact harmonic plant driven at constant angular increments per mode."""

    def __init__(self, g_true, p_true, omegas: Sequence[float], ts: float):
        self.g = [tuple(map(float, g)) for g in g_true]
        self.p = [tuple(map(float, p)) for p in p_true]
        self.omegas = list(omegas)
        self.ts = ts
        self.k = 0

    def phases(self, k: int | None = None) -> list[float]:
        k = self.k if k is None else k
        return [math.fmod(w * k * self.ts, 2.0 * math.pi) for w in self.omegas]

    def output(self, theta_u) -> float:
        return algebraic_hss_step(self.g, self.p, theta_u, self.phases())

    def advance(self) -> None:
        self.k += 1
