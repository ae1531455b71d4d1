"""Feedforward lookup tables over operating points.

The transfer phasor ``(x1, x2)`` of each harmonic is tabulated over speed only;
the disturbance phasor ``(theta_p_s, theta_p_c)`` over speed and torque.
Queries interpolate linearly / bilinearly and extrapolate linearly from the
outermost cell. Online corrections are spread over the nodes of the
enclosing cell in proportion to their interpolation weights.

CSV layout (one file per harmonic order and table, long format)::

    transfer_m12.csv     speed_rpm,x1,x2
    disturbance_m12.csv  speed_rpm,torque_pu,theta_p_s,theta_p_c
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, IdentificationError, UsageError

DEFAULT_SPEED_GRID = (600.0, 800.0, 1000.0)
DEFAULT_TORQUE_GRID = (0.1, 0.3, 0.5)
DEFAULT_BETA = 0.5
FLOAT_FMT = "%.17g"


class OperatingPoint(NamedTuple):
    speed_rpm: float
    torque_pu: float


def _check_grid(grid: Sequence[float], name: str) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ConfigurationError(f"{name} grid needs at least 2 points")
    if not np.all(np.isfinite(g)):
        raise ConfigurationError(f"{name} grid must be finite")
    if np.any(np.diff(g) <= 0):
        raise ConfigurationError(f"{name} grid must be strictly increasing")
    return g


def cell_weights(grid: np.ndarray, v: float) -> tuple[int, float]:
    """Index ``j`` of the cell ``[g_j, g_{j+1}]`` used for ``v`` and the local coordinate.

    Outside the grid the outermost cell is used and ``t`` leaves ``[0, 1]``,
    which gives linear extrapolation.
    """
    j = int(np.searchsorted(grid, v, side="right")) - 1
    j = min(max(j, 0), grid.size - 2)
    t = (v - grid[j]) / (grid[j + 1] - grid[j])
    return j, float(t)


class TransferLut:
    """``(x1, x2)`` per harmonic mode over a speed grid. ``values`` has shape ``(q, ns, 2)``."""

    def __init__(self, speeds: Sequence[float], values):
        self.speeds = _check_grid(speeds, "speed")
        v = np.array(values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != (self.speeds.size, 2):
            raise ConfigurationError(f"transfer LUT values must have shape (q, {self.speeds.size}, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("transfer LUT values must be finite")
        self.values = v

    @property
    def q(self) -> int:
        return self.values.shape[0]

    def query(self, speed: float) -> np.ndarray:
        j, t = cell_weights(self.speeds, speed)
        return (1.0 - t) * self.values[:, j] + t * self.values[:, j + 1]

    def add(self, speed: float, delta: np.ndarray) -> None:
        """Add ``delta`` (shape ``(q, 2)``) spread by clamped interpolation weights."""
        j, t = cell_weights(self.speeds, speed)
        t = min(max(t, 0.0), 1.0)
        self.values[:, j] += (1.0 - t) * delta
        self.values[:, j + 1] += t * delta

    def copy(self) -> "TransferLut":
        return TransferLut(self.speeds.copy(), self.values.copy())


class DisturbanceLut:
    """``(theta_p_s, theta_p_c)`` per mode over speed x torque; ``values`` shape ``(q, ns, nt, 2)``."""

    def __init__(self, speeds: Sequence[float], torques: Sequence[float], values):
        self.speeds = _check_grid(speeds, "speed")
        self.torques = _check_grid(torques, "torque")
        v = np.array(values, dtype=float)
        want = (self.speeds.size, self.torques.size, 2)
        if v.ndim != 4 or v.shape[1:] != want:
            raise ConfigurationError(f"disturbance LUT values must have shape (q, {want[0]}, {want[1]}, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("disturbance LUT values must be finite")
        self.values = v

    @property
    def q(self) -> int:
        return self.values.shape[0]

    def _corners(self, op: OperatingPoint, clamp: bool):
        i, s = cell_weights(self.speeds, op.speed_rpm)
        j, t = cell_weights(self.torques, op.torque_pu)
        if clamp:
            s = min(max(s, 0.0), 1.0)
            t = min(max(t, 0.0), 1.0)
        return (
            ((i, j), (1 - s) * (1 - t)),
            ((i + 1, j), s * (1 - t)),
            ((i, j + 1), (1 - s) * t),
            ((i + 1, j + 1), s * t),
        )

    def query(self, op: OperatingPoint) -> np.ndarray:
        out = np.zeros((self.q, 2))
        for (a, b), w in self._corners(op, clamp=False):
            out += w * self.values[:, a, b]
        return out

    def add(self, op: OperatingPoint, delta: np.ndarray) -> None:
        for (a, b), w in self._corners(op, clamp=True):
            self.values[:, a, b] += w * delta

    def copy(self) -> "DisturbanceLut":
        return DisturbanceLut(self.speeds.copy(), self.torques.copy(), self.values.copy())


@dataclass
class FeedforwardLut:
    """Transfer and disturbance tables for the harmonic ``orders``."""

    orders: list[int]
    transfer: TransferLut
    disturbance: DisturbanceLut

    def __post_init__(self):
        if not (len(self.orders) == self.transfer.q == self.disturbance.q):
            raise ConfigurationError("LUT mode counts do not match the order list")

    @property
    def q(self) -> int:
        return len(self.orders)

    def query(self, op: OperatingPoint) -> list[list[float]]:
        """``x_FF`` per mode as ``[x1, x2, theta_p_s, theta_p_c]``."""
        g = self.transfer.query(op.speed_rpm)
        p = self.disturbance.query(op)
        return np.concatenate((g, p), axis=1).tolist()

    def adapt(self, op: OperatingPoint, delta_x: Sequence[Sequence[float]], rho: Sequence[float], beta: float = DEFAULT_BETA) -> bool:
        """``LUT += (1 - rho) beta dx`` per mode, gated on ``rho < 1`` and ``dx != 0``.

        Returns whether any entry changed.
        """
        if not beta > 0:
            raise ConfigurationError("LUT adaptation gain beta must be > 0")
        dx = np.asarray(delta_x, dtype=float).reshape(self.q, 4)
        r = np.broadcast_to(np.asarray(rho, dtype=float), (self.q,))
        scale = np.where((r < 1.0) & np.any(dx != 0.0, axis=1), (1.0 - r) * beta, 0.0)
        if not np.any(scale):
            return False
        step = scale[:, None] * dx
        self.transfer.add(op.speed_rpm, step[:, :2])
        self.disturbance.add(op, step[:, 2:])
        return True

    def copy(self) -> "FeedforwardLut":
        return FeedforwardLut(list(self.orders), self.transfer.copy(), self.disturbance.copy())

    @classmethod
    def constant(cls, orders: Sequence[int], x: Sequence[Sequence[float]],
                 speeds: Sequence[float] = DEFAULT_SPEED_GRID, torques: Sequence[float] = DEFAULT_TORQUE_GRID) -> "FeedforwardLut":
        """Tables holding the same ``x`` per mode at every node."""
        x = np.asarray(x, dtype=float).reshape(len(orders), 4)
        ns, nt = len(speeds), len(torques)
        g = np.repeat(x[:, None, :2], ns, axis=1)
        p = np.broadcast_to(x[:, None, None, 2:], (len(orders), ns, nt, 2))
        return cls(list(orders), TransferLut(speeds, g), DisturbanceLut(speeds, torques, p))

    # -- CSV ---------------------------------------------------------------

    def save(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for i, m in enumerate(self.orders):
            path = d / f"transfer_m{m}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["speed_rpm", "x1", "x2"])
                for a, n in enumerate(self.transfer.speeds):
                    w.writerow([FLOAT_FMT % n] + [FLOAT_FMT % v for v in self.transfer.values[i, a]])
            written.append(path)
            path = d / f"disturbance_m{m}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["speed_rpm", "torque_pu", "theta_p_s", "theta_p_c"])
                for a, n in enumerate(self.disturbance.speeds):
                    for b, tq in enumerate(self.disturbance.torques):
                        w.writerow([FLOAT_FMT % n, FLOAT_FMT % tq] + [FLOAT_FMT % v for v in self.disturbance.values[i, a, b]])
            written.append(path)
        return written

    @classmethod
    def load(cls, directory: str | Path, orders: Sequence[int]) -> "FeedforwardLut":
        d = Path(directory)
        speeds = None
        torques = None
        g_all, p_all = [], []
        for m in orders:
            rows = _read_rows(d / f"transfer_m{m}.csv", ["speed_rpm", "x1", "x2"])
            sp = [r[0] for r in rows]
            g_all.append([r[1:] for r in rows])
            rows = _read_rows(d / f"disturbance_m{m}.csv", ["speed_rpm", "torque_pu", "theta_p_s", "theta_p_c"])
            sp2 = sorted(set(r[0] for r in rows))
            tq = sorted(set(r[1] for r in rows))
            if sp2 != sp:
                raise ConfigurationError(f"order {m}: disturbance and transfer speed grids differ")
            if len(rows) != len(sp2) * len(tq):
                raise ConfigurationError(f"order {m}: disturbance table is not a full grid")
            table = {(r[0], r[1]): r[2:] for r in rows}
            p_all.append([[table[(n, t)] for t in tq] for n in sp2])
            if speeds is None:
                speeds, torques = sp, tq
            elif sp != speeds or tq != torques:
                raise ConfigurationError(f"order {m}: grid differs from other orders")
        return cls(list(orders), TransferLut(speeds, g_all), DisturbanceLut(speeds, torques, p_all))


def _read_rows(path: Path, header: list[str]) -> list[list[float]]:
    if not path.exists():
        raise ConfigurationError(f"missing LUT file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise ConfigurationError(f"{path}: expected header {','.join(header)}")
    out = []
    for lineno, r in enumerate(rows[1:], start=2):
        try:
            out.append([float(v) for v in r])
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
        if len(r) != len(header):
            raise ConfigurationError(f"{path}:{lineno}: expected {len(header)} columns")
    return out


# -- offline identification ----------------------------------------------


@dataclass(frozen=True)
class ProbeRecord:
    """One steady-state response: operating point, mode order, applied theta_u, measured Y phasor."""

    op: OperatingPoint
    order: int
    theta_u: tuple[float, float]
    y: tuple[float, float]


def _node_index(grid: np.ndarray, v: float, what: str) -> int:
    k = int(np.argmin(np.abs(grid - v)))
    if not math.isclose(grid[k], v, rel_tol=1e-9, abs_tol=1e-9):
        raise IdentificationError(f"probe at {what} {v} is not on the LUT grid {grid.tolist()}")
    return k


def identify_offline(
    records: Iterable[ProbeRecord],
    orders: Sequence[int],
    speeds: Sequence[float] = DEFAULT_SPEED_GRID,
    torques: Sequence[float] = DEFAULT_TORQUE_GRID,
) -> FeedforwardLut:
    """Least-squares fit of ``Y = G theta_u + theta_p(T)`` at every speed node.

    For each (order, speed) the transfer phasor is shared across torque
    nodes while each torque node has its own disturbance phasor. The
    stacked system must have full column rank; otherwise the node is named
    in the raised :class:`IdentificationError`.
    """
    sg = _check_grid(speeds, "speed")
    tg = _check_grid(torques, "torque")
    nt = tg.size
    q = len(orders)
    buckets: dict[tuple[int, int], list[tuple[int, ProbeRecord]]] = {}
    for rec in records:
        if rec.order not in orders:
            raise UsageError(f"probe for order {rec.order} not in {list(orders)}")
        i = list(orders).index(rec.order)
        a = _node_index(sg, rec.op.speed_rpm, "speed")
        b = _node_index(tg, rec.op.torque_pu, "torque")
        buckets.setdefault((i, a), []).append((b, rec))

    g_vals = np.zeros((q, sg.size, 2))
    p_vals = np.zeros((q, sg.size, nt, 2))
    for i, m in enumerate(orders):
        for a, n in enumerate(sg):
            data = buckets.get((i, a), [])
            # unknowns: x1, x2, then (p_s, p_c) per torque node
            rows, rhs = [], []
            for b, rec in data:
                us, uc = rec.theta_u
                r1 = np.zeros(2 + 2 * nt)
                r2 = np.zeros(2 + 2 * nt)
                r1[:2] = (us, -uc)
                r2[:2] = (uc, us)
                r1[2 + 2 * b] = 1.0
                r2[3 + 2 * b] = 1.0
                rows += [r1, r2]
                rhs += [rec.y[0], rec.y[1]]
            a_mat = np.array(rows).reshape(-1, 2 + 2 * nt)
            rank = np.linalg.matrix_rank(a_mat) if rows else 0
            if rank < 2 + 2 * nt:
                raise IdentificationError(
                    f"rank-deficient probe data at node order={m}, speed_rpm={n:g} "
                    f"(rank {rank} of {2 + 2 * nt}); need two distinct theta_u and every torque node"
                )
            sol, *_ = np.linalg.lstsq(a_mat, np.array(rhs), rcond=None)
            g_vals[i, a] = sol[:2]
            p_vals[i, a] = sol[2:].reshape(nt, 2)
    return FeedforwardLut(list(orders), TransferLut(sg, g_vals), DisturbanceLut(sg, tg, p_vals))
