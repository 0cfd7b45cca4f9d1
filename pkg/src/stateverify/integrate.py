"""Fixed-grid integration, interpolation and quadrature on piecewise grids.

A :class:`GridSignal` is a list of segments, each a uniform node array over a
closed interval. Adjacent segments share their breakpoint as a node, so a
signal stores both one-sided values at every breakpoint and may jump only
there.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Segment", "GridSignal", "IntegrationError", "rk4_integrate", "interp", "quad",
    "fd_derivative", "uniform_nodes", "half_grid", "signal_to_csv", "signal_from_csv",
    "rk4_linear",
]


class IntegrationError(RuntimeError):
    pass


def uniform_nodes(a: float, b: float, n_steps: int) -> np.ndarray:
    """``n_steps + 1`` uniform nodes with both endpoints hit exactly."""
    t = a + (b - a) * np.arange(n_steps + 1) / n_steps
    t[-1] = b
    return t


def half_grid(a: float, b: float, n_steps: int) -> np.ndarray:
    """Nodes plus cell midpoints (``2 * n_steps + 1`` points)."""
    return uniform_nodes(a, b, 2 * n_steps)


@dataclass(frozen=True)
class Segment:
    t: np.ndarray       # (N+1,)
    values: np.ndarray  # (N+1, d)

    @property
    def a(self) -> float:
        return float(self.t[0])

    @property
    def b(self) -> float:
        return float(self.t[-1])

    @property
    def h(self) -> float:
        return (self.b - self.a) / (len(self.t) - 1)


@dataclass(frozen=True)
class GridSignal:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        for s in self.segments:
            if s.values.ndim != 2 or s.values.shape[0] != s.t.shape[0]:
                raise ValueError("segment values must have shape (len(t), d)")
            if np.any(np.diff(s.t) <= 0):
                raise ValueError("nodes must be strictly increasing")
        for s0, s1 in zip(self.segments, self.segments[1:]):
            if s0.b != s1.a:
                raise ValueError("adjacent segments must share their breakpoint")

    @classmethod
    def from_arrays(cls, ts: Sequence[np.ndarray], vals: Sequence[np.ndarray]) -> "GridSignal":
        segs = []
        for t, v in zip(ts, vals):
            v = np.asarray(v, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            segs.append(Segment(np.asarray(t, dtype=float), v))
        return cls(tuple(segs))

    @property
    def dim(self) -> int:
        return self.segments[0].values.shape[1]

    @property
    def breakpoints(self) -> list[float]:
        return [s.b for s in self.segments[:-1]]

    @property
    def domain(self) -> tuple[float, float]:
        return self.segments[0].a, self.segments[-1].b

    def seg(self, i: int) -> Segment:
        return self.segments[i]

    def left(self, i: int) -> np.ndarray:
        """Value at the right end of segment ``i`` (left limit at its breakpoint)."""
        return self.segments[i].values[-1]

    def right(self, i: int) -> np.ndarray:
        """Value at the left end of segment ``i``."""
        return self.segments[i].values[0]

    def jump(self, k: int) -> np.ndarray:
        """Right value minus left value at breakpoint ``k``."""
        return self.segments[k + 1].values[0] - self.segments[k].values[-1]

    def map(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "GridSignal":
        return GridSignal.from_arrays([s.t for s in self.segments],
                                      [fn(s.t, s.values) for s in self.segments])

    def component(self, j: int) -> "GridSignal":
        return self.map(lambda t, v: v[:, j])

    def sup(self) -> float:
        return max(float(np.max(np.abs(s.values))) for s in self.segments)

    def __sub__(self, other: "GridSignal") -> "GridSignal":
        return GridSignal.from_arrays([s.t for s in self.segments],
                                      [s.values - o.values for s, o in zip(self.segments, other.segments)])


def rk4_integrate(rhs: Callable[[float, np.ndarray], np.ndarray], y_init, interval: tuple[float, float],
                  n_steps: int, direction: str = "forward") -> GridSignal:
    """Classical fourth-order Runge-Kutta on a uniform grid.

    ``direction="backward"`` starts from ``y_init`` at the right end of the
    interval and steps towards the left end; the returned signal is always in
    increasing time order.
    """
    a, b = interval
    t = uniform_nodes(a, b, n_steps)
    y = np.array(y_init, dtype=float).reshape(-1)
    out = np.empty((n_steps + 1, y.size))
    if direction == "forward":
        order, h = range(n_steps), (b - a) / n_steps
        out[0] = y
    elif direction == "backward":
        order, h = range(n_steps, 0, -1), -(b - a) / n_steps
        out[-1] = y
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    for k in order:
        tk = t[k]
        k1 = rhs(tk, y)
        k2 = rhs(tk + h / 2, y + h / 2 * k1)
        k3 = rhs(tk + h / 2, y + h / 2 * k2)
        k4 = rhs(t[k + 1] if h > 0 else t[k - 1], y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state near t={tk:g}")
        out[k + 1 if h > 0 else k - 1] = y
    return GridSignal((Segment(t, out),))


def rk4_linear(A: np.ndarray, b: np.ndarray | None, y_init, h: float,
               direction: str = "forward") -> np.ndarray:
    """RK4 for the linear system ``y' = A(t) y + b(t)`` on a uniform grid.

    ``A`` (shape ``(2N+1, d, d)``) and ``b`` (``(2N+1, d)`` or None) are
    sampled at the nodes and cell midpoints, so each step uses exact stage
    coefficients. The step matrices are formed in one batched pass and then
    chained. Returns the ``(N+1, d)`` node values in increasing time order.
    """
    A = np.asarray(A, dtype=float)
    n2, d, _ = A.shape
    if n2 % 2 != 1 or n2 < 3:
        raise ValueError("coefficients must live on a half grid (odd number of samples)")
    n = (n2 - 1) // 2
    # augment with a constant component so the forcing rides along
    M = np.zeros((n2, d + 1, d + 1))
    M[:, :d, :d] = A
    if b is not None:
        M[:, :d, d] = b
    if direction == "forward":
        A0, A1, A2, s = M[0:-1:2], M[1::2], M[2::2], h
    elif direction == "backward":
        A0, A1, A2, s = M[2::2], M[1::2], M[0:-1:2], -h
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    K2 = A1 + s / 2 * A1 @ A0
    K3 = A1 + s / 2 * A1 @ K2
    K4 = A2 + s * A2 @ K3
    step = np.eye(d + 1) + s / 6 * (A0 + 2 * K2 + 2 * K3 + K4)
    out = np.empty((n + 1, d + 1))
    y = np.append(np.asarray(y_init, dtype=float).reshape(-1), 1.0)
    if direction == "forward":
        out[0] = y
        for k in range(n):
            y = step[k] @ y
            out[k + 1] = y
    else:
        out[n] = y
        for k in range(n - 1, -1, -1):
            y = step[k] @ y
            out[k] = y
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite value in linear sweep")
    return out[:, :d]


def interp(s: GridSignal, t: float, side: str = "either") -> np.ndarray:
    """Linear interpolation; at a breakpoint ``side`` picks the one-sided value."""
    lo, hi = s.domain
    if t < lo or t > hi:
        raise ValueError(f"t={t} outside signal domain [{lo}, {hi}]")
    segs = s.segments
    for i, seg in enumerate(segs):
        if t > seg.b:
            continue
        if t == seg.b and i + 1 < len(segs):
            if side == "right":
                return segs[i + 1].values[0].copy()
            if side == "either" and not np.array_equal(seg.values[-1], segs[i + 1].values[0]):
                raise ValueError(f"signal jumps at t={t}; ask for side='left' or 'right'")
            return seg.values[-1].copy()
        j = int(np.searchsorted(seg.t, t, side="right")) - 1
        j = min(max(j, 0), len(seg.t) - 2)
        w = (t - seg.t[j]) / (seg.t[j + 1] - seg.t[j])
        return (1 - w) * seg.values[j] + w * seg.values[j + 1]
    raise AssertionError("unreachable")


def quad(s: GridSignal, interval: tuple[float, float] | None = None) -> np.ndarray:
    """Composite trapezoid over the nodes of ``s`` lying in ``interval``."""
    lo, hi = interval if interval is not None else s.domain
    total = np.zeros(s.dim)
    for seg in s.segments:
        a, b = max(lo, seg.a), min(hi, seg.b)
        if b <= a:
            continue
        mask = (seg.t >= a) & (seg.t <= b)
        tt = seg.t[mask]
        if tt[0] != a or tt[-1] != b:
            raise ValueError("interval endpoints must be grid nodes")
        total = total + np.trapezoid(seg.values[mask], tt, axis=0)
    return total


def fd_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0 of a uniform sample.

    Centered five-point stencil inside, one-sided fourth-order stencils at the
    two nodes nearest each end. Needs at least five samples.
    """
    f = np.asarray(values, dtype=float)
    n = f.shape[0]
    if n < 5:
        raise ValueError("fourth-order differences need at least 5 nodes")
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def signal_to_csv(s: GridSignal, names: Sequence[str] | None = None) -> str:
    """CSV text: ``t``, one column per component, and an L/R marker at breakpoints."""
    names = list(names) if names is not None else [f"v{j}" for j in range(s.dim)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *names, "side"])
    nseg = len(s.segments)
    for i, seg in enumerate(s.segments):
        for k, (t, row) in enumerate(zip(seg.t, seg.values)):
            side = ""
            if k == 0 and i > 0:
                side = "R"
            elif k == len(seg.t) - 1 and i < nseg - 1:
                side = "L"
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row), side])
    return buf.getvalue()


def signal_from_csv(text: str) -> GridSignal:
    rows = list(csv.reader(io.StringIO(text)))
    ts, vals = [[]], [[]]
    for row in rows[1:]:
        t, *v, side = row
        ts[-1].append(float(t))
        vals[-1].append([float(x) for x in v])
        if side == "L":
            ts.append([])
            vals.append([])
    return GridSignal.from_arrays([np.array(t) for t in ts], [np.array(v) for v in vals])
