"""Problem descriptions, reference processes and the standing assumptions.

Two problem shapes are supported:

* :class:`ProblemA` -- states ``(z, x)`` with the state constraint ``x >= 0``
  on the last coordinate;
* :class:`ProblemC` -- states ``y`` with a general constraint ``Phi(y) >= 0``.

Both carry control constraints ``phi_s(u) <= 0`` and an endpoint cost
``J(y(0), y(T))`` whose variables are named ``<state>_0`` and ``<state>_T``.
A :class:`ReferenceProcess` is a candidate trajectory with one boundary arc
``[t1, t2]``, sampled on a grid with ``n_steps`` cells per interval plus the
cell midpoints (the latter feed the RK4 stages of every downstream sweep).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .expr import Expr, ExprDomainError, compile_expr, compile_tuple, jacobian_many
from .integrate import GridSignal, IntegrationError, half_grid, uniform_nodes

__all__ = [
    "ControlSystem", "ProblemA", "ProblemC", "ReferenceProcess", "ReferenceProcessError",
    "RegularityReport", "simulate", "simulate_process", "check_regularity", "active_set",
    "positive_independence_margin", "compile_pieces", "load_problem",
]

DEFAULT_STEPS = 2000


class ReferenceProcessError(ValueError):
    pass


def endpoint_names(states: Sequence[str]) -> list[str]:
    return [f"{s}_0" for s in states] + [f"{s}_T" for s in states]


class ControlSystem:
    """Expression-backed dynamics ``dy/dt = f(y, u)`` with control constraints and cost."""

    kind = "?"

    def __init__(self, state_names: Sequence[str], control_names: Sequence[str], f: Sequence[Expr],
                 phi: Sequence[Expr], J: Expr, T: float, name: str = ""):
        self.state_names = tuple(state_names)
        self.control_names = tuple(control_names)
        if len(f) != len(self.state_names):
            raise ValueError("need one dynamics expression per state")
        self.f = tuple(f)
        self.phi = tuple(phi)
        self.J = J
        self.T = float(T)
        self.name = name
        args = self.state_names + self.control_names
        self._f = [compile_expr(e, args) for e in self.f]
        self.rhs_tuple = compile_tuple(self.f, args)
        self._phi = [compile_expr(e, self.control_names) for e in self.phi]
        self._J = compile_expr(J, endpoint_names(self.state_names))

    @property
    def ny(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.control_names)

    @property
    def d_phi(self) -> int:
        return len(self.phi)

    # dynamics
    def rhs(self, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        args = (*y, *u)
        return np.array([fn(*args) for fn in self._f], dtype=float)

    def rhs_many(self, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        cols = [*Y.T, *U.T]
        return np.stack([np.broadcast_to(fn(*cols), (Y.shape[0],)) for fn in self._f], axis=1)

    def rhs_jac(self, Y: np.ndarray, U: np.ndarray):
        """Values ``(N, ny)``, state Jacobian ``(N, ny, ny)`` and control Jacobian ``(N, ny, m)``."""
        vals, jac = jacobian_many(self._f, [*Y.T, *U.T])
        return vals, jac[:, :, :self.ny], jac[:, :, self.ny:]

    # control constraints
    def phi_values(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        if not self._phi:
            return np.zeros((U.shape[0], 0))
        return np.stack([np.broadcast_to(fn(*U.T), (U.shape[0],)) for fn in self._phi], axis=1)

    def phi_jac(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        if not self._phi:
            return np.zeros((U.shape[0], 0, self.m))
        return jacobian_many(self._phi, list(U.T))[1]

    # cost
    def cost(self, y0: np.ndarray, yT: np.ndarray) -> float:
        return float(self._J(*y0, *yT))

    def cost_grad(self, y0: np.ndarray, yT: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, jac = jacobian_many([self._J], [np.atleast_1d(v) for v in (*y0, *yT)])
        g = jac[0, 0]
        return g[:self.ny], g[self.ny:]

    # state constraint c(y) >= 0
    def constraint_values(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constraint_grad(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ProblemA(ControlSystem):
    """States ``z`` (n of them) followed by the constrained scalar ``x``."""

    kind = "A"

    def __init__(self, z_names: Sequence[str], control_names: Sequence[str], f: Sequence[Expr], g: Expr,
                 phi: Sequence[Expr], J: Expr, T: float, x_name: str = "x", name: str = ""):
        super().__init__([*z_names, x_name], control_names, [*f, g], phi, J, T, name)
        self.x_name = x_name

    @property
    def n(self) -> int:
        return self.ny - 1

    @property
    def g(self) -> Expr:
        return self.f[-1]

    def constraint_values(self, Y):
        return np.asarray(Y)[..., -1]

    def constraint_grad(self, Y):
        Y = np.atleast_2d(Y)
        out = np.zeros_like(Y, dtype=float)
        out[:, -1] = 1.0
        return out


class ProblemC(ControlSystem):
    """General state ``y`` with the constraint ``Phi(y) >= 0``."""

    kind = "C"

    def __init__(self, state_names, control_names, f, Phi: Expr, phi, J, T, name: str = ""):
        super().__init__(state_names, control_names, f, phi, J, T, name)
        self.Phi = Phi
        self._Phi = compile_expr(Phi, self.state_names)

    @property
    def n(self) -> int:
        return self.ny - 1

    def constraint_values(self, Y):
        Y = np.atleast_2d(Y)
        return np.broadcast_to(self._Phi(*Y.T), (Y.shape[0],)).astype(float)

    def constraint_grad(self, Y):
        Y = np.atleast_2d(Y)
        return jacobian_many([self._Phi], list(Y.T))[1][:, 0, :]


# ---------------------------------------------------------------------------
# reference process

Piece = Callable[[np.ndarray], np.ndarray]


def compile_pieces(pieces: Sequence[Sequence[Expr]]) -> tuple[Piece, ...]:
    """Turn per-interval control expressions in ``t`` into vectorized callables ``t -> (len(t), m)``."""
    out = []
    for exprs in pieces:
        fns = [compile_expr(e, ("t",)) for e in exprs]

        def piece(t, fns=fns):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.stack([np.broadcast_to(fn(t), t.shape) for fn in fns], axis=1)
        out.append(piece)
    return tuple(out)


@dataclass(frozen=True)
class ReferenceProcess:
    t1: float
    t2: float
    T: float
    n_steps: int
    y: GridSignal                 # states on the main grid
    u: GridSignal                 # controls with one-sided values at t1, t2
    y_fine: tuple[np.ndarray, ...]  # per interval, nodes and midpoints, (2N+1, ny)
    u_fine: tuple[np.ndarray, ...]
    u_pieces: tuple[Piece, ...] = field(default=(), repr=False)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return [(0.0, self.t1), (self.t1, self.t2), (self.t2, self.T)]

    def t_main(self, i: int) -> np.ndarray:
        return self.y.segments[i].t

    def t_fine(self, i: int) -> np.ndarray:
        a, b = self.intervals[i]
        return half_grid(a, b, self.n_steps)

    def h(self, i: int) -> float:
        a, b = self.intervals[i]
        return (b - a) / self.n_steps

    @property
    def z(self) -> GridSignal:
        return self.y.map(lambda t, v: v[:, :-1])

    @property
    def x(self) -> GridSignal:
        return self.y.map(lambda t, v: v[:, -1])

    @classmethod
    def from_fine(cls, t1, t2, T, n_steps, y_fine, u_fine, u_pieces=()) -> "ReferenceProcess":
        intervals = [(0.0, t1), (t1, t2), (t2, T)]
        ts = [uniform_nodes(a, b, n_steps) for a, b in intervals]
        y = GridSignal.from_arrays(ts, [yf[::2] for yf in y_fine])
        u = GridSignal.from_arrays(ts, [uf[::2] for uf in u_fine])
        return cls(float(t1), float(t2), float(T), int(n_steps), y, u,
                   tuple(np.asarray(a, float) for a in y_fine),
                   tuple(np.asarray(a, float) for a in u_fine), tuple(u_pieces))


def simulate(system: ControlSystem, u_pieces: Sequence[Piece], y_init, t1: float, t2: float,
             n_steps: int = DEFAULT_STEPS, check: bool = True, flat_tol: float = 1e-8) -> ReferenceProcess:
    """Integrate the dynamics under piecewise controls; RK4 with half steps so midpoints are states too."""
    T = system.T
    if not 0.0 < t1 < t2 < T:
        raise ReferenceProcessError(f"need 0 < t1 < t2 < T, got t1={t1}, t2={t2}, T={T}")
    y0 = np.array(y_init, dtype=float).reshape(-1)
    if y0.size != system.ny:
        raise ValueError(f"initial state needs {system.ny} components")
    y_fine, u_fine = [], []
    for (a, b), piece in zip([(0.0, t1), (t1, t2), (t2, T)], u_pieces):
        uq = piece(uniform_nodes(a, b, 4 * n_steps))
        try:
            yf = _rk4_states(system.rhs_tuple, y0, uq, (b - a) / (2 * n_steps))
        except (IntegrationError, ExprDomainError, OverflowError) as exc:
            raise ReferenceProcessError(f"blow-up while simulating on [{a:g}, {b:g}]: {exc}") from exc
        y_fine.append(yf)
        u_fine.append(uq[::2])
        y0 = yf[-1]
    w0 = ReferenceProcess.from_fine(t1, t2, T, n_steps, y_fine, u_fine, u_pieces)
    if check:
        _check_shape(system, w0, flat_tol)
    return w0


def _rk4_states(F, y0, uq, h) -> np.ndarray:
    """Sequential RK4 on plain floats; ``uq`` holds controls at quarter steps of the output grid."""
    rows = [tuple(r) for r in uq.tolist()]
    y = tuple(float(v) for v in y0)
    out = [y]
    h2, h6 = h / 2, h / 6
    for k in range(0, len(rows) - 1, 2):
        u0, um, u1 = rows[k], rows[k + 1], rows[k + 2]
        k1 = F(*y, *u0)
        k2 = F(*(yi + h2 * ki for yi, ki in zip(y, k1)), *um)
        k3 = F(*(yi + h2 * ki for yi, ki in zip(y, k2)), *um)
        k4 = F(*(yi + h * ki for yi, ki in zip(y, k3)), *u1)
        y = tuple(yi + h6 * (a + 2 * b + 2 * c + d) for yi, a, b, c, d in zip(y, k1, k2, k3, k4))
        out.append(y)
    arr = np.array(out)
    if not np.all(np.isfinite(arr)):
        raise IntegrationError("non-finite state")
    return arr


def simulate_process(p: ProblemA, u_pieces, z_init, x_init, t1, t2, n_steps: int = DEFAULT_STEPS,
                     **kw) -> ReferenceProcess:
    """Problem A convenience wrapper: initial state given as ``z_init`` and ``x_init``."""
    y0 = [*np.atleast_1d(np.asarray(z_init, dtype=float)), float(x_init)]
    if u_pieces and not callable(u_pieces[0]):
        u_pieces = compile_pieces(u_pieces)
    return simulate(p, u_pieces, y0, t1, t2, n_steps, **kw)


def _check_shape(system: ControlSystem, w0: ReferenceProcess, flat_tol: float):
    c = [system.constraint_values(s.values) for s in w0.y.segments]
    scale = 1.0 + max(float(np.max(np.abs(ci))) for ci in c)
    flat = float(np.max(np.abs(c[1])))
    if flat > flat_tol * scale:
        raise ReferenceProcessError(
            f"state constraint is not active on the boundary arc: max |c| = {flat:.3e} > {flat_tol * scale:.3e}")
    for i in (0, 2):
        inner = c[i][1:-1]
        if inner.size and np.min(inner) <= 0.0:
            raise ReferenceProcessError(
                f"state constraint must be strictly inactive inside interval {i + 1}; min = {np.min(inner):.3e}")


# ---------------------------------------------------------------------------
# assumptions


def active_set(u, phi, tol_act: float = 1e-6, names: Sequence[str] | None = None) -> frozenset[int]:
    """Indices ``s`` (0-based) with ``phi_s(u) >= -tol_act``.

    ``phi`` is a :class:`ControlSystem` or a list of expressions; for the
    latter, ``names`` orders the control components (default: sorted free
    variables).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if isinstance(phi, ControlSystem):
        vals = phi.phi_values(u[None, :])[0]
    else:
        exprs = list(phi)
        if names is None:
            from .expr import free_vars
            names = sorted(set().union(*(free_vars(e) for e in exprs))) if exprs else []
        vals = np.array([compile_expr(e, tuple(names))(*u) for e in exprs], dtype=float)
    return frozenset(int(s) for s in np.flatnonzero(vals >= -tol_act))


def positive_independence_margin(grads: np.ndarray) -> float:
    """Distance-like margin of ``0`` from the convex hull of the rows of ``grads``.

    Zero (up to rounding) means a non-trivial non-negative combination vanishes.
    Solved as ``min |A lam|^2 + (sum lam - 1)^2`` over ``lam >= 0``.
    """
    grads = np.atleast_2d(grads)
    k = grads.shape[0]
    if k == 0:
        return np.inf
    if k == 1:
        return float(np.linalg.norm(grads[0]))
    A = np.vstack([grads.T, np.ones((1, k))])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    _, res = nnls(A, b)
    return float(res)


@dataclass
class RegularityReport:
    landing_rate: float
    leaving_rate: float
    min_order_gain: float          # min over the arc of |d/du of the constraint rate|
    max_phi_on_arc: float
    min_independence_margin: float
    flatness: float
    lipschitz_bound: float
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("landing_rate", "leaving_rate", "min_order_gain", "max_phi_on_arc",
                                           "min_independence_margin", "flatness", "lipschitz_bound")}
        d = {k: (None if not np.isfinite(v) else float(v)) for k, v in d.items()}
        d["violations"] = list(self.violations)
        d["pass"] = self.passed
        return d


def check_regularity(p: ControlSystem, w0: ReferenceProcess, tol: float = 1e-8,
                     tol_act: float = 1e-6) -> RegularityReport:
    """Landing/leaving rates, order-one condition, interior controls on the arc, positive independence."""
    segs_y, segs_u = w0.y.segments, w0.u.segments
    rates = []
    for i, side in ((0, -1), (2, 0)):
        y = segs_y[i].values[side][None, :]
        u = segs_u[i].values[side][None, :]
        F = p.rhs_many(y, u)
        rates.append(float(np.sum(p.constraint_grad(y) * F)))
    landing, leaving = rates

    Y2, U2 = w0.y_fine[1], w0.u_fine[1]
    _, _, Fu = p.rhs_jac(Y2, U2)
    gain = np.einsum("nj,njk->nk", p.constraint_grad(Y2), Fu)
    min_gain = float(np.min(np.linalg.norm(gain, axis=1)))
    max_phi = float(np.max(p.phi_values(U2))) if p.d_phi else -np.inf

    margin = np.inf
    for i in (0, 2):
        U = segs_u[i].values
        vals, jac = p.phi_values(U), p.phi_jac(U)
        for k in range(U.shape[0]):
            act = np.flatnonzero(vals[k] >= -tol_act)
            if act.size:
                margin = min(margin, positive_independence_margin(jac[k, act]))

    c = [p.constraint_values(s.values) for s in segs_y]
    flat = float(np.max(np.abs(c[1])))
    lip = float(np.max(np.abs(np.diff(segs_u[1].values, axis=0)))) / w0.h(1) if w0.n_steps else 0.0

    v = []
    if not landing < -tol:
        v.append("LANDING")
    if not leaving > tol:
        v.append("LEAVING")
    if not min_gain > tol:
        v.append("ORDER_ONE")
    if p.d_phi and not max_phi < -tol:
        v.append("INTERIOR_CONTROL_ON_ARC")
    if not margin > tol:
        v.append("POSITIVE_INDEPENDENCE")
    return RegularityReport(landing, leaving, min_gain, max_phi, margin, flat, lip, v)


def load_problem(document):
    """Build a problem from a problem document (text, path or parsed document)."""
    from .document import ProblemDocument, parse_document
    doc = document if isinstance(document, ProblemDocument) else parse_document(document)
    return doc.problem()
