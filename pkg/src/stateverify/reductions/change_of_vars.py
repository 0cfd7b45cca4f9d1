"""Change of state variables ``(z, x) = F(y) = (P(y), Phi(y))`` for general state constraints.

A problem with constraint ``Phi(y) >= 0`` becomes a problem of the ``(z, x)``
shape, whose dynamics ``F'(G) f(G, u)`` are evaluated through numerical
inversion ``G = F^{-1}`` (batched Newton, warm-started from the nearest point
of the reference tube). Multipliers found there are carried back by
``psi_y = psi_z P'(y) + psi_x Phi'(y)`` and checked natively in ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..expr import Expr, Var, compile_expr, jacobian_many, parse_expr
from ..integrate import GridSignal, fd_derivative, signal_to_csv
from ..model import ControlSystem, ProblemA, ProblemC, ReferenceProcess, check_regularity
from ..stationarity import (ConditionRecord, MultiplierSetA, StationarityReport, _eq, _sign,
                            EQ_TOL, SIGN_TOL)

__all__ = [
    "InversionError", "ChangeOfVariables", "ProblemD", "MultiplierSetC", "TubeReport",
    "invert_change_of_vars", "invert_many", "check_gzpp", "certify_tube", "build_problem_d",
    "map_multipliers_d_to_c", "verify_theorem_c", "as_problem_c", "symmetric_cancellation_residual",
]


class InversionError(ValueError):
    pass


@dataclass(frozen=True)
class ChangeOfVariables:
    state_names: tuple[str, ...]
    P: tuple[Expr, ...]
    Phi: Expr
    newton_tol: float = 1e-12
    max_iter: int = 50
    det_min: float = 1e-12
    _fns: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.P) + 1 != len(self.state_names):
            raise ValueError("need n expressions in P for n + 1 states")
        fns = tuple(compile_expr(e, self.state_names) for e in (*self.P, self.Phi))
        object.__setattr__(self, "_fns", fns)

    @property
    def dim(self) -> int:
        return len(self.state_names)

    @classmethod
    def identity(cls, state_names: Sequence[str], **kw) -> "ChangeOfVariables":
        names = tuple(state_names)
        return cls(names, tuple(Var(s) for s in names[:-1]), Var(names[-1]), **kw)

    @classmethod
    def linear_p(cls, state_names: Sequence[str], rows: np.ndarray, Phi: Expr, **kw) -> "ChangeOfVariables":
        """``P(y) = rows @ y`` with the given ``Phi``."""
        names = tuple(state_names)
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        P = tuple(parse_expr(" + ".join(f"({float(c)!r})*{s}" for c, s in zip(row, names)), names) for row in rows)
        return cls(names, P, Phi, **kw)

    def forward(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(Y)
        return np.stack([np.broadcast_to(fn(*Y.T), (Y.shape[0],)) for fn in self._fns], axis=1)

    def jacobian(self, Y: np.ndarray) -> np.ndarray:
        return jacobian_many(self._fns, list(np.atleast_2d(Y).T))[1]

    def jac_hess(self, Y: np.ndarray):
        return jacobian_many(self._fns, list(np.atleast_2d(Y).T), order=2)


def invert_many(cv: ChangeOfVariables, ZX: np.ndarray, Y_guess: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched Newton for ``F(y) = zx``; returns ``(Y, det F'(Y))``."""
    ZX = np.atleast_2d(np.asarray(ZX, dtype=float))
    Y = np.array(np.atleast_2d(Y_guess), dtype=float)
    tol = cv.newton_tol * (1.0 + np.max(np.abs(ZX), axis=1))
    for _ in range(cv.max_iter):
        R = cv.forward(Y) - ZX
        J = cv.jacobian(Y)
        det = np.linalg.det(J)
        if np.any(np.abs(det) < cv.det_min):
            k = int(np.argmin(np.abs(det)))
            raise InversionError(f"|det F'| = {abs(det[k]):.3e} below threshold at y = {Y[k]}")
        todo = np.max(np.abs(R), axis=1) > tol
        if not np.any(todo):
            return Y, det
        Y[todo] -= np.linalg.solve(J[todo], R[todo][..., None])[..., 0]
        if not np.all(np.isfinite(Y)):
            raise InversionError("Newton iterates left the finite range")
    R = cv.forward(Y) - ZX
    if np.any(np.max(np.abs(R), axis=1) > tol):
        raise InversionError(f"Newton did not converge in {cv.max_iter} iterations "
                             f"(residual {np.max(np.abs(R)):.3e})")
    return Y, np.linalg.det(cv.jacobian(Y))


def invert_change_of_vars(cv: ChangeOfVariables, zx, y_guess, full: bool = False):
    """Solve ``F(y) = zx`` from ``y_guess``; with ``full`` also return ``det F'(y)``."""
    Y, det = invert_many(cv, np.atleast_1d(zx)[None, :], np.atleast_1d(y_guess)[None, :])
    return (Y[0], float(det[0])) if full else Y[0]


def check_gzpp(cv: ChangeOfVariables, y) -> float:
    """``max |G'_z P'(y) + G'_x Phi'(y) - E|`` with ``G' = (F')^{-1}`` split into column blocks."""
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    J = cv.jacobian(Y)
    if np.any(np.abs(np.linalg.det(J)) < cv.det_min):
        raise InversionError("singular F' in check_gzpp")
    Gp = np.linalg.inv(J)
    n = cv.dim - 1
    Gz, Gx = Gp[:, :, :n], Gp[:, :, n]
    Pp, Phip = J[:, :n, :], J[:, n, :]
    S = Gz @ Pp + Gx[:, :, None] * Phip[:, None, :]
    return float(np.max(np.abs(S - np.eye(cv.dim))))


@dataclass
class TubeReport:
    min_abs_det: float
    max_roundtrip: float
    max_gzpp: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.min_abs_det > 0 and self.max_roundtrip <= 1e-10 and self.max_gzpp <= 1e-10


def certify_tube(cv: ChangeOfVariables, w0_y: ReferenceProcess, radius: float = 0.0, n_random: int = 0,
                 seed: int = 0) -> TubeReport:
    """Invertibility, round trip ``G(F(y)) = y`` and the ``G' F' = E`` identity along the reference."""
    Y = np.vstack(w0_y.y_fine)
    if radius > 0 and n_random:
        rng = np.random.default_rng(seed)
        pick = rng.integers(0, len(Y), n_random)
        Y = np.vstack([Y, Y[pick] + radius * rng.uniform(-1, 1, (n_random, Y.shape[1]))])
    ZX = cv.forward(Y)
    guess = Y + 1e-3 * (1.0 + np.abs(Y))
    Yb, det = invert_many(cv, ZX, guess)
    rt = float(np.max(np.abs(Yb - Y) / (1.0 + np.abs(Y))))
    return TubeReport(float(np.min(np.abs(det))), rt, check_gzpp(cv, Y), len(Y))


def as_problem_c(pa: ProblemA) -> ProblemC:
    """View a problem of the ``(z, x)`` shape as a general one with ``Phi(y) = x``."""
    return ProblemC(pa.state_names, pa.control_names, pa.f, Var(pa.x_name), pa.phi, pa.J, pa.T, pa.name)


class ProblemD:
    """``z' = P'(G) f(G, u)``, ``x' = Phi'(G) f(G, u)`` with ``x >= 0``; evaluated through ``G``."""

    kind = "A"

    def __init__(self, pc: ProblemC, cv: ChangeOfVariables, tube: np.ndarray | None = None):
        if tuple(cv.state_names) != tuple(pc.state_names):
            raise ValueError("change of variables must use the problem's state names")
        self.pc, self.cv = pc, cv
        self.T = pc.T
        self.control_names = pc.control_names
        n = pc.ny - 1
        self.state_names = tuple(f"z{j + 1}" for j in range(n)) + ("x",)
        self.name = pc.name
        self._tree = None
        if tube is not None:
            tube = np.asarray(tube, dtype=float)
            self._tube_y = tube
            self._tree = cKDTree(cv.forward(tube))

    ny = property(lambda self: self.pc.ny)
    m = property(lambda self: self.pc.m)
    d_phi = property(lambda self: self.pc.d_phi)
    n = property(lambda self: self.pc.ny - 1)

    def G(self, ZX: np.ndarray) -> np.ndarray:
        ZX = np.atleast_2d(ZX)
        if self._tree is not None:
            _, idx = self._tree.query(ZX)
            guess = self._tube_y[idx]
        else:
            guess = ZX.copy()
        return invert_many(self.cv, ZX, guess)[0]

    def phi_values(self, U):
        return self.pc.phi_values(U)

    def phi_jac(self, U):
        return self.pc.phi_jac(U)

    def rhs_many(self, ZX, U):
        Y = self.G(ZX)
        return np.einsum("nij,nj->ni", self.cv.jacobian(Y), self.pc.rhs_many(Y, np.atleast_2d(U)))

    def rhs(self, zx, u):
        return self.rhs_many(np.atleast_1d(zx)[None, :], np.atleast_1d(u)[None, :])[0]

    def rhs_tuple(self, *args):
        return tuple(self.rhs(np.array(args[:self.ny]), np.array(args[self.ny:])))

    def rhs_jac(self, ZX, U):
        Y = self.G(ZX)
        _, Fp, Fpp = self.cv.jac_hess(Y)
        fv, fy, fu = self.pc.rhs_jac(Y, np.atleast_2d(U))
        val = np.einsum("nij,nj->ni", Fp, fv)
        dY = np.einsum("nikl,nk->nil", Fpp, fv) + Fp @ fy
        return val, dY @ np.linalg.inv(Fp), Fp @ fu

    def cost(self, zx0, zxT) -> float:
        return self.pc.cost(self.G(zx0)[0], self.G(zxT)[0])

    def cost_grad(self, zx0, zxT):
        y0, yT = self.G(zx0)[0], self.G(zxT)[0]
        J0, JT = self.pc.cost_grad(y0, yT)
        Gp = np.linalg.inv(self.cv.jacobian(np.vstack([y0, yT])))
        return J0 @ Gp[0], JT @ Gp[1]

    def constraint_values(self, ZX):
        return np.asarray(ZX)[..., -1]

    def constraint_grad(self, ZX):
        ZX = np.atleast_2d(ZX)
        out = np.zeros_like(ZX, dtype=float)
        out[:, -1] = 1.0
        return out

    def pushforward(self, w0_y: ReferenceProcess) -> ReferenceProcess:
        """The reference in ``(z, x)`` coordinates: ``F`` applied to every stored sample."""
        return ReferenceProcess.from_fine(w0_y.t1, w0_y.t2, w0_y.T, w0_y.n_steps,
                                          [self.cv.forward(yf) for yf in w0_y.y_fine], w0_y.u_fine,
                                          w0_y.u_pieces)


def build_problem_d(pc: ProblemC, cv: ChangeOfVariables, w0_y: ReferenceProcess | None = None) -> ProblemD:
    tube = np.vstack(w0_y.y_fine) if w0_y is not None else None
    return ProblemD(pc, cv, tube)


@dataclass(frozen=True)
class MultiplierSetC:
    psi_y: GridSignal
    mu_dot: GridSignal
    atoms: tuple[float, float]
    h: GridSignal
    c: float
    alpha0: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self, names=None) -> str:
        names = list(names) if names is not None else [f"psi_y{j + 1}" for j in range(self.psi_y.dim)]
        sig = GridSignal.from_arrays([s.t for s in self.psi_y.segments],
                                     [np.hstack([p.values, m.values, hh.values]) for p, m, hh in
                                      zip(self.psi_y.segments, self.mu_dot.segments, self.h.segments)])
        return signal_to_csv(sig, [*names, "mu_dot", *(f"h{s + 1}" for s in range(self.h.dim))])


def map_multipliers_d_to_c(multD: MultiplierSetA, w0_y: ReferenceProcess, cv: ChangeOfVariables) -> MultiplierSetC:
    """``psi_y = psi_z P'(y0) + psi_x Phi'(y0)``; measure, ``h`` and ``c`` carry over."""
    psi = multD.psi
    segs = []
    for i in range(3):
        Fp = cv.jacobian(w0_y.y.segments[i].values)
        segs.append(np.einsum("ni,nij->nj", psi.segments[i].values, Fp))
    psi_y = GridSignal.from_arrays([s.t for s in psi.segments], segs)
    return MultiplierSetC(psi_y, multD.mu_dot, multD.atoms, multD.h, multD.c, multD.alpha0, dict(multD.diagnostics))


def verify_theorem_c(pc: ProblemC, w0_y: ReferenceProcess, mult: MultiplierSetC, tol: float = EQ_TOL,
                     sign_tol: float = SIGN_TOL, tol_act: float = 1e-6) -> StationarityReport:
    """All conditions checked in ``y`` coordinates, with ``Phi(y0)`` in place of ``x0``."""
    psi = mult.psi_y
    nodes = [pc.rhs_jac(s.values, u.values) for s, u in zip(w0_y.y.segments, w0_y.u.segments)]
    scale = psi.sup()
    recs = []

    mu2 = mult.mu_dot.segments[1].values[:, 0]
    recs.append(_sign("NONNEG_DENSITY", np.min(mu2), sign_tol,
                      f"min at t={w0_y.t_main(1)[int(np.argmin(mu2))]:.6g}"))
    recs.append(_sign("NONNEG_ATOMS", min(mult.atoms), sign_tol))
    hmins = [np.min(mult.h.segments[i].values) for i in (0, 2) if mult.h.dim]
    recs.append(_sign("NONNEG_H", min(hmins) if hmins else 0.0, sign_tol))

    Phi = [pc.constraint_values(s.values) for s in w0_y.y.segments]
    cs_state = max(float(np.max(np.abs(mu2 * Phi[1]))),
                   abs(mult.atoms[0] * Phi[1][0]), abs(mult.atoms[1] * Phi[1][-1]))
    recs.append(_eq("COMPL_SLACK_STATE", cs_state, tol))
    cs_ctrl = 0.0
    if pc.d_phi:
        for i in range(3):
            cs_ctrl = max(cs_ctrl, float(np.max(np.abs(
                mult.h.segments[i].values * pc.phi_values(w0_y.u.segments[i].values)))))
    recs.append(_eq("COMPL_SLACK_CONTROL", cs_ctrl, tol))

    adj = 0.0
    for i in range(3):
        ps = psi.segments[i].values
        dPhi = pc.constraint_grad(w0_y.y.segments[i].values)
        rhs = -np.einsum("nj,njk->nk", ps, nodes[i][1]) - mult.mu_dot.segments[i].values * dPhi
        adj = max(adj, float(np.max(np.abs(fd_derivative(ps, w0_y.h(i)) - rhs))))
    recs.append(_eq("ADJOINT", adj, tol, scale))

    y0, yT = w0_y.y.segments[0].values[0], w0_y.y.segments[2].values[-1]
    J0, JT = pc.cost_grad(y0, yT)
    tr = max(float(np.max(np.abs(psi.segments[0].values[0] - J0))),
             float(np.max(np.abs(psi.segments[2].values[-1] + JT))))
    recs.append(_eq("TRANSVERSALITY", tr, tol, scale))

    jr = 0.0
    for k, (seg, side) in enumerate(((0, -1), (2, 0))):
        dPhi = pc.constraint_grad(w0_y.y.segments[seg].values[side])[0]
        jr = max(jr, float(np.max(np.abs(psi.jump(k) + mult.atoms[k] * dPhi))))
    recs.append(_eq("JUMPS", jr, tol, scale))

    H = [np.sum(psi.segments[i].values * nodes[i][0], axis=1) for i in range(3)]
    recs.append(_eq("ENERGY", max(float(np.max(np.abs(h - mult.c))) for h in H), tol, abs(mult.c)))

    st = 0.0
    for i in range(3):
        r = np.einsum("nj,njk->nk", psi.segments[i].values, nodes[i][2])
        if pc.d_phi:
            r = r - np.einsum("ns,nsk->nk", mult.h.segments[i].values, pc.phi_jac(w0_y.u.segments[i].values))
        st = max(st, float(np.max(np.linalg.norm(r, axis=1))))
    recs.append(_eq("STATIONARITY", st, tol, scale))

    reg = check_regularity(pc, w0_y, tol_act=tol_act)
    recs.append(ConditionRecord("REGULARITY", 0.0 if reg.passed else 1.0, 0.0, reg.passed,
                                detail=",".join(reg.violations)))
    return StationarityReport(recs, mult.atoms, mult.c, reg)


def symmetric_cancellation_residual(cv: ChangeOfVariables, psi: np.ndarray, y: np.ndarray, f: np.ndarray,
                                    ybar: np.ndarray, delta: float = 1e-3) -> float:
    """Compare two routes to ``psi (F'(y(t)))^. ybar`` along ``y' = f``.

    Route one differentiates the exact gradients ``F'`` in time by a
    Richardson-extrapolated central difference along ``f``. Route two is the
    Hessian contraction ``(sum_i psi_i F_i'') f ybar`` in its transposed
    order ``ybar^T M f``, which equals the first only because ``M`` is
    symmetric. Returns the larger of the route mismatch and the asymmetry
    ``|f^T M ybar - ybar^T M f|``, relative to ``1 + |value|``.
    """
    def dF(s):
        J = cv.jacobian(np.vstack([y + s * f, y - s * f]))
        return (J[0] - J[1]) / (2 * s)

    D = (4 * dF(delta / 2) - dF(delta)) / 3
    lhs = float(psi @ D @ ybar)
    _, _, Hs = cv.jac_hess(y[None, :])
    M = np.einsum("i,ikl->kl", psi, Hs[0])
    rhs = float(ybar @ M @ f)
    asym = abs(float(f @ M @ ybar) - rhs)
    return max(abs(lhs - rhs), asym) / (1.0 + abs(rhs))
