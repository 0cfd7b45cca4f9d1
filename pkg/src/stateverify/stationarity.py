"""Multiplier reconstruction along the boundary arc and the stationarity verifier.

The reconstruction runs three sweeps:

1. before the arc, the adjoint system is integrated forward from the
   transversality values at ``t = 0`` (no measure there);
2. on the arc, stationarity in ``u`` fixes ``psi_x`` algebraically in terms of
   ``psi_z``; substituting it leaves a linear ODE for ``psi_z`` alone, and the
   measure density is whatever closes the ``psi_x`` adjoint equation;
3. after the arc, integrate backward from the transversality values at ``T``.

The mismatch of ``psi_z`` at ``t2`` between sweeps 2 and 3 is the solvability
residual: a process admitting multipliers makes it vanish.

Everything the verifier reports is recomputed from the stored signals and the
problem data, not trusted from the reconstruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .integrate import GridSignal, fd_derivative, rk4_linear, signal_to_csv
from .model import ControlSystem, ReferenceProcess, RegularityReport, check_regularity

__all__ = [
    "AssumptionError", "MultiplierSetA", "ConditionRecord", "StationarityReport", "NoAtomReport",
    "MaxConditionReport", "reconstruct_multipliers", "verify_theorem", "check_no_atom_case",
    "check_max_condition", "solve_h",
]

SIGN_TOL = 1e-7
EQ_TOL = 1e-6


class AssumptionError(ValueError):
    pass


@dataclass(frozen=True)
class MultiplierSetA:
    psi_z: GridSignal          # continuous
    psi_x: GridSignal          # jumps at t1, t2
    mu_dot: GridSignal         # density; zero off the boundary arc
    atoms: tuple[float, float]
    h: GridSignal              # zero on the boundary arc
    c: float
    alpha0: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def psi(self) -> GridSignal:
        return GridSignal.from_arrays([s.t for s in self.psi_z.segments],
                                      [np.hstack([a.values, b.values])
                                       for a, b in zip(self.psi_z.segments, self.psi_x.segments)])

    def mu_cumulative(self) -> GridSignal:
        """``mu(t)``: zero before ``t1``, right-continuous steps by the atoms."""
        d1, d2 = self.atoms
        segs = self.mu_dot.segments
        mid = d1 + cumulative_simpson(segs[1].values[:, 0], x=segs[1].t, initial=0.0)
        return GridSignal.from_arrays([s.t for s in segs], [
            np.zeros(len(segs[0].t)), mid, np.full(len(segs[2].t), mid[-1] + d2)])

    def total_mass(self) -> float:
        return float(self.mu_cumulative().segments[2].values[-1, 0])

    def to_csv(self, z_names=None) -> str:
        psi = self.psi
        n = self.psi_z.dim
        z_names = list(z_names) if z_names is not None else [f"psi_z{j + 1}" for j in range(n)]
        sig = GridSignal.from_arrays([s.t for s in psi.segments],
                                     [np.hstack([p.values, m.values, hh.values]) for p, m, hh in
                                      zip(psi.segments, self.mu_dot.segments, self.h.segments)])
        names = [*z_names, "psi_x", "mu_dot", *(f"h{s + 1}" for s in range(self.h.dim))]
        return signal_to_csv(sig, names)


def _node_jacobians(p: ControlSystem, w0: ReferenceProcess, fine: bool = False):
    out = []
    for i in range(3):
        Y, U = (w0.y_fine[i], w0.u_fine[i]) if fine else (w0.y.segments[i].values, w0.u.segments[i].values)
        out.append(p.rhs_jac(Y, U))
    return out


def solve_h(p: ControlSystem, psi: np.ndarray, Fu: np.ndarray, U: np.ndarray, tol_act: float = 1e-6):
    """Least-squares ``h`` on the active set from ``psi f_u - h phi_u = 0``.

    Nodes are grouped by active pattern so each group is one batched
    pseudo-inverse. Returns ``h`` (N, d_phi) and the residual norm (N,).
    """
    r = np.einsum("nj,njk->nk", psi, Fu)
    h = np.zeros((psi.shape[0], p.d_phi))
    if p.d_phi:
        vals, jac = p.phi_values(U), p.phi_jac(U)
        act = vals >= -tol_act
        keys = act.astype(np.int64) @ (1 << np.arange(p.d_phi, dtype=np.int64))
        for key in np.unique(keys):
            idx = np.flatnonzero(keys == key)
            cols = np.flatnonzero(act[idx[0]])
            if cols.size == 0:
                continue
            G = jac[idx][:, cols, :]
            h_act = np.einsum("nk,nka->na", r[idx], np.linalg.pinv(G))
            h[np.ix_(idx, cols)] = h_act
        r = r - np.einsum("ns,nsk->nk", h, jac)
    return h, np.linalg.norm(r, axis=1)


def reconstruct_multipliers(p: ControlSystem, w0: ReferenceProcess, tol_act: float = 1e-6,
                            gu_min: float = 1e-10) -> MultiplierSetA:
    """Build ``(psi_z, psi_x, mu, h, c)`` for a process with one boundary arc."""
    n = p.n
    y0, yT = w0.y.segments[0].values[0], w0.y.segments[2].values[-1]
    J0, JT = p.cost_grad(y0, yT)
    fine = _node_jacobians(p, w0, fine=True)

    def minus_T(Fy):
        return -np.transpose(Fy, (0, 2, 1))

    psi1 = rk4_linear(minus_T(fine[0][1]), None, J0, w0.h(0), "forward")
    psi3 = rk4_linear(minus_T(fine[2][1]), None, -JT, w0.h(2), "backward")

    _, Fy, Fu = fine[1]
    fu, gu = Fu[:, :n, :], Fu[:, n, :]
    gu2 = np.sum(gu ** 2, axis=1)
    if np.min(np.sqrt(gu2)) < gu_min:
        raise AssumptionError(f"|g_u| vanishes on the boundary arc (min {np.sqrt(np.min(gu2)):.3e})")
    wv = -np.einsum("njk,nk->nj", fu, gu) / gu2[:, None]
    # psi_z' = -psi_z (f_z + w g_z), written for the column vector
    M = Fy[:, :n, :n] + wv[:, :, None] * Fy[:, n, None, :n]
    psiz2 = rk4_linear(-np.transpose(M, (0, 2, 1)), None, psi1[-1, :n], w0.h(1), "forward")
    wn = wv[::2]
    psix2 = np.sum(psiz2 * wn, axis=1)
    Fyn = Fy[::2]
    mu2 = (-np.einsum("nj,nj->n", psiz2, Fyn[:, :n, n]) - psix2 * Fyn[:, n, n]
           - fd_derivative(psix2, w0.h(1)))
    alg = np.linalg.norm(np.einsum("nj,njk->nk", psiz2, fu[::2]) + psix2[:, None] * gu[::2], axis=1)

    ts = [w0.t_main(i) for i in range(3)]
    nodes = _node_jacobians(p, w0)
    U = [s.values for s in w0.u.segments]
    h1, r1 = solve_h(p, psi1, nodes[0][2], U[0], tol_act)
    h3, r3 = solve_h(p, psi3, nodes[2][2], U[2], tol_act)
    h2 = np.zeros((len(ts[1]), p.d_phi))

    psi2 = np.hstack([psiz2, psix2[:, None]])
    H = [np.sum(ps * nd[0], axis=1) for ps, nd in zip((psi1, psi2, psi3), nodes)]
    c = float(np.mean(np.concatenate(H)))

    atoms = (float(psi1[-1, n] - psix2[0]), float(psix2[-1] - psi3[0, n]))
    diag = {
        "solvability": float(np.max(np.abs(psiz2[-1] - psi3[0, :n]))) if n else 0.0,
        "algebraic_residual": float(np.max(alg)),
        "stationarity_residual": float(max(np.max(r1), np.max(r3))),
        "energy_deviation": float(max(np.max(np.abs(x - c)) for x in H)),
        "min_gu": float(np.sqrt(np.min(gu2))),
    }
    return MultiplierSetA(
        psi_z=GridSignal.from_arrays(ts, [psi1[:, :n], psiz2, psi3[:, :n]]),
        psi_x=GridSignal.from_arrays(ts, [psi1[:, n], psix2, psi3[:, n]]),
        mu_dot=GridSignal.from_arrays(ts, [np.zeros(len(ts[0])), mu2, np.zeros(len(ts[2]))]),
        atoms=atoms,
        h=GridSignal.from_arrays(ts, [h1, h2, h3]),
        c=c,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# verification


@dataclass
class ConditionRecord:
    name: str
    residual: float
    tol: float
    passed: bool
    value: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        d = {"name": self.name, "residual": float(self.residual), "tol": float(self.tol), "pass": bool(self.passed)}
        if self.value is not None:
            d["value"] = float(self.value)
        return d


def _eq(name, residual, tol, scale=0.0, detail=""):
    eff = tol * (1.0 + scale)
    return ConditionRecord(name, float(residual), eff, bool(residual <= eff), detail=detail)


def _sign(name, minimum, tol, detail=""):
    minimum = float(minimum)
    return ConditionRecord(name, max(0.0, -minimum), tol, bool(minimum >= -tol), value=minimum, detail=detail)


@dataclass
class StationarityReport:
    conditions: list[ConditionRecord]
    atoms: tuple[float, float]
    c: float
    regularity: RegularityReport | None = None

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.conditions)

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    @property
    def violations(self) -> list[str]:
        return [r.name for r in self.conditions if not r.passed]

    def __getitem__(self, name: str) -> ConditionRecord:
        for r in self.conditions:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = {
            "schema": 1,
            "conditions": [r.to_dict() for r in self.conditions],
            "verdict": self.verdict,
            "atoms": {"t1": float(self.atoms[0]), "t2": float(self.atoms[1])},
            "c": float(self.c),
        }
        if self.regularity is not None:
            d["regularity"] = self.regularity.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"{r.name:<22} {'pass' if r.passed else 'FAIL'}  residual={r.residual:.3e}  tol={r.tol:.1e}"
                 + (f"  value={r.value:.6g}" if r.value is not None else "") for r in self.conditions]
        lines.append(f"atoms: t1={self.atoms[0]:.9g}  t2={self.atoms[1]:.9g}   c={self.c:.9g}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def verify_theorem(p: ControlSystem, w0: ReferenceProcess, mult: MultiplierSetA, tol: float = EQ_TOL,
                   sign_tol: float = SIGN_TOL, tol_act: float = 1e-6) -> StationarityReport:
    """Evaluate every condition by substituting the multipliers back into the problem."""
    n = p.n
    psi = mult.psi
    nodes = _node_jacobians(p, w0)
    scale = psi.sup()
    recs = []

    # sign conditions
    mu2 = mult.mu_dot.segments[1].values[:, 0]
    recs.append(_sign("NONNEG_DENSITY", np.min(mu2), sign_tol,
                      f"min at t={w0.t_main(1)[int(np.argmin(mu2))]:.6g}"))
    recs.append(_sign("NONNEG_ATOMS", min(mult.atoms), sign_tol))
    hmins = [np.min(mult.h.segments[i].values) for i in (0, 2) if mult.h.dim]
    recs.append(_sign("NONNEG_H", min(hmins) if hmins else 0.0, sign_tol))

    # complementary slackness
    x = [p.constraint_values(s.values) for s in w0.y.segments]
    cs_state = max(float(np.max(np.abs(mu2 * x[1]))),
                   abs(mult.atoms[0] * x[1][0]), abs(mult.atoms[1] * x[1][-1]))
    recs.append(_eq("COMPL_SLACK_STATE", cs_state, tol))
    cs_ctrl = 0.0
    if p.d_phi:
        for i in range(3):
            phi = p.phi_values(w0.u.segments[i].values)
            cs_ctrl = max(cs_ctrl, float(np.max(np.abs(mult.h.segments[i].values * phi))))
    recs.append(_eq("COMPL_SLACK_CONTROL", cs_ctrl, tol))

    # adjoint equations by re-substitution
    adj = 0.0
    for i in range(3):
        ps = psi.segments[i].values
        Fy = nodes[i][1]
        rhs = -np.einsum("nj,njk->nk", ps, Fy)
        rhs[:, n] -= mult.mu_dot.segments[i].values[:, 0]
        adj = max(adj, float(np.max(np.abs(fd_derivative(ps, w0.h(i)) - rhs))))
    recs.append(_eq("ADJOINT", adj, tol, scale))

    y0, yT = w0.y.segments[0].values[0], w0.y.segments[2].values[-1]
    J0, JT = p.cost_grad(y0, yT)
    tr = max(float(np.max(np.abs(psi.segments[0].values[0] - J0))),
             float(np.max(np.abs(psi.segments[2].values[-1] + JT))))
    recs.append(_eq("TRANSVERSALITY", tr, tol, scale))

    jz = max(float(np.max(np.abs(mult.psi_z.jump(k)))) if n else 0.0 for k in (0, 1))
    jx = max(abs(float(mult.psi_x.jump(k)[0]) + mult.atoms[k]) for k in (0, 1))
    recs.append(_eq("JUMPS", max(jz, jx), tol, scale, detail=f"psi_z jump {jz:.3e}"))

    H = [np.sum(psi.segments[i].values * nodes[i][0], axis=1) for i in range(3)]
    en = max(float(np.max(np.abs(h - mult.c))) for h in H)
    recs.append(_eq("ENERGY", en, tol, abs(mult.c)))

    st = 0.0
    for i in range(3):
        r = np.einsum("nj,njk->nk", psi.segments[i].values, nodes[i][2])
        if p.d_phi:
            r = r - np.einsum("ns,nsk->nk", mult.h.segments[i].values, p.phi_jac(w0.u.segments[i].values))
        st = max(st, float(np.max(np.linalg.norm(r, axis=1))))
    recs.append(_eq("STATIONARITY", st, tol, scale))

    reg = check_regularity(p, w0, tol_act=tol_act)
    recs.append(ConditionRecord("REGULARITY", 0.0 if reg.passed else 1.0, 0.0, reg.passed,
                                detail=",".join(reg.violations)))
    return StationarityReport(recs, mult.atoms, mult.c, reg)


# ---------------------------------------------------------------------------
# special analyses


@dataclass
class NoAtomReport:
    applicable: bool
    premise_residual: float
    psi_x_on_arc: float = float("nan")
    atoms: tuple[float, float] = (float("nan"), float("nan"))
    switching_jumps: tuple[float, float] = (float("nan"), float("nan"))
    tol: float = 1e-7
    issues: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.applicable and not self.issues


def check_no_atom_case(p: ControlSystem, w0: ReferenceProcess, mult: MultiplierSetA,
                       tol: float = 1e-7, premise_tol: float = 1e-12) -> NoAtomReport:
    """When ``f`` does not depend on ``u``: ``psi_x = 0`` on the arc and no atoms."""
    n = p.n
    prem = 0.0
    for i in range(3):
        Fu = p.rhs_jac(w0.y_fine[i], w0.u_fine[i])[2]
        prem = max(prem, float(np.max(np.abs(Fu[:, :n, :]))) if n else 0.0)
    if prem > premise_tol:
        return NoAtomReport(False, prem, tol=tol, issues=["premise: f depends on u along the process"])
    arc = float(np.max(np.abs(mult.psi_x.segments[1].values)))
    # the switching function psi_x g cannot jump (energy), and g(t1-0), g(t2+0) are nonzero
    g1 = p.rhs_many(w0.y.segments[0].values[-1:], w0.u.segments[0].values[-1:])[0, n]
    g2 = p.rhs_many(w0.y.segments[2].values[:1], w0.u.segments[2].values[:1])[0, n]
    sw = (abs(float(mult.psi_x.jump(0)[0]) * g1), abs(float(mult.psi_x.jump(1)[0]) * g2))
    rep = NoAtomReport(True, prem, arc, tuple(float(a) for a in mult.atoms), sw, tol)
    if arc > tol:
        rep.issues.append(f"psi_x not identically zero on the arc (sup {arc:.3e})")
    for k in (0, 1):
        if abs(mult.atoms[k]) > tol:
            rep.issues.append(f"atom at t{k + 1} is {mult.atoms[k]:.3e}")
        if sw[k] > tol:
            rep.issues.append(f"switching function jumps at t{k + 1} by {sw[k]:.3e}")
    return rep


@dataclass
class MaxConditionReport:
    passed: bool
    worst_gap: float           # max over t, v of H(v) - H(u0)
    t_worst: float
    v_worst: np.ndarray
    n_samples: int


def check_max_condition(p: ControlSystem, w0: ReferenceProcess, mult: MultiplierSetA,
                        samples: np.ndarray | None = None, n_per_dim: int = 41,
                        half_width: float | None = None, tol: float = 1e-9) -> MaxConditionReport:
    """Sample ``U = {phi(v) <= 0}`` and test ``H(v) <= H(u0)`` at every node."""
    if samples is None:
        if half_width is None:
            half_width = max(1.0, 2.0 * w0.u.sup())
        axes = [np.linspace(-half_width, half_width, n_per_dim)] * p.m
        samples = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.m)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if p.d_phi:
        samples = samples[np.all(p.phi_values(samples) <= 0.0, axis=1)]
    if samples.shape[0] == 0:
        raise ValueError("sampler produced no admissible controls; widen the box")
    psi = mult.psi
    worst, t_w, v_w = -np.inf, float("nan"), samples[0]
    for i in range(3):
        Y, U0 = w0.y.segments[i].values, w0.u.segments[i].values
        ps = psi.segments[i].values
        H0 = np.sum(ps * p.rhs_many(Y, U0), axis=1)
        for v in samples:
            gap = np.sum(ps * p.rhs_many(Y, np.broadcast_to(v, U0.shape)), axis=1) - H0
            k = int(np.argmax(gap))
            if gap[k] > worst:
                worst, t_w, v_w = float(gap[k]), float(w0.t_main(i)[k]), v.copy()
    scale = 1.0 + abs(mult.c)
    return MaxConditionReport(bool(worst <= tol * scale), worst, t_w, v_w, int(samples.shape[0]))
