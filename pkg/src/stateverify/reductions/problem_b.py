"""Time replication: the three intervals become three copies of the system on ``tau in [0, 1]``.

Copy ``i`` carries states ``(r_i, y_i, t_i)`` and controls ``(rho_i, v_i)``
with ``d/dtau = rho_i * (f, g, 1)``. The state constraint on the middle copy
is replaced by the endpoint inequality ``y_2(0) >= 0`` plus the mixed
equality ``g(r_2, y_2, v_2) = 0``.

The verifier here substitutes a full B-form multiplier set into the
stationarity system of the replicated problem and measures residuals. It
never calls the A-form reconstruction, which is what makes it usable as an
independent check of it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from ..integrate import fd_derivative
from ..model import ControlSystem, ReferenceProcess, positive_independence_margin
from ..stationarity import ConditionRecord, MultiplierSetA, _eq, _sign

__all__ = ["ProblemBInstance", "MultiplierSetB", "BReport", "ConventionError",
           "build_problem_b", "map_multipliers_a_to_b", "verify_b_conditions"]


class ConventionError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemBInstance:
    problem: ControlSystem
    tau: np.ndarray                  # (N+1,)
    rho: tuple[float, float, float]
    t: tuple[np.ndarray, ...]        # t_i(tau)
    r: tuple[np.ndarray, ...]        # (N+1, n)
    y: tuple[np.ndarray, ...]        # (N+1,)
    v: tuple[np.ndarray, ...]        # (N+1, m)
    T: float

    @property
    def n_steps(self) -> int:
        return len(self.tau) - 1

    def to_csv(self) -> str:
        p = self.problem
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "tau", "t", *(f"r_{s}" for s in p.state_names[:-1]), "y",
                    *(f"v_{c}" for c in p.control_names), "rho"])
        for i in range(3):
            for k, tau in enumerate(self.tau):
                w.writerow([i + 1, repr(float(tau)), repr(float(self.t[i][k])),
                            *(repr(float(a)) for a in self.r[i][k]), repr(float(self.y[i][k])),
                            *(repr(float(a)) for a in self.v[i][k]), repr(float(self.rho[i]))])
        return buf.getvalue()


def build_problem_b(p: ControlSystem, w0: ReferenceProcess) -> ProblemBInstance:
    """Replicate the reference with ``rho_i = |Delta_i|``; resampling only, nothing integrated."""
    n = p.n
    N = w0.n_steps
    tau = np.arange(N + 1) / N
    rho = tuple(float(b - a) for a, b in w0.intervals)
    t, r, y, v = [], [], [], []
    for i in range(3):
        Y = w0.y.segments[i].values
        t.append(w0.t_main(i).copy())
        r.append(Y[:, :n].copy())
        y.append(Y[:, n].copy())
        v.append(w0.u.segments[i].values.copy())
    return ProblemBInstance(p, tau, rho, tuple(t), tuple(r), tuple(y), tuple(v), w0.T)


@dataclass(frozen=True)
class MultiplierSetB:
    alpha0: float
    alpha1: float
    beta: tuple                      # beta_1 .. beta_8 at index 0 .. 7; beta_5, beta_6 are n-vectors
    psi_r: tuple[np.ndarray, ...]    # (N+1, n) each
    psi_y: tuple[np.ndarray, ...]    # (N+1,)
    psi_t: tuple[np.ndarray, ...]    # (N+1,), constant in theory
    sigma: np.ndarray                # (N+1,)
    h1: np.ndarray                   # (N+1, d_phi)
    h3: np.ndarray

    def to_csv(self, B: ProblemBInstance) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.psi_r[0].shape[1]
        d = self.h1.shape[1]
        w.writerow(["i", "tau", *(f"psi_r{j + 1}" for j in range(n)), "psi_y", "psi_t", "sigma",
                    *(f"h{s + 1}" for s in range(d))])
        zeros = np.zeros_like(self.h1)
        for i, hh in enumerate((self.h1, zeros, self.h3)):
            sig = self.sigma if i == 1 else np.zeros_like(self.sigma)
            for k, tau in enumerate(B.tau):
                w.writerow([i + 1, repr(float(tau)), *(repr(float(a)) for a in self.psi_r[i][k]),
                            repr(float(self.psi_y[i][k])), repr(float(self.psi_t[i][k])),
                            repr(float(sig[k])), *(repr(float(a)) for a in hh[k])])
        return buf.getvalue()


def _m_on_arc(mult: MultiplierSetA, anchor: str, tol: float) -> np.ndarray:
    seg = mult.mu_dot.segments[1]
    cum = cumulative_simpson(seg.values[:, 0], x=seg.t, initial=0.0)
    d1, d2 = mult.atoms
    if anchor == "t2":
        # psi_x = psi_x_tilde + m is continuous at t2
        return -d2 - (cum[-1] - cum)
    if anchor == "t1":
        m = cum
        gap = abs(m[-1] + d2)
        if gap > tol * (1.0 + abs(d2) + abs(m[-1])):
            raise ConventionError(
                f"m(t1+0) = 0 makes m(t2-0) = {m[-1]:.6g}, but continuity of psi_x at t2 needs "
                f"-atom(t2) = {-d2:.6g}")
        return m
    raise ValueError(f"anchor must be 't1' or 't2', not {anchor!r}")


def map_multipliers_a_to_b(mult: MultiplierSetA, w0: ReferenceProcess, anchor: str = "t2",
                           tol: float = 1e-6) -> MultiplierSetB:
    """Translate A-form multipliers to the replicated problem.

    The split of the density into ``m`` on the arc and ``alpha1`` is fixed by
    ``anchor``: ``"t2"`` takes the only choice compatible with the B-form
    transversality conditions (continuity of ``psi_x`` at ``t2``), which makes
    ``alpha1`` the total mass of the measure; ``"t1"`` sets ``m(t1+0) = 0`` and
    raises :class:`ConventionError` when that is inconsistent.
    """
    rho = [b - a for a, b in w0.intervals]
    m = _m_on_arc(mult, anchor, tol)
    psi_r = tuple(mult.psi_z.segments[i].values.copy() for i in range(3))
    px = [mult.psi_x.segments[i].values[:, 0] for i in range(3)]
    psi_y = (px[0].copy(), px[1] + m, px[2].copy())
    psi_t = tuple(np.full(len(px[i]), -mult.c) for i in range(3))
    # each beta is read off one endpoint; the verifier checks the other one
    beta = (
        float(psi_t[0][0]), float(-psi_t[0][-1]), float(-psi_t[1][-1]), float(-psi_t[2][-1]),
        -psi_r[0][-1], -psi_r[1][-1],
        float(-psi_y[0][-1]), float(-psi_y[1][-1]),
    )
    alpha1 = float(-beta[6] - psi_y[1][0])
    hs = [rho[i] * mult.h.segments[i].values for i in (0, 2)]
    return MultiplierSetB(1.0, alpha1, beta, psi_r, psi_y, psi_t, m.copy(), hs[0], hs[1])


@dataclass
class BReport:
    conditions: list[ConditionRecord]
    alpha0: float
    alpha1: float
    beta: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.conditions)

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    @property
    def violations(self) -> list[str]:
        return [r.name for r in self.conditions if not r.passed]

    def __getitem__(self, name):
        for r in self.conditions:
            if r.name == name:
                return r
        raise KeyError(name)

    def max_equality_residual(self) -> float:
        return max(r.residual for r in self.conditions if r.value is None and r.name not in ("B_REGULARITY",))

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "conditions": [r.to_dict() for r in self.conditions],
            "verdict": self.verdict,
            "alpha0": float(self.alpha0),
            "alpha1": float(self.alpha1),
            "beta": [np.asarray(b, dtype=float).tolist() for b in self.beta],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"{r.name:<24} {'pass' if r.passed else 'FAIL'}  residual={r.residual:.3e}  tol={r.tol:.1e}"
                 + (f"  value={r.value:.6g}" if r.value is not None else "") for r in self.conditions]
        lines.append(f"alpha1={self.alpha1:.9g}  beta=" + ", ".join(
            np.array2string(np.asarray(b, dtype=float), precision=6) for b in self.beta))
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def verify_b_conditions(B: ProblemBInstance, mb: MultiplierSetB, tol: float = 1e-6,
                        sign_tol: float = 1e-7, tol_act: float = 1e-6) -> BReport:
    """Substitute B-form multipliers into the replicated stationarity system."""
    p = B.problem
    n = p.n
    N = B.n_steps
    dtau = 1.0 / N
    beta = mb.beta
    a0, a1 = float(mb.alpha0), float(mb.alpha1)
    jacs = [p.rhs_jac(np.column_stack([B.r[i], B.y[i]]), B.v[i]) for i in range(3)]
    hs = (mb.h1, None, mb.h3)
    sig = mb.sigma
    scale = max(max(float(np.max(np.abs(x))) for x in mb.psi_r) if n else 0.0,
                max(float(np.max(np.abs(x))) for x in mb.psi_y), abs(float(mb.psi_t[0][0])))
    recs = []

    ints = [float(np.trapezoid(np.sum(np.abs(h), axis=1), B.tau)) for h in (mb.h1, mb.h3)]
    nontriv = (abs(a0) + abs(a1) + sum(float(np.sum(np.abs(b))) for b in beta) + sum(ints)
               + float(np.trapezoid(np.abs(sig), B.tau)))
    recs.append(ConditionRecord("B_NONTRIVIALITY", 0.0 if nontriv > 0 else 1.0, 0.0, nontriv > 0,
                                value=nontriv, detail="informational: alpha0 = 1"))
    recs.append(_sign("B_NONNEG_ALPHA1", min(a0, a1), sign_tol))
    hmin = min(float(np.min(mb.h1)), float(np.min(mb.h3))) if p.d_phi else 0.0
    recs.append(_sign("B_NONNEG_H", hmin, sign_tol))

    cs = abs(a1 * B.y[1][0])
    if p.d_phi:
        cs = max(cs, float(np.max(np.abs(mb.h1 * p.phi_values(B.v[0])))),
                 float(np.max(np.abs(mb.h3 * p.phi_values(B.v[2])))))
    recs.append(_eq("B_COMPL_SLACK", cs, tol))

    # adjoint equations in tau; psi_y - sigma multiplies g on the middle copy
    adj_r = adj_y = adj_t = 0.0
    for i in range(3):
        _, Fy, _ = jacs[i]
        rho = B.rho[i]
        py_eff = mb.psi_y[i] - (sig if i == 1 else 0.0)
        lam = np.column_stack([mb.psi_r[i], py_eff])
        rhs = -rho * np.einsum("nj,njk->nk", lam, Fy)
        if n:
            adj_r = max(adj_r, float(np.max(np.abs(fd_derivative(mb.psi_r[i], dtau) - rhs[:, :n]))))
        adj_y = max(adj_y, float(np.max(np.abs(fd_derivative(mb.psi_y[i], dtau) - rhs[:, n]))))
        adj_t = max(adj_t, float(np.max(np.abs(fd_derivative(mb.psi_t[i], dtau)))))
    recs.append(_eq("B_ADJOINT_R", adj_r, tol, scale))
    recs.append(_eq("B_ADJOINT_Y", adj_y, tol, scale))
    recs.append(_eq("B_ADJOINT_T", adj_t, tol, scale))

    y0 = np.append(B.r[0][0], B.y[0][0])
    yT = np.append(B.r[2][-1], B.y[2][-1])
    J0, JT = p.cost_grad(y0, yT)
    b = beta
    if n:
        tr_r = max(float(np.max(np.abs(v))) for v in (
            mb.psi_r[0][0] - a0 * J0[:n], mb.psi_r[0][-1] + b[4], mb.psi_r[1][0] + b[4],
            mb.psi_r[1][-1] + b[5], mb.psi_r[2][0] + b[5], mb.psi_r[2][-1] + a0 * JT[:n]))
    else:
        tr_r = 0.0
    recs.append(_eq("B_TRANSVERSALITY_R", tr_r, tol, scale))
    tr_y = max(abs(float(v)) for v in (
        mb.psi_y[0][0] - a0 * J0[n], mb.psi_y[0][-1] + b[6], mb.psi_y[1][0] + b[6] + a1,
        mb.psi_y[1][-1] + b[7], mb.psi_y[2][0] + b[7], mb.psi_y[2][-1] + a0 * JT[n]))
    recs.append(_eq("B_TRANSVERSALITY_Y", tr_y, tol, scale))
    tr_t = max(abs(float(v)) for v in (
        mb.psi_t[0][0] - b[0], mb.psi_t[0][-1] + b[1], mb.psi_t[1][0] + b[1],
        mb.psi_t[1][-1] + b[2], mb.psi_t[2][0] + b[2], mb.psi_t[2][-1] + b[3]))
    recs.append(_eq("B_TRANSVERSALITY_T", tr_t, tol, scale))

    st_v = st_rho = 0.0
    for i in range(3):
        F, _, Fu = jacs[i]
        lam = np.column_stack([mb.psi_r[i], mb.psi_y[i]])
        r = np.einsum("nj,njk->nk", lam, Fu)
        if i == 1:
            r = r - sig[:, None] * Fu[:, n, :]
        elif p.d_phi:
            r = r - np.einsum("ns,nsk->nk", hs[i], p.phi_jac(B.v[i])) / B.rho[i]
        st_v = max(st_v, float(np.max(np.linalg.norm(r, axis=1))))
        H = np.sum(lam * F, axis=1) + mb.psi_t[i]
        if i == 1:
            H = H - sig * F[:, n]
        st_rho = max(st_rho, float(np.max(np.abs(H))))
    recs.append(_eq("B_STATIONARITY_V", st_v, tol, scale))
    recs.append(_eq("B_STATIONARITY_RHO", st_rho, tol, scale))

    # the replicated reference itself: junctions, time boundary values, mixed equality
    gaps = [abs(B.t[0][0]), abs(B.t[2][-1] - B.T), abs(float(B.y[1][0]) if B.y[1][0] < 0 else 0.0)]
    for i in (0, 1):
        gaps.append(float(np.max(np.abs(B.r[i][-1] - B.r[i + 1][0]))) if n else 0.0)
        gaps.append(abs(B.y[i][-1] - B.y[i + 1][0]))
        gaps.append(abs(B.t[i][-1] - B.t[i + 1][0]))
    for i in range(3):
        gaps.append(float(np.max(np.abs(np.diff(B.t[i]) / dtau - B.rho[i]))))
    gaps.append(float(np.max(np.abs(jacs[1][0][:, n]))))
    recs.append(_eq("B_ENDPOINT_CONSTRAINTS", max(gaps), tol, 1.0 + float(np.max(np.abs(B.y[0])))))

    # mixed constraints: inequality gradients on copies 1 and 3, equality gradient on copy 2
    margin = float(np.min(np.linalg.norm(jacs[1][2][:, n, :], axis=1)))
    if p.d_phi:
        for i in (0, 2):
            vals, jac = p.phi_values(B.v[i]), p.phi_jac(B.v[i])
            for k in range(len(B.tau)):
                act = np.flatnonzero(vals[k] >= -tol_act)
                if act.size:
                    margin = min(margin, positive_independence_margin(jac[k, act]))
    recs.append(ConditionRecord("B_REGULARITY", 0.0 if margin > 1e-8 else 1.0, 0.0, margin > 1e-8, value=margin))
    return BReport(recs, a0, a1, beta)
