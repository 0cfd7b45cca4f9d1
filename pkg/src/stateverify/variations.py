"""Variations concentrated on the boundary arc and the first-order cost identity.

A variation is fixed by a scalar function ``kappa`` on ``[t1, t2]`` that
prescribes the constraint coordinate there. On the arc the control variation
is chosen along ``g_u`` so that ``x_bar`` follows ``kappa`` exactly; off the
arc the control is left alone and ``(z_bar, x_bar)`` are carried by the
homogeneous linearized system, backward over the first interval and forward
over the last one.

Pairing such a variation with the multipliers gives the identity

    psi(T) w(T) - psi(0) w(0)
        = -dmu1 x(t1) - dmu2 x(t2) - int mu_dot x dt + int h phi_u u dt,

and with the transversality conditions the left side is ``-J'(w0) w``. So the
measure pairing ``dmu1 k(t1) + dmu2 k(t2) + int mu_dot k`` is the directional
derivative of the cost, and must be non-negative for every ``k >= 0`` at a
stationary process.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .expr import Expr, compile_expr, jacobian_many
from .integrate import GridSignal, IntegrationError, fd_derivative, rk4_linear, signal_to_csv, uniform_nodes
from .model import ControlSystem, ReferenceProcess, _rk4_states
from .stationarity import AssumptionError, MultiplierSetA

__all__ = [
    "Kappa", "Variation", "PairingResult", "PerturbationReport", "DJReport", "LadderResult",
    "build_variation", "pairing_identity_residual", "directional_derivative", "measure_pairing",
    "perturb_process", "fd_ladder", "check_dj_inequality", "bump_family", "random_kappa",
    "variational_residual",
]


@dataclass(frozen=True)
class Kappa:
    """Scalar function on the boundary arc, vectorized in ``t``.

    ``deriv`` is optional; without it the derivative is taken by fourth-order
    differences on the sample grid. ``knots`` lists points where ``kappa`` may
    have a kink; integrals over the arc split there.
    """

    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""
    knots: tuple[float, ...] = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.value(t), dtype=float), t.shape).copy()

    def derivative(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.deriv is not None:
            return np.broadcast_to(np.asarray(self.deriv(t), dtype=float), t.shape).copy()
        return fd_derivative(self(t), t[1] - t[0])

    @classmethod
    def constant(cls, c: float) -> "Kappa":
        return cls(lambda t: np.full_like(t, c), lambda t: np.zeros_like(t), f"const({c:g})")

    @classmethod
    def from_expr(cls, e: Expr, label: str = "") -> "Kappa":
        fn = compile_expr(e, ("t",))
        return cls(fn, lambda t: jacobian_many([fn], [t])[1][:, 0, 0], label)

    @classmethod
    def from_grid(cls, t: np.ndarray, values: np.ndarray, label: str = "") -> "Kappa":
        """Piecewise-linear interpolant of samples; its derivative is the exact slope."""
        t = np.asarray(t, dtype=float)
        v = np.asarray(values, dtype=float)
        slopes = np.diff(v) / np.diff(t)

        def deriv(s):
            k = np.clip(np.searchsorted(t, s, side="right") - 1, 0, len(slopes) - 1)
            return slopes[k]
        return cls(lambda s: np.interp(s, t, v), deriv, label, tuple(map(float, t)))


@dataclass(frozen=True)
class Variation:
    kappa: Kappa
    z_bar: GridSignal
    x_bar: GridSignal
    u_bar: GridSignal
    u_bar_fine: tuple[np.ndarray, ...] = field(repr=False, default=())

    @property
    def w_bar(self) -> GridSignal:
        return GridSignal.from_arrays([s.t for s in self.z_bar.segments],
                                      [np.hstack([a.values, b.values])
                                       for a, b in zip(self.z_bar.segments, self.x_bar.segments)])

    def to_csv(self) -> str:
        w = self.w_bar
        sig = GridSignal.from_arrays([s.t for s in w.segments],
                                     [np.hstack([a.values, b.values]) for a, b in zip(w.segments, self.u_bar.segments)])
        n, m = self.z_bar.dim, self.u_bar.dim
        return signal_to_csv(sig, [*(f"z_bar{j + 1}" for j in range(n)), "x_bar",
                                   *(f"u_bar{j + 1}" for j in range(m))])


def build_variation(p: ControlSystem, w0: ReferenceProcess, kappa: Kappa, gu_min: float = 1e-10) -> Variation:
    n, m = p.n, p.m
    h2 = w0.h(1)
    tf = w0.t_fine(1)
    k = kappa(tf)
    kd = kappa.derivative(tf)
    _, Fy, Fu = p.rhs_jac(w0.y_fine[1], w0.u_fine[1])
    fz, fx = Fy[:, :n, :n], Fy[:, :n, n]
    gz, gx = Fy[:, n, :n], Fy[:, n, n]
    fu, gu = Fu[:, :n, :], Fu[:, n, :]
    gu2 = np.sum(gu ** 2, axis=1)
    if np.sqrt(np.min(gu2)) < gu_min:
        raise AssumptionError(f"|g_u| vanishes on the boundary arc (min {np.sqrt(np.min(gu2)):.3e})")
    wv = -np.einsum("njk,nk->nj", fu, gu) / gu2[:, None]
    # z_bar' = (f_z + w g_z) z_bar + f_x k + w (g_x k - k')
    A = fz + wv[:, :, None] * gz[:, None, :]
    b = fx * k[:, None] + wv * (gx * k - kd)[:, None]
    z2 = rk4_linear(A, b, np.zeros(n), h2, "forward")
    # midpoint values by cubic Hermite from the node slopes
    zp = np.einsum("njk,nk->nj", A[::2], z2) + b[::2]
    zmid = (z2[:-1] + z2[1:]) / 2 + h2 / 8 * (zp[:-1] - zp[1:])
    zf = np.empty((len(tf), n))
    zf[::2], zf[1::2] = z2, zmid
    v = (kd - np.einsum("nj,nj->n", gz, zf) - gx * k) / gu2
    uf2 = v[:, None] * gu

    w_t1 = np.append(np.zeros(n), k[0])
    _, Fy1, _ = p.rhs_jac(w0.y_fine[0], w0.u_fine[0])
    w1 = rk4_linear(Fy1, None, w_t1, w0.h(0), "backward")
    _, Fy3, _ = p.rhs_jac(w0.y_fine[2], w0.u_fine[2])
    w3 = rk4_linear(Fy3, None, np.append(z2[-1], k[-1]), w0.h(2), "forward")

    ts = [w0.t_main(i) for i in range(3)]
    uf = (np.zeros((2 * w0.n_steps + 1, m)), uf2, np.zeros((2 * w0.n_steps + 1, m)))
    return Variation(
        kappa=kappa,
        z_bar=GridSignal.from_arrays(ts, [w1[:, :n], z2, w3[:, :n]]),
        x_bar=GridSignal.from_arrays(ts, [w1[:, n], k[::2], w3[:, n]]),
        u_bar=GridSignal.from_arrays(ts, [u[::2] for u in uf]),
        u_bar_fine=uf,
    )


def variational_residual(p: ControlSystem, w0: ReferenceProcess, var: Variation) -> float:
    """Sup of ``|w_bar' - F_y w_bar - F_u u_bar|`` with ``w_bar'`` by fourth-order differences."""
    worst = 0.0
    for i, (sw, su) in enumerate(zip(var.w_bar.segments, var.u_bar.segments)):
        _, Fy, Fu = p.rhs_jac(w0.y.segments[i].values, w0.u.segments[i].values)
        lhs = fd_derivative(sw.values, w0.h(i))
        rhs = np.einsum("njk,nk->nj", Fy, sw.values) + np.einsum("njk,nk->nj", Fu, su.values)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def _integral(t: np.ndarray, v: np.ndarray) -> float:
    return float(simpson(v, x=t)) if len(t) % 2 == 1 else float(np.trapezoid(v, t))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


def _arc_integral(t: np.ndarray, g: np.ndarray, kappa: Kappa | np.ndarray) -> float:
    """``int g kappa`` over the arc for ``g`` sampled at the nodes ``t``.

    Simpson on the nodes when ``kappa`` is smooth. With kinks strictly inside
    the arc, ``g`` is replaced by its cubic spline and the product is
    integrated by 3-point Gauss on every piece between nodes and kinks, so a
    kink between two nodes costs no accuracy.
    """
    inner = [] if not isinstance(kappa, Kappa) else [c for c in kappa.knots if t[0] < c < t[-1]]
    if not inner:
        k = kappa(t) if callable(kappa) else np.asarray(kappa, dtype=float)
        return _integral(t, g * k)
    br = np.union1d(t, inner)
    mid, half = (br[1:] + br[:-1]) / 2, (br[1:] - br[:-1]) / 2
    pts = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    vals = CubicSpline(t, g)(pts) * kappa(pts)
    return float(np.sum(half * (vals.reshape(-1, 3) @ _GL_W)))


def measure_pairing(mult: MultiplierSetA, w0: ReferenceProcess, kappa: Kappa | np.ndarray) -> float:
    """``dmu1 k(t1) + dmu2 k(t2) + int mu_dot k`` over the boundary arc."""
    t = w0.t_main(1)
    k = kappa(t) if callable(kappa) else np.asarray(kappa, dtype=float)
    d1, d2 = mult.atoms
    return d1 * k[0] + d2 * k[-1] + _arc_integral(t, mult.mu_dot.segments[1].values[:, 0], kappa)


def directional_derivative(p: ControlSystem, w0: ReferenceProcess, var: Variation) -> float:
    y0, yT = w0.y.segments[0].values[0], w0.y.segments[2].values[-1]
    g0, gT = p.cost_grad(y0, yT)
    w = var.w_bar
    return float(g0 @ w.segments[0].values[0] + gT @ w.segments[2].values[-1])


@dataclass(frozen=True)
class PairingResult:
    lhs: float
    rhs: float
    absolute: float
    relative: float
    terms: dict

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "absolute": self.absolute,
                "relative": self.relative, "terms": self.terms}


def pairing_identity_residual(p: ControlSystem, w0: ReferenceProcess, mult: MultiplierSetA,
                              var: Variation) -> PairingResult:
    """Both sides of the pairing identity.

    ``relative`` divides by the larger of 1 and the sum of the absolute values
    of all terms, so it stays meaningful when both sides vanish.
    """
    psi, w = mult.psi, var.w_bar
    end = float(psi.segments[2].values[-1] @ w.segments[2].values[-1])
    start = float(psi.segments[0].values[0] @ w.segments[0].values[0])
    d1, d2 = mult.atoms
    xb = var.x_bar
    atom1, atom2 = -d1 * float(xb.segments[1].values[0, 0]), -d2 * float(xb.segments[1].values[-1, 0])
    t = w0.t_main(1)
    # x_bar is kappa on the arc; passing kappa itself lets the integral see its kinks
    dens = -_arc_integral(t, mult.mu_dot.segments[1].values[:, 0], var.kappa)
    ctrl = 0.0
    if p.d_phi:
        for i in range(3):
            U = w0.u.segments[i].values
            hphi = np.einsum("ns,nsk->nk", mult.h.segments[i].values, p.phi_jac(U))
            ctrl += _integral(w0.t_main(i), np.sum(hphi * var.u_bar.segments[i].values, axis=1))
    lhs, rhs = end - start, atom1 + atom2 + dens + ctrl
    scale = max(1.0, abs(end) + abs(start) + abs(atom1) + abs(atom2) + abs(dens) + abs(ctrl))
    diff = abs(lhs - rhs)
    return PairingResult(lhs, rhs, diff, diff / scale, {
        "psi_w_T": end, "psi_w_0": start, "atom_t1": atom1, "atom_t2": atom2,
        "density": dens, "control": ctrl})


# ---------------------------------------------------------------------------
# nonlinear realization


@dataclass(frozen=True)
class PerturbationReport:
    eps: float
    y: GridSignal
    min_x_outer: float
    min_x_arc: float
    max_phi: float
    cost_gap: float

    @property
    def feasible(self) -> bool:
        return self.min_x_outer > 0 and self.min_x_arc >= 0 and self.max_phi <= 0

    def to_dict(self) -> dict:
        return {"eps": self.eps, "min_x_outer": self.min_x_outer, "min_x_arc": self.min_x_arc,
                "max_phi": self.max_phi, "cost_gap": self.cost_gap, "feasible": self.feasible}


def perturb_process(p: ControlSystem, w0: ReferenceProcess, var: Variation, eps: float) -> PerturbationReport:
    """Integrate the nonlinear system under ``u0 + eps u_bar`` from ``y0(0) + eps w_bar(0)``.

    Uses the same half-step RK4 as the reference simulation, with controls at
    quarter points, so ``eps = 0`` reproduces the reference states bit for bit
    when the reference carries its control pieces.
    """
    N = w0.n_steps
    y = w0.y.segments[0].values[0] + eps * var.w_bar.segments[0].values[0]
    segs, phi_max = [], -np.inf
    for i, (a, b) in enumerate(w0.intervals):
        tf = w0.t_fine(i)
        if w0.u_pieces:
            tq = uniform_nodes(a, b, 4 * N)
            uq = w0.u_pieces[i](tq)
            if eps:
                ub = var.u_bar_fine[i]
                uq = uq + eps * np.stack([np.interp(tq, tf, ub[:, j]) for j in range(ub.shape[1])], axis=1)
            hstep = (b - a) / (2 * N)
        else:
            uq = w0.u_fine[i] + eps * var.u_bar_fine[i]
            hstep = (b - a) / N
        try:
            ys = _rk4_states(p.rhs_tuple, y, uq, hstep)
        except (IntegrationError, OverflowError, ArithmeticError) as exc:
            raise IntegrationError(f"blow-up in perturbed run on [{a:g}, {b:g}]: {exc}") from exc
        main = ys[::2] if w0.u_pieces else ys
        segs.append(main)
        if p.d_phi:
            phi_max = max(phi_max, float(np.max(p.phi_values(uq))))
        y = ys[-1]
    ts = [w0.t_main(i) for i in range(3)]
    Y = GridSignal.from_arrays(ts, segs)
    c = [p.constraint_values(s) for s in segs]
    outer = min(float(np.min(c[0][:-1])), float(np.min(c[2][1:])))
    J0 = p.cost(w0.y.segments[0].values[0], w0.y.segments[2].values[-1])
    Je = p.cost(segs[0][0], segs[2][-1])
    return PerturbationReport(float(eps), Y, outer, float(np.min(c[1])),
                              phi_max if p.d_phi else 0.0, Je - J0)


@dataclass(frozen=True)
class LadderResult:
    eps: tuple[float, ...]
    quotients: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    derivative: float

    @property
    def exact(self) -> bool:
        """Quotients match to roundoff (the cost is linear along the variation); the slope is noise then."""
        return max(self.errors) <= 1e-9 * (1 + abs(self.derivative))

    def to_dict(self) -> dict:
        return {"eps": list(self.eps), "quotients": list(self.quotients), "errors": list(self.errors),
                "slope": self.slope, "derivative": self.derivative, "exact": self.exact}


def fd_ladder(p: ControlSystem, w0: ReferenceProcess, var: Variation,
              eps: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> LadderResult:
    """Difference quotients of the cost against the directional derivative, with the log-log slope."""
    d = directional_derivative(p, w0, var)
    q = [perturb_process(p, w0, var, e).cost_gap / e for e in eps]
    err = [abs(qi - d) for qi in q]
    le, lr = np.log(np.asarray(eps)), np.log(np.maximum(err, 1e-300))
    slope = float(np.polyfit(le, lr, 1)[0])
    return LadderResult(tuple(map(float, eps)), tuple(q), tuple(err), slope, d)


# ---------------------------------------------------------------------------
# kappa families


def bump_family(t1: float, t2: float, n_centers: int = 9,
                widths: Sequence[float] | None = None) -> list[Kappa]:
    """Hat functions over the arc plus two hats pinned at the junctions."""
    L = t2 - t1
    widths = widths if widths is not None else (L / 4, L / 16)
    out = []
    for delta in widths:
        for c in np.linspace(t1 + delta, t2 - delta, n_centers):
            out.append(_hat(float(c), float(delta)))
    out.append(_hat(t1, L / 16, f"edge(t1,{L / 16:g})"))
    out.append(_hat(t2, L / 16, f"edge(t2,{L / 16:g})"))
    return out


def _hat(c: float, delta: float, label: str = "") -> Kappa:
    return Kappa(lambda t: np.maximum(0.0, 1 - np.abs(t - c) / delta),
                 lambda t: np.where(np.abs(t - c) < delta, -np.sign(t - c) / delta, 0.0),
                 label or f"bump({c:g},{delta:g})", (c - delta, c, c + delta))


def random_kappa(rng: np.random.Generator, t1: float, t2: float, kind: str = "smooth",
                 positive: bool = False, n_modes: int = 4) -> Kappa:
    """Random Lipschitz function on ``[t1, t2]``.

    ``smooth`` is a short trigonometric sum; ``pl`` is piecewise linear on a
    random partition. ``positive`` shifts the result to have minimum near 1.
    """
    L = t2 - t1
    if kind == "smooth":
        a = rng.normal(size=n_modes) / (1 + np.arange(n_modes))
        ph = rng.uniform(0, 2 * np.pi, size=n_modes)
        c0 = rng.normal()
        w = np.pi * (1 + np.arange(n_modes)) / L
        if positive:
            c0 = 1.0 + np.sum(np.abs(a))

        def val(t):
            t = np.asarray(t, dtype=float)[..., None]
            return c0 + np.sum(a * np.sin(w * (t - t1) + ph), axis=-1)

        def der(t):
            t = np.asarray(t, dtype=float)[..., None]
            return np.sum(a * w * np.cos(w * (t - t1) + ph), axis=-1)
        return Kappa(val, der, "random-smooth")
    if kind == "pl":
        knots = np.sort(np.concatenate([[t1, t2], rng.uniform(t1, t2, size=n_modes)]))
        v = rng.normal(size=knots.size)
        if positive:
            v = v - v.min() + 1.0
        return Kappa.from_grid(knots, v, "random-pl")
    raise ValueError(f"unknown kappa kind {kind!r}")


@dataclass(frozen=True)
class DJReport:
    values: tuple[float, ...]
    labels: tuple[str, ...]
    minimum: float
    argmin: str
    tol: float

    @property
    def nonnegative(self) -> bool:
        return self.minimum >= -self.tol

    def to_dict(self) -> dict:
        return {"minimum": self.minimum, "argmin": self.argmin, "nonnegative": self.nonnegative,
                "tol": self.tol, "values": dict(zip(self.labels, self.values))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_dj_inequality(p: ControlSystem, w0: ReferenceProcess, mult: MultiplierSetA,
                        family: Sequence[Kappa] | None = None, tol: float = 1e-6) -> DJReport:
    """Evaluate the measure pairing over a family of ``kappa >= 0``.

    A negative minimum is a certificate that the process is not stationary in
    the measure sense, whatever the other conditions say.
    """
    family = list(family) if family is not None else bump_family(w0.t1, w0.t2)
    vals = [measure_pairing(mult, w0, k) for k in family]
    labels = [k.label or f"kappa{j}" for j, k in enumerate(family)]
    j = int(np.argmin(vals)) if vals else 0
    return DJReport(tuple(vals), tuple(labels), float(vals[j]) if vals else 0.0,
                    labels[j] if vals else "", tol)
