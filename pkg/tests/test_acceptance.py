"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run on its own with ``python3 tests/test_acceptance.py`` (or
``pytest tests/test_acceptance.py -s``) to see the lines.
"""

import math
import sys
import time

import numpy as np
import pytest

from stateverify.builtin import load_example
from stateverify.document import parse_document
from stateverify.expr import parse_expr as P
from stateverify.pipeline import a_form, settings_for, verify_document
from stateverify.reductions.change_of_vars import (
    ChangeOfVariables, as_problem_c, build_problem_d, check_gzpp, map_multipliers_d_to_c,
    symmetric_cancellation_residual, verify_theorem_c,
)
from stateverify.reductions.problem_b import build_problem_b, map_multipliers_a_to_b, verify_b_conditions
from stateverify.stationarity import check_no_atom_case, reconstruct_multipliers, verify_theorem
from stateverify.variations import (
    build_variation, check_dj_inequality, directional_derivative, fd_ladder, measure_pairing,
    pairing_identity_residual, random_kappa,
)

from conftest import NO_ATOM, density_c_text, make_case
from test_change_of_vars import IDENTITY, kind_c_text


@pytest.fixture
def line(capsys):
    def emit(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        return ok
    return emit


def _sup(sig, col=None):
    return max(float(np.max(np.abs(s.values if col is None else s.values[:, col]))) for s in sig.segments)


def _timed_case(name):
    t0 = time.perf_counter()
    doc = load_example(name)
    case = make_case(doc)
    rep = verify_theorem(case.p, case.w0, case.mult)
    return case, rep, time.perf_counter() - t0


def test_c01_atom_example(line):
    case, rep, dt = _timed_case("atoms")
    m = case.mult
    errs = {
        "psi_z": _sup(m.psi_z.map(lambda t, v: v - 1)),
        "psi_x": max(float(np.max(np.abs(m.psi_x.segments[i].values - w))) for i, w in enumerate((1, 0, -1))),
        "atoms": max(abs(d - 1) for d in m.atoms),
        "h": max(float(np.max(np.abs(m.h.segments[i].values - 1))) for i in (0, 2)),
        "c": abs(m.c),
    }
    ok = (errs["psi_z"] <= 1e-8 and errs["psi_x"] <= 1e-6 and errs["atoms"] <= 1e-6 and errs["h"] <= 1e-6
          and errs["c"] <= 1e-6 and rep.verdict == "PASS" and dt <= 2.0)
    detail = ", ".join(f"{k} err {v:.1e}" for k, v in errs.items()) + f", verdict {rep.verdict}, {dt:.2f} s"
    assert line("criterion 1 atom example a=1", ok, detail)


def test_c02_atom_sweep(line):
    got = {}
    for a in (0.5, 1.0, 2.0):
        got[a] = make_case(load_example("atoms", {"a": a})).mult.atoms
    ok = all(abs(d - a) <= 1e-6 for a, ds in got.items() for d in ds)
    assert line("criterion 2 atoms equal a", ok,
                "; ".join(f"a={a}: ({d[0]:.9f}, {d[1]:.9f})" for a, d in got.items()))


def test_c03_density_example(line):
    case, rep, dt = _timed_case("density")
    m = case.mult
    t = case.w0.t_main(1)
    mu_err = float(np.max(np.abs(m.mu_dot.segments[1].values[:, 0] - (t - 1) * (t - 2))))
    atoms = max(map(abs, m.atoms))
    pz1 = _sup(m.psi_z.map(lambda t, v: v[:, :1] + 1))
    rec = rep["NONNEG_DENSITY"]
    ok = (mu_err <= 1e-6 and atoms <= 1e-6 and pz1 <= 1e-8 and rep.violations == ["NONNEG_DENSITY"]
          and abs(rec.value + 0.25) <= 1e-6 and dt <= 2.0)
    assert line("criterion 3 density example", ok,
                f"mu_dot err {mu_err:.1e}, |atoms| {atoms:.1e}, psi_z1 err {pz1:.1e}, "
                f"violations {rep.violations}, min mu_dot {rec.value:.9f}, {dt:.2f} s")


def _b_form(name):
    case = make_case(load_example(name))
    B = build_problem_b(case.p, case.w0)
    mb = map_multipliers_a_to_b(case.mult, case.w0)
    return mb, verify_b_conditions(B, mb)


def test_c04a_b_form_atoms(line):
    _, rep = _b_form("atoms")
    res = rep.max_equality_residual()
    assert line("criterion 4 B form, atom example", rep.passed and res <= 1e-5,
                f"max residual {res:.1e}, verdict {rep.verdict}")


def test_c04b_b_form_density_residuals(line):
    mb, rep = _b_form("density")
    res = rep.max_equality_residual()
    assert line("criterion 4 B form residuals, density example", res <= 1e-5,
                f"max residual {res:.1e} (alpha1 = {mb.alpha1:.6f})")


@pytest.mark.xfail(strict=True, reason="alpha1 = -1/6 < 0: the negative density mass reappears as the "
                                       "sign of alpha1 in the B form; analysis in notes/decisions.md")
def test_c04c_b_form_density_verdict(line):
    mb, rep = _b_form("density")
    assert line("criterion 4 B form verdict PASS, density example", rep.passed,
                f"violations {rep.violations}, alpha1 = {mb.alpha1:.9f} (known red, see ledger)")


def test_c05_pairing_identity(line):
    worst = {}
    for name in ("atoms", "density"):
        case = make_case(load_example(name))
        rng = np.random.default_rng(5)
        rel = []
        for j in range(100):
            kappa = random_kappa(rng, 1.0, 2.0, "smooth" if j % 2 else "pl")
            var = build_variation(case.p, case.w0, kappa)
            rel.append(pairing_identity_residual(case.p, case.w0, case.mult, var).relative)
        worst[name] = max(rel)
    assert line("criterion 5 pairing identity", max(worst.values()) <= 1e-6,
                ", ".join(f"{k} worst relative {v:.1e}" for k, v in worst.items()))


def test_c06_first_order_consistency(line):
    slopes, gaps = [], []
    for name in ("atoms", "density"):
        case = make_case(load_example(name))
        rng = np.random.default_rng(8)
        for _ in range(10):
            kappa = random_kappa(rng, 1.0, 2.0, "smooth", positive=True)
            var = build_variation(case.p, case.w0, kappa)
            lad = fd_ladder(case.p, case.w0, var)
            slopes.append(lad.slope)
            gaps.append(abs(directional_derivative(case.p, case.w0, var) - measure_pairing(case.mult, case.w0, kappa)))
    ok = all(abs(s - 1) <= 0.2 for s in slopes) and max(gaps) <= 1e-6
    assert line("criterion 6 first-order consistency", ok,
                f"slopes in [{min(slopes):.3f}, {max(slopes):.3f}], max |J'w - pairing| {max(gaps):.1e}")


def test_c07_certificate(line):
    case = make_case(load_example("density"))
    rep = check_dj_inequality(case.p, case.w0, case.mult)
    exact = -0.25 * 0.25 + 0.25 ** 3 / 6
    ok = rep.minimum <= -1e-3 and not rep.nonnegative
    assert line("criterion 7 non-optimality certificate", ok,
                f"min {rep.minimum:.6f} at {rep.argmin} (hat integral {exact:.6f})")


def test_c08_no_atom(line):
    case = make_case(parse_document(NO_ATOM))
    rep = verify_theorem(case.p, case.w0, case.mult)
    na = check_no_atom_case(case.p, case.w0, case.mult)
    atoms = max(map(abs, case.mult.atoms))
    ok = rep.passed and na.applicable and na.psi_x_on_arc <= 1e-7 and atoms <= 1e-7
    assert line("criterion 8 no-atom case", ok,
                f"verdict {rep.verdict}, sup psi_x on arc {na.psi_x_on_arc:.1e}, |atoms| {atoms:.1e}")


def test_c09_change_of_variables(line):
    same = {}
    for name in ("atoms", "density"):
        ra = verify_document(load_example(name))
        rc = verify_document(parse_document(kind_c_text(name, IDENTITY[name])))
        same[name] = [(r.name, r.passed) for r in ra.report.conditions] == \
                     [(r.name, r.passed) for r in rc.report.conditions]
    doc = load_example("atoms")
    p, w, mult, _ = a_form(doc, settings_for(doc))
    A = np.random.default_rng(0).normal(size=(1, 2))
    cv = ChangeOfVariables.linear_p(("z", "x"), A, P("x"))
    D = build_problem_d(as_problem_c(p), cv, w)
    md = reconstruct_multipliers(D, D.pushforward(w))
    Fp = np.vstack([A, [0.0, 1.0]])
    transport = max(float(np.max(np.abs(md.psi.segments[i].values @ Fp - mult.psi.segments[i].values)))
                 for i in range(3))
    linear_same = verify_theorem_c(as_problem_c(p), w, map_multipliers_d_to_c(md, w, cv)).passed
    cdoc = parse_document(density_c_text())
    wy = cdoc.reference_process(cdoc.problem())
    gz = max(check_gzpp(cv, np.vstack(w.y_fine)), check_gzpp(cdoc.change_of_variables(), np.vstack(wy.y_fine)))
    rng = np.random.default_rng(1)
    polar = ChangeOfVariables(("r", "th"), (P("r*cos(th)", {"r", "th"}),), P("r*sin(th)", {"r", "th"}))
    sym = 0.0
    for _ in range(100):
        y = rng.uniform(0.3, 1.2, 2)
        psi, f, yb = rng.normal(size=(3, 2))
        sym = max(sym, symmetric_cancellation_residual(polar, psi, y, f, yb))
    ok = all(same.values()) and transport <= 1e-8 and linear_same and gz <= 1e-10 and sym <= 1e-8
    assert line("criterion 9 change of variables", ok,
                f"identity verdicts equal {same}, |psi^C - psi^E F'| {transport:.1e}, "
                f"G'F' - E {gz:.1e}, symmetric cancellation {sym:.1e}")


def _order_ladder(doc, grids=(25, 50, 100)):
    """Residuals per grid for the smooth components, plus junction and density errors."""
    rows = []
    for N in grids:
        res = verify_document(doc, settings_for(doc, N))
        r = {c.name: c.residual for c in res.report.conditions if c.name in ("ADJOINT", "JUMPS", "ENERGY")}
        r["atoms"] = max(abs(d - e) for d, e in zip(res.multipliers.atoms, doc_atoms(doc)))
        rows.append(r)
    return rows


def doc_atoms(doc):
    return (1.0, 1.0) if doc.name == "atoms_c" else (0.0, 0.0)


FLOOR = 1e-11


def test_c10_numerical_hygiene(line):
    orders = {}
    for doc in (load_example("atoms_c"), parse_document(density_c_text())):
        rows = _order_ladder(doc)
        for key in rows[0]:
            for a, b in zip(rows, rows[1:]):
                if b[key] > FLOOR:
                    orders[f"{doc.name}.{key}"] = min(orders.get(f"{doc.name}.{key}", math.inf),
                                                     math.log2(a[key] / b[key]))
    d1 = verify_document(load_example("atoms_c"), seed=4).to_dict()
    d2 = verify_document(load_example("atoms_c"), seed=4).to_dict()
    ok = len(orders) >= 6 and min(orders.values()) >= 3.0 and d1 == d2
    assert line("criterion 10 grid order and determinism", ok,
                ", ".join(f"{k} {v:.2f}" for k, v in sorted(orders.items())) + f"; deterministic {d1 == d2}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-rxX"]))
