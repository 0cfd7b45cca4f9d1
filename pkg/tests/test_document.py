from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from stateverify.builtin import EXAMPLES, density_targets, example_path, load_example
from stateverify.document import DocumentError, parse_document, read_document
from stateverify.expr import evaluate

from conftest import NO_ATOM


def test_examples_load():
    for name in EXAMPLES:
        doc = load_example(name)
        assert doc.name == name
        assert doc.problem().ny == len(doc.states)


def test_density_document():
    doc = load_example("density")
    assert doc.states == ("z1", "z2", "x")
    assert doc.state_order() == ("z1", "z2", "x")
    assert doc.reference.t1 == 1.0 and doc.reference.t2 == 2.0
    assert doc.reference.init == {"z1": 0.0, "z2": 0.0, "x": 1.0}
    assert doc.n_steps == 2000
    t = sp.Rational(3, 2)
    assert [evaluate(e, {"t": float(t)}) for e in doc.reference.controls["u"]] == [-1.0, 0.0, 1.0]


@pytest.mark.parametrize("abT", [(1, 2, 3), (Fraction(1, 2), 2, 4), (2, 3, 5)])
def test_targets_agree_with_document_params(abT):
    a, b, T = abT
    doc = load_example("density", {"a": float(a), "b": float(b), "T": float(T)})
    exact = density_targets(a, b, T)
    for k, v in exact.items():
        assert doc.params[k] == pytest.approx(float(v), abs=1e-13)
    if abT == (1, 2, 3):
        assert exact == {"z1h": Fraction(1, 2), "z2h": 0, "x0h": Fraction(17, 12), "xTh": Fraction(17, 12)}


def test_overrides_recompute_dependent_params():
    doc = load_example("density", {"a": 0.5})
    assert doc.reference.t1 == 0.5
    assert doc.reference.init["x"] == 0.5
    with pytest.raises(DocumentError, match="undeclared"):
        load_example("atoms", {"nope": 1.0})


def test_atoms_as_kind_a():
    doc = load_example("atoms")
    assert doc.kind == "A" and doc.state_order()[-1] == "x"
    with pytest.raises(DocumentError):
        doc.change_of_variables()


def test_kind_c_default_split_is_identity():
    text = NO_ATOM.replace("[meta]\n", "[meta]\nkind = C\n").replace("[state_constraint]\nx",
                                                                     "[state_constraint]\nPhi = x")
    doc = parse_document(text)
    cv = doc.change_of_variables()
    y = np.array([[0.3, 0.7]])
    np.testing.assert_allclose(cv.forward(y), y)


def _broken(old, new, base=NO_ATOM):
    assert old in base
    return base.replace(old, new)


@pytest.mark.parametrize("text,msg", [
    (_broken("[controls]", "[knobs]"), "unknown section"),
    (_broken("[cost]\nJ = -z_0 + z_T - x_0 - x_T\n", ""), "missing section"),
    (_broken("x = u\n", ""), "no dynamics"),
    (_broken("x = u\n", "x = u\ny = 1\n"), "undeclared state"),
    (_broken("z = x\n", "z = x +\n"), None),
    (_broken("z = x\n", "z = q\n"), None),
    (_broken("T = 3\n", "T = 3\nkind = B\n"), "kind"),
    (_broken("control.u = -1 | 0 | 1", "control.u = -1 | 1"), "three pieces"),
    (_broken("init.x = 1\n", ""), "initial value"),
    (_broken("t1 = 1\n", ""), "t1 and t2"),
    (_broken("[state_constraint]\nx", "[state_constraint]\nw"), "not declared"),
    (_broken("[states]\nz\nx", "[states]\nz\nz\nx"), "already exists"),
    ("[meta\nname = x", "malformed"),
], ids=["section", "no-cost", "no-dyn", "extra-dyn", "syntax", "undeclared-var", "kind",
        "pieces", "init", "times", "constraint", "duplicate", "malformed"])
def test_parse_errors(text, msg):
    with pytest.raises(DocumentError, match=msg):
        parse_document(text)


def test_change_of_vars_only_for_kind_c():
    with pytest.raises(DocumentError, match="kind C"):
        parse_document(NO_ATOM + "\n[change_of_vars]\nw = z\n")


def test_grid_and_tolerances_sections():
    doc = parse_document(NO_ATOM + "\n[grid]\nn_steps = 64\n\n[tolerances]\ntol = 1e-7\n")
    assert doc.n_steps == 64 and doc.tolerances == {"tol": 1e-7}
    with pytest.raises(DocumentError, match="tolerance key"):
        parse_document(NO_ATOM + "\n[tolerances]\nslack = 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(DocumentError, match="cannot read"):
        read_document(tmp_path / "missing.ocp")


def test_round_trip_through_disk(tmp_path):
    p = tmp_path / "copy.ocp"
    p.write_text(example_path("atoms").read_text())
    doc = read_document(p, {"a": 2.0})
    assert doc.params["a"] == 2.0
    assert doc.source.endswith("copy.ocp")
