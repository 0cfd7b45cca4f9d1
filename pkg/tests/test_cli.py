import json

import pytest

from stateverify.builtin import example_path
from stateverify.cli import main

ATOMS, DENSITY, ATOMS_C = (str(example_path(n)) for n in ("atoms", "density", "atoms_c"))


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_atoms(tmp_path, capsys):
    rep = tmp_path / "r.json"
    code, out, _ = _run(capsys, "verify", ATOMS, "--param", "a=1", "--report", str(rep))
    assert code == 0
    d = json.loads(rep.read_text())
    assert d["schema"] == 1 and d["verdict"] == "PASS"
    assert d["atoms"]["t1"] == pytest.approx(1.0, abs=1e-6)
    assert d["atoms"]["t2"] == pytest.approx(1.0, abs=1e-6)
    assert "overall: PASS" in out


def test_verify_density(tmp_path, capsys):
    rep = tmp_path / "r.json"
    code, out, _ = _run(capsys, "verify", DENSITY, "--param", "a=1", "b=2", "T=3", "--report", str(rep),
                        "--csv-out", str(tmp_path / "csv"))
    assert code == 2
    d = json.loads(rep.read_text())
    assert d["violations"] == ["NONNEG_DENSITY"]
    assert d["min_mu_dot"] == pytest.approx(-0.25, abs=1e-6)
    mult = (tmp_path / "csv" / "multipliers.csv").read_text().splitlines()
    assert mult[0] == "t,psi_z1,psi_z2,psi_x,mu_dot,h1,side"
    proc = (tmp_path / "csv" / "process.csv").read_text().splitlines()
    assert proc[0] == "t,z1,z2,x,u,side"


def test_missing_file(capsys):
    code, _, err = _run(capsys, "verify", "missing.ocp")
    assert code == 1 and "cannot read" in err


@pytest.mark.parametrize("argv", [
    [], ["verify"], ["frobnicate"], ["verify", ATOMS, "--grid", "2"], ["verify", ATOMS, "--param", "a"],
    ["verify", ATOMS, "--param", "a=one"], ["verify", ATOMS, "--param", "zz=1"], ["example", "nowhere"],
    ["variation", ATOMS, "--kappa", "t +"], ["variation", ATOMS, "--family", "random"],
], ids=["empty", "no-file", "bad-cmd", "grid", "param-form", "param-value", "param-name", "example",
        "kappa", "random-needs-seed"])
def test_usage_errors(argv, capsys):
    assert _run(capsys, *argv)[0] == 1


def test_examples(capsys):
    assert _run(capsys, "example", "atoms", "--grid", "400")[0] == 0
    assert _run(capsys, "example", "density", "--grid", "400")[0] == 2
    code, out, _ = _run(capsys, "example", "atoms_c", "--grid", "400", "--seed", "3")
    assert code == 0 and "tube:" in out


def test_reduce_b(tmp_path, capsys):
    rep = tmp_path / "b.json"
    code, out, _ = _run(capsys, "reduce-b", ATOMS, "--grid", "400", "--report", str(rep),
                        "--csv-out", str(tmp_path))
    assert code == 0
    d = json.loads(rep.read_text())
    assert d["instance"]["rho"] == [1.0, 1.0, 1.0]
    assert d["beta"][6] == pytest.approx(-1.0, abs=1e-9)
    assert (tmp_path / "instance.csv").read_text().startswith("i,tau,t,")
    assert (tmp_path / "multipliers_b.csv").read_text().startswith("i,tau,psi_r1,")
    code, out, _ = _run(capsys, "reduce-b", DENSITY, "--grid", "400", "--report", str(rep))
    assert code == 2 and json.loads(rep.read_text())["violations"] == ["B_NONNEG_ALPHA1"]
    code, out, _ = _run(capsys, "reduce-b", ATOMS, "--grid", "400", "--anchor", "t1", "--report", str(rep))
    assert code == 2 and json.loads(rep.read_text())["violations"] == ["CONVENTION"]


def test_variation(tmp_path, capsys):
    rep = tmp_path / "v.json"
    code, out, _ = _run(capsys, "variation", DENSITY, "--grid", "400", "--report", str(rep),
                        "--kappa", "1 + (t - a)*(b - t)", "--csv-out", str(tmp_path))
    assert code == 2
    d = json.loads(rep.read_text())
    assert d["schema"] == 1
    assert d["dj_family"]["argmin"] == "bump(1.5,0.25)"
    assert d["variations"][0]["pairing"]["relative"] <= 1e-6
    assert (tmp_path / "variation_0.csv").read_text().startswith("t,z_bar1,z_bar2,x_bar,u_bar1,side")
    code, out, _ = _run(capsys, "variation", ATOMS, "--grid", "400", "--family", "random", "--seed", "1")
    assert code == 0 and "fd " in out


def test_assumption_failure_exits_2(tmp_path, capsys):
    bad = tmp_path / "g3.ocp"
    bad.write_text(example_path("atoms").read_text().replace("x = u\n", "x = u^3\n"))
    rep = tmp_path / "r.json"
    code, _, err = _run(capsys, "verify", str(bad), "--grid", "100", "--report", str(rep))
    assert code == 2 and "assumption" in err
    assert json.loads(rep.read_text())["violations"] == ["ASSUMPTION"]


def test_reports_are_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        rep = tmp_path / f"r{k}.json"
        _run(capsys, "verify", DENSITY, "--grid", "200", "--report", str(rep))
        outs.append(rep.read_text())
    assert outs[0] == outs[1]


def test_grid_and_tol_flags(tmp_path, capsys):
    rep = tmp_path / "r.json"
    _run(capsys, "verify", ATOMS_C, "--grid", "100", "--tol", "1e-5", "--report", str(rep))
    s = json.loads(rep.read_text())["settings"]
    assert s["n_steps"] == 100 and s["tol"] == 1e-5
