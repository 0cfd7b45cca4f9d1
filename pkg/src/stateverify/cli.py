"""Command line: ``stateverify {verify, reduce-b, variation, example} ...``.

Exit codes: 0 when every checked condition holds, 2 when some condition
fails (including a violated standing assumption), 1 for usage or parse errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .builtin import EXAMPLES, example_path
from .document import DocumentError, ProblemDocument, read_document
from .expr import ExprError, parse_expr
from .integrate import signal_to_csv
from .model import ReferenceProcessError
from .pipeline import Settings, reduce_document, settings_for, variation_document, verify_document
from .reductions.change_of_vars import InversionError
from .reductions.problem_b import ConventionError
from .stationarity import AssumptionError
from .variations import Kappa, bump_family, random_kappa

EXIT_PASS, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(sp):
    sp.add_argument("--grid", type=int, default=None, metavar="N", help="steps per interval (default 2000)")
    sp.add_argument("--tol", type=float, default=None, metavar="X", help="master tolerance (default 1e-6)")
    sp.add_argument("--param", action="extend", nargs="+", default=[], metavar="K=V",
                    help="parameter override; repeatable")
    sp.add_argument("--report", type=Path, default=None, metavar="PATH", help="write the JSON report here")
    sp.add_argument("--csv-out", type=Path, default=None, metavar="DIR", help="write signal CSVs here")
    sp.add_argument("--seed", type=int, default=None, help="seed for sampled checks")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="stateverify", description="Check stationarity of a process with one boundary arc.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", help="reconstruct multipliers and check every condition")
    v.add_argument("file", type=Path)
    _common(v)
    b = sub.add_parser("reduce-b", help="replicate the intervals and check the replicated conditions")
    b.add_argument("file", type=Path)
    b.add_argument("--anchor", choices=("t1", "t2"), default="t2", help="where the arc multiplier is pinned")
    _common(b)
    w = sub.add_parser("variation", help="pairing identity and cost derivative along arc variations")
    w.add_argument("file", type=Path)
    w.add_argument("--kappa", action="append", default=[], metavar="EXPR", help="kappa(t) on the arc; repeatable")
    w.add_argument("--family", choices=("bumps", "random"), default="bumps",
                   help="family for the sign check (random needs --seed)")
    w.add_argument("--n-random", type=int, default=10, help="size of the random family")
    _common(w)
    e = sub.add_parser("example", help="run verify on a packaged example")
    e.add_argument("name")
    _common(e)
    return ap


def _overrides(items) -> dict[str, float]:
    out = {}
    for it in items:
        k, sep, v = it.partition("=")
        if not sep or not k:
            raise UsageError(f"--param expects K=V, got {it!r}")
        try:
            out[k.strip()] = float(v)
        except ValueError as exc:
            raise UsageError(f"--param {k}: not a number: {v!r}") from exc
    return out


def _load(path: Path, args) -> tuple[ProblemDocument, Settings]:
    doc = read_document(path, _overrides(args.param))
    if args.grid is not None and args.grid < 4:
        raise UsageError("--grid must be at least 4")
    return doc, settings_for(doc, args.grid, args.tol)


def _write_report(args, d: dict):
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(json.dumps(d, indent=2) + "\n")


def _csv_dir(args) -> Path | None:
    if args.csv_out is None:
        return None
    args.csv_out.mkdir(parents=True, exist_ok=True)
    return args.csv_out


def cmd_verify(args) -> int:
    doc, s = _load(args.file, args)
    res = verify_document(doc, s, args.seed)
    d = res.to_dict()
    _write_report(args, d)
    out = _csv_dir(args)
    if out is not None:
        (out / "multipliers.csv").write_text(res.multipliers.to_csv())
        w = res.process
        sig = w.y.map(lambda t, v: v)
        joined = type(sig).from_arrays([sg.t for sg in sig.segments],
                                       [np.hstack([a.values, u.values]) for a, u in zip(sig.segments, w.u.segments)])
        names = [*doc.state_order(), *doc.controls]
        (out / "process.csv").write_text(signal_to_csv(joined, names))
    print(f"problem {doc.name} (kind {doc.kind})")
    print(res.report.summary())
    if res.tube is not None:
        print(f"tube: min|det|={res.tube.min_abs_det:.3e}  roundtrip={res.tube.max_roundtrip:.2e}  "
              f"G'F'-E={res.tube.max_gzpp:.2e}  {'pass' if res.tube.passed else 'FAIL'}")
    print(f"overall: {d['verdict']}")
    return EXIT_PASS if res.passed else EXIT_FAIL


def cmd_reduce_b(args) -> int:
    doc, s = _load(args.file, args)
    try:
        B, mb, rep = reduce_document(doc, s, args.anchor)
    except ConventionError as exc:
        d = {"schema": 1, "verdict": "FAIL", "violations": ["CONVENTION"], "error": str(exc)}
        _write_report(args, d)
        print(f"convention failure: {exc}")
        return EXIT_FAIL
    d = rep.to_dict()
    d["problem"] = {"name": doc.name, "kind": doc.kind, "params": doc.params}
    d["instance"] = {"rho": list(B.rho), "n_steps": B.n_steps, "T": B.T, "anchor": args.anchor}
    d["violations"] = rep.violations
    _write_report(args, d)
    out = _csv_dir(args)
    if out is not None:
        (out / "instance.csv").write_text(B.to_csv())
        (out / "multipliers_b.csv").write_text(mb.to_csv(B))
    print(f"problem {doc.name}: replicated on tau in [0, 1], rho = "
          + ", ".join(f"{r:.6g}" for r in B.rho))
    print(rep.summary())
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_variation(args) -> int:
    doc, s = _load(args.file, args)
    t1, t2 = doc.reference.t1, doc.reference.t2
    kappas = []
    for text in args.kappa:
        try:
            kappas.append(Kappa.from_expr(parse_expr(text, ("t",), doc.params), text))
        except ExprError as exc:
            raise UsageError(f"--kappa {text!r}: {exc}") from exc
    if args.family == "random":
        if args.seed is None:
            raise UsageError("--family random needs --seed")
        rng = np.random.default_rng(args.seed)
        family = [random_kappa(rng, t1, t2, "pl", positive=True) for _ in range(args.n_random)]
        family = [dataclasses.replace(k, label=f"random{j}") for j, k in enumerate(family)]
    else:
        family = bump_family(t1, t2)
    if not kappas:
        kappas = [Kappa.constant(1.0), Kappa(lambda t: 1 + (t - t1) * (t2 - t),
                                             lambda t: t1 + t2 - 2 * t, "1+(t-t1)(t2-t)")]
    d = variation_document(doc, kappas, s, family=family)
    _write_report(args, d)
    out = _csv_dir(args)
    if out is not None:
        from .pipeline import a_form
        from .variations import build_variation
        p, w, _, _ = a_form(doc, s)
        for j, k in enumerate(kappas):
            (out / f"variation_{j}.csv").write_text(build_variation(p, w, k).to_csv())
    print(f"problem {doc.name}")
    for r in d["variations"]:
        lad = r["ladder"]
        print(f"kappa {r['kappa']}: pairing lhs={r['pairing']['lhs']:.9g} rhs={r['pairing']['rhs']:.9g} "
              f"rel={r['pairing']['relative']:.2e}  J'w={r['directional_derivative']:.9g}  "
              f"measure={r['measure_pairing']:.9g}  "
              + ("fd exact" if lad["exact"] else f"fd slope={lad['slope']:.3f}"))
    dj = d["dj_family"]
    print(f"sign family: min {dj['minimum']:.6g} at {dj['argmin']}  ({'ok' if dj['nonnegative'] else 'NEGATIVE'})")
    print(f"overall: {d['verdict']}")
    return EXIT_PASS if d["verdict"] == "PASS" else EXIT_FAIL


def cmd_example(args) -> int:
    if args.name not in EXAMPLES:
        raise UsageError(f"unknown example {args.name!r}; choose from {', '.join(EXAMPLES)}")
    args.file = example_path(args.name)
    return cmd_verify(args)


COMMANDS = {"verify": cmd_verify, "reduce-b": cmd_reduce_b, "variation": cmd_variation, "example": cmd_example}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DocumentError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AssumptionError, ReferenceProcessError, InversionError) as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        report = getattr(args, "report", None)
        if report is not None:
            report.parent.mkdir(parents=True, exist_ok=True)
            report.write_text(json.dumps({"schema": 1, "verdict": "FAIL", "violations": ["ASSUMPTION"],
                                          "error": str(exc)}, indent=2) + "\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
