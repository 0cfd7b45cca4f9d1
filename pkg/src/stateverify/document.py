"""Line-oriented problem files (``.ocp``).

A document is INI-shaped. Parameters are numbers or expressions over earlier
parameters; they are substituted into every other expression at parse time.
Overrides passed by the caller replace a parameter's value before anything
downstream reads it.

Example::

    [meta]
    name = atoms
    kind = A
    T = 3

    [params]
    a = 1

    [states]
    z
    x

    [controls]
    u

    [dynamics]
    z = (1 - a/2)*u^4 + (3*a/2 - 1)*u^2
    x = u

    [cost]
    J = z_0 - z_T + a*(x_0 + x_T)

    [control_constraints]
    box = u^2 - 1

    [state_constraint]
    x

    [reference]
    t1 = 1
    t2 = 2
    control.u = -1 | 0 | 1
    init.z = 0
    init.x = 1

A state declared as ``name = k`` with ``k > 1`` expands to ``name1 .. namek``.
For ``kind = C`` the ``[state_constraint]`` section holds ``Phi = <expr>`` and
``[change_of_vars]`` may give one expression per new unconstrained coordinate.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .expr import Expr, ExprError, Var, evaluate, parse_expr
from .model import DEFAULT_STEPS, ProblemA, ProblemC, ReferenceProcess, compile_pieces, endpoint_names, simulate

__all__ = ["DocumentError", "ProblemDocument", "ReferenceSpec", "parse_document", "read_document"]

KNOWN_SECTIONS = ("meta", "params", "states", "controls", "dynamics", "cost", "control_constraints",
                  "state_constraint", "reference", "change_of_vars", "grid", "tolerances")
TOLERANCE_KEYS = ("tol", "sign_tol", "tol_act")


class DocumentError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceSpec:
    t1: float
    t2: float
    controls: dict[str, tuple[Expr, Expr, Expr]]
    init: dict[str, float]


@dataclass(frozen=True)
class ProblemDocument:
    name: str
    kind: str
    T: float
    params: dict[str, float]
    states: tuple[str, ...]
    controls: tuple[str, ...]
    dynamics: dict[str, Expr]
    cost: Expr
    control_constraints: dict[str, Expr]
    state_constraint: Expr
    reference: ReferenceSpec
    change_of_vars: dict[str, Expr] = field(default_factory=dict)
    grid: dict[str, int] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    source: str = ""

    @property
    def n_steps(self) -> int:
        return int(self.grid.get("n_steps", DEFAULT_STEPS))

    def problem(self):
        phi = list(self.control_constraints.values())
        if self.kind == "A":
            x = self.state_constraint.name
            z = [s for s in self.states if s != x]
            return ProblemA(z, self.controls, [self.dynamics[s] for s in z], self.dynamics[x], phi,
                            self.cost, self.T, x_name=x, name=self.name)
        return ProblemC(self.states, self.controls, [self.dynamics[s] for s in self.states],
                        self.state_constraint, phi, self.cost, self.T, name=self.name)

    def state_order(self) -> tuple[str, ...]:
        """States in the order the problem object stores them (``x`` last for kind A)."""
        if self.kind == "A":
            x = self.state_constraint.name
            return (*(s for s in self.states if s != x), x)
        return self.states

    def reference_process(self, problem=None, n_steps: int | None = None) -> ReferenceProcess:
        problem = problem if problem is not None else self.problem()
        ref = self.reference
        pieces = compile_pieces([[ref.controls[u][i] for u in self.controls] for i in range(3)])
        y0 = [ref.init[s] for s in self.state_order()]
        return simulate(problem, pieces, y0, ref.t1, ref.t2, n_steps or self.n_steps)

    def change_of_variables(self, **kw):
        """The split ``F = (P, Phi)``; identity-like when no ``[change_of_vars]`` is given."""
        from .reductions.change_of_vars import ChangeOfVariables
        if self.kind != "C":
            raise DocumentError("change of variables applies to kind C documents")
        if self.change_of_vars:
            P = tuple(self.change_of_vars.values())
        else:
            P = tuple(Var(s) for s in self.states[:-1])
        return ChangeOfVariables(self.states, P, self.state_constraint, **kw)


def read_document(path, overrides: Mapping[str, float] | None = None) -> ProblemDocument:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DocumentError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_document(text, overrides, source=str(p))


def parse_document(text: str, overrides: Mapping[str, float] | None = None, source: str = "") -> ProblemDocument:
    if "\n" not in text and text.endswith(".ocp") and Path(text).exists():
        return read_document(text, overrides)
    cp = configparser.ConfigParser(allow_no_value=True, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise DocumentError(f"malformed document: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in KNOWN_SECTIONS]
    if unknown:
        raise DocumentError(f"unknown section [{unknown[0]}]")
    for req in ("meta", "states", "controls", "dynamics", "cost", "state_constraint", "reference"):
        if not cp.has_section(req):
            raise DocumentError(f"missing section [{req}]")
    try:
        return _build(cp, dict(overrides or {}), source)
    except ExprError as exc:
        raise DocumentError(str(exc)) from exc


def _number(text: str, params: Mapping[str, float], what: str) -> float:
    try:
        v = evaluate(parse_expr(text, (), params), {})
    except ExprError as exc:
        raise DocumentError(f"{what}: {exc}") from exc
    if not math.isfinite(v):
        raise DocumentError(f"{what}: value is not finite")
    return float(v)


def _params(cp, overrides) -> dict[str, float]:
    params: dict[str, float] = {}
    section = cp["params"] if cp.has_section("params") else {}
    for k, v in section.items():
        if v is None:
            raise DocumentError(f"parameter {k} has no value")
        params[k] = float(overrides[k]) if k in overrides else _number(v, params, f"parameter {k}")
    extra = set(overrides) - set(params)
    if extra:
        raise DocumentError(f"override of undeclared parameter {sorted(extra)[0]}")
    return params


def _names(section, what: str) -> tuple[str, ...]:
    out = []
    for k, v in section.items():
        dim = 1 if v in (None, "") else int(v)
        if dim < 1:
            raise DocumentError(f"{what} {k} needs a positive dimension")
        out.extend([k] if dim == 1 else [f"{k}{j + 1}" for j in range(dim)])
    if not out:
        raise DocumentError(f"no {what}s declared")
    if len(set(out)) != len(out):
        raise DocumentError(f"duplicate {what} name")
    return tuple(out)


def _build(cp, overrides, source) -> ProblemDocument:
    params = _params(cp, overrides)
    meta = cp["meta"]
    kind = meta.get("kind", "A").strip().upper()
    if kind not in ("A", "C"):
        raise DocumentError(f"kind must be A or C, not {kind}")
    if "T" not in meta:
        raise DocumentError("[meta] needs T")
    T = _number(meta["T"], params, "T")
    states = _names(cp["states"], "state")
    controls = _names(cp["controls"], "control")
    clash = (set(states) | set(controls)) & (set(params) | {"t"})
    if clash:
        raise DocumentError(f"name {sorted(clash)[0]} is used both as a variable and a parameter")
    sc = set(states) | set(controls)

    dyn = {}
    for k, v in cp["dynamics"].items():
        if k not in states:
            raise DocumentError(f"dynamics given for undeclared state {k}")
        dyn[k] = parse_expr(v, sc, params)
    missing = [s for s in states if s not in dyn]
    if missing:
        raise DocumentError(f"no dynamics for state {missing[0]}")

    costs = list(cp["cost"].values())
    if len(costs) != 1:
        raise DocumentError("[cost] needs exactly one expression")
    cost = parse_expr(costs[0], endpoint_names(states), params)

    cc = {}
    if cp.has_section("control_constraints"):
        cc = {k: parse_expr(v, controls, params) for k, v in cp["control_constraints"].items()}

    keys = list(cp["state_constraint"].items())
    if kind == "A":
        if len(keys) != 1 or keys[0][1] not in (None, ""):
            raise DocumentError("kind A takes the name of the constrained state in [state_constraint]")
        x = keys[0][0]
        if x not in states:
            raise DocumentError(f"constrained state {x} is not declared")
        con: Expr = Var(x)
    else:
        if len(keys) != 1 or keys[0][0] != "Phi":
            raise DocumentError("kind C needs 'Phi = <expr>' in [state_constraint]")
        con = parse_expr(keys[0][1], states, params)

    ref = _reference(cp["reference"], states, controls, params)
    cov = {}
    if cp.has_section("change_of_vars"):
        if kind != "C":
            raise DocumentError("[change_of_vars] is only allowed for kind C")
        cov = {k: parse_expr(v, states, params) for k, v in cp["change_of_vars"].items()}
        if len(cov) != len(states) - 1:
            raise DocumentError(f"[change_of_vars] needs {len(states) - 1} expressions")

    grid = {}
    if cp.has_section("grid"):
        for k, v in cp["grid"].items():
            if k != "n_steps":
                raise DocumentError(f"unknown grid key {k}")
            grid[k] = int(_number(v, params, k))
    tols = {}
    if cp.has_section("tolerances"):
        for k, v in cp["tolerances"].items():
            if k not in TOLERANCE_KEYS:
                raise DocumentError(f"unknown tolerance key {k}")
            tols[k] = _number(v, params, k)

    return ProblemDocument(meta.get("name", Path(source).stem if source else "problem"), kind, T, params,
                           states, controls, dyn, cost, cc, con, ref, cov, grid, tols, source)


def _reference(sec, states, controls, params) -> ReferenceSpec:
    if "t1" not in sec or "t2" not in sec:
        raise DocumentError("[reference] needs t1 and t2")
    t1, t2 = _number(sec["t1"], params, "t1"), _number(sec["t2"], params, "t2")
    ctrl, init = {}, {}
    for k, v in sec.items():
        if k in ("t1", "t2"):
            continue
        head, _, name = k.partition(".")
        if head == "control" and name in controls:
            parts = [s.strip() for s in v.split("|")]
            if len(parts) != 3:
                raise DocumentError(f"control {name} needs three pieces separated by '|'")
            ctrl[name] = tuple(parse_expr(s, ("t",), params) for s in parts)
        elif head == "init" and name in states:
            init[name] = _number(v, params, f"initial {name}")
        else:
            raise DocumentError(f"unknown reference key {k}")
    for u in controls:
        if u not in ctrl:
            raise DocumentError(f"no reference control for {u}")
    for s in states:
        if s not in init:
            raise DocumentError(f"no initial value for {s}")
    return ReferenceSpec(t1, t2, ctrl, init)
