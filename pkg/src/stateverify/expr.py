"""Small expression language with forward-mode automatic differentiation.

Every piece of problem data (dynamics, cost, constraints, changes of
variables) is written as an infix expression over named scalar variables::

    >>> e = parse_expr("0.5*u^4 + 0.5*u^2", {"u"})
    >>> evaluate(e, {"u": -1.0})
    1.0
    >>> grad(e, ["u"], {"u": -1.0})
    array([-3.])

Derivatives come from dual-number evaluation of the tree (first and second
order), never from symbolic rewriting or finite differences. Expressions are
compiled once into plain Python functions that accept floats, numpy arrays or
:class:`Jet` objects, so the same code path serves scalar evaluation,
vectorized evaluation over a time grid and differentiation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "BinOp", "Neg", "Pow", "Func",
    "ExprError", "ExprSyntaxError", "UndeclaredVariableError", "ExprDomainError",
    "Jet", "parse_expr", "to_text", "free_vars", "substitute",
    "compile_expr", "evaluate", "grad", "hessian", "jacobian_many",
]

FUNCTIONS = ("sin", "cos", "exp", "log")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}" + (f" in {text!r}" if text else ""))


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, position: int = -1):
        self.name = name
        self.position = position
        super().__init__(f"undeclared variable {name!r}" + (f" at position {position}" if position >= 0 else ""))


class ExprDomainError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# tree


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    # precedence (loosest first): + -  <  * /  <  unary -  <  ^
    def __init__(self, text: str, allowed: set[str] | None, params: Mapping[str, float]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed
        self.params = params

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos, self.text)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos, self.text)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExprSyntaxError("exponent must be an integer literal", pos, self.text)
            return Pow(base, sign * int(val))
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in FUNCTIONS and self.peek()[1] == "(":
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(val, arg)
            if val in self.params:
                return Const(float(self.params[val]))
            if self.allowed is not None and val not in self.allowed:
                raise UndeclaredVariableError(val, pos)
            return Var(val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos, self.text)


def parse_expr(text: str, allowed_vars: Iterable[str] | None = None,
               params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` into an expression tree.

    Names found in ``params`` are replaced by their numeric value at parse
    time; every other name must belong to ``allowed_vars`` (``None`` accepts
    any name).
    """
    allowed = None if allowed_vars is None else set(allowed_vars)
    return _Parser(text, allowed, dict(params or {})).parse()


# ---------------------------------------------------------------------------
# printing and tree utilities

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and e.value < 0:
        return 3
    return 5


def to_text(e: Expr) -> str:
    """Print ``e`` so that parsing the result rebuilds the same tree."""
    if isinstance(e, Const):
        s = repr(float(e.value))
        if s in ("inf", "-inf", "nan"):
            raise ExprError(f"cannot print non-finite constant {s}")
        return s if e.value >= 0 else f"(-{s[1:]})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Pow):
        b = to_text(e.base)
        # the grammar has no chained powers, so a power base needs parentheses too
        if _prec(e.base) < 5 or isinstance(e.base, Pow):
            b = f"({b})"
        return f"{b}^{e.exponent}"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if _prec(e.operand) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_text(e.left)
        if _prec(e.left) < p:
            left = f"({left})"
        right = to_text(e.right)
        # right operand of equal precedence needs parentheses to keep the tree shape
        if _prec(e.right) <= p or isinstance(e.right, Neg):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Neg):
        return free_vars(e.operand)
    if isinstance(e, Pow):
        return free_vars(e.base)
    if isinstance(e, Func):
        return free_vars(e.arg)
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (used to compose changes of variables)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# dual numbers


class Jet:
    """Truncated Taylor jet in ``k`` seed directions.

    ``val`` has shape ``S`` (scalar or a grid of points), ``d`` has shape
    ``(k, *S)`` and, for second order, ``h`` has shape ``(k, k, *S)``.
    Every operation keeps ``h`` exactly symmetric.
    """

    __slots__ = ("val", "d", "h")
    __array_priority__ = 1000

    def __init__(self, val, d, h=None):
        self.val = val
        self.d = d
        self.h = h

    @classmethod
    def seed(cls, values: Sequence, order: int = 1) -> list["Jet"]:
        """Independent variables: one jet per value with unit derivative in its own slot."""
        vals = [np.asarray(v, dtype=float) for v in values]
        k = len(vals)
        shape = np.broadcast_shapes(*(v.shape for v in vals)) if vals else ()
        out = []
        for i, v in enumerate(vals):
            v = np.broadcast_to(v, shape).astype(float)
            d = np.zeros((k,) + shape)
            d[i] = 1.0
            h = np.zeros((k, k) + shape) if order >= 2 else None
            out.append(cls(v if shape else float(v), d, h))
        return out

    # helpers
    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet(other, 0.0 * self.d, None if self.h is None else 0.0 * self.h)

    @staticmethod
    def _outer(a, b):
        return a[:, None] * b[None, :]

    def _chain(self, f0, f1, f2) -> "Jet":
        d = f1 * self.d
        h = None
        if self.h is not None:
            h = f1 * self.h + f2 * self._outer(self.d, self.d)
        return Jet(f0, d, h)

    # arithmetic
    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.val + other, self.d, self.h)
        h = None if self.h is None else self.h + other.h
        return Jet(self.val + other.val, self.d + other.d, h)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.d, None if self.h is None else -self.h)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.val * other, self.d * other, None if self.h is None else self.h * other)
        d = self.d * other.val + self.val * other.d
        h = None
        if self.h is not None:
            h = (self.h * other.val + self.val * other.h
                 + (self._outer(self.d, other.d) + self._outer(other.d, self.d)))
        return Jet(self.val * other.val, d, h)

    __rmul__ = __mul__

    def _reciprocal(self):
        x = self.val
        if np.any(np.asarray(x) == 0.0):
            raise ExprDomainError("division by zero")
        return self._chain(1.0 / x, -1.0 / x ** 2, 2.0 / x ** 3)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            if np.any(np.asarray(other) == 0.0):
                raise ExprDomainError("division by zero")
            return self * (1.0 / other)
        return self * other._reciprocal()

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)):
            raise ExprError("only integer exponents are supported")
        k = int(k)
        x = self.val
        if k == 0:
            return Jet(np.ones_like(x) if np.ndim(x) else 1.0, 0.0 * self.d,
                       None if self.h is None else 0.0 * self.h)
        if k < 0 and np.any(np.asarray(x) == 0.0):
            raise ExprDomainError("division by zero in negative power")
        f2 = k * (k - 1) * x ** (k - 2) if k != 1 else 0.0 * x
        return self._chain(x ** k, k * x ** (k - 1), f2)

    def sin(self):
        return self._chain(np.sin(self.val), np.cos(self.val), -np.sin(self.val))

    def cos(self):
        return self._chain(np.cos(self.val), -np.sin(self.val), -np.cos(self.val))

    def exp(self):
        e = np.exp(self.val)
        return self._chain(e, e, e)

    def log(self):
        x = self.val
        if np.any(np.asarray(x) <= 0.0):
            raise ExprDomainError("log of a non-positive argument")
        return self._chain(np.log(x), 1.0 / x, -1.0 / x ** 2)

    def __repr__(self):
        return f"Jet({self.val!r}, d={self.d!r})"


# ---------------------------------------------------------------------------
# compilation


def _rt_div(a, b):
    if isinstance(a, Jet) or isinstance(b, Jet):
        return a / b
    if np.any(np.asarray(b) == 0.0):
        raise ExprDomainError("division by zero")
    return a / b


def _rt_pow(a, k):
    if isinstance(a, Jet):
        return a ** k
    if k < 0 and np.any(np.asarray(a) == 0.0):
        raise ExprDomainError("division by zero in negative power")
    if k < 0:
        return 1.0 / a ** (-k)
    return a ** k


def _unary(name: str, fn: Callable) -> Callable:
    def apply(a):
        if isinstance(a, Jet):
            return getattr(a, name)()
        return fn(a)
    apply.__name__ = f"_{name}"
    return apply


def _rt_log(a):
    if isinstance(a, Jet):
        return a.log()
    if np.any(np.asarray(a) <= 0.0):
        raise ExprDomainError("log of a non-positive argument")
    return np.log(a) if np.ndim(a) else math.log(a)


_RUNTIME = {
    "_div": _rt_div,
    "_pow": _rt_pow,
    "_sin": _unary("sin", lambda a: np.sin(a) if np.ndim(a) else math.sin(a)),
    "_cos": _unary("cos", lambda a: np.cos(a) if np.ndim(a) else math.cos(a)),
    "_exp": _unary("exp", lambda a: np.exp(a) if np.ndim(a) else math.exp(a)),
    "_log": _rt_log,
}


def _codegen(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, BinOp):
        l, r = _codegen(e.left, names), _codegen(e.right, names)
        if e.op == "/":
            return f"_div({l}, {r})"
        return f"({l} {e.op} {r})"
    if isinstance(e, Neg):
        return f"(-{_codegen(e.operand, names)})"
    if isinstance(e, Pow):
        return f"_pow({_codegen(e.base, names)}, {e.exponent})"
    if isinstance(e, Func):
        return f"_{e.name}({_codegen(e.arg, names)})"
    raise TypeError(f"not an expression: {e!r}")


def compile_expr(e: Expr, arg_names: Sequence[str]) -> Callable:
    """Turn ``e`` into a positional function of ``arg_names``.

    The result accepts floats, arrays (broadcast elementwise) or jets.
    Constant expressions are broadcast to the shape of the first array argument.
    """
    missing = free_vars(e) - set(arg_names)
    if missing:
        raise UndeclaredVariableError(sorted(missing)[0])
    names = {n: f"a{i}" for i, n in enumerate(arg_names)}
    args = ", ".join(names[n] for n in arg_names)
    body = _codegen(e, names)
    src = f"def _f({args}):\n    return {body}\n"
    ns = dict(_RUNTIME)
    exec(compile(src, "<expr>", "exec"), ns)
    fn = ns["_f"]
    if free_vars(e):
        return fn

    value = float(e.value) if isinstance(e, Const) else None

    def const_fn(*a):
        v = fn(*a) if value is None else value
        for x in a:
            if isinstance(x, Jet):
                return x._lift(v) if not isinstance(v, Jet) else v
        for x in a:
            if np.ndim(x):
                return np.full(np.shape(x), v)
        return v

    return const_fn


def _codegen_float(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, BinOp):
        return f"({_codegen_float(e.left, names)} {e.op} {_codegen_float(e.right, names)})"
    if isinstance(e, Neg):
        return f"(-{_codegen_float(e.operand, names)})"
    if isinstance(e, Pow):
        return f"({_codegen_float(e.base, names)} ** {e.exponent})"
    if isinstance(e, Func):
        return f"_m.{e.name}({_codegen_float(e.arg, names)})"
    raise TypeError(f"not an expression: {e!r}")


def compile_tuple(exprs: Sequence[Expr], arg_names: Sequence[str]) -> Callable:
    """Scalar fast path: one function returning a tuple of Python floats.

    Used in sequential loops where numpy call overhead dominates.
    """
    for e in exprs:
        missing = free_vars(e) - set(arg_names)
        if missing:
            raise UndeclaredVariableError(sorted(missing)[0])
    names = {n: f"a{i}" for i, n in enumerate(arg_names)}
    body = ", ".join(_codegen_float(e, names) for e in exprs)
    src = f"def _f({', '.join(names[n] for n in arg_names)}):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = {"_m": math}
    exec(compile(src, "<expr-tuple>", "exec"), ns)
    raw = ns["_f"]

    def fn(*a):
        try:
            return raw(*a)
        except ZeroDivisionError as exc:
            raise ExprDomainError("division by zero") from exc
        except ValueError as exc:
            raise ExprDomainError(f"domain error: {exc}") from exc
    return fn


@lru_cache(maxsize=512)
def _cached(e: Expr, names: tuple[str, ...]) -> Callable:
    return compile_expr(e, names)


Point = Mapping[str, float]


def evaluate(e: Expr, point: Point) -> float:
    names = tuple(sorted(free_vars(e)))
    missing = [n for n in names if n not in point]
    if missing:
        raise UndeclaredVariableError(missing[0])
    return _cached(e, names)(*(point[n] for n in names))


def _jet_eval(e: Expr, vars: Sequence[str], point: Point, order: int) -> Jet:
    vars = list(vars)
    names = tuple(sorted(free_vars(e) | set(vars)))
    missing = [n for n in names if n not in point]
    if missing:
        raise UndeclaredVariableError(missing[0])
    seeds = dict(zip(vars, Jet.seed([point[v] for v in vars], order)))
    args = [seeds.get(n, point[n]) for n in names]
    out = _cached(e, names)(*args)
    if not isinstance(out, Jet):
        out = seeds[vars[0]]._lift(out) if vars else Jet(out, np.zeros(0), np.zeros((0, 0)))
    return out


def grad(e: Expr, vars: Sequence[str], point: Point) -> np.ndarray:
    """Exact gradient of ``e`` w.r.t. ``vars`` at ``point`` (forward mode)."""
    return np.asarray(_jet_eval(e, vars, point, 1).d, dtype=float)


def hessian(e: Expr, vars: Sequence[str], point: Point) -> np.ndarray:
    """Exact Hessian of ``e`` w.r.t. ``vars``; symmetric bit for bit."""
    return np.asarray(_jet_eval(e, vars, point, 2).h, dtype=float)


def jacobian_many(fns: Sequence[Callable], columns: Sequence[np.ndarray], order: int = 1):
    """Evaluate compiled functions with derivatives over a batch of points.

    ``columns`` are the argument arrays (all of shape ``(N,)``), every one of
    which is a seed direction. Returns ``(values, jac[, hess])`` with shapes
    ``(N, len(fns))``, ``(N, len(fns), k)`` and ``(N, len(fns), k, k)``.
    """
    jets = Jet.seed(columns, order)
    n_pts = np.shape(jets[0].val)[0] if jets and np.ndim(jets[0].val) else 1
    k = len(columns)
    vals = np.empty((n_pts, len(fns)))
    jac = np.empty((n_pts, len(fns), k))
    hes = np.empty((n_pts, len(fns), k, k)) if order >= 2 else None
    for i, fn in enumerate(fns):
        out = fn(*jets)
        if not isinstance(out, Jet):
            out = jets[0]._lift(np.broadcast_to(out, (n_pts,)))
        vals[:, i] = np.broadcast_to(out.val, (n_pts,))
        jac[:, i, :] = np.moveaxis(np.broadcast_to(out.d, (k, n_pts)), 0, -1)
        if hes is not None:
            hes[:, i] = np.moveaxis(np.broadcast_to(out.h, (k, k, n_pts)), -1, 0)
    if hes is not None:
        return vals, jac, hes
    return vals, jac


Number = Union[float, np.ndarray, Jet]
