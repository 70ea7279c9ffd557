"""Expression trees for log-densities: parsing, printing, compiling, evaluating."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import (DomainError, ModelSyntaxError, UnboundVariable,
                     UnknownFunction, UnknownVariable)

# name -> arity
FUNCTIONS = {"log": 1, "exp": 1, "sqrt": 1, "pow": 2, "abs": 1, "lgamma": 1}
CONSTANTS = {"pi": math.pi}


class Expr:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, _wrap(other))

    def __sub__(self, other):
        return BinOp("-", self, _wrap(other))

    def __mul__(self, other):
        return BinOp("*", self, _wrap(other))

    def __truediv__(self, other):
        return BinOp("/", self, _wrap(other))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float
    name: str | None = None


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple


def _wrap(v):
    return v if isinstance(v, Expr) else Const(float(v))


# --- structure ------------------------------------------------------------

@lru_cache(maxsize=None)
def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Neg):
        return free_vars(e.operand)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Call):
        out = frozenset()
        for a in e.args:
            out |= free_vars(a)
        return out
    raise TypeError(f"not an expression node: {e!r}")


# --- printing -------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3
_ATOM_PREC = 5


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _NEG_PREC
    if isinstance(e, Const) and e.name is None and e.value < 0:
        return _NEG_PREC
    return _ATOM_PREC


def _fmt_number(v: float) -> str:
    if math.isinf(v) or math.isnan(v):
        raise ValueError(f"cannot print non-finite constant {v}")
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    """Print with the minimal parentheses needed to re-parse to the same tree."""
    if isinstance(e, Const):
        if e.name is not None:
            return e.name
        if e.value < 0:
            return f"-{_fmt_number(-e.value)}"
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if _prec(e.operand) < _NEG_PREC or isinstance(e.operand, Neg) or (
                isinstance(e.operand, Const) and e.operand.value < 0):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left, right = to_text(e.left), to_text(e.right)
        if e.op == "^":
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < _NEG_PREC:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p or _prec(e.right) == _NEG_PREC:
            right = f"({right})"
        sep = f" {e.op} " if p == 1 else e.op
        return f"{left}{sep}{right}"
    raise TypeError(f"not an expression node: {e!r}")


# --- tokenizing and parsing -----------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str, line: int = 1, column: int = 1) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, column + pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, column + pos))
        pos = m.end()
    tokens.append(Token("end", "", line, column + pos))
    return tokens


class _Parser:
    def __init__(self, tokens: Sequence[Token], variables):
        self.tokens = tokens
        self.i = 0
        self.variables = variables

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, msg, tok=None):
        tok = tok or self.tok
        raise ModelSyntaxError(msg, tok.line, tok.column)

    def take(self, text=None) -> Token:
        tok = self.tok
        if text is not None and tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.sum()
        if self.tok.kind != "end":
            self.fail(f"unexpected {self.tok.text!r}")
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            e = BinOp(op, e, self.product())
        return e

    def product(self) -> Expr:
        e = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.tok.text == "-":
            self.take()
            return Neg(self.unary())
        if self.tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.text == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.take()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self.take()
            if self.tok.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownFunction(
                        f"unknown function {tok.text!r} at line {tok.line}, column {tok.column}; "
                        f"allowed: {', '.join(sorted(FUNCTIONS))}")
                self.take("(")
                args = [self.sum()]
                while self.tok.text == ",":
                    self.take()
                    args.append(self.sum())
                self.take(")")
                if len(args) != FUNCTIONS[tok.text]:
                    self.fail(f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}", tok)
                return Call(tok.text, tuple(args))
            if tok.text in CONSTANTS:
                return Const(CONSTANTS[tok.text], tok.text)
            if self.variables is not None and tok.text not in self.variables:
                raise UnknownVariable(
                    f"undeclared variable {tok.text!r} at line {tok.line}, column {tok.column}")
            return Var(tok.text)
        if tok.text == "(":
            self.take()
            e = self.sum()
            self.take(")")
            return e
        self.fail(f"unexpected {tok.text or 'end of input'!r}")


def parse_expr(text: str, variables=None, line: int = 1, column: int = 1) -> Expr:
    """Parse an expression. If `variables` is given, other identifiers are rejected."""
    return _Parser(tokenize(text, line, column), variables).parse()


# --- compiling ------------------------------------------------------------

_NAMESPACE = {
    "_log": np.log, "_exp": np.exp, "_sqrt": np.sqrt, "_abs": np.abs,
    "_pow": np.power, "_lgamma": special.gammaln, "_f": np.float64,
}


def _codegen(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):  # numpy scalars, so constant arithmetic follows IEEE rules
        return f"_f({float(e.value)!r})"
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Neg):
        return f"(-{_codegen(e.operand, names)})"
    if isinstance(e, BinOp):
        a, b = _codegen(e.left, names), _codegen(e.right, names)
        if e.op == "^":
            return f"_pow({a}, {b})"
        return f"({a} {e.op} {b})"
    if isinstance(e, Call):
        return f"_{e.func}({', '.join(_codegen(a, names) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


@lru_cache(maxsize=4096)
def compile_expr(e: Expr, argnames: tuple, strict: bool = True) -> Callable[..., np.ndarray]:
    """Compile to a vectorized numpy function of the given variables (positional).

    Invalid operations raise DomainError instead of producing nan/inf. With
    strict=False they yield nan silently (used only for probing).
    """
    missing = free_vars(e) - set(argnames)
    if missing:
        raise UnboundVariable(f"unbound variable(s): {', '.join(sorted(missing))}")
    names = {n: f"_v{i}" for i, n in enumerate(argnames)}
    src = f"lambda {', '.join(names.values())}: {_codegen(e, names)}"
    raw = eval(src, dict(_NAMESPACE))  # noqa: S307 - source generated from a validated tree
    text = to_text(e)

    def lenient(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        with np.errstate(all="ignore"):
            out = np.asarray(raw(*args), dtype=float)
        if args:
            out = np.broadcast_to(out, np.broadcast_shapes(*(a.shape for a in args)))
        return out

    if not strict:
        return lenient

    def fn(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        with np.errstate(divide="raise", invalid="raise", over="ignore", under="ignore"):
            try:
                out = raw(*args)
            except (FloatingPointError, ZeroDivisionError) as exc:
                raise DomainError(f"{exc} while evaluating {text}") from None
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"non-finite value while evaluating {text}")
        if args:
            out = np.broadcast_to(out, np.broadcast_shapes(*(a.shape for a in args)))
        return out

    return fn


def eval_expr(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate at a single point given a variable -> scalar map."""
    names = tuple(sorted(free_vars(e)))
    missing = [n for n in names if n not in bindings]
    if missing:
        raise UnboundVariable(f"unbound variable(s): {', '.join(missing)}")
    return float(compile_expr(e, names)(*(bindings[n] for n in names)))


# --- differentiation --------------------------------------------------------

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.name is None and e.value == v


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return BinOp("-", a, b)


def _neg(a):
    if isinstance(a, Neg):
        return a.operand
    if _is(a, 0.0):
        return a
    return Neg(a)


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return _ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if _is(a, 0.0):
        return _ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


class _NoDerivative(Exception):
    pass


def _d(e: Expr, var: str) -> Expr:
    if var not in free_vars(e):
        return _ZERO
    if isinstance(e, Var):
        return _ONE
    if isinstance(e, Neg):
        return _neg(_d(e.operand, var))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op in "+-":
            da, db = _d(a, var), _d(b, var)
            return _add(da, db) if e.op == "+" else _sub(da, db)
        if e.op == "*":
            return _add(_mul(_d(a, var), b), _mul(a, _d(b, var)))
        if e.op == "/":
            num = _sub(_mul(_d(a, var), b), _mul(a, _d(b, var)))
            return _div(num, BinOp("^", b, Const(2.0)))
        if e.op == "^":
            return _d_pow(a, b, var)
    if isinstance(e, Call):
        if e.func == "pow":
            return _d_pow(e.args[0], e.args[1], var)
        (u,) = e.args
        du = _d(u, var)
        if e.func == "log":
            return _div(du, u)
        if e.func == "exp":
            return _mul(e, du)
        if e.func == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        if e.func == "abs":
            return _mul(_div(u, e), du)
        raise _NoDerivative(e.func)
    raise TypeError(f"not an expression node: {e!r}")


def _d_pow(a: Expr, b: Expr, var: str) -> Expr:
    if var not in free_vars(b):
        if isinstance(b, Const) and b.name is None:
            lower = Const(b.value - 1.0)
        else:
            lower = BinOp("-", b, _ONE)
        return _mul(_mul(b, BinOp("^", a, lower)), _d(a, var))
    power = BinOp("^", a, b)
    inner = _add(_mul(_d(b, var), Call("log", (a,))), _div(_mul(b, _d(a, var)), a))
    return _mul(power, inner)


@lru_cache(maxsize=1024)
def diff(e: Expr, var: str) -> Expr | None:
    """Symbolic partial derivative, or None if it needs a function outside the DSL."""
    try:
        return _d(e, var)
    except _NoDerivative:
        return None
