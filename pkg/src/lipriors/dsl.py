"""Model files: parsing, printing and separable decomposition of the log-density.

A model file looks like::

    model "exponential"
    param theta in (0, inf)
    obs x in (0, inf) continuous
    logpdf = -log(theta) - x/theta
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import MalformedSupport, ModelSyntaxError, NotSeparable
from .expr import (CONSTANTS, FUNCTIONS, BinOp, Const, Expr, Neg, compile_expr,
                   free_vars, parse_expr, to_text)
from .support import SupportSpec

_IDENT = r"[A-Za-z_][A-Za-z_0-9]*"
_NUM = r"[-+]?(?:inf|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
_INTERVAL_RE = re.compile(rf"^([(\[])\s*({_NUM})\s*,\s*({_NUM})\s*([)\]])$")
_SET_RE = re.compile(r"^\{(.*)\}$")


@dataclass(frozen=True)
class Declaration:
    name: str
    support: SupportSpec


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: tuple
    obs: Declaration
    logpdf: Expr

    @property
    def param_names(self) -> tuple:
        return tuple(p.name for p in self.params)

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def obs_name(self) -> str:
        return self.obs.name

    @property
    def param_support(self) -> SupportSpec:
        """Support of the (single) parameter; multi-parameter callers use `params`."""
        return self.params[0].support

    @cached_property
    def logpdf_fn(self):
        """Vectorized log p(x|theta): called as fn(theta_1, ..., theta_d, x)."""
        return compile_expr(self.logpdf, self.param_names + (self.obs_name,))

    def logpdf_at(self, theta, x) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return float(self.logpdf_fn(*theta, x))

    def to_source(self) -> str:
        lines = [f'model "{self.name}"']
        for p in self.params:
            lines.append(f"param {p.name} in {p.support.to_text()}")
        kind = "continuous" if self.obs.support.continuous else "discrete"
        lines.append(f"obs {self.obs.name} in {self.obs.support.to_text()} {kind}")
        lines.append(f"logpdf = {to_text(self.logpdf)}")
        return "\n".join(lines) + "\n"


def _parse_endpoint(text: str) -> float:
    return float(text)  # float() understands inf / -inf


def parse_support(text: str, line: int = 0) -> SupportSpec:
    text = text.strip()
    if text == "naturals":
        return SupportSpec.naturals()
    m = _INTERVAL_RE.match(text)
    if m:
        lo, hi = _parse_endpoint(m.group(2)), _parse_endpoint(m.group(3))
        return SupportSpec.interval(lo, hi, m.group(1) == "[", m.group(4) == "]")
    m = _SET_RE.match(text)
    if m:
        items = [s.strip() for s in m.group(1).split(",") if s.strip()]
        try:
            values = [float(s) for s in items]
        except ValueError:
            raise MalformedSupport(f"line {line}: discrete set must list numbers: {text}") from None
        return SupportSpec.finite(values)
    raise MalformedSupport(f"line {line}: cannot read support {text!r}")


def _strip_comment(line: str) -> str:
    in_str = False
    for i, c in enumerate(line):
        if c == '"':
            in_str = not in_str
        elif c == "#" and not in_str:
            return line[:i]
    return line


def parse_model(text: str) -> ModelSpec:
    """Parse model-file source into a ModelSpec.

    Raises ModelSyntaxError, UnknownVariable, UnknownFunction or MalformedSupport.
    """
    name = None
    params: list[Declaration] = []
    obs = None
    logpdf_src = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        keyword = line.split(None, 1)[0]
        if keyword == "model":
            m = re.match(r'^model\s+"([^"]*)"$', line)
            if not m:
                raise ModelSyntaxError('expected: model "<name>"', lineno, 1)
            if name is not None:
                raise ModelSyntaxError("duplicate model line", lineno, 1)
            name = m.group(1)
        elif keyword == "param":
            m = re.match(rf"^param\s+({_IDENT})\s+in\s+(.+)$", line)
            if not m:
                raise ModelSyntaxError("expected: param <name> in (<lo>, <hi>)", lineno, 1)
            support = parse_support(m.group(2), lineno)
            if not support.continuous:
                raise MalformedSupport(f"line {lineno}: parameters must have interval supports")
            params.append(Declaration(m.group(1), support))
        elif keyword == "obs":
            m = re.match(rf"^obs\s+({_IDENT})\s+in\s+(.+?)\s+(continuous|discrete)$", line)
            if not m:
                raise ModelSyntaxError(
                    "expected: obs <name> in <support> continuous|discrete", lineno, 1)
            if obs is not None:
                raise ModelSyntaxError("only one observable may be declared", lineno, 1)
            support = parse_support(m.group(2), lineno)
            if (m.group(3) == "continuous") != support.continuous:
                raise MalformedSupport(
                    f"line {lineno}: {m.group(3)} observable cannot have support {m.group(2)}")
            obs = Declaration(m.group(1), support)
        elif keyword == "logpdf" or keyword.startswith("logpdf="):
            m = re.match(r"^logpdf\s*=(.*)$", line)
            if not m:
                raise ModelSyntaxError("expected: logpdf = <expression>", lineno, 1)
            if logpdf_src is not None:
                raise ModelSyntaxError("duplicate logpdf line", lineno, 1)
            col = raw.index("=") + 2
            logpdf_src = (m.group(1), lineno, col)
        else:
            raise ModelSyntaxError(f"unknown statement {keyword!r}", lineno, 1)

    if name is None:
        raise ModelSyntaxError("missing model line")
    if not params:
        raise ModelSyntaxError("no parameters declared")
    if obs is None:
        raise ModelSyntaxError("no observable declared")
    if logpdf_src is None:
        raise ModelSyntaxError("missing logpdf line")
    names = [p.name for p in params] + [obs.name]
    if len(set(names)) != len(names):
        raise ModelSyntaxError(f"duplicate variable names in {names}")
    for n in names:
        if n in FUNCTIONS or n in CONSTANTS:
            raise ModelSyntaxError(f"{n!r} is reserved")
    src, lineno, col = logpdf_src
    # keep columns relative to the raw line
    offset = len(src) - len(src.lstrip())
    logpdf = parse_expr(src.strip(), set(names), lineno, col + offset - 1)
    return ModelSpec(name, tuple(params), obs, logpdf)


def load_model(path_or_name) -> ModelSpec:
    """Load a model from a file path, or by name from the shipped models."""
    p = Path(path_or_name)
    if p.exists():
        return parse_model(p.read_text(encoding="utf-8"))
    return parse_model(builtin_model_source(str(path_or_name)))


def builtin_model_names() -> list[str]:
    root = resources.files("lipriors") / "models"
    return sorted(f.name[:-len(".model")] for f in root.iterdir() if f.name.endswith(".model"))


def builtin_model_source(name: str) -> str:
    f = resources.files("lipriors") / "models" / f"{name}.model"
    if not f.is_file():
        raise FileNotFoundError(f"no model file or shipped model named {name!r}")
    return f.read_text(encoding="utf-8")


# --- separable decomposition ------------------------------------------------

@dataclass(frozen=True)
class MixedTerm:
    theta_factor: Expr
    data_factor: Expr


@dataclass(frozen=True)
class SeparableDecomposition:
    """log p(x|theta) = sum(data_terms) + sum(param_terms) + sum(a_k(theta) * b_k(x))."""
    data_terms: tuple
    param_terms: tuple
    mixed: tuple

    def evaluate(self, model: ModelSpec, theta, x):
        args = model.param_names + (model.obs_name,)
        theta = [np.asarray(t, dtype=float) for t in np.atleast_1d(theta)] \
            if np.ndim(theta) <= 1 else list(theta)
        vals = theta + [np.asarray(x, dtype=float)]
        total = 0.0
        for e in self.data_terms + self.param_terms:
            total = total + compile_expr(e, args)(*vals)
        for t in self.mixed:
            total = total + compile_expr(t.theta_factor, args)(*vals) * \
                compile_expr(t.data_factor, args)(*vals)
        return total


def _sum_terms(e: Expr, negative: bool = False):
    if isinstance(e, BinOp) and e.op == "+":
        yield from _sum_terms(e.left, negative)
        yield from _sum_terms(e.right, negative)
    elif isinstance(e, BinOp) and e.op == "-":
        yield from _sum_terms(e.left, negative)
        yield from _sum_terms(e.right, not negative)
    elif isinstance(e, Neg):
        yield from _sum_terms(e.operand, not negative)
    else:
        yield negative, e


def _factors(e: Expr, inverted: bool = False):
    """Flatten products/quotients into (negated, factor, inverted) triples."""
    if isinstance(e, BinOp) and e.op == "*":
        yield from _factors(e.left, inverted)
        yield from _factors(e.right, inverted)
    elif isinstance(e, BinOp) and e.op == "/":
        yield from _factors(e.left, inverted)
        yield from _factors(e.right, not inverted)
    elif isinstance(e, Neg):
        yield True, None, inverted
        yield from _factors(e.operand, inverted)
    else:
        yield False, e, inverted


def _product(num: list, den: list) -> Expr:
    def fold(items):
        out = items[0]
        for it in items[1:]:
            out = BinOp("*", out, it)
        return out
    top = fold(num) if num else Const(1.0)
    return BinOp("/", top, fold(den)) if den else top


def _rewrite_hint(term: Expr) -> str:
    return (f"term {to_text(term)!r} mixes parameters and the observable in a way that does "
            "not factor as (parameter-only) * (observable-only); rewrite the log-density as a "
            "sum of such products, e.g. x*log(theta) + (1 - x)*log(1 - theta)")


def decompose_log_density(model: ModelSpec) -> SeparableDecomposition:
    """Split the log-density into observable-only, parameter-only and product terms."""
    theta = set(model.param_names)
    x = model.obs_name
    data_terms, param_terms, mixed = [], [], []
    for negative, term in _sum_terms(model.logpdf):
        deps = free_vars(term)
        has_theta = bool(deps & theta)
        has_x = x in deps
        signed = Neg(term) if negative else term
        if not has_theta:
            data_terms.append(signed)
            continue
        if not has_x:
            param_terms.append(signed)
            continue
        sign = negative
        t_num, t_den, x_num, x_den = [], [], [], []
        for neg, factor, inv in _factors(term):
            if neg:
                sign = not sign
                continue
            fdeps = free_vars(factor)
            if x in fdeps and fdeps & theta:
                raise NotSeparable(_rewrite_hint(term))
            if x in fdeps:
                (x_den if inv else x_num).append(factor)
            else:
                (t_den if inv else t_num).append(factor)
        if sign:
            if t_num:
                t_num[0] = Neg(t_num[0])
            else:
                t_num = [Neg(Const(1.0))]
        mixed.append(MixedTerm(_product(t_num, t_den), _product(x_num, x_den)))
    return SeparableDecomposition(tuple(data_terms), tuple(param_terms), tuple(mixed))
