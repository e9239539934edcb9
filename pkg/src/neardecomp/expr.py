"""Expression trees: evaluation, symbolic differentiation and code generation.

Nodes are immutable dataclasses, so two trees compare equal exactly when they
are structurally identical. Source locations ride along on symbols and calls
for diagnostics but are excluded from comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

UNARY_OPS = ("neg", "sin", "cos", "tanh", "exp", "log", "abs", "sqrt", "sign")
BINARY_OPS = ("+", "-", "*", "/", "^")
BUILTINS = frozenset(UNARY_OPS) - {"neg"}

# binding strength used by the printer; unary minus sits between * and ^
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


class ExprError(Exception):
    pass


class DomainError(ExprError):
    """Raised when an expression evaluates to a non-finite or undefined value."""


class UnboundSymbolError(ExprError):
    pass


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Sym(Expr):
    name: str
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    """Application of a user-defined function."""

    name: str
    args: tuple[Expr, ...]
    loc: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class FuncDef:
    params: tuple[str, ...]
    body: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# smart constructors: constant folding and 0/1 identities only


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            v = math.pow(a.value, b.value)
        except (ValueError, OverflowError):
            return Binary("^", a, b)
        return Const(v)
    return Binary("^", a, b)


def apply(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        try:
            v = _MATH_UNARY[op](a.value)
        except (ValueError, OverflowError):
            return Unary(op, a)
        if math.isfinite(v):
            return Const(v)
    return Unary(op, a)


def _sign(x: float) -> float:
    return float(x > 0) - float(x < 0)


_MATH_UNARY: dict[str, Callable[[float], float]] = {
    "neg": lambda x: -x,
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
    "exp": math.exp,
    "log": math.log,
    "abs": abs,
    "sqrt": math.sqrt,
    "sign": _sign,
}


# ---------------------------------------------------------------------------
# traversal helpers


def free_symbols(e: Expr) -> set[str]:
    out: set[str] = set()
    _walk_syms(e, out)
    return out


def _walk_syms(e: Expr, out: set[str]) -> None:
    if isinstance(e, Sym):
        out.add(e.name)
    elif isinstance(e, Unary):
        _walk_syms(e.arg, out)
    elif isinstance(e, Binary):
        _walk_syms(e.left, out)
        _walk_syms(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _walk_syms(a, out)


def called_functions(e: Expr) -> set[str]:
    if isinstance(e, Call):
        out = {e.name}
        for a in e.args:
            out |= called_functions(a)
        return out
    if isinstance(e, Unary):
        return called_functions(e.arg)
    if isinstance(e, Binary):
        return called_functions(e.left) | called_functions(e.right)
    return set()


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace symbols by expressions, folding constants on the way back up."""
    if isinstance(e, Sym):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        return apply(e.op, substitute(e.arg, mapping))
    if isinstance(e, Binary):
        return _BINARY_CTORS[e.op](substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.name, tuple(substitute(a, mapping) for a in e.args), e.loc)
    raise TypeError(f"not an expression: {e!r}")


def inline(e: Expr, funcs: Mapping[str, FuncDef]) -> Expr:
    """Expand every user-function call by substituting its body."""
    if isinstance(e, (Const, Sym)):
        return e
    if isinstance(e, Unary):
        return apply(e.op, inline(e.arg, funcs))
    if isinstance(e, Binary):
        return _BINARY_CTORS[e.op](inline(e.left, funcs), inline(e.right, funcs))
    if isinstance(e, Call):
        try:
            fd = funcs[e.name]
        except KeyError:
            raise ExprError(f"unknown function {e.name!r}") from None
        if len(fd.params) != len(e.args):
            raise ExprError(
                f"function {e.name!r} takes {len(fd.params)} arguments, got {len(e.args)}"
            )
        args = [inline(a, funcs) for a in e.args]
        body = inline(fd.body, funcs)
        return substitute(body, dict(zip(fd.params, args)))
    raise TypeError(f"not an expression: {e!r}")


_BINARY_CTORS: dict[str, Callable[[Expr, Expr], Expr]] = {
    "+": add,
    "-": sub,
    "*": mul,
    "/": div,
    "^": power,
}


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    e: Expr,
    env: Mapping[str, float],
    funcs: Mapping[str, FuncDef] | None = None,
) -> float:
    """Evaluate ``e`` in IEEE double precision.

    Raises UnboundSymbolError for free symbols missing from ``env`` and
    DomainError whenever an intermediate result is undefined or non-finite.
    """
    v = _eval(e, env, funcs or {})
    if not math.isfinite(v):
        raise DomainError(f"non-finite result {v} in {to_string(e)}")
    return v


def _eval(e: Expr, env: Mapping[str, float], funcs: Mapping[str, FuncDef]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Sym):
        try:
            return float(env[e.name])
        except KeyError:
            raise UnboundSymbolError(f"unbound symbol {e.name!r}") from None
    try:
        if isinstance(e, Unary):
            v = _MATH_UNARY[e.op](_eval(e.arg, env, funcs))
        elif isinstance(e, Binary):
            a = _eval(e.left, env, funcs)
            b = _eval(e.right, env, funcs)
            if e.op == "+":
                v = a + b
            elif e.op == "-":
                v = a - b
            elif e.op == "*":
                v = a * b
            elif e.op == "/":
                v = a / b
            else:
                v = math.pow(a, b)
        elif isinstance(e, Call):
            fd = funcs.get(e.name)
            if fd is None:
                raise ExprError(f"unknown function {e.name!r}")
            if len(fd.params) != len(e.args):
                raise ExprError(f"arity mismatch calling {e.name!r}")
            local = {p: _eval(a, env, funcs) for p, a in zip(fd.params, e.args)}
            v = _eval(fd.body, {**env, **local}, funcs)
        else:
            raise TypeError(f"not an expression: {e!r}")
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{exc} while evaluating {to_string(e)}") from None
    if not math.isfinite(v):
        raise DomainError(f"non-finite value in {to_string(e)}")
    return v


# ---------------------------------------------------------------------------
# differentiation


def differentiate(
    e: Expr, wrt: str, funcs: Mapping[str, FuncDef] | None = None
) -> Expr:
    """Exact derivative of ``e`` with respect to the symbol ``wrt``.

    User-function calls are inlined first. ``abs`` differentiates to ``sign``,
    which puts the subgradient at 0 to 0.
    """
    if funcs:
        e = inline(e, funcs)
    elif called_functions(e):
        raise ExprError("expression calls user functions; pass their definitions")
    return _d(e, wrt)


def _d(e: Expr, x: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Sym):
        return ONE if e.name == x else ZERO
    if isinstance(e, Unary):
        u = e.arg
        du = _d(u, x)
        if _is(du, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(du)
        if op == "sin":
            return mul(apply("cos", u), du)
        if op == "cos":
            return neg(mul(apply("sin", u), du))
        if op == "tanh":
            return mul(sub(ONE, power(apply("tanh", u), Const(2.0))), du)
        if op == "exp":
            return mul(apply("exp", u), du)
        if op == "log":
            return div(du, u)
        if op == "abs":
            return mul(apply("sign", u), du)
        if op == "sqrt":
            return div(du, mul(Const(2.0), apply("sqrt", u)))
        if op == "sign":
            return ZERO
        raise ExprError(f"unknown unary op {op!r}")
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = _d(a, x), _d(b, x)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            if _is(db, 0.0):
                return div(da, b)
            return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
        if e.op == "^":
            if _is(db, 0.0):
                # a^c with c free of x
                return mul(mul(b, power(a, sub(b, ONE))), da)
            # general case a^b = exp(b log a)
            return mul(e, add(mul(db, apply("log", a)), div(mul(b, da), a)))
    if isinstance(e, Call):
        raise ExprError(f"cannot differentiate through {e.name!r} without its definition")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# printing


def _fmt_const(v: float) -> str:
    s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_string(e: Expr) -> str:
    """Infix rendering that re-parses to the identical tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_string(a) for a in e.args)})"
    if isinstance(e, Unary):
        if e.op != "neg":
            return f"{e.op}({to_string(e.arg)})"
        inner = to_string(e.arg)
        a = e.arg
        if (isinstance(a, Binary) and _PREC[a.op] < _PREC["neg"]) or (
            isinstance(a, Const) and a.value >= 0
        ):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        left, right = to_string(e.left), to_string(e.right)
        lp = _node_prec(e.left)
        rp = _node_prec(e.right)
        if e.op == "^":
            if lp <= p:
                left = f"({left})"
            if rp < p or (isinstance(e.right, Unary) and e.right.op == "neg"):
                right = f"({right})"
        else:
            if lp < p:
                left = f"({left})"
            if rp <= p:
                right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def _node_prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return 10


# ---------------------------------------------------------------------------
# code generation


def to_python(e: Expr, backend: str = "math") -> str:
    """Python source for ``e``; ``backend`` is ``"math"`` (scalars) or ``"numpy"``."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Unary):
        arg = to_python(e.arg, backend)
        if e.op == "neg":
            return f"(-{arg})"
        if backend == "math":
            name = {"abs": "abs", "sign": "_sign"}.get(e.op, f"_m.{e.op}")
        else:
            name = f"_np.{e.op}"
        return f"{name}({arg})"
    if isinstance(e, Binary):
        a, b = to_python(e.left, backend), to_python(e.right, backend)
        if e.op == "^":
            if backend == "math":
                return f"_m.pow({a}, {b})"
            return f"_np.power({a}, {b})"
        return f"({a} {e.op} {b})"
    raise ExprError(f"inline user functions before code generation: {e!r}")


def _mangle(name: str) -> str:
    return f"v_{name}"


def lambdify(
    exprs: Sequence[Expr],
    variables: Sequence[str],
    backend: str = "math",
    constants: Mapping[str, float] | None = None,
) -> Callable:
    """Compile expressions into ``fn(*variables) -> tuple``.

    ``constants`` are baked in by substitution. With the numpy backend every
    argument may be an array and results broadcast against the first one.
    """
    consts = {k: Const(float(v)) for k, v in (constants or {}).items()}
    ren = {v: Sym(_mangle(v)) for v in variables}
    bodies = []
    for e in exprs:
        e2 = substitute(substitute(e, consts), ren)
        extra = free_symbols(e2) - {_mangle(v) for v in variables}
        if extra:
            raise UnboundSymbolError(f"unbound symbols {sorted(extra)}")
        bodies.append(to_python(e2, backend))
    args = ", ".join(_mangle(v) for v in variables)
    if backend == "numpy":
        first = _mangle(variables[0]) if variables else "0.0"
        items = ", ".join(f"_bc({b}, {first})" for b in bodies)
    else:
        items = ", ".join(bodies)
    src = f"def _generated({args}):\n    return ({items}{',' if len(bodies) == 1 else ''})\n"
    ns: dict = {"_m": math, "_np": np, "_sign": _sign, "_bc": _broadcast}
    exec(compile(src, "<neardecomp-generated>", "exec"), ns)
    fn = ns["_generated"]
    fn.source = src
    return fn


def _broadcast(value, like):
    return np.broadcast_to(np.asarray(value, dtype=float), np.shape(like))
