"""Reader and writer for ``.nds`` system-description files.

A file is a sequence of statements terminated by newlines or semicolons::

    system building
    params { epsilon = 0.1; k = 0.5 }
    func f(x) = x + 0.5*sin(x)
    fast d1, d2
    slow D
    dyn d1 = -f(d1) + ...
    domain d1 in [-10, 10]; d2 in [-10, 10]; D in [-10, 10]

Other statements: ``input u = <expr of t>`` declares an exogenous signal and
``perturbation name`` designates the timescale-separation parameter (default:
the parameter called ``epsilon``). ``#`` starts a comment.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .expr import (
    BUILTINS,
    Binary,
    Call,
    Const,
    Expr,
    FuncDef,
    Sym,
    Unary,
    called_functions,
    evaluate,
    free_symbols,
    to_string,
    ExprError,
)

TIME = "t"
DEFAULT_EPSILON = "epsilon"
KEYWORDS = frozenset(
    {"system", "params", "fast", "slow", "input", "func", "dyn", "domain", "in", "perturbation"}
)


class ParseError(Exception):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class SystemSpec:
    name: str
    fast: tuple[str, ...]
    slow: tuple[str, ...]
    params: dict[str, float]
    rhs: dict[str, Expr]
    funcs: dict[str, FuncDef] = field(default_factory=dict)
    inputs: dict[str, Expr] = field(default_factory=dict)
    domain: dict[str, tuple[float, float]] = field(default_factory=dict)
    epsilon: str = DEFAULT_EPSILON

    @property
    def states(self) -> tuple[str, ...]:
        return self.fast + self.slow

    @property
    def eps(self) -> float:
        return self.params[self.epsilon]

    def box(self, default: tuple[float, float] = (-10.0, 10.0)) -> list[tuple[float, float]]:
        """Per-state analysis intervals in state order, filling gaps with ``default``."""
        return [self.domain.get(s, default) for s in self.states]

    def with_params(self, **values: float) -> "SystemSpec":
        unknown = set(values) - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        params = {**self.params, **{k: float(v) for k, v in values.items()}}
        if params[self.epsilon] < 0:
            raise ValueError("the perturbation parameter must be >= 0")
        return SystemSpec(
            self.name, self.fast, self.slow, params, self.rhs, self.funcs,
            self.inputs, self.domain, self.epsilon,
        )

    def with_domain(self, domain: dict[str, tuple[float, float]]) -> "SystemSpec":
        for k, (lo, hi) in domain.items():
            if k not in self.states:
                raise KeyError(f"unknown state {k!r}")
            if not lo < hi:
                raise ValueError(f"empty interval for {k!r}")
        return SystemSpec(
            self.name, self.fast, self.slow, self.params, self.rhs, self.funcs,
            self.inputs, {**self.domain, **domain}, self.epsilon,
        )


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),;=\[\]{}])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number, name, op, nl, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            tokens.append(Token("nl", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind in ("number", "name", "op"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of file"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def expect_name(self) -> Token:
        if self.tok.kind != "name":
            raise self.error(f"expected a name, found {self.tok.text or 'end of file'!r}")
        if self.tok.text in KEYWORDS:
            raise self.error(f"{self.tok.text!r} is a reserved word")
        return self.advance()

    def skip_separators(self) -> None:
        while self.tok.kind == "nl" or self.at(";"):
            self.advance()

    def end_statement(self) -> None:
        if self.tok.kind in ("nl", "eof") or self.at(";"):
            self.skip_separators()
            return
        raise self.error(f"unexpected {self.tok.text!r} at end of statement")

    # expressions
    def expr(self) -> Expr:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.at("-"):
            self.advance()
            nxt = self.peek()
            if self.tok.kind == "number" and not (nxt.kind == "op" and nxt.text == "^"):
                return Const(-float(self.advance().text))
            return Unary("neg", self.unary())
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.at("^"):
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            if tok.text in KEYWORDS:
                raise self.error(f"unexpected keyword {tok.text!r} in expression")
            self.advance()
            if self.at("("):
                self.advance()
                args: list[Expr] = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.at(","):
                        self.advance()
                        args.append(self.expr())
                self.expect(")")
                if tok.text in BUILTINS:
                    if len(args) != 1:
                        raise self.error(f"{tok.text} takes one argument", tok)
                    return Unary(tok.text, args[0])
                return Call(tok.text, tuple(args), (tok.line, tok.col))
            return Sym(tok.text, (tok.line, tok.col))
        if self.at("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"expected an expression, found {tok.text or 'end of file'!r}")

    def name_list(self) -> list[Token]:
        names = [self.expect_name()]
        while self.at(","):
            self.advance()
            names.append(self.expect_name())
        return names


def _const_value(e: Expr, params: dict[str, float], tok: Token) -> float:
    try:
        return evaluate(e, params)
    except ExprError as exc:
        raise ParseError(f"not a constant expression: {exc}", tok.line, tok.col) from None


def parse_system(text: str) -> SystemSpec:
    """Parse and validate a system description."""
    p = _Parser(text)
    name = "system"
    params: dict[str, float] = {}
    fast: list[tuple[str, Token]] = []
    slow: list[tuple[str, Token]] = []
    rhs: dict[str, tuple[Expr, Token]] = {}
    funcs: dict[str, tuple[FuncDef, Token]] = {}
    inputs: dict[str, tuple[Expr, Token]] = {}
    domain: dict[str, tuple[tuple[float, float], Token]] = {}
    eps_name: tuple[str, Token] | None = None
    partitioned = False

    def declare(target, tok):
        target.append((tok.text, tok))

    def param_entry():
        tok = p.expect_name()
        p.expect("=")
        etok = p.tok
        value = _const_value(p.expr(), params, etok)
        if tok.text in params:
            raise p.error(f"duplicate parameter {tok.text!r}", tok)
        params[tok.text] = value

    def domain_entry():
        tok = p.expect_name()
        p.expect("in")
        p.expect("[")
        ltok = p.tok
        lo = _const_value(p.expr(), params, ltok)
        p.expect(",")
        htok = p.tok
        hi = _const_value(p.expr(), params, htok)
        p.expect("]")
        if not lo < hi:
            raise p.error(f"empty domain interval [{lo}, {hi}] for {tok.text!r}", tok)
        if tok.text in domain:
            raise p.error(f"duplicate domain for {tok.text!r}", tok)
        domain[tok.text] = ((lo, hi), tok)

    p.skip_separators()
    while p.tok.kind != "eof":
        kw = p.tok
        if kw.kind != "name" or kw.text not in KEYWORDS - {"in"}:
            raise p.error(f"expected a statement, found {kw.text!r}")
        p.advance()
        if kw.text == "system":
            name = p.expect_name().text
        elif kw.text == "params":
            if p.at("{"):
                p.advance()
                p.skip_separators()
                while not p.at("}"):
                    param_entry()
                    if p.at(",") or p.at(";") or p.tok.kind == "nl":
                        p.advance()
                        p.skip_separators()
                    elif not p.at("}"):
                        raise p.error(f"expected ';' or '}}', found {p.tok.text!r}")
                p.advance()
            else:
                param_entry()
                while p.at(","):
                    p.advance()
                    param_entry()
        elif kw.text == "perturbation":
            tok = p.expect_name()
            eps_name = (tok.text, tok)
        elif kw.text in ("fast", "slow"):
            partitioned = True
            for tok in p.name_list():
                declare(fast if kw.text == "fast" else slow, tok)
        elif kw.text == "input":
            tok = p.expect_name()
            p.expect("=")
            if tok.text in inputs:
                raise p.error(f"duplicate input {tok.text!r}", tok)
            inputs[tok.text] = (p.expr(), tok)
        elif kw.text == "func":
            tok = p.expect_name()
            p.expect("(")
            args = [] if p.at(")") else [t.text for t in p.name_list()]
            p.expect(")")
            p.expect("=")
            if tok.text in funcs or tok.text in BUILTINS:
                raise p.error(f"duplicate function {tok.text!r}", tok)
            if len(set(args)) != len(args):
                raise p.error(f"repeated argument in {tok.text!r}", tok)
            funcs[tok.text] = (FuncDef(tuple(args), p.expr()), tok)
        elif kw.text == "dyn":
            tok = p.expect_name()
            p.expect("=")
            if tok.text in rhs:
                raise p.error(f"duplicate equation for {tok.text!r}", tok)
            rhs[tok.text] = (p.expr(), tok)
        elif kw.text == "domain":
            domain_entry()
            while True:
                if p.at(","):
                    p.advance()
                    domain_entry()
                elif p.at(";") and p.peek().kind == "name" and p.peek(2).text == "in":
                    p.advance()
                    domain_entry()
                else:
                    break
        p.end_statement()

    if not rhs:
        raise ParseError("no system: the source declares no dynamics", p.tok.line, p.tok.col)

    # states
    seen: dict[str, Token] = {}
    for n, tok in fast + slow:
        if n in seen:
            raise ParseError(f"duplicate state {n!r}", tok.line, tok.col)
        seen[n] = tok
    if partitioned:
        for n, (_, tok) in rhs.items():
            if n not in seen:
                raise ParseError(f"equation for undeclared state {n!r}", tok.line, tok.col)
        for n, tok in seen.items():
            if n not in rhs:
                raise ParseError(f"state {n!r} has no dyn equation", tok.line, tok.col)
        fast_names = tuple(n for n, _ in fast)
        slow_names = tuple(n for n, _ in slow)
    else:
        fast_names = ()
        slow_names = tuple(rhs)

    # perturbation parameter
    if eps_name is not None:
        eps, etok = eps_name
        if eps not in params:
            raise ParseError(f"perturbation parameter {eps!r} is not declared", etok.line, etok.col)
    else:
        eps = DEFAULT_EPSILON
        if eps not in params:
            if fast_names:
                raise ParseError(
                    "missing epsilon designation: declare a parameter 'epsilon' "
                    "or use 'perturbation <name>'",
                    p.tok.line,
                    p.tok.col,
                )
            params[eps] = 1.0
    if params[eps] < 0:
        raise ParseError(f"perturbation parameter {eps!r} must be >= 0")

    # name clashes between namespaces
    namespaces = [("state", set(seen) | set(slow_names)), ("parameter", set(params)),
                  ("input", set(inputs)), ("function", set(funcs))]
    for i, (k1, s1) in enumerate(namespaces):
        for k2, s2 in namespaces[i + 1:]:
            clash = s1 & s2
            if clash:
                raise ParseError(f"{sorted(clash)[0]!r} declared as both {k1} and {k2}")
    all_names = set(seen) | set(slow_names) | set(params) | set(inputs)
    if TIME in all_names:
        raise ParseError("'t' is reserved for time")

    # symbol resolution
    def check(e: Expr, allowed: set[str], where: Token) -> None:
        for node in _iter_nodes(e):
            if isinstance(node, Sym) and node.name not in allowed:
                line, col = node.loc or (where.line, where.col)
                raise ParseError(f"undefined symbol {node.name!r}", line, col)
            if isinstance(node, Call):
                line, col = node.loc or (where.line, where.col)
                if node.name not in funcs:
                    raise ParseError(f"undefined function {node.name!r}", line, col)
                arity = len(funcs[node.name][0].params)
                if arity != len(node.args):
                    raise ParseError(
                        f"function {node.name!r} takes {arity} arguments, got {len(node.args)}",
                        line, col,
                    )

    base = set(params) | {TIME}
    for n, (fd, tok) in funcs.items():
        check(fd.body, base | set(fd.params) | set(inputs), tok)
    _check_recursion({n: fd for n, (fd, _) in funcs.items()}, funcs)
    for n, (e, tok) in inputs.items():
        check(e, base, tok)
    for n, (e, tok) in rhs.items():
        check(e, base | set(inputs) | set(fast_names) | set(slow_names), tok)
    for n, (_, tok) in domain.items():
        if n not in fast_names + slow_names:
            raise ParseError(f"domain given for unknown state {n!r}", tok.line, tok.col)

    states = fast_names + slow_names
    return SystemSpec(
        name=name,
        fast=fast_names,
        slow=slow_names,
        params=params,
        rhs={s: rhs[s][0] for s in states},
        funcs={n: fd for n, (fd, _) in funcs.items()},
        inputs={n: e for n, (e, _) in inputs.items()},
        domain={s: domain[s][0] for s in states if s in domain},
        epsilon=eps,
    )


def _iter_nodes(e: Expr):
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
        elif isinstance(node, Call):
            stack.extend(node.args)


def _check_recursion(defs: dict[str, FuncDef], toks) -> None:
    state: dict[str, int] = {}

    def visit(n: str, path: list[str]) -> None:
        if state.get(n) == 2:
            return
        if state.get(n) == 1:
            tok = toks[n][1]
            raise ParseError(f"recursive function definition {' -> '.join(path + [n])}",
                             tok.line, tok.col)
        state[n] = 1
        for m in called_functions(defs[n].body):
            visit(m, path + [n])
        state[n] = 2

    for n in defs:
        visit(n, [])


def parse_expr(text: str) -> Expr:
    """Parse a single expression; names are not resolved."""
    p = _Parser(text)
    while p.tok.kind == "nl":
        p.advance()
    e = p.expr()
    while p.tok.kind == "nl":
        p.advance()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after expression")
    return e


def load_system(path) -> SystemSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_system(fh.read())


# ---------------------------------------------------------------------------
# writer


def to_source(spec: SystemSpec) -> str:
    """Render ``spec`` so that ``parse_system(to_source(spec)) == spec``."""
    lines = [f"system {spec.name}"]
    if spec.params:
        body = "; ".join(f"{k} = {to_string(Const(v))}" for k, v in spec.params.items())
        lines.append(f"params {{ {body} }}")
    if spec.epsilon != DEFAULT_EPSILON:
        lines.append(f"perturbation {spec.epsilon}")
    for n, e in spec.inputs.items():
        lines.append(f"input {n} = {to_string(e)}")
    for n, fd in spec.funcs.items():
        lines.append(f"func {n}({', '.join(fd.params)}) = {to_string(fd.body)}")
    if spec.fast:
        lines.append(f"fast {', '.join(spec.fast)}")
    if spec.slow:
        lines.append(f"slow {', '.join(spec.slow)}")
    for s in spec.states:
        lines.append(f"dyn {s} = {to_string(spec.rhs[s])}")
    if spec.domain:
        parts = [
            f"{s} in [{to_string(Const(lo))}, {to_string(Const(hi))}]"
            for s, (lo, hi) in spec.domain.items()
        ]
        lines.append("domain " + "; ".join(parts))
    return "\n".join(lines) + "\n"
