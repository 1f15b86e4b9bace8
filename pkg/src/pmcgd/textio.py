"""Readers and writers for ``.pmc``, ``.region``, ``.prop`` and ``.dot`` files.

Model grammar (statements end with ``;``, ``#`` starts a comment)::

    params <id> [, <id>]* ;
    state <id> [init] [absorbing] [reward <rational>] ;
    target <id> [, <id>]* ;
    transition <id> -> <id> : <polyexpr> ;

``<polyexpr>`` is built from rational literals (``0.5``, ``1/2``), parameter
names, ``+``, ``-``, ``*`` and parentheses. Files written for weighted
automata start with ``dialect weighted;`` and are not accepted as input
unless explicitly requested.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

from .errors import ParseError, RegionError
from .model import Pmc, RawModel, Region, WeightedAutomaton
from .polynomial import ParameterSet, Polynomial

_RATIONAL = r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?(?:/\d+)?|\.\d+(?:[eE][+-]?\d+)?"
_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    rf"|(?P<num>{_RATIONAL})"
    r"|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>->|[:;,+\-*()\[\]/])"
)

_KEYWORDS = {"params", "state", "target", "transition", "dialect", "init", "absorbing", "reward"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> Iterator[Token]:
    line, col_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - col_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            col_start = m.end()
        elif kind not in ("ws", "comment"):
            yield Token(kind, m.group(), line, m.start() - col_start + 1)
        pos = m.end()


def parse_rational(text: str) -> Fraction:
    """Exact value of a decimal (``0.25``, ``1e-3``) or fraction (``1/4``) literal."""
    try:
        if "/" in text:
            num, den = text.split("/")
            return Fraction(num) / Fraction(int(den))
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"invalid rational literal {text!r}") from exc


class _Statement:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def head(self) -> Token:
        return self.tokens[0]

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self, what: str = "token") -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1]
            raise ParseError(f"expected {what} before ';'", last.line, last.column + len(last.text))
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> Token:
        what = repr(text) if text else ("identifier" if kind == "id" else kind)
        tok = self.next(what)
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ParseError(f"expected {what}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def ident(self) -> Token:
        tok = self.expect("id")
        if tok.text in _KEYWORDS:
            raise ParseError(f"keyword {tok.text!r} cannot be used as a name", tok.line, tok.column)
        return tok

    def end(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise ParseError(f"unexpected {tok.text!r}", tok.line, tok.column)


def _statements(text: str) -> list[_Statement]:
    out, cur = [], []
    for tok in tokenize(text):
        if tok.kind == "op" and tok.text == ";":
            if not cur:
                raise ParseError("empty statement", tok.line, tok.column)
            out.append(_Statement(cur))
            cur = []
        else:
            cur.append(tok)
    if cur:
        raise ParseError("missing ';' at end of statement", cur[-1].line, cur[-1].column)
    return out


class _ExprParser:
    """Recursive descent over ``expr := term (('+'|'-') term)*``, ``term := unary ('*' unary)*``."""

    def __init__(self, stmt: _Statement, params: ParameterSet):
        self.stmt = stmt
        self.params = params

    def parse(self) -> Polynomial:
        if self.stmt.peek() is None:
            self.stmt.next("expression")
        poly = self.expr()
        self.stmt.end()
        return poly

    def expr(self) -> Polynomial:
        left = self.term()
        while (tok := self.stmt.peek()) is not None and tok.kind == "op" and tok.text in "+-":
            self.stmt.next()
            right = self.term()
            left = left + right if tok.text == "+" else left - right
        return left

    def term(self) -> Polynomial:
        left = self.unary()
        while (tok := self.stmt.peek()) is not None and tok.kind == "op" and tok.text in "*/":
            if tok.text == "/":
                raise ParseError("division is not supported in transition expressions", tok.line, tok.column)
            self.stmt.next()
            left = left * self.unary()
        return left

    def unary(self) -> Polynomial:
        tok = self.stmt.peek()
        if tok is not None and tok.kind == "op" and tok.text in "+-":
            self.stmt.next()
            inner = self.unary()
            return -inner if tok.text == "-" else inner
        return self.atom()

    def atom(self) -> Polynomial:
        tok = self.stmt.next("expression")
        if tok.kind == "num":
            return Polynomial.constant(self.params, parse_rational(tok.text))
        if tok.kind == "id":
            if tok.text not in self.params:
                raise ParseError(f"unknown parameter {tok.text!r}", tok.line, tok.column)
            return Polynomial.variable(self.params, tok.text)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr()
            self.stmt.expect("op", ")")
            return inner
        raise ParseError(f"unexpected {tok.text!r} in expression", tok.line, tok.column)


def parse_polynomial(text: str, params: ParameterSet) -> Polynomial:
    toks = list(tokenize(text))
    if not toks:
        raise ParseError("empty expression", 1, 1)
    return _ExprParser(_Statement(toks), params).parse()


def parse_model(text: str, allow_weighted: bool = False) -> tuple[RawModel, tuple[str, ...]]:
    """Parse a model file; returns the raw model and its target state names."""
    stmts = _statements(text)
    weighted = False
    names: list[str] = []
    for st in stmts:
        kw = st.head
        if kw.kind != "id" or kw.text not in ("params", "state", "target", "transition", "dialect"):
            raise ParseError(f"unknown statement {kw.text!r}", kw.line, kw.column)
        if kw.text == "dialect":
            st.next()
            tok = st.expect("id", "weighted")
            st.end()
            if not allow_weighted:
                raise ParseError("weighted automaton files are output-only and cannot be loaded as a model",
                                 tok.line, tok.column)
            weighted = True
        elif kw.text == "params":
            st.next()
            while True:
                tok = st.ident()
                if tok.text in names:
                    raise ParseError(f"duplicate parameter {tok.text!r}", tok.line, tok.column)
                names.append(tok.text)
                sep = st.peek()
                if sep is None:
                    break
                st.expect("op", ",")
    params = ParameterSet(names)

    states: list[str] = []
    where: dict[str, Token] = {}
    initial: list[Token] = []
    absorbing: set[str] = set()
    rewards: dict[str, Fraction] = {}
    targets: list[str] = []
    target_tok: dict[str, Token] = {}
    edges: list[tuple[Token, Token, Polynomial]] = []
    for st in stmts:
        st.i = 0
        kw = st.next()
        if kw.text == "state":
            tok = st.ident()
            if tok.text in where:
                raise ParseError(f"duplicate state {tok.text!r}", tok.line, tok.column)
            where[tok.text] = tok
            states.append(tok.text)
            seen = set()
            while (flag := st.peek()) is not None:
                st.next()
                if flag.kind != "id" or flag.text not in ("init", "absorbing", "reward") or flag.text in seen:
                    raise ParseError(f"unexpected {flag.text!r} in state declaration", flag.line, flag.column)
                seen.add(flag.text)
                if flag.text == "init":
                    initial.append(tok)
                elif flag.text == "absorbing":
                    absorbing.add(tok.text)
                else:
                    sign = Fraction(1)
                    nxt = st.peek()
                    if nxt is not None and nxt.kind == "op" and nxt.text == "-":
                        st.next()
                        sign = Fraction(-1)
                    num = st.expect("num")
                    rewards[tok.text] = sign * parse_rational(num.text)
        elif kw.text == "target":
            while True:
                tok = st.ident()
                if tok.text in target_tok:
                    raise ParseError(f"duplicate target {tok.text!r}", tok.line, tok.column)
                target_tok[tok.text] = tok
                targets.append(tok.text)
                if st.peek() is None:
                    break
                st.expect("op", ",")
        elif kw.text == "transition":
            src = st.ident()
            st.expect("op", "->")
            dst = st.ident()
            st.expect("op", ":")
            poly = _ExprParser(st, params).parse()
            edges.append((src, dst, poly))

    if not states:
        raise ParseError("model declares no states", 1, 1)
    if len(initial) != 1:
        tok = initial[1] if len(initial) > 1 else stmts[0].head
        raise ParseError("exactly one state must be marked 'init'", tok.line, tok.column)
    for name, tok in target_tok.items():
        if name not in where:
            raise ParseError(f"unknown target state {name!r}", tok.line, tok.column)

    index = {name: i for i, name in enumerate(states)}
    one = Polynomial.constant(params, 1)
    rows: list[dict[int, Polynomial]] = [dict() for _ in states]
    first_edge: dict[int, Token] = {}
    for src, dst, poly in edges:
        for tok in (src, dst):
            if tok.text not in index:
                raise ParseError(f"unknown state {tok.text!r}", tok.line, tok.column)
        s, t = index[src.text], index[dst.text]
        if src.text in absorbing:
            raise ParseError(f"absorbing state {src.text!r} cannot have outgoing transitions", src.line, src.column)
        if t in rows[s]:
            raise ParseError(f"duplicate transition {src.text} -> {dst.text}", src.line, src.column)
        if poly.is_zero():
            raise ParseError(f"transition {src.text} -> {dst.text} is identically zero", src.line, src.column)
        if not weighted and poly.is_constant() and poly.constant_value() < 0:
            raise ParseError(f"negative probability on {src.text} -> {dst.text}", src.line, src.column)
        rows[s][t] = poly
        first_edge.setdefault(s, src)
    for name in absorbing:
        rows[index[name]] = {index[name]: one}
    for s, row in enumerate(rows):
        total = sum(row.values(), Polynomial.constant(params, 0))
        if total != one:
            tok = first_edge.get(s, where[states[s]])
            raise ParseError(f"outgoing transitions of state {states[s]!r} sum to {total}, not 1",
                             tok.line, tok.column)

    raw = RawModel(params, tuple(states), index[initial[0].text], tuple(rows),
                   tuple(rewards.get(n, Fraction(0)) for n in states),
                   absorbing=frozenset(index[n] for n in absorbing),
                   targets=frozenset(index[n] for n in targets), weighted=weighted)
    return raw, tuple(targets)


def _fmt(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def serialize_model(model: Union[RawModel, Pmc]) -> str:
    """Write a model in the ``.pmc`` grammar; weighted automata use the output-only dialect."""
    if isinstance(model, RawModel):
        absorbing, targets = model.absorbing, sorted(model.targets)
        weighted = model.weighted
    else:
        absorbing = model.absorbing_states
        targets = sorted(model.target_states)
        weighted = model.weighted
    lines = []
    if weighted:
        lines.append("dialect weighted;")
    if len(model.params):
        lines.append(f"params {', '.join(model.params.names)};")
    for s, name in enumerate(model.states):
        parts = ["state", name]
        if s == model.initial:
            parts.append("init")
        if s in absorbing:
            parts.append("absorbing")
        if model.rewards[s] != 0:
            r = Fraction(model.rewards[s])
            parts.append(f"reward {'-' if r < 0 else ''}{_fmt(abs(r))}")
        lines.append(" ".join(parts) + ";")
    if targets:
        lines.append(f"target {', '.join(model.states[t] for t in targets)};")
    for s, row in enumerate(model.transitions):
        if s in absorbing:
            continue
        for t in sorted(row):
            lines.append(f"transition {model.states[s]} -> {model.states[t]} : {row[t]};")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------------------
# Regions and properties
# --------------------------------------------------------------------------------------

_REGION_LINE = re.compile(
    rf"^\s*([A-Za-z_][A-Za-z0-9_]*)\s+in\s+\[\s*(-?(?:{_RATIONAL}))\s*,\s*(-?(?:{_RATIONAL}))\s*\]\s*;?\s*$")


def parse_region(text: str, params: ParameterSet) -> Region:
    """One ``p in [a, b]`` line per parameter; missing parameters get ``[1e-6, 1-1e-6]``."""
    intervals: dict[str, tuple[float, float]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        m = _REGION_LINE.match(body)
        if m is None:
            raise ParseError("expected '<param> in [<lower>, <upper>]'", lineno, 1)
        name, lo, hi = m.group(1), m.group(2), m.group(3)
        if name not in params:
            raise ParseError(f"unknown parameter {name!r}", lineno, m.start(1) + 1)
        if name in intervals:
            raise ParseError(f"duplicate interval for {name!r}", lineno, m.start(1) + 1)
        lo_v = float(_signed(lo))
        hi_v = float(_signed(hi))
        if lo_v >= hi_v:
            raise ParseError(f"empty interval [{lo}, {hi}] for {name!r}", lineno, m.start(2) + 1)
        intervals[name] = (lo_v, hi_v)
    try:
        return Region.from_intervals(params, intervals)
    except RegionError as exc:
        raise ParseError(str(exc)) from exc


def _signed(text: str) -> Fraction:
    if text.startswith("-"):
        return -parse_rational(text[1:])
    return parse_rational(text)


def serialize_region(region: Region) -> str:
    return "".join(f"{n} in [{lo!r}, {hi!r}]\n"
                   for n, lo, hi in zip(region.params.names, region.lower.tolist(), region.upper.tolist()))


_COMPARATORS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class PropertyQuery:
    """``P ~ bound`` (reachability probability) or ``ER ~ bound`` (expected reward)."""

    kind: str
    comparator: str
    bound: float

    def __post_init__(self):
        if self.kind not in ("P", "ER"):
            raise ValueError(f"unknown property kind {self.kind!r}")
        if self.comparator not in _COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")
        if self.bound < 0 or (self.kind == "P" and self.bound > 1):
            raise ValueError(f"bound {self.bound} out of range for {self.kind}")

    @property
    def reachability(self) -> bool:
        return self.kind == "P"

    @property
    def maximize(self) -> bool:
        return self.comparator in (">", ">=")

    def holds(self, value: float) -> bool:
        return bool(_COMPARATORS[self.comparator](value, self.bound))

    def __str__(self) -> str:
        return f"{self.kind} {self.comparator} {self.bound!r}"


_PROPERTY = re.compile(rf"^\s*(P|ER)\s*(<=|>=|<|>)\s*((?:{_RATIONAL}))\s*;?\s*$")


def parse_property(text: str) -> PropertyQuery:
    body = "\n".join(l.split("#", 1)[0] for l in text.splitlines()).strip()
    m = _PROPERTY.match(body)
    if m is None:
        raise ParseError(f"expected 'P <op> <bound>' or 'ER <op> <bound>', got {body!r}")
    try:
        return PropertyQuery(m.group(1), m.group(2), float(parse_rational(m.group(3))))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


# --------------------------------------------------------------------------------------
# DOT
# --------------------------------------------------------------------------------------


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(model: Pmc) -> str:
    """Graphviz rendering; derivative states of a weighted automaton form their own cluster."""
    derived = isinstance(model, WeightedAutomaton)
    lines = [f"digraph {'wfa' if derived else 'pmc'} {{", "  rankdir=LR;", "  node [shape=circle];"]

    def node(s: int) -> str:
        attrs = [f"label={_q(model.states[s])}"]
        if s == model.initial:
            attrs.append("style=bold")
        if s in model.target_states:
            attrs.append("shape=doublecircle")
        elif s in model.trap_states:
            attrs.append("shape=box")
        return f"{_q(model.states[s])} [{', '.join(attrs)}];"

    if derived:
        for s in range(model.base):
            lines.append("  " + node(s))
        lines.append("  subgraph cluster_derived {")
        lines.append(f"    label={_q('d/d' + model.parameter)};")
        lines.append("    style=dashed;")
        for s in range(model.base, model.n_states):
            lines.append("    " + node(s))
        lines.append("  }")
    else:
        for s in range(model.n_states):
            lines.append("  " + node(s))
    for s, row in enumerate(model.transitions):
        for t in sorted(row):
            attrs = [f"label={_q(str(row[t]))}"]
            if derived and model.is_derivative_state(s) and not model.is_derivative_state(t):
                attrs.append("style=dashed")
                attrs.append("color=red")
            lines.append(f"  {_q(model.states[s])} -> {_q(model.states[t])} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


__all__ = [
    "PropertyQuery", "export_dot", "parse_model", "parse_polynomial", "parse_property", "parse_rational",
    "parse_region", "serialize_model", "serialize_region", "tokenize",
]
