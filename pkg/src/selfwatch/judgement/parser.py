"""Recursive-descent parser for propositions.

Precedence, loosest first: ``->`` (right associative), ``|``, ``&``, ``!``.
In terms ``*`` binds tighter than ``+`` and ``-``. Quantifiers must carry an
explicit range; their body extends as far right as possible.
"""

from __future__ import annotations

import re

from .ast import (
    RELOPS, Add, And, Cmp, Exists, FalseP, Forall, Implies, Lit, Mem, Mul, Not,
    Or, Pc, Prop, Reg, Sub, Term, Tick, TrueP, Var,
)

MAX_LIT = (1 << 64) - 1
KEYWORDS = frozenset({"true", "false", "forall", "exists", "in", "reg", "mem", "pc", "tick"})

_TOKEN = re.compile(
    r"\s*(?:(?P<num>0[xX][0-9a-fA-F]+|\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>->|\.\.|!=|<=|>=|[()=<>!&|+\-*.]))"
)


class PropSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


def tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise PropSyntaxError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.furthest: PropSyntaxError | None = None

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.i]

    def at(self, value: str) -> bool:
        kind, val, _ = self.toks[self.i]
        return val == value and kind != "num"

    def fail(self, message: str):
        err = PropSyntaxError(message, self.peek()[2])
        if self.furthest is None or err.position >= self.furthest.position:
            self.furthest = err
        raise err

    def expect(self, value: str) -> None:
        if not self.at(value):
            got = self.peek()[1] or "end of input"
            self.fail(f"expected {value!r}, got {got!r}")
        self.i += 1

    # propositions

    def prop(self) -> Prop:
        left = self.or_()
        if self.at("->"):
            self.i += 1
            return Implies(left, self.prop())
        return left

    def or_(self) -> Prop:
        left = self.and_()
        while self.at("|"):
            self.i += 1
            left = Or(left, self.and_())
        return left

    def and_(self) -> Prop:
        left = self.not_()
        while self.at("&"):
            self.i += 1
            left = And(left, self.not_())
        return left

    def not_(self) -> Prop:
        if self.at("!"):
            self.i += 1
            return Not(self.not_())
        return self.atom()

    def atom(self) -> Prop:
        kind, val, _ = self.peek()
        if kind == "ident" and val in ("true", "false"):
            self.i += 1
            return TrueP() if val == "true" else FalseP()
        if kind == "ident" and val in ("forall", "exists"):
            return self.quant()
        if self.at("("):
            # "(" opens either a parenthesised proposition or a term
            mark = self.i
            try:
                return self.cmp()
            except PropSyntaxError:
                self.i = mark
            self.i += 1
            inner = self.prop()
            self.expect(")")
            return inner
        return self.cmp()

    def quant(self) -> Prop:
        _, word, _ = self.peek()
        self.i += 1
        kind, var, _ = self.peek()
        if kind != "ident" or var in KEYWORDS:
            self.fail("expected a variable name")
        self.i += 1
        if not self.at("in"):
            self.fail(f"{word} needs a bounded range: '{word} {var} in lo..hi . body'")
        self.i += 1
        lo = self.term()
        self.expect("..")
        hi = self.term()
        self.expect(".")
        body = self.prop()
        cls = Forall if word == "forall" else Exists
        return cls(var, lo, hi, body)

    def cmp(self) -> Prop:
        left = self.term()
        _, val, _ = self.peek()
        if val not in RELOPS or self.peek()[0] != "op":
            self.fail("expected a comparison operator")
        self.i += 1
        return Cmp(left, val, self.term())

    # terms

    def term(self) -> Term:
        left = self.factor()
        while self.at("+") or self.at("-"):
            op = self.peek()[1]
            self.i += 1
            right = self.factor()
            left = Add(left, right) if op == "+" else Sub(left, right)
        return left

    def factor(self) -> Term:
        left = self.prim()
        while self.at("*"):
            self.i += 1
            left = Mul(left, self.prim())
        return left

    def prim(self) -> Term:
        kind, val, pos = self.peek()
        if kind == "num":
            value = int(val, 16) if val[:2].lower() == "0x" else int(val)
            if value > MAX_LIT:
                self.fail("literal exceeds 64 bits")
            self.i += 1
            return Lit(value)
        if kind == "ident":
            if val == "pc":
                self.i += 1
                return Pc()
            if val == "tick":
                self.i += 1
                return Tick()
            if val in ("reg", "mem"):
                self.i += 1
                self.expect("(")
                inner = self.term()
                self.expect(")")
                if val == "reg":
                    if isinstance(inner, Lit) and inner.value > 7:
                        raise PropSyntaxError("register index must be 0..7", pos)
                    return Reg(inner)
                return Mem(inner)
            if val in KEYWORDS:
                self.fail(f"unexpected keyword {val!r}")
            self.i += 1
            return Var(val)
        if self.at("("):
            self.i += 1
            inner = self.term()
            self.expect(")")
            return inner
        self.fail(f"unexpected {val!r}" if val else "unexpected end of input")


def parse_prop(text: str) -> Prop:
    p = _Parser(text)
    try:
        result = p.prop()
        if p.peek()[0] != "eof":
            p.fail(f"unexpected {p.peek()[1]!r}")
    except PropSyntaxError as err:
        best = p.furthest if p.furthest and p.furthest.position > err.position else err
        raise best from None
    return result


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    if p.peek()[0] != "eof":
        p.fail(f"unexpected {p.peek()[1]!r}")
    return t
