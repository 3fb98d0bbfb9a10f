"""Proposition and term trees. Immutable; structural equality."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Reg:
    index: "Term"

    def __post_init__(self):
        # a literal index names a register directly; computed ones wrap mod 8
        if isinstance(self.index, Lit) and self.index.value > 7:
            raise ValueError(f"register index {self.index.value} is not 0..7")


@dataclass(frozen=True)
class Mem:
    addr: "Term"


@dataclass(frozen=True)
class Pc:
    pass


@dataclass(frozen=True)
class Tick:
    pass


@dataclass(frozen=True)
class Add:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Sub:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Mul:
    left: "Term"
    right: "Term"


Term = Union[Lit, Var, Reg, Mem, Pc, Tick, Add, Sub, Mul]

RELOPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class TrueP:
    pass


@dataclass(frozen=True)
class FalseP:
    pass


@dataclass(frozen=True)
class Cmp:
    left: Term
    op: str
    right: Term

    def __post_init__(self):
        if self.op not in RELOPS:
            raise ValueError(f"unknown relation {self.op!r}")


@dataclass(frozen=True)
class Not:
    body: "Prop"


@dataclass(frozen=True)
class And:
    left: "Prop"
    right: "Prop"


@dataclass(frozen=True)
class Or:
    left: "Prop"
    right: "Prop"


@dataclass(frozen=True)
class Implies:
    left: "Prop"
    right: "Prop"


@dataclass(frozen=True)
class Forall:
    var: str
    lo: Term
    hi: Term
    body: "Prop"


@dataclass(frozen=True)
class Exists:
    var: str
    lo: Term
    hi: Term
    body: "Prop"


Prop = Union[TrueP, FalseP, Cmp, Not, And, Or, Implies, Forall, Exists]

TERM_TYPES = (Lit, Var, Reg, Mem, Pc, Tick, Add, Sub, Mul)
PROP_TYPES = (TrueP, FalseP, Cmp, Not, And, Or, Implies, Forall, Exists)


def _term_text(t: Term, prec: int = 0) -> str:
    if isinstance(t, Lit):
        return str(t.value)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Reg):
        return f"reg({_term_text(t.index)})"
    if isinstance(t, Mem):
        return f"mem({_term_text(t.addr)})"
    if isinstance(t, Pc):
        return "pc"
    if isinstance(t, Tick):
        return "tick"
    if isinstance(t, Mul):
        s = f"{_term_text(t.left, 2)} * {_term_text(t.right, 3)}"
        return f"({s})" if prec > 2 else s
    sym = "+" if isinstance(t, Add) else "-"
    s = f"{_term_text(t.left, 1)} {sym} {_term_text(t.right, 2)}"
    return f"({s})" if prec > 1 else s


def to_text(p: Prop, prec: int = 0) -> str:
    """Render ``p`` in the concrete syntax; ``parse_prop(to_text(p)) == p``."""
    if isinstance(p, TrueP):
        return "true"
    if isinstance(p, FalseP):
        return "false"
    if isinstance(p, Cmp):
        return f"{_term_text(p.left)} {p.op} {_term_text(p.right)}"
    if isinstance(p, Not):
        return f"!{to_text(p.body, 4)}"
    if isinstance(p, (Forall, Exists)):
        q = "forall" if isinstance(p, Forall) else "exists"
        s = f"{q} {p.var} in {_term_text(p.lo)}..{_term_text(p.hi)} . {to_text(p.body)}"
        return f"({s})" if prec > 0 else s
    if isinstance(p, And):
        s = f"{to_text(p.left, 3)} & {to_text(p.right, 4)}"
        return f"({s})" if prec > 3 else s
    if isinstance(p, Or):
        s = f"{to_text(p.left, 2)} | {to_text(p.right, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(p, Implies):
        s = f"{to_text(p.left, 2)} -> {to_text(p.right, 1)}"
        return f"({s})" if prec > 1 else s
    raise TypeError(f"not a proposition: {p!r}")
