"""Total evaluation of closed propositions against a machine state."""

from __future__ import annotations

from typing import Mapping

from ..microvm import MEM_WORDS, NUM_REGS, VmState
from .ast import (
    Add, And, Cmp, Exists, FalseP, Forall, Implies, Lit, Mem, Mul, Not, Or, Pc,
    Prop, Reg, Sub, Term, Tick, TrueP, Var,
)

MASK = (1 << 64) - 1
MAX_RANGE = 65536


class EvaluationError(Exception):
    code = "eval-error"


class FreeVariable(EvaluationError):
    code = "free-variable"


class QuantifierRangeTooLarge(EvaluationError):
    code = "range-too-large"


def eval_term(t: Term, state: VmState, env: Mapping[str, int]) -> int:
    if isinstance(t, Lit):
        return t.value
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise FreeVariable(f"free variable {t.name!r}") from None
    if isinstance(t, Reg):
        return state.regs[eval_term(t.index, state, env) % NUM_REGS]
    if isinstance(t, Mem):
        return state.mem[eval_term(t.addr, state, env) % MEM_WORDS]
    if isinstance(t, Pc):
        return state.pc
    if isinstance(t, Tick):
        return state.tick
    left = eval_term(t.left, state, env)
    right = eval_term(t.right, state, env)
    if isinstance(t, Add):
        return (left + right) & MASK
    if isinstance(t, Sub):
        return (left - right) & MASK
    if isinstance(t, Mul):
        return (left * right) & MASK
    raise TypeError(f"not a term: {t!r}")


_RELATIONS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def evaluate(p: Prop, state: VmState, env: Mapping[str, int] | None = None) -> bool:
    """Decide ``p`` in ``state``.

    Terms wrap modulo 2**64, register indices reduce modulo 8 and addresses
    modulo 256. Quantifiers range over ``lo..hi`` inclusive; an empty range
    makes ``forall`` true and ``exists`` false.
    """
    env = dict(env or {})
    missing = free_vars(p) - env.keys()
    if missing:
        raise FreeVariable(f"free variable(s) {', '.join(sorted(missing))}")
    return _eval(p, state, env)


def _eval(p: Prop, state: VmState, env: dict[str, int]) -> bool:
    if isinstance(p, Cmp):
        return _RELATIONS[p.op](eval_term(p.left, state, env), eval_term(p.right, state, env))
    if isinstance(p, And):
        return _eval(p.left, state, env) and _eval(p.right, state, env)
    if isinstance(p, Or):
        return _eval(p.left, state, env) or _eval(p.right, state, env)
    if isinstance(p, Not):
        return not _eval(p.body, state, env)
    if isinstance(p, Implies):
        return not _eval(p.left, state, env) or _eval(p.right, state, env)
    if isinstance(p, TrueP):
        return True
    if isinstance(p, FalseP):
        return False
    if isinstance(p, (Forall, Exists)):
        lo = eval_term(p.lo, state, env)
        hi = eval_term(p.hi, state, env)
        if hi >= lo and hi - lo + 1 > MAX_RANGE:
            raise QuantifierRangeTooLarge(
                f"range {lo}..{hi} has {hi - lo + 1} values (limit {MAX_RANGE})")
        want = isinstance(p, Exists)
        outer = env.get(p.var)
        had = p.var in env
        try:
            for v in range(lo, hi + 1):
                env[p.var] = v
                if _eval(p.body, state, env) == want:
                    return want
        finally:
            if had:
                env[p.var] = outer
            else:
                env.pop(p.var, None)
        return not want
    raise TypeError(f"not a proposition: {p!r}")


def free_vars(p: Prop | Term, bound: frozenset[str] = frozenset()) -> set[str]:
    if isinstance(p, Var):
        return set() if p.name in bound else {p.name}
    if isinstance(p, (Forall, Exists)):
        return (free_vars(p.lo, bound) | free_vars(p.hi, bound)
                | free_vars(p.body, bound | {p.var}))
    out: set[str] = set()
    for child in _children(p):
        out |= free_vars(child, bound)
    return out


def _children(node) -> tuple:
    if isinstance(node, (Add, Sub, Mul, And, Or, Implies)):
        return (node.left, node.right)
    if isinstance(node, Cmp):
        return (node.left, node.right)
    if isinstance(node, Not):
        return (node.body,)
    if isinstance(node, Reg):
        return (node.index,)
    if isinstance(node, Mem):
        return (node.addr,)
    return ()


def _subst_term(t: Term, var: str, value: int) -> Term:
    if isinstance(t, Var):
        return Lit(value) if t.name == var else t
    if isinstance(t, Reg):
        index = _subst_term(t.index, var, value)
        if isinstance(index, Lit):
            # a literal index must name a register; this is the one evaluation reads
            index = Lit(index.value % NUM_REGS)
        return Reg(index)
    if isinstance(t, Mem):
        return Mem(_subst_term(t.addr, var, value))
    if isinstance(t, (Add, Sub, Mul)):
        return type(t)(_subst_term(t.left, var, value), _subst_term(t.right, var, value))
    return t


def subst(p: Prop, var: str, value: int) -> Prop:
    """Replace free occurrences of ``var`` with the literal ``value``."""
    if not 0 <= value <= MASK:
        raise ValueError("value must be a 64-bit unsigned integer")
    if isinstance(p, Cmp):
        return Cmp(_subst_term(p.left, var, value), p.op, _subst_term(p.right, var, value))
    if isinstance(p, Not):
        return Not(subst(p.body, var, value))
    if isinstance(p, (And, Or, Implies)):
        return type(p)(subst(p.left, var, value), subst(p.right, var, value))
    if isinstance(p, (Forall, Exists)):
        lo = _subst_term(p.lo, var, value)
        hi = _subst_term(p.hi, var, value)
        body = p.body if p.var == var else subst(p.body, var, value)
        return type(p)(p.var, lo, hi, body)
    return p
