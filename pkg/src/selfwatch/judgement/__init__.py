"""Decidable judgements over machine state: parse, code, substitute, evaluate, log."""

from .ast import (
    Add, And, Cmp, Exists, FalseP, Forall, Implies, Lit, Mem, Mul, Not, Or, Pc,
    Prop, Reg, Sub, Term, Tick, TrueP, Var, to_text,
)
from .coding import MalformedCode, code_bytes, decode, deserialize, encode, serialize
from .evaluate import (
    EvaluationError, FreeVariable, QuantifierRangeTooLarge, evaluate, free_vars, subst,
)
from .log import (
    GENESIS, JudgementLog, JudgementRecord, LogIntegrityError, Refusal,
    ScheduleEntry, UnknownPid, judge, run_schedule, verify_lines,
)
from .parser import PropSyntaxError, parse_prop, parse_term

__all__ = [
    "Add", "And", "Cmp", "Exists", "FalseP", "Forall", "Implies", "Lit", "Mem",
    "Mul", "Not", "Or", "Pc", "Prop", "Reg", "Sub", "Term", "Tick", "TrueP",
    "Var", "to_text", "MalformedCode", "code_bytes", "decode", "deserialize",
    "encode", "serialize", "EvaluationError", "FreeVariable",
    "QuantifierRangeTooLarge", "evaluate", "free_vars", "subst", "GENESIS",
    "JudgementLog", "JudgementRecord", "LogIntegrityError", "Refusal",
    "ScheduleEntry", "UnknownPid", "judge", "run_schedule", "verify_lines",
    "PropSyntaxError", "parse_prop", "parse_term",
]
