"""Canonical coding of propositions as natural numbers.

The serialization is prefix order with one tag byte per node; literals are
unsigned LEB128 varints and variable names are varint-length-prefixed UTF-8.
The code is that byte string read as a big-endian integer. Tags are never
zero, so the leading byte survives the conversion.
"""

from __future__ import annotations

from .ast import (
    Add, And, Cmp, Exists, FalseP, Forall, Implies, Lit, Mem, Mul, Not, Or, Pc,
    Prop, Reg, Sub, Term, Tick, TrueP, Var,
)

MAX_LIT = (1 << 64) - 1

# proposition tags
T_TRUE, T_FALSE, T_NOT, T_AND, T_OR, T_IMPLIES, T_FORALL, T_EXISTS = range(0x01, 0x09)
_CMP_TAGS = {"=": 0x10, "!=": 0x11, "<": 0x12, "<=": 0x13, ">": 0x14, ">=": 0x15}
_CMP_OPS = {v: k for k, v in _CMP_TAGS.items()}
# term tags
T_LIT, T_VAR, T_REG, T_MEM, T_PC, T_TICK, T_ADD, T_SUB, T_MUL = range(0x20, 0x29)

_BIN_PROPS = {And: T_AND, Or: T_OR, Implies: T_IMPLIES}
_BIN_TERMS = {Add: T_ADD, Sub: T_SUB, Mul: T_MUL}
_PROP_BY_TAG = {v: k for k, v in _BIN_PROPS.items()}
_TERM_BY_TAG = {v: k for k, v in _BIN_TERMS.items()}


class MalformedCode(ValueError):
    pass


def _varint(n: int, out: bytearray) -> None:
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _name(name: str, out: bytearray) -> None:
    raw = name.encode("utf-8")
    _varint(len(raw), out)
    out += raw


def _term(t: Term, out: bytearray) -> None:
    if isinstance(t, Lit):
        if not 0 <= t.value <= MAX_LIT:
            raise ValueError(f"literal {t.value} outside 64-bit range")
        out.append(T_LIT)
        _varint(t.value, out)
    elif isinstance(t, Var):
        out.append(T_VAR)
        _name(t.name, out)
    elif isinstance(t, Reg):
        out.append(T_REG)
        _term(t.index, out)
    elif isinstance(t, Mem):
        out.append(T_MEM)
        _term(t.addr, out)
    elif isinstance(t, Pc):
        out.append(T_PC)
    elif isinstance(t, Tick):
        out.append(T_TICK)
    elif type(t) in _BIN_TERMS:
        out.append(_BIN_TERMS[type(t)])
        _term(t.left, out)
        _term(t.right, out)
    else:
        raise TypeError(f"not a term: {t!r}")


def _prop(p: Prop, out: bytearray) -> None:
    if isinstance(p, TrueP):
        out.append(T_TRUE)
    elif isinstance(p, FalseP):
        out.append(T_FALSE)
    elif isinstance(p, Cmp):
        out.append(_CMP_TAGS[p.op])
        _term(p.left, out)
        _term(p.right, out)
    elif isinstance(p, Not):
        out.append(T_NOT)
        _prop(p.body, out)
    elif type(p) in _BIN_PROPS:
        out.append(_BIN_PROPS[type(p)])
        _prop(p.left, out)
        _prop(p.right, out)
    elif isinstance(p, (Forall, Exists)):
        out.append(T_FORALL if isinstance(p, Forall) else T_EXISTS)
        _name(p.var, out)
        _term(p.lo, out)
        _term(p.hi, out)
        _prop(p.body, out)
    else:
        raise TypeError(f"not a proposition: {p!r}")


def serialize(p: Prop) -> bytes:
    out = bytearray()
    _prop(p, out)
    return bytes(out)


def encode(p: Prop) -> int:
    return int.from_bytes(serialize(p), "big")


def code_bytes(code: int) -> bytes:
    if code <= 0:
        raise MalformedCode("code must be a positive natural number")
    return code.to_bytes((code.bit_length() + 7) // 8, "big")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.i = 0

    def byte(self) -> int:
        if self.i >= len(self.data):
            raise MalformedCode("truncated code")
        b = self.data[self.i]
        self.i += 1
        return b

    def varint(self) -> int:
        shift = 0
        value = 0
        while True:
            b = self.byte()
            value |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                # reject non-minimal encodings so the code stays canonical
                if b == 0 and shift > 7:
                    raise MalformedCode("non-canonical varint")
                return value
            if shift > 70:
                raise MalformedCode("varint too long")

    def name(self) -> str:
        n = self.varint()
        if self.i + n > len(self.data):
            raise MalformedCode("truncated name")
        raw = self.data[self.i:self.i + n]
        self.i += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedCode("name is not UTF-8") from None

    def term(self) -> Term:
        tag = self.byte()
        if tag == T_LIT:
            v = self.varint()
            if v > MAX_LIT:
                raise MalformedCode("literal exceeds 64 bits")
            return Lit(v)
        if tag == T_VAR:
            return Var(self.name())
        if tag == T_REG:
            try:
                return Reg(self.term())
            except ValueError as exc:
                raise MalformedCode(str(exc)) from None
        if tag == T_MEM:
            return Mem(self.term())
        if tag == T_PC:
            return Pc()
        if tag == T_TICK:
            return Tick()
        if tag in _TERM_BY_TAG:
            left = self.term()
            return _TERM_BY_TAG[tag](left, self.term())
        raise MalformedCode(f"bad term tag 0x{tag:02x} at byte {self.i - 1}")

    def prop(self) -> Prop:
        tag = self.byte()
        if tag == T_TRUE:
            return TrueP()
        if tag == T_FALSE:
            return FalseP()
        if tag in _CMP_OPS:
            left = self.term()
            return Cmp(left, _CMP_OPS[tag], self.term())
        if tag == T_NOT:
            return Not(self.prop())
        if tag in _PROP_BY_TAG:
            left = self.prop()
            return _PROP_BY_TAG[tag](left, self.prop())
        if tag in (T_FORALL, T_EXISTS):
            var = self.name()
            lo = self.term()
            hi = self.term()
            body = self.prop()
            return (Forall if tag == T_FORALL else Exists)(var, lo, hi, body)
        raise MalformedCode(f"bad proposition tag 0x{tag:02x} at byte {self.i - 1}")


def deserialize(data: bytes) -> Prop:
    r = _Reader(data)
    p = r.prop()
    if r.i != len(data):
        raise MalformedCode(f"{len(data) - r.i} trailing byte(s)")
    return p


def decode(code: int) -> Prop:
    return deserialize(code_bytes(code))
