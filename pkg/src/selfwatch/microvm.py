"""Deterministic micro register machine and its assembler.

Eight 64-bit registers, 256 words of memory, a program counter and an
interrupt latch. Arithmetic wraps modulo 2**64. Faults and halts are part of
the state so that :func:`step` is total.
"""

from __future__ import annotations

import hashlib
import re
from array import array
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import IntEnum

from ._backend import kernel

NUM_REGS = 8
MEM_WORDS = 256
MAX_PROGRAM = 4096
FLAG_CELL = 255
MASK = (1 << 64) - 1


class Op(IntEnum):
    NOP = 0
    LOADI = 1
    MOV = 2
    ADD = 3
    SUB = 4
    LOAD = 5
    STORE = 6
    JMP = 7
    JNZ = 8
    ACK = 9
    HALT = 10


# operand kinds per mnemonic: r = register, i = immediate, m = memory address, j = jump target
_SIGNATURES = {
    Op.LOADI: "ri",
    Op.MOV: "rr",
    Op.ADD: "rr",
    Op.SUB: "rr",
    Op.LOAD: "rm",
    Op.STORE: "rm",
    Op.JMP: "j",
    Op.JNZ: "rj",
    Op.ACK: "",
    Op.NOP: "",
    Op.HALT: "",
}


class AssemblyError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownMnemonic(AssemblyError):
    pass


class UndefinedLabel(AssemblyError):
    pass


class DuplicateLabel(AssemblyError):
    pass


class RegisterOutOfRange(AssemblyError):
    pass


class ProgramTooLong(AssemblyError):
    pass


class InterruptOnHalted(Exception):
    """Raised when an interrupt targets a process that is no longer live."""


@dataclass(frozen=True)
class Instruction:
    op: Op
    a: int = 0
    b: int = 0

    def __str__(self) -> str:
        sig = _SIGNATURES[self.op]
        name = self.op.name
        if sig == "":
            return name
        if sig == "j":
            return f"{name} {self.b}"
        if sig[1] == "r":
            return f"{name} r{self.a}, r{self.b}"
        return f"{name} r{self.a}, {self.b}"


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    source_digest: bytes = bytes(32)
    code: tuple = field(init=False, repr=False, compare=False)
    compiled: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.instructions)
        if n == 0:
            raise AssemblyError("empty program")
        if n > MAX_PROGRAM:
            raise ProgramTooLong(f"{n} instructions exceeds {MAX_PROGRAM}")
        for ins in self.instructions:
            _validate(ins, n)
        code = (
            bytes(int(i.op) for i in self.instructions),
            array("i", (i.a for i in self.instructions)),
            array("Q", (i.b for i in self.instructions)),
        )
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "compiled", kernel.prepare(*code))

    def __len__(self) -> int:
        return len(self.instructions)

    def __getitem__(self, pc: int) -> Instruction:
        return self.instructions[pc]

    def text_at(self, pc: int) -> str:
        if 0 <= pc < len(self.instructions):
            return str(self.instructions[pc])
        return "-"


def _validate(ins: Instruction, length: int) -> None:
    sig = _SIGNATURES[ins.op]
    if sig and sig[0] == "r" and not 0 <= ins.a < NUM_REGS:
        raise RegisterOutOfRange(f"register r{ins.a} in {ins.op.name}")
    kind = sig[-1] if sig else ""
    if kind == "r" and not 0 <= ins.b < NUM_REGS:
        raise RegisterOutOfRange(f"register r{ins.b} in {ins.op.name}")
    if kind == "i" and not 0 <= ins.b <= MASK:
        raise AssemblyError(f"immediate {ins.b} out of 64-bit range")
    if kind == "m" and not 0 <= ins.b < MEM_WORDS:
        raise AssemblyError(f"address {ins.b} outside memory")
    if kind == "j" and not 0 <= ins.b < length:
        raise AssemblyError(f"jump target {ins.b} outside program")


_LABEL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_REG = re.compile(r"^[rR](\d+)$")


def _number(tok: str, line: int) -> int:
    try:
        if tok.lower().startswith("0x"):
            return int(tok[2:], 16)
        if tok.isdigit():
            return int(tok)
    except ValueError:
        pass
    raise AssemblyError(f"bad number {tok!r}", line)


def assemble(text: str | bytes) -> Program:
    """Assemble source text into a :class:`Program`.

    Each line holds an optional ``label:`` followed by an optional
    instruction; ``;`` starts a comment. The source digest is SHA-256 over
    the exact input bytes.
    """
    raw = text if isinstance(text, bytes) else text.encode("utf-8")
    src = raw.decode("utf-8")

    labels: dict[str, int] = {}
    pending: list[tuple[int, Op, list[str]]] = []
    for lineno, line in enumerate(src.splitlines(), start=1):
        body = line.split(";", 1)[0].strip()
        m = _LABEL.match(body)
        while m:
            name = m.group(1)
            if name in labels:
                raise DuplicateLabel(f"label {name!r} defined twice", lineno)
            labels[name] = len(pending)
            body = m.group(2).strip()
            m = _LABEL.match(body)
        if not body:
            continue
        parts = body.split(None, 1)
        try:
            op = Op[parts[0].upper()]
        except KeyError:
            raise UnknownMnemonic(f"unknown mnemonic {parts[0]!r}", lineno) from None
        operands = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
        pending.append((lineno, op, operands))
        if len(pending) > MAX_PROGRAM:
            raise ProgramTooLong(f"more than {MAX_PROGRAM} instructions", lineno)

    instructions = []
    for lineno, op, operands in pending:
        sig = _SIGNATURES[op]
        if len(operands) != len(sig):
            raise AssemblyError(
                f"{op.name} takes {len(sig)} operand(s), got {len(operands)}", lineno
            )
        vals = []
        for kind, tok in zip(sig, operands):
            if kind == "r":
                m = _REG.match(tok)
                if not m:
                    raise AssemblyError(f"expected register, got {tok!r}", lineno)
                idx = int(m.group(1))
                if idx >= NUM_REGS:
                    raise RegisterOutOfRange(f"register {tok} (r0..r7 only)", lineno)
                vals.append(idx)
            elif kind == "j" and _IDENT.match(tok) and not _REG.match(tok):
                if tok not in labels:
                    raise UndefinedLabel(f"undefined label {tok!r}", lineno)
                vals.append(labels[tok])
            else:
                vals.append(_number(tok, lineno))
        if sig == "j":
            ins = Instruction(op, 0, vals[0])
        elif sig:
            ins = Instruction(op, vals[0], vals[1])
        else:
            ins = Instruction(op)
        try:
            _validate(ins, len(pending))
        except AssemblyError as exc:
            raise type(exc)(str(exc), lineno) from None
        instructions.append(ins)

    if not instructions:
        raise AssemblyError("empty program")
    return Program(tuple(instructions), hashlib.sha256(raw).digest())


@dataclass(frozen=True)
class VmState:
    tick: int = 0
    pc: int = 0
    regs: tuple[int, ...] = (0,) * NUM_REGS
    mem: tuple[int, ...] = (0,) * MEM_WORDS
    pending_interrupt: bool = False
    interrupt_since: int | None = None
    halted: bool = False
    faulted: bool = False

    @property
    def live(self) -> bool:
        return not (self.halted or self.faulted)

    @property
    def flags(self) -> int:
        return (
            int(self.pending_interrupt)
            | int(self.halted) << 1
            | int(self.faulted) << 2
        )

    def raw(self) -> tuple:
        since = -1 if self.interrupt_since is None else self.interrupt_since
        return (self.tick, self.pc, self.regs, self.mem,
                self.pending_interrupt, since, self.halted, self.faulted)

    @classmethod
    def from_raw(cls, raw: tuple) -> VmState:
        tick, pc, regs, mem, pending, since, halted, faulted = raw
        return cls(tick, pc, regs, mem, bool(pending),
                   None if since < 0 else since, bool(halted), bool(faulted))


def run(state: VmState, program: Program, n: int) -> VmState:
    """Step up to ``n`` ticks, stopping early when the machine halts or faults."""
    if n <= 0 or not state.live:
        return state
    return VmState.from_raw(kernel.run(program.compiled, state.raw(), n))


def step(state: VmState, program: Program) -> VmState:
    """One deterministic transition. A dead state is returned unchanged."""
    return run(state, program, 1)


def inject_interrupt(state: VmState, now: int) -> VmState:
    if not state.live:
        raise InterruptOnHalted(f"process is {'halted' if state.halted else 'faulted'}")
    if state.pending_interrupt:
        return state
    return replace(state, pending_interrupt=True, interrupt_since=now)


# Memory serialization is the expensive part of a digest and memory rarely
# changes between ticks; cache by tuple identity (the tuple is held so its id
# stays valid).
_MEM_CACHE: OrderedDict[int, tuple[tuple, bytes]] = OrderedDict()
_MEM_CACHE_SIZE = 128


def mem_bytes(mem: tuple[int, ...]) -> bytes:
    key = id(mem)
    hit = _MEM_CACHE.get(key)
    if hit is not None and hit[0] is mem:
        return hit[1]
    blob = kernel.pack_mem(mem)
    _MEM_CACHE[key] = (mem, blob)
    if len(_MEM_CACHE) > _MEM_CACHE_SIZE:
        _MEM_CACHE.popitem(last=False)
    return blob


def serialize(state: VmState) -> bytes:
    """Canonical fixed-width encoding: pc (u32), flags (u8), 8 regs, 256 words.

    Big-endian throughout. ``tick`` and ``interrupt_since`` are left out so a
    configuration revisited later serializes identically.
    """
    return kernel.pack_header(state.pc, state.flags, state.regs) + mem_bytes(state.mem)


def state_digest(state: VmState) -> bytes:
    return hashlib.sha256(serialize(state)).digest()


def mem_digest(mem: tuple[int, ...]) -> bytes:
    return hashlib.sha256(mem_bytes(mem)).digest()
