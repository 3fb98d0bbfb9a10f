"""Pure-Python VM kernel.

Reference semantics for the compiled ``_vmcore`` extension; both expose the
same four functions and must agree bit for bit.

A *code* triple is ``(ops, a, b)``: opcode bytes, the first operand
(register index) and the second operand (register, immediate or address).
A *raw state* is ``(tick, pc, regs, mem, pending, since, halted, faulted)``
with ``since == -1`` when no interrupt is pending.
"""

import struct

MASK = 0xFFFFFFFFFFFFFFFF

NOP, LOADI, MOV, ADD, SUB, LOAD, STORE, JMP, JNZ, ACK, HALT = range(11)

_HEADER = struct.Struct(">IB8Q")
_MEM = struct.Struct(">256Q")


def prepare(ops, a, b):
    """Kernel-specific form of a code triple; the pure kernel uses it as is."""
    return (ops, a, b)


def run(code, state, n):
    """Advance ``state`` by at most ``n`` ticks; stops early once dead."""
    ops, a, b = code
    tick, pc, regs, mem, pending, since, halted, faulted = state
    regs = list(regs)
    cmem = None
    size = len(ops)
    left = n
    while left > 0 and not halted and not faulted:
        left -= 1
        tick += 1
        if pc >= size:
            faulted = True
            break
        op = ops[pc]
        if op == JMP:
            pc = b[pc]
            continue
        if op == JNZ:
            pc = b[pc] if regs[a[pc]] else pc + 1
        elif op == ADD:
            regs[a[pc]] = (regs[a[pc]] + regs[b[pc]]) & MASK
            pc += 1
        elif op == SUB:
            regs[a[pc]] = (regs[a[pc]] - regs[b[pc]]) & MASK
            pc += 1
        elif op == LOADI:
            regs[a[pc]] = b[pc]
            pc += 1
        elif op == MOV:
            regs[a[pc]] = regs[b[pc]]
            pc += 1
        elif op == LOAD:
            regs[a[pc]] = cmem[b[pc]] if cmem is not None else mem[b[pc]]
            pc += 1
        elif op == STORE:
            if cmem is None:
                cmem = list(mem)
            cmem[b[pc]] = regs[a[pc]]
            pc += 1
        elif op == ACK:
            pending = False
            since = -1
            pc += 1
        elif op == HALT:
            halted = True
            break
        else:
            pc += 1
        if pc >= size:
            faulted = True
    if cmem is not None:
        mem = tuple(cmem)
    return (tick, pc, tuple(regs), mem, pending, since, halted, faulted)


def pack_header(pc, flags, regs):
    return _HEADER.pack(pc, flags, *regs)


def pack_mem(mem):
    return _MEM.pack(*mem)
