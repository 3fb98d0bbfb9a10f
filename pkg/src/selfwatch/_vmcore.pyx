# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled VM kernel; mirrors ``_vmcore_py`` exactly."""

from libc.stdlib cimport malloc, free
from libc.string cimport memset

ctypedef unsigned long long u64

cdef enum:
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


cdef class Code:
    """A program's operand arrays copied into C memory once."""

    cdef unsigned char* ops
    cdef int* a
    cdef u64* b
    cdef long long size

    def __cinit__(self, ops, a, b):
        cdef long long i
        self.size = len(ops)
        self.ops = <unsigned char*>malloc(self.size + 1)
        self.a = <int*>malloc((self.size + 1) * sizeof(int))
        self.b = <u64*>malloc((self.size + 1) * sizeof(u64))
        if self.ops == NULL or self.a == NULL or self.b == NULL:
            raise MemoryError()
        for i in range(self.size):
            self.ops[i] = ops[i]
            self.a[i] = a[i]
            self.b[i] = b[i]

    def __dealloc__(self):
        free(self.ops)
        free(self.a)
        free(self.b)

    def __len__(self):
        return self.size


def prepare(ops, a, b):
    return Code(ops, a, b)


def run(Code code, tuple state, long long n):
    cdef unsigned char* ops = code.ops
    cdef int* a = code.a
    cdef u64* b = code.b
    cdef long long tick = state[0]
    cdef long long pc = state[1]
    cdef object mem_obj = state[3]
    cdef bint pending = state[4]
    cdef long long since = state[5]
    cdef bint halted = state[6]
    cdef bint faulted = state[7]
    cdef u64 regs[8]
    cdef u64 cmem[256]
    cdef unsigned char changed[256]
    cdef bint dirty = False
    cdef long long size = code.size
    cdef long long left = n
    cdef unsigned char op
    cdef int i
    cdef list cells
    cdef tuple regs_in = state[2]

    for i in range(8):
        regs[i] = regs_in[i]

    while left > 0 and not halted and not faulted:
        left -= 1
        tick += 1
        if pc >= size:
            faulted = True
            break
        op = ops[pc]
        if op == JMP:
            pc = <long long>b[pc]
            continue
        if op == JNZ:
            if regs[a[pc]] != 0:
                pc = <long long>b[pc]
            else:
                pc += 1
        elif op == ADD:
            regs[a[pc]] = regs[a[pc]] + regs[b[pc]]
            pc += 1
        elif op == SUB:
            regs[a[pc]] = regs[a[pc]] - regs[b[pc]]
            pc += 1
        elif op == LOADI:
            regs[a[pc]] = b[pc]
            pc += 1
        elif op == MOV:
            regs[a[pc]] = regs[b[pc]]
            pc += 1
        elif op == LOAD:
            if dirty and changed[b[pc]]:
                regs[a[pc]] = cmem[b[pc]]
            else:
                regs[a[pc]] = mem_obj[b[pc]]
            pc += 1
        elif op == STORE:
            if not dirty:
                memset(changed, 0, 256)
                dirty = True
            cmem[b[pc]] = regs[a[pc]]
            changed[b[pc]] = 1
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

    if dirty:
        # untouched cells keep their existing int objects
        cells = list(<tuple>mem_obj)
        for i in range(256):
            if changed[i]:
                cells[i] = cmem[i]
        mem_obj = tuple(cells)
    return (tick, pc, tuple([regs[i] for i in range(8)]), mem_obj,
            pending, since, halted, faulted)


cdef inline void _put_u64(unsigned char* p, u64 v) noexcept:
    cdef int k
    for k in range(8):
        p[7 - k] = <unsigned char>(v & 0xFF)
        v >>= 8


def pack_header(unsigned int pc, unsigned char flags, regs):
    cdef unsigned char buf[69]
    cdef int i
    buf[0] = (pc >> 24) & 0xFF
    buf[1] = (pc >> 16) & 0xFF
    buf[2] = (pc >> 8) & 0xFF
    buf[3] = pc & 0xFF
    buf[4] = flags
    for i in range(8):
        _put_u64(&buf[5 + 8 * i], <u64>regs[i])
    return (<char*>buf)[:69]


def pack_mem(mem):
    cdef unsigned char buf[2048]
    cdef int i
    for i in range(256):
        _put_u64(&buf[8 * i], <u64>mem[i])
    return (<char*>buf)[:2048]
