"""Compare the compiled VM kernel with the pure-Python one.

    python3 benchmarks/bench_vm.py [--steps N] [--repeat R]
"""

import argparse
import timeit

from selfwatch import _vmcore_py
from selfwatch.microvm import VmState, assemble

PROGRAMS = {
    "counter": "LOADI r1, 1\nloop: ADD r0, r1\nSTORE r0, 40\nJNZ r0, loop\nHALT",
    "memcopy": ("LOADI r1, 1\nloop: LOAD r2, 20\nADD r2, r1\nSTORE r2, 21\n"
                "LOAD r3, 21\nSTORE r3, 20\nJMP loop"),
    "branchy": ("LOADI r1, 1\nLOADI r4, 3\na: SUB r4, r1\nJNZ r4, a\nLOADI r4, 3\n"
                "ADD r0, r1\nJMP a"),
}


def kernels():
    out = {"python": _vmcore_py}
    try:
        from selfwatch import _vmcore
        out["cython"] = _vmcore
    except ImportError:
        pass
    return out


def bench_bulk(kernel, program, steps, repeat):
    raw = VmState().raw()
    code = kernel.prepare(*program.code)
    t = min(timeit.repeat(lambda: kernel.run(code, raw, steps), number=1, repeat=repeat))
    return steps / t


def bench_single(kernel, program, steps, repeat):
    code = kernel.prepare(*program.code)

    def go():
        raw = VmState().raw()
        for _ in range(steps):
            raw = kernel.run(code, raw, 1)
    t = min(timeit.repeat(go, number=1, repeat=repeat))
    return steps / t


def bench_digest(kernel, steps, repeat):
    regs = tuple(range(8))
    mem = tuple(range(256))
    t = min(timeit.repeat(lambda: [kernel.pack_mem(mem) + kernel.pack_header(1, 0, regs)
                                   for _ in range(steps)], number=1, repeat=repeat))
    return steps / t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    ks = kernels()
    if "cython" not in ks:
        print("compiled kernel not built; showing the pure-Python kernel only")
    print(f"{'case':<22}" + "".join(f"{k:>16}" for k in ks) + ("   speedup" if len(ks) > 1 else ""))
    rows = []
    for name, src in PROGRAMS.items():
        prog = assemble(src)
        rows.append((f"bulk {name}", {k: bench_bulk(m, prog, args.steps, args.repeat)
                                      for k, m in ks.items()}))
        rows.append((f"single-step {name}", {k: bench_single(m, prog, args.steps // 10, args.repeat)
                                             for k, m in ks.items()}))
    rows.append(("state packing", {k: bench_digest(m, args.steps // 10, args.repeat)
                                   for k, m in ks.items()}))
    for label, res in rows:
        line = f"{label:<22}" + "".join(f"{res[k]:>13,.0f}/s" for k in ks)
        if len(ks) > 1:
            line += f"   {res['cython'] / res['python']:7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
