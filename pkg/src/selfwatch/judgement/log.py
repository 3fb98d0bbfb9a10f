"""Hash-chained judgement log, judging and scheduled checks."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..microvm import VmState, state_digest
from .ast import Prop
from .coding import code_bytes, encode
from .evaluate import EvaluationError, evaluate

GENESIS = bytes(32)
CATEGORIES = ("health", "security", "safety")


class UnknownPid(KeyError):
    pass


class LogIntegrityError(Exception):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


@dataclass(frozen=True)
class JudgementRecord:
    id: int
    tick: int
    pid: str
    prop_code: str
    result: str
    snapshot_digest: bytes
    prev_hash: bytes
    entry_hash: bytes

    def line(self) -> str:
        return "\t".join([
            str(self.id), str(self.tick), self.pid, self.prop_code, self.result,
            self.snapshot_digest.hex(), self.prev_hash.hex(), self.entry_hash.hex(),
        ])


def entry_bytes(id_: int, tick: int, pid: str, prop_code: str, result: str,
                snapshot_digest: bytes) -> bytes:
    return f"{id_}\t{tick}\t{pid}\t{prop_code}\t{result}\t{snapshot_digest.hex()}".encode()


def chain_hash(prev_hash: bytes, entry: bytes) -> bytes:
    return hashlib.sha256(prev_hash + entry).digest()


@dataclass(frozen=True)
class Refusal:
    tick: int
    pid: str
    prop_code: str
    reason: str

    def line(self) -> str:
        return f"{self.tick}\t{self.pid}\t{self.prop_code}\t{self.reason}"


class JudgementLog:
    """Append-only; only ``yes``/``no`` verdicts enter the chain. Failed
    evaluations are kept apart as refusals."""

    def __init__(self):
        self.records: list[JudgementRecord] = []
        self.refusals: list[Refusal] = []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def head(self) -> bytes:
        return self.records[-1].entry_hash if self.records else GENESIS

    def append(self, tick: int, pid: str, prop_code: str, verdict: bool,
               snapshot_digest: bytes) -> JudgementRecord:
        id_ = len(self.records) + 1
        result = "yes" if verdict else "no"
        prev = self.head
        h = chain_hash(prev, entry_bytes(id_, tick, pid, prop_code, result, snapshot_digest))
        rec = JudgementRecord(id_, tick, pid, prop_code, result, snapshot_digest, prev, h)
        self.records.append(rec)
        return rec

    def export(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)

    def export_refusals(self) -> str:
        return "".join(r.line() + "\n" for r in self.refusals)

    def verify(self) -> None:
        verify_lines(self.export().splitlines())


def verify_lines(lines: Iterable[str]) -> int:
    """Check an exported log; returns the record count or raises
    :class:`LogIntegrityError` naming the first bad line (1-based)."""
    prev = GENESIS
    n = 0
    for n, line in enumerate(lines, start=1):
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 8:
            raise LogIntegrityError(n, "expected 8 tab-separated fields")
        id_, tick, pid, code, result, snap, prev_hex, entry_hex = fields
        if id_ != str(n):
            raise LogIntegrityError(n, f"id {id_} out of sequence")
        if result not in ("yes", "no"):
            raise LogIntegrityError(n, f"verdict {result!r} is not yes/no")
        try:
            snap_b = bytes.fromhex(snap)
            prev_b = bytes.fromhex(prev_hex)
            entry_b = bytes.fromhex(entry_hex)
            tick_i = int(tick)
        except ValueError:
            raise LogIntegrityError(n, "malformed field") from None
        if prev_b != prev:
            raise LogIntegrityError(n, "prev_hash does not match the previous entry")
        expect = chain_hash(prev, entry_bytes(n, tick_i, pid, code, result, snap_b))
        if entry_b != expect:
            raise LogIntegrityError(n, "entry_hash mismatch")
        prev = entry_b
    return n


def judge(pid: str, prop: Prop, log: JudgementLog,
          states: Mapping[str, VmState]) -> JudgementRecord:
    """Evaluate ``prop`` against the latest full state of ``pid`` and log it.

    An evaluation error is logged as a refusal and re-raised; no verdict is
    invented for it.
    """
    if pid not in states:
        raise UnknownPid(pid)
    state = states[pid]
    code = code_bytes(encode(prop)).hex()
    try:
        verdict = evaluate(prop, state)
    except EvaluationError as exc:
        log.refusals.append(Refusal(state.tick, pid, code, exc.code))
        raise
    return log.append(state.tick, pid, code, verdict, state_digest(state))


@dataclass(frozen=True)
class ScheduleEntry:
    name: str
    prop: Prop
    period: int
    category: str = "health"

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {', '.join(CATEGORIES)}")


def run_schedule(schedule: Sequence[ScheduleEntry], now: int, log: JudgementLog,
                 states: Mapping[str, VmState]) -> list[JudgementRecord]:
    """Judge every entry whose period divides ``now``, in schedule order, for
    each process in ``states``. Refusals are logged and skipped."""
    out = []
    for entry in schedule:
        if now % entry.period:
            continue
        for pid in states:
            try:
                out.append(judge(pid, entry.prop, log, states))
            except EvaluationError:
                pass
    return out
