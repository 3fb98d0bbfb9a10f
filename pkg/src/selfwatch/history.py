"""Time-indexed archive of process states with deterministic reconstruction.

Snapshots keep registers, flags and digests; full memory only lives in the
periodic checkpoints. Any retained tick is rebuilt by replaying from the
nearest checkpoint and re-applying the logged external events.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from . import microvm
from .microvm import FLAG_CELL, Program, VmState


class HistoryError(Exception):
    pass


class NonMonotonicTick(HistoryError):
    pass


class EmptyRange(HistoryError):
    pass


class TickBeforeHorizon(HistoryError):
    pass


class TickBeyondHistory(HistoryError):
    pass


class EventKind(Enum):
    PROCESS_STARTED = "ProcessStarted"
    INTERRUPT_INJECTED = "InterruptInjected"
    FLAG_SET = "FlagSet"
    PROCESS_KILLED = "ProcessKilled"


# Events that change the machine state and so break replay closure.
STATE_EVENTS = frozenset({EventKind.INTERRUPT_INJECTED, EventKind.FLAG_SET})


@dataclass(frozen=True)
class EventLogEntry:
    """An external event applied to the state of ``tick``, before its next step."""

    tick: int
    kind: EventKind


@dataclass(frozen=True)
class Snapshot:
    tick: int
    pc: int
    instruction: str
    regs: tuple[int, ...]
    mem_digest: bytes
    pending_interrupt: bool
    halted: bool
    faulted: bool
    state_digest: bytes

    @classmethod
    def of(cls, state: VmState, program: Program) -> Snapshot:
        return cls(
            tick=state.tick,
            pc=state.pc,
            instruction=program.text_at(state.pc),
            regs=state.regs,
            mem_digest=microvm.mem_digest(state.mem),
            pending_interrupt=state.pending_interrupt,
            halted=state.halted,
            faulted=state.faulted,
            state_digest=microvm.state_digest(state),
        )

    @property
    def live(self) -> bool:
        return not (self.halted or self.faulted)

    def flag_text(self) -> str:
        return (
            ("P" if self.pending_interrupt else "-")
            + ("H" if self.halted else "-")
            + ("F" if self.faulted else "-")
        )

    def export_line(self) -> str:
        fields = [str(self.tick), str(self.pc), self.instruction]
        fields += [str(r) for r in self.regs]
        fields += [self.flag_text(), self.state_digest.hex()]
        return "\t".join(fields)


def apply_event(state: VmState, kind: EventKind) -> VmState:
    """Re-apply a logged event to the state it was recorded against."""
    if kind is EventKind.INTERRUPT_INJECTED:
        return microvm.inject_interrupt(state, state.tick)
    if kind is EventKind.FLAG_SET:
        return set_flag_cell(state)
    return state


def set_flag_cell(state: VmState) -> VmState:
    if state.mem[FLAG_CELL] == 1:
        return state
    mem = state.mem[:FLAG_CELL] + (1,) + state.mem[FLAG_CELL + 1:]
    return replace(state, mem=mem)


class HistoryStore:
    """Ring buffer of snapshots, checkpoints every ``checkpoint_every`` ticks,
    and an append-only event log. Single writer."""

    def __init__(self, capacity: int = 65536, checkpoint_every: int = 1024):
        if capacity < 1 or checkpoint_every < 1:
            raise ValueError("capacity and checkpoint_every must be >= 1")
        self.capacity = capacity
        self.checkpoint_every = checkpoint_every
        self.snapshots: deque[Snapshot] = deque()
        self.checkpoints: dict[int, VmState] = {}
        self.events: list[EventLogEntry] = []

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def last_tick(self) -> int | None:
        return self.snapshots[-1].tick if self.snapshots else None

    @property
    def latest(self) -> Snapshot | None:
        return self.snapshots[-1] if self.snapshots else None

    @property
    def horizon(self) -> int | None:
        return min(self.checkpoints) if self.checkpoints else None

    def record(self, snapshot: Snapshot, state: VmState | None = None) -> HistoryStore:
        last = self.last_tick
        if last is not None and snapshot.tick <= last:
            raise NonMonotonicTick(f"tick {snapshot.tick} after {last}")
        self.snapshots.append(snapshot)
        if state is not None:
            self.checkpoint(state)
        if len(self.snapshots) > self.capacity:
            self.snapshots.popleft()
            self._prune()
        return self

    def checkpoint(self, state: VmState, force: bool = False) -> None:
        if force or state.tick % self.checkpoint_every == 0:
            self.checkpoints[state.tick] = state

    def log_event(self, tick: int, kind: EventKind) -> None:
        if self.events and tick < self.events[-1].tick:
            raise NonMonotonicTick(f"event tick {tick} after {self.events[-1].tick}")
        self.events.append(EventLogEntry(tick, kind))

    def _prune(self) -> None:
        # keep the newest checkpoint at or before the oldest retained snapshot
        oldest = self.snapshots[0].tick
        base = max((t for t in self.checkpoints if t <= oldest), default=None)
        if base is None:
            return
        for t in [t for t in self.checkpoints if t < base]:
            del self.checkpoints[t]

    def query(self, from_tick: int, to_tick: int) -> list[Snapshot]:
        if from_tick > to_tick:
            raise ValueError("from_tick must not exceed to_tick")
        found = [s for s in self.snapshots if from_tick <= s.tick <= to_tick]
        if not found:
            raise EmptyRange(f"nothing retained in [{from_tick}, {to_tick}]")
        return found

    def snapshot_at(self, tick: int) -> Snapshot | None:
        for s in reversed(self.snapshots):
            if s.tick == tick:
                return s
            if s.tick < tick:
                break
        return None

    def events_between(self, lo: int, hi: int) -> list[EventLogEntry]:
        """Events with ``lo <= tick < hi``."""
        return [e for e in self.events if lo <= e.tick < hi]

    def reconstruct(self, program: Program, tick: int) -> VmState:
        if not self.checkpoints or tick < min(self.checkpoints):
            raise TickBeforeHorizon(f"tick {tick} precedes the oldest checkpoint")
        last = self.last_tick
        if last is None or tick > last:
            raise TickBeyondHistory(f"tick {tick} has not been recorded")
        base = max(t for t in self.checkpoints if t <= tick)
        return replay(self.checkpoints[base], program, self.events_between(base, tick), tick)

    def export(self, snapshots: Iterable[Snapshot] | None = None) -> str:
        rows = self.snapshots if snapshots is None else snapshots
        return "".join(s.export_line() + "\n" for s in rows)


def replay(state: VmState, program: Program, events: Iterable[EventLogEntry],
           until: int) -> VmState:
    """Run ``state`` forward to tick ``until``, applying each event to the
    state of its tick before stepping on."""
    for ev in events:
        if ev.tick >= until:
            break
        state = microvm.run(state, program, ev.tick - state.tick)
        if state.tick == ev.tick:
            state = apply_event(state, ev.kind)
    return microvm.run(state, program, until - state.tick)
