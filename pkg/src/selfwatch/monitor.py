"""Detectors over supervised processes.

Certified divergence is sound but incomplete: a finding is a proof of
non-termination (absent further external events), while the lack of one
says nothing. Nothing here ever predicts that a process will halt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .history import STATE_EVENTS, EventLogEntry, Snapshot, set_flag_cell
from .microvm import FLAG_CELL, NUM_REGS, VmState


class FindingKind(Enum):
    CERTIFIED_DIVERGENCE = "CertifiedDivergence"
    SUSPECTED_LOOP = "SuspectedLoop"
    NON_RESPONSIVE = "NonResponsive"
    RESOURCE_BUDGET_EXCEEDED = "ResourceBudgetExceeded"


class FlagOnDead(Exception):
    pass


@dataclass(frozen=True)
class Finding:
    tick: int
    pid: str
    kind: FindingKind
    evidence: tuple[int, ...]
    message: str

    def line(self) -> str:
        ev = ",".join(str(e) for e in self.evidence)
        return f"FINDING tick={self.tick} pid={self.pid} kind={self.kind.value} evidence={ev}"


@dataclass(frozen=True)
class MonitorConfig:
    interrupt_deadline: int = 64
    loop_window: int = 256
    loop_revisit_threshold: int = 8
    watch_set: frozenset[int] = field(default_factory=lambda: frozenset(range(NUM_REGS)))
    step_budget: int | None = None
    flag_cell: int = FLAG_CELL

    def __post_init__(self):
        if min(self.interrupt_deadline, self.loop_window, self.loop_revisit_threshold) < 1:
            raise ValueError("interrupt_deadline, loop_window and loop_revisit_threshold must be >= 1")
        if not set(self.watch_set) <= set(range(NUM_REGS)):
            raise ValueError(f"watch_set must be a subset of 0..{NUM_REGS - 1}")
        if self.flag_cell != FLAG_CELL:
            raise ValueError(f"the flag cell is fixed at {FLAG_CELL}")
        object.__setattr__(self, "watch_set", frozenset(self.watch_set))


def detect_certified_divergence(seen_digests: dict[bytes, int], snapshot: Snapshot,
                                event_log: Sequence[EventLogEntry] = (),
                                pid: str = "") -> Finding | None:
    """Record ``snapshot`` in ``seen_digests`` and report a repeated state.

    ``seen_digests`` maps digest to first tick and must only hold states
    observed since the last state-changing event. A repeat with no such event
    applied in between is a cycle of a deterministic machine and certifies
    non-termination.
    """
    first = seen_digests.get(snapshot.state_digest)
    if first is not None and snapshot.live:
        # closure check: an event at tick t alters the successor of state t
        if not any(first <= e.tick < snapshot.tick and e.kind in STATE_EVENTS
                   for e in event_log):
            return Finding(
                snapshot.tick, pid, FindingKind.CERTIFIED_DIVERGENCE,
                (first, snapshot.tick),
                f"state at tick {snapshot.tick} repeats tick {first} "
                f"(period {snapshot.tick - first})",
            )
    if first is None:
        seen_digests[snapshot.state_digest] = snapshot.tick
    return None


class DivergenceDetector:
    """Stateful wrapper that forgets digests whenever the closure is broken."""

    def __init__(self, pid: str = ""):
        self.pid = pid
        self.seen: dict[bytes, int] = {}

    def observe(self, snapshot: Snapshot) -> Finding | None:
        return detect_certified_divergence(self.seen, snapshot, (), self.pid)

    def external_event(self) -> None:
        self.seen.clear()


def detect_suspected_loop(history: Sequence[Snapshot], config: MonitorConfig,
                          pid: str = "") -> Finding | None:
    """Heuristic: within the last W ticks some pc recurs M times while every
    watched register holds the same value at each recurrence.

    Only considered once the process has run past W ticks and is still live.
    """
    if not history:
        return None
    latest = history[-1]
    w = config.loop_window
    if not latest.live or latest.tick < w:
        return None
    window = [s for s in history if s.tick > latest.tick - w]
    watch = sorted(config.watch_set)
    by_pc: dict[int, list[Snapshot]] = {}
    for s in window:
        by_pc.setdefault(s.pc, []).append(s)
    for pc in sorted(by_pc):
        visits = by_pc[pc]
        if len(visits) < config.loop_revisit_threshold:
            continue
        ref = visits[0].regs
        if all(v.regs[r] == ref[r] for v in visits for r in watch):
            return Finding(
                latest.tick, pid, FindingKind.SUSPECTED_LOOP,
                (pc, len(visits)),
                f"pc {pc} revisited {len(visits)} times in {w} ticks with "
                f"watched registers unchanged",
            )
    return None


def check_interrupt_latency(state: VmState, config: MonitorConfig, now: int,
                            pid: str = "") -> Finding | None:
    if not state.pending_interrupt or state.interrupt_since is None:
        return None
    waited = now - state.interrupt_since
    if waited > config.interrupt_deadline:
        return Finding(
            now, pid, FindingKind.NON_RESPONSIVE,
            (state.interrupt_since, now),
            f"interrupt pending since tick {state.interrupt_since}, "
            f"deadline {config.interrupt_deadline}",
        )
    return None


def check_resources(history: Sequence[Snapshot] | Snapshot | VmState, config: MonitorConfig,
                    pid: str = "") -> Finding | None:
    """Accepts a snapshot sequence or a single snapshot/state (its latest point)."""
    if config.step_budget is None:
        return None
    if isinstance(history, (Snapshot, VmState)):
        latest = history
    else:
        latest = history[-1] if history else None
    if latest is None or not latest.live or latest.tick <= config.step_budget:
        return None
    return Finding(
        latest.tick, pid, FindingKind.RESOURCE_BUDGET_EXCEEDED,
        (latest.tick, config.step_budget),
        f"live at tick {latest.tick}, budget {config.step_budget}",
    )


def set_flag(state: VmState) -> VmState:
    """Write 1 into the flag cell; the caller logs the FlagSet event."""
    if not state.live:
        raise FlagOnDead("cannot flag a process that is no longer live")
    return set_flag_cell(state)


def scan(snapshots: Iterable[Snapshot], pid: str = "") -> Finding | None:
    """Run certified-divergence detection over an event-free trace."""
    det = DivergenceDetector(pid)
    for s in snapshots:
        f = det.observe(s)
        if f is not None:
            return f
    return None
