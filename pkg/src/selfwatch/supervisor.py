"""Lockstep supervisor: steps every process, records history, runs detectors,
turns findings into reports and trust, runs scheduled judgements and answers
requests between ticks."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import microvm
from .history import EventKind, HistoryStore, Snapshot, EmptyRange
from .judgement import (
    EvaluationError, JudgementLog, PropSyntaxError, judge, parse_prop, run_schedule,
)
from .microvm import AssemblyError, Op, Program, VmState
from .monitor import (
    DivergenceDetector, Finding, FindingKind, check_interrupt_latency,
    check_resources, detect_suspected_loop, set_flag,
)
from .protocol import (
    ERR_BAD_ARGUMENTS, ERR_BAD_PROP, ERR_CONFIRMATION, ERR_INTEGRITY,
    ERR_NO_STATE, ERR_UNKNOWN_COMMAND, ERR_UNKNOWN_PID, Request, Response,
    parse_request, split_mac,
)
from .scenario import ProgramSpec, Scenario, ScenarioInvalid
from .trust import (
    MemoryWrite, Measurement, Pcr, Policy, ReportKind, SecurityReport,
    TrustLedger, check_snapshot, check_write, make_report, measure,
    report_for_finding, verify_launch, verify_message,
)

log = logging.getLogger(__name__)

RUNNING, HALTED, FAULTED, DIVERGED, KILLED, REFUSED = (
    "running", "halted", "faulted", "diverged", "killed", "refused")

LOG_FILES = ("summary.txt", "attest.log", "events.log", "findings.log",
             "reports.log", "judgements.log", "refusals.log", "transcript.log")


@dataclass
class Process:
    spec: ProgramSpec
    program: Program | None
    store: HistoryStore
    state: VmState | None = None
    status: str = RUNNING
    detector: DivergenceDetector = field(default_factory=DivergenceDetector)
    once: set = field(default_factory=set)

    @property
    def pid(self) -> str:
        return self.spec.pid

    @property
    def policy(self) -> Policy:
        return self.spec.policy

    @property
    def running(self) -> bool:
        return self.status == RUNNING


@dataclass
class Summary:
    ticks: int
    processes: dict[str, dict]
    refused: list[str]

    @property
    def exit_code(self) -> int:
        return 3 if self.refused else 0

    def lines(self) -> list[str]:
        out = [f"ticks={self.ticks}"]
        for pid, info in self.processes.items():
            counts = ",".join(f"{k}:{v}" for k, v in sorted(info["report_counts"].items())) or "-"
            out.append(f"pid={pid} status={info['status']} tick={info['tick']} "
                       f"score={info['score']} class={info['class']} "
                       f"reports={info['reports']} kinds={counts}")
        return out


class Supervisor:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.tick = 0
        self.ledger = TrustLedger()
        self.judgements = JudgementLog()
        self.pcr_launch = Pcr()
        self.pcr_config = Pcr()
        self.refused: list[str] = []
        self.events: list[str] = []
        self.findings: list[str] = []
        self.reports: list[SecurityReport] = []
        self.transcript: list[str] = []
        self.processes: dict[str, Process] = {}
        self._interrupts = list(scenario.interrupts)
        self._requests = list(scenario.requests)
        self._launched = False
        self._finished = False
        self._served_tick: int | None = None
        for spec in scenario.programs:
            # assembled only after the launch measurement accepts the bytes
            store = HistoryStore(scenario.capacity, scenario.checkpoint_every)
            self.processes[spec.pid] = Process(spec, None, store,
                                               detector=DivergenceDetector(spec.pid))
            self.ledger.register(spec.pid)

    # -- bookkeeping --------------------------------------------------------

    def _event(self, proc: Process, kind: EventKind, tick: int | None = None) -> None:
        t = self.tick if tick is None else tick
        proc.store.log_event(t, kind)
        self.events.append(f"{t}\t{proc.pid}\t{kind.value}")

    def _report(self, report: SecurityReport) -> None:
        self.reports.append(report)
        if report.pid in self.ledger.scores:
            self.ledger.update(report)
        log.info(report.line())

    def _finding(self, proc: Process, finding: Finding) -> None:
        self.findings.append(finding.line())
        self._report(report_for_finding(finding, proc.policy.severities))

    def _record(self, proc: Process) -> None:
        snap = Snapshot.of(proc.state, proc.program)
        proc.store.record(snap)

    # -- launch ---------------------------------------------------------------

    def launch(self) -> None:
        if self._launched:
            return
        self._launched = True
        procs = list(self.processes.values())
        for name, data in self.scenario.config_files:
            self.pcr_config.extend(Measurement(name, measure(data)))
        artifacts = [p.spec.source for p in procs]
        names = [p.pid for p in procs]
        manifest = self.scenario.manifest
        if manifest is None:
            for p in procs:
                self.pcr_launch.extend(Measurement(p.pid, measure(p.spec.source)))
            bad = set()
        else:
            verdict = verify_launch(manifest, artifacts, names)
            for m in verdict.measurements:
                self.pcr_launch.extend(m)
            bad = set(verdict.mismatched)
            if not verdict.pcr_ok and not bad:
                bad = set(range(len(procs)))
        for i, p in enumerate(procs):
            if i in bad:
                p.status = REFUSED
                self.refused.append(p.pid)
                self._report(make_report(ReportKind.ATTESTATION_MISMATCH, 0, p.pid,
                                         "launch refused: measurement differs from manifest",
                                         p.policy.severities))
                self.events.append(f"0\t{p.pid}\tLaunchRefused")
                continue
            try:
                p.program = microvm.assemble(p.spec.source)
            except AssemblyError as exc:
                raise ScenarioInvalid(f"program {p.pid}: {exc}") from None
            p.state = VmState()
            self._event(p, EventKind.PROCESS_STARTED, 0)
            self._record(p)
            p.store.checkpoint(p.state, force=True)
            self._finish_if_dead(p)

    # -- the loop ---------------------------------------------------------------

    def live(self) -> list[Process]:
        return [p for p in self.processes.values() if p.running]

    def run(self, until: int | None = None) -> Summary:
        """Run to the scenario's limit (or ``until``); may be resumed."""
        self.launch()
        limit = self.scenario.run_limit if until is None else min(until, self.scenario.run_limit)
        while not self._finished:
            self._quiescent()
            if self.tick >= self.scenario.run_limit or not self.live():
                self._finished = True
                break
            if self.tick >= limit:
                break
            self._advance()
        return self.summary()

    def _quiescent(self) -> None:
        t = self.tick
        if self._served_tick == t:
            return
        self._served_tick = t
        for proc in self.processes.values():
            latest = proc.store.latest
            if proc.status in (RUNNING, HALTED, FAULTED) and latest is not None and latest.tick == t:
                # every sampled state is range-checked, including a final one
                for report in check_snapshot(proc.policy.ranges, proc.state, proc.pid,
                                             proc.policy.severities):
                    self._report(report)
        for proc in self.live():
            self._observe(proc)
        live = {p.pid: p.state for p in self.live()}
        if self.scenario.schedule and live:
            run_schedule(self.scenario.schedule, t, self.judgements, live)
        while self._requests and self._requests[0][0] == t:
            _, line = self._requests.pop(0)
            self.serve_line(line)
        while self._interrupts and self._interrupts[0][0] == t:
            _, pid = self._interrupts.pop(0)
            proc = self.processes[pid]
            if proc.running:
                proc.state = microvm.inject_interrupt(proc.state, t)
                self._event(proc, EventKind.INTERRUPT_INJECTED)
                proc.detector.external_event()
            else:
                self.events.append(f"{t}\t{pid}\tInterruptSkipped")

    def _observe(self, proc: Process) -> None:
        t = self.tick
        cfg = self.scenario.monitor
        latest = proc.store.latest
        sampled = latest is not None and latest.tick == t
        flag = False
        if sampled:
            finding = proc.detector.observe(latest)
            if finding is not None:
                self._finding(proc, finding)
                proc.status = DIVERGED
                self._event(proc, EventKind.PROCESS_KILLED)
                return
        f = check_interrupt_latency(proc.state, cfg, t, proc.pid)
        if f is not None and ("nr", proc.state.interrupt_since) not in proc.once:
            proc.once.add(("nr", proc.state.interrupt_since))
            self._finding(proc, f)
            flag = True
        if sampled and FindingKind.SUSPECTED_LOOP not in proc.once:
            window = self._window(proc, cfg.loop_window)
            f = detect_suspected_loop(window, cfg, proc.pid)
            if f is not None:
                proc.once.add(FindingKind.SUSPECTED_LOOP)
                self._finding(proc, f)
                flag = True
        if FindingKind.RESOURCE_BUDGET_EXCEEDED not in proc.once:
            f = check_resources(proc.state, cfg, proc.pid)
            if f is not None:
                proc.once.add(FindingKind.RESOURCE_BUDGET_EXCEEDED)
                self._finding(proc, f)
                flag = True
        if flag:
            flagged = set_flag(proc.state)
            if flagged is not proc.state:
                proc.state = flagged
                self._event(proc, EventKind.FLAG_SET)
                proc.detector.external_event()

    @staticmethod
    def _window(proc: Process, w: int) -> list[Snapshot]:
        cutoff = proc.store.latest.tick - w
        recent = itertools.takewhile(lambda s: s.tick > cutoff, reversed(proc.store.snapshots))
        return list(recent)[::-1]

    def _advance(self) -> None:
        nxt = self.tick + 1
        for proc in self.live():
            state = proc.state
            ins = proc.program[state.pc] if state.pc < len(proc.program) else None
            proc.state = microvm.step(state, proc.program)
            if ins is not None and ins.op is Op.STORE:
                write = MemoryWrite(proc.pid, ins.b, nxt)
                report = check_write(proc.policy.protected, write, proc.policy.severities)
                if report is not None:
                    self._report(report)
            if nxt % self.scenario.stride == 0 or not proc.state.live:
                self._record(proc)
            proc.store.checkpoint(proc.state)
            self._finish_if_dead(proc)
        self.tick = nxt

    def _finish_if_dead(self, proc: Process) -> None:
        if proc.state.halted:
            proc.status = HALTED
        elif proc.state.faulted:
            proc.status = FAULTED

    # -- requests ---------------------------------------------------------------

    def serve_line(self, line: str) -> Response:
        """Handle one inbound line, append it to the transcript, return the
        (signed, in keyed mode) response."""
        key = self.scenario.mac_key if self.scenario.keyed else None
        body, tag = split_mac(line)
        if key is not None and (tag is None or not verify_message(key, body.encode(), tag)):
            req = parse_request(body)
            pid = req.args[0] if req.args and req.args[0] in self.processes else None
            if pid is not None:
                self._report(make_report(ReportKind.MESSAGE_INTEGRITY_FAILURE, self.tick, pid,
                                         "inbound request failed verification",
                                         self.processes[pid].policy.severities))
            resp = Response.error(ERR_INTEGRITY)
        else:
            resp = self.handle_request(parse_request(body))
        resp = resp.signed(key)
        self.transcript.append(f"@{self.tick} > {body}")
        self.transcript.extend(resp.text().splitlines())
        return resp

    def handle_request(self, req: Request) -> Response:
        handler = {
            "ASK": self._ask, "STATUS": self._status, "HISTORY": self._history,
            "REPORTS": self._reports, "TRUST": self._trust, "ATTEST": self._attest,
            "KILL": self._kill, "LIST": self._list,
        }.get(req.verb)
        if handler is None:
            return Response.error(ERR_UNKNOWN_COMMAND)
        return handler(req)

    def _target(self, req: Request, required: bool = True):
        if not req.args:
            return None if not required else Response.error(ERR_BAD_ARGUMENTS)
        pid = req.args[0]
        if pid not in self.processes:
            return Response.error(ERR_UNKNOWN_PID)
        return self.processes[pid]

    def _selected(self, req: Request):
        if not req.args:
            return list(self.processes.values())
        target = self._target(req)
        return target if isinstance(target, Response) else [target]

    def _ask(self, req: Request) -> Response:
        target = self._target(req)
        if isinstance(target, Response):
            return target
        prop_text = req.rest[len(req.args[0]):].strip()
        try:
            prop = parse_prop(prop_text)
        except PropSyntaxError:
            return Response.error(ERR_BAD_PROP)
        if target.state is None:
            return Response.error(ERR_NO_STATE)
        try:
            rec = judge(target.pid, prop, self.judgements, {target.pid: target.state})
        except EvaluationError:
            return Response.error(ERR_BAD_PROP)
        return Response([f"{rec.result} id={rec.id}"])

    def _status_line(self, p: Process) -> str:
        score = self.ledger.score(p.pid)
        cls = self.ledger.trust_class(p.pid)
        if p.state is None:
            return f"pid={p.pid} status={p.status} score={score} class={cls}"
        s = p.state
        return (f"pid={p.pid} status={p.status} tick={s.tick} pc={s.pc} "
                f"instr=\"{p.program.text_at(s.pc)}\" pending={int(s.pending_interrupt)} "
                f"score={score} class={cls}")

    def _status(self, req: Request) -> Response:
        procs = self._selected(req)
        if isinstance(procs, Response):
            return procs
        return Response.block("STATUS", [self._status_line(p) for p in procs])

    def _history(self, req: Request) -> Response:
        target = self._target(req)
        if isinstance(target, Response):
            return target
        try:
            if len(req.args) == 3:
                lo, hi = int(req.args[1]), int(req.args[2])
            elif len(req.args) == 1:
                lo, hi = 0, self.tick
            else:
                raise ValueError
            rows = target.store.query(lo, hi)
        except EmptyRange:
            rows = []
        except ValueError:
            return Response.error(ERR_BAD_ARGUMENTS)
        return Response.block("HISTORY", [s.export_line() for s in rows])

    def _reports(self, req: Request) -> Response:
        procs = self._selected(req)
        if isinstance(procs, Response):
            return procs
        pids = {p.pid for p in procs}
        return Response.block("REPORTS", [r.line() for r in self.reports if r.pid in pids])

    def _trust(self, req: Request) -> Response:
        procs = self._selected(req)
        if isinstance(procs, Response):
            return procs
        return Response.block("TRUST", [
            f"pid={p.pid} score={self.ledger.score(p.pid)} "
            f"class={self.ledger.trust_class(p.pid)} "
            f"reports={len(self.ledger.reports.get(p.pid, []))}"
            for p in procs])

    def attestation_lines(self) -> list[str]:
        out = [f"pcr0={self.pcr_launch.value.hex()}", f"pcr1={self.pcr_config.value.hex()}"]
        out += [f"measure 0 {m.name} {m.digest.hex()}" for m in self.pcr_launch.log]
        out += [f"measure 1 {m.name} {m.digest.hex()}" for m in self.pcr_config.log]
        manifest = self.scenario.manifest
        if manifest is None:
            out.append("manifest=none")
        else:
            out.append(f"manifest expected_pcr={manifest.expected_pcr.hex()} "
                       f"refused={','.join(self.refused) or '-'}")
        return out

    def _attest(self, req: Request) -> Response:
        return Response.block("ATTEST", self.attestation_lines())

    def _kill(self, req: Request) -> Response:
        target = self._target(req)
        if isinstance(target, Response):
            return target
        latest = target.store.latest
        token = next((a.split("=", 1)[1] for a in req.args[1:] if a.startswith("confirm=")), None)
        if latest is None or token is None or token.lower() != latest.state_digest.hex()[:8]:
            return Response.error(ERR_CONFIRMATION)
        if target.running:
            target.status = KILLED
            self._event(target, EventKind.PROCESS_KILLED)
        return Response.block("KILL", [f"pid={target.pid} status={target.status}"])

    def _list(self, req: Request) -> Response:
        return Response.block("LIST", [f"{p.pid} {p.status}" for p in self.processes.values()])

    # -- output ---------------------------------------------------------------

    def summary(self) -> Summary:
        procs = {}
        for pid, p in self.processes.items():
            counts: dict[str, int] = {}
            for r in self.ledger.reports.get(pid, []):
                counts[r.kind.value] = counts.get(r.kind.value, 0) + 1
            procs[pid] = {
                "status": p.status,
                "tick": p.state.tick if p.state is not None else 0,
                "score": self.ledger.score(pid),
                "class": self.ledger.trust_class(pid),
                "reports": sum(counts.values()),
                "report_counts": counts,
            }
        return Summary(self.tick, procs, list(self.refused))

    def outputs(self) -> dict[str, str]:
        """Every log this run produces, keyed by file name."""
        def joined(lines):
            return "".join(line + "\n" for line in lines)

        out = {
            "summary.txt": joined(self.summary().lines()),
            "attest.log": joined(self.attestation_lines()),
            "events.log": joined(self.events),
            "findings.log": joined(self.findings),
            "reports.log": joined(r.line() for r in self.reports),
            "judgements.log": self.judgements.export(),
            "refusals.log": self.judgements.export_refusals(),
            "transcript.log": joined(self.transcript),
        }
        for pid, p in self.processes.items():
            out[f"history-{pid}.tsv"] = p.store.export()
        return out

    def write_logs(self, logdir: str | Path) -> list[Path]:
        logdir = Path(logdir)
        logdir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.outputs().items():
            path = logdir / name
            path.write_bytes(text.encode("utf-8"))
            written.append(path)
        return written


def run_scenario(scenario: Scenario, logdir: str | Path | None = None) -> Summary:
    sup = Supervisor(scenario)
    summary = sup.run()
    if logdir is not None:
        sup.write_logs(logdir)
    return summary


@dataclass
class ReplayResult:
    ok: bool
    file: str | None = None
    line: int | None = None
    reason: str = ""

    def message(self) -> str:
        if self.ok:
            return "replay ok"
        where = f"{self.file}:{self.line}" if self.file else "?"
        return f"divergence at {where}: {self.reason}"


def replay(scenario: Scenario, logdir: str | Path) -> ReplayResult:
    """Re-run ``scenario`` and compare every log in ``logdir`` byte for byte.

    The recorded judgement chain is verified first, so an edited judgement
    line is caught before any re-execution.
    """
    from .judgement import LogIntegrityError, verify_lines

    logdir = Path(logdir)
    jpath = logdir / "judgements.log"
    try:
        verify_lines(jpath.read_text(encoding="utf-8").splitlines())
    except OSError as exc:
        return ReplayResult(False, "judgements.log", None, f"unreadable: {exc}")
    except LogIntegrityError as exc:
        return ReplayResult(False, "judgements.log", exc.line, f"chain verification failed: {exc}")

    sup = Supervisor(scenario)
    sup.run()
    fresh = sup.outputs()
    recorded = {p.name for p in logdir.iterdir() if p.is_file()}
    for name in sorted(set(fresh) | recorded):
        if name not in recorded:
            return ReplayResult(False, name, None, "missing from recorded logs")
        if name not in fresh:
            return ReplayResult(False, name, None, "not produced by the re-run")
        old = (logdir / name).read_bytes().decode("utf-8").splitlines(keepends=True)
        new = fresh[name].splitlines(keepends=True)
        for i, (a, b) in enumerate(itertools.zip_longest(old, new), start=1):
            if a != b:
                reason = "content differs"
                if name == "attest.log":
                    reason = "attestation mismatch"
                return ReplayResult(False, name, i, reason)
    return ReplayResult(True)
