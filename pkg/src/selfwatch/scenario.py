"""Scenario files: which programs to supervise, under what policy, with which
scripted interrupts, requests and scheduled judgements."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .judgement import ScheduleEntry, parse_prop
from .judgement.parser import PropSyntaxError
from .monitor import MonitorConfig
from .trust import GoldenManifest, KeyMissing, Policy, PolicyError


class ScenarioInvalid(ValueError):
    pass


@dataclass
class ProgramSpec:
    pid: str
    source: bytes
    policy: Policy = field(default_factory=Policy)
    path: str = ""


@dataclass
class Scenario:
    programs: list[ProgramSpec]
    schedule: list[ScheduleEntry] = field(default_factory=list)
    interrupts: list[tuple[int, str]] = field(default_factory=list)
    requests: list[tuple[int, str]] = field(default_factory=list)
    stride: int = 1
    run_limit: int = 1000
    manifest: GoldenManifest | None = None
    mac_key: bytes | None = None
    keyed: bool = False
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    capacity: int = 65536
    checkpoint_every: int = 1024
    # raw bytes of the supervisor's own configuration, measured at startup
    config_files: list[tuple[str, bytes]] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        pids = [p.pid for p in self.programs]
        if not pids:
            raise ScenarioInvalid("scenario has no programs")
        if len(set(pids)) != len(pids):
            raise ScenarioInvalid("program pids must be unique")
        for pid in pids:
            if not pid or any(c.isspace() for c in pid):
                raise ScenarioInvalid(f"bad pid {pid!r}")
        if self.stride < 1:
            raise ScenarioInvalid("stride must be >= 1")
        if self.run_limit < 0:
            raise ScenarioInvalid("run_limit must be >= 0")
        for tick, pid in self.interrupts:
            if pid not in pids:
                raise ScenarioInvalid(f"interrupt for unknown pid {pid!r}")
            if not 0 <= tick <= self.run_limit:
                raise ScenarioInvalid(f"interrupt tick {tick} outside 0..{self.run_limit}")
        for tick, _ in self.requests:
            if not 0 <= tick <= self.run_limit:
                raise ScenarioInvalid(f"request tick {tick} outside 0..{self.run_limit}")
        if self.keyed and self.mac_key is None:
            raise KeyMissing("scenario requests keyed mode but gives no mac key")
        self.interrupts.sort(key=lambda e: e[0])
        self.requests.sort(key=lambda e: e[0])

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        try:
            raw = path.read_bytes()
            doc = json.loads(raw.decode("utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(doc, base=path.parent, raw=(path.name, raw))

    @classmethod
    def from_dict(cls, doc: dict, base: Path | str = ".",
                  raw: tuple[str, bytes] | None = None) -> Scenario:
        base = Path(base)
        config_files = [raw] if raw else []
        policies: dict[str, Policy] = {}

        def read(rel: str) -> bytes:
            try:
                return (base / rel).read_bytes()
            except OSError as exc:
                raise ScenarioInvalid(f"cannot read {rel}: {exc}") from None

        def policy(rel: str | None) -> Policy:
            if not rel:
                return Policy()
            if rel not in policies:
                data = read(rel)
                try:
                    policies[rel] = Policy.from_dict(json.loads(data.decode("utf-8")))
                except (PolicyError, ValueError) as exc:
                    raise ScenarioInvalid(f"policy {rel}: {exc}") from None
                config_files.append((rel, data))
            return policies[rel]

        try:
            programs = []
            for entry in doc["programs"]:
                programs.append(ProgramSpec(
                    str(entry["pid"]), read(entry["path"]), policy(entry.get("policy")),
                    entry["path"]))
            schedule = []
            for e in doc.get("schedule", []):
                try:
                    prop = parse_prop(e["prop"])
                except PropSyntaxError as exc:
                    raise ScenarioInvalid(f"schedule {e.get('name')!r}: {exc}") from None
                schedule.append(ScheduleEntry(str(e["name"]), prop, int(e.get("period", 1)),
                                              e.get("category", "health")))
            interrupts = [(int(e["tick"]), str(e["pid"])) for e in doc.get("interrupts", [])]
            requests = [(int(e["tick"]), str(e["line"])) for e in doc.get("requests", [])]
            mon = dict(doc.get("monitor", {}))
            if "watch_set" in mon:
                mon["watch_set"] = frozenset(int(r) for r in mon["watch_set"])
            monitor = MonitorConfig(**mon)
            hist = doc.get("history", {})
            manifest = policy(doc["manifest"]).manifest if doc.get("manifest") else None
            if doc.get("manifest") and manifest is None:
                raise ScenarioInvalid(f"{doc['manifest']} has no golden_manifest")
            key = policy(doc["mac_key"]).mac_key if doc.get("mac_key") else None
            return cls(
                programs=programs,
                schedule=schedule,
                interrupts=interrupts,
                requests=requests,
                stride=int(doc.get("stride", 1)),
                run_limit=int(doc.get("run_limit", 1000)),
                manifest=manifest,
                mac_key=key,
                keyed=bool(doc.get("keyed", key is not None)),
                monitor=monitor,
                capacity=int(hist.get("capacity", 65536)),
                checkpoint_every=int(hist.get("checkpoint_every", 1024)),
                config_files=config_files,
            )
        except ScenarioInvalid:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"bad scenario: {exc!r}") from None
