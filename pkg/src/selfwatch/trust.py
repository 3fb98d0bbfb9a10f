"""Security policy checks, trust ratings, simulated chain of trust and
message integrity tags."""

from __future__ import annotations

import hashlib
import hmac
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .microvm import FLAG_CELL, MEM_WORDS, NUM_REGS, VmState
from .monitor import Finding, FindingKind

MASK = (1 << 64) - 1
DIGEST_SIZE = 32
GENESIS_PCR = bytes(DIGEST_SIZE)


class PolicyError(ValueError):
    pass


class ManifestMissing(Exception):
    pass


class KeyMissing(Exception):
    pass


class ReportKind(Enum):
    RANGE_VIOLATION = "RangeViolation"
    MEMORY_STRUCTURE_VIOLATION = "MemoryStructureViolation"
    NON_RESPONSIVE = "NonResponsive"
    CERTIFIED_DIVERGENCE = "CertifiedDivergence"
    SUSPECTED_LOOP = "SuspectedLoop"
    RESOURCE_BUDGET_EXCEEDED = "ResourceBudgetExceeded"
    ATTESTATION_MISMATCH = "AttestationMismatch"
    MESSAGE_INTEGRITY_FAILURE = "MessageIntegrityFailure"


DEFAULT_SEVERITY = {
    ReportKind.RANGE_VIOLATION: 15,
    ReportKind.MEMORY_STRUCTURE_VIOLATION: 40,
    ReportKind.NON_RESPONSIVE: 25,
    ReportKind.CERTIFIED_DIVERGENCE: 30,
    ReportKind.SUSPECTED_LOOP: 10,
    ReportKind.RESOURCE_BUDGET_EXCEEDED: 10,
    ReportKind.ATTESTATION_MISMATCH: 100,
    ReportKind.MESSAGE_INTEGRITY_FAILURE: 50,
}

FINDING_REPORTS = {
    FindingKind.CERTIFIED_DIVERGENCE: ReportKind.CERTIFIED_DIVERGENCE,
    FindingKind.SUSPECTED_LOOP: ReportKind.SUSPECTED_LOOP,
    FindingKind.NON_RESPONSIVE: ReportKind.NON_RESPONSIVE,
    FindingKind.RESOURCE_BUDGET_EXCEEDED: ReportKind.RESOURCE_BUDGET_EXCEEDED,
}


@dataclass(frozen=True)
class SecurityReport:
    tick: int
    pid: str
    kind: ReportKind
    severity: int
    details: str = ""

    def __post_init__(self):
        if not 1 <= self.severity <= 100:
            raise ValueError("severity must be in [1, 100]")

    def line(self) -> str:
        return (f"REPORT tick={self.tick} pid={self.pid} kind={self.kind.value} "
                f"severity={self.severity} details={self.details}")


def make_report(kind: ReportKind, tick: int, pid: str, details: str = "",
                severities: dict[ReportKind, int] | None = None) -> SecurityReport:
    sev = (severities or DEFAULT_SEVERITY).get(kind, DEFAULT_SEVERITY[kind])
    return SecurityReport(tick, pid, kind, sev, details)


def report_for_finding(finding: Finding,
                       severities: dict[ReportKind, int] | None = None) -> SecurityReport:
    return make_report(FINDING_REPORTS[finding.kind], finding.tick, finding.pid,
                       finding.message, severities)


# -- type ranges and protected memory ---------------------------------------

@dataclass(frozen=True)
class RangeDecl:
    kind: str  # "reg" or "mem"
    index: int
    lo: int
    hi: int

    def __post_init__(self):
        if self.kind not in ("reg", "mem"):
            raise PolicyError(f"bad target kind {self.kind!r}")
        limit = NUM_REGS if self.kind == "reg" else MEM_WORDS
        if not 0 <= self.index < limit:
            raise PolicyError(f"target index {self.index} out of range")
        if not 0 <= self.lo <= self.hi <= MASK:
            raise PolicyError(f"need 0 <= lo <= hi < 2**64, got [{self.lo}, {self.hi}]")

    @property
    def target(self) -> str:
        return f"r{self.index}" if self.kind == "reg" else f"mem({self.index})"


_TARGET = re.compile(r"^(?:r(\d+)|mem\((\d+)\))$")


def parse_target(text: str) -> tuple[str, int]:
    m = _TARGET.match(text.strip())
    if not m:
        raise PolicyError(f"bad range target {text!r}; use r<i> or mem(<addr>)")
    if m.group(1) is not None:
        return "reg", int(m.group(1))
    return "mem", int(m.group(2))


@dataclass(frozen=True)
class TypeRangePolicy:
    ranges: tuple[RangeDecl, ...] = ()

    def __post_init__(self):
        seen = set()
        for d in self.ranges:
            if (d.kind, d.index) in seen:
                raise PolicyError(f"duplicate range target {d.target}")
            seen.add((d.kind, d.index))


def check_snapshot(policy: TypeRangePolicy, state: VmState, pid: str = "",
                   severities: dict[ReportKind, int] | None = None) -> list[SecurityReport]:
    out = []
    for d in policy.ranges:
        value = state.regs[d.index] if d.kind == "reg" else state.mem[d.index]
        if not d.lo <= value <= d.hi:
            out.append(make_report(
                ReportKind.RANGE_VIOLATION, state.tick, pid,
                f"{d.target}={value} outside [{d.lo},{d.hi}]", severities))
    return out


@dataclass(frozen=True)
class ProtectedRegion:
    lo: int = 0
    hi: int = 15

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi < MEM_WORDS:
            raise PolicyError(f"protected region [{self.lo}, {self.hi}] not within memory")

    def covers(self, addr: int) -> bool:
        return self.lo <= addr <= self.hi or addr == FLAG_CELL


SUPERVISOR = "supervisor"


@dataclass(frozen=True)
class MemoryWrite:
    pid: str
    addr: int
    tick: int
    writer: str = "program"


def check_write(region: ProtectedRegion, write: MemoryWrite,
                severities: dict[ReportKind, int] | None = None) -> SecurityReport | None:
    if write.writer == SUPERVISOR or not region.covers(write.addr):
        return None
    return make_report(ReportKind.MEMORY_STRUCTURE_VIOLATION, write.tick, write.pid,
                       f"store to protected address {write.addr}", severities)


# -- trust ratings ----------------------------------------------------------

TRUSTED, SUSPECT, UNTRUSTED = "Trusted", "Suspect", "Untrusted"


def trust_class(score: int) -> str:
    if score >= 80:
        return TRUSTED
    if score >= 30:
        return SUSPECT
    return UNTRUSTED


class TrustLedger:
    def __init__(self):
        self.scores: dict[str, int] = {}
        self.reports: dict[str, list[SecurityReport]] = {}

    def score(self, pid: str) -> int:
        return self.scores.get(pid, 100)

    def trust_class(self, pid: str) -> str:
        return trust_class(self.score(pid))

    def register(self, pid: str) -> None:
        self.scores.setdefault(pid, 100)
        self.reports.setdefault(pid, [])

    def update(self, report: SecurityReport) -> TrustLedger:
        self.register(report.pid)
        self.reports[report.pid].append(report)
        self.scores[report.pid] = max(0, self.scores[report.pid] - report.severity)
        return self


def update_trust(ledger: TrustLedger, report: SecurityReport) -> TrustLedger:
    return ledger.update(report)


# -- chain of trust ---------------------------------------------------------

def measure(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def extend(pcr: bytes, digest: bytes) -> bytes:
    if len(pcr) != DIGEST_SIZE or len(digest) != DIGEST_SIZE:
        raise ValueError("pcr and measurement must both be 32 bytes")
    return hashlib.sha256(pcr + digest).digest()


@dataclass(frozen=True)
class Measurement:
    name: str
    digest: bytes

    def line(self) -> str:
        return f"{self.name}\t{self.digest.hex()}"


class Pcr:
    """Extend-only digest register."""

    def __init__(self):
        self._value = GENESIS_PCR
        self.log: list[Measurement] = []

    @property
    def value(self) -> bytes:
        return self._value

    def extend(self, m: Measurement) -> bytes:
        self._value = extend(self._value, m.digest)
        self.log.append(m)
        return self._value


@dataclass(frozen=True)
class GoldenManifest:
    entries: tuple[Measurement, ...]
    expected_pcr: bytes

    @classmethod
    def from_artifacts(cls, named: Iterable[tuple[str, bytes]]) -> GoldenManifest:
        pcr = Pcr()
        entries = []
        for name, data in named:
            m = Measurement(name, measure(data))
            pcr.extend(m)
            entries.append(m)
        return cls(tuple(entries), pcr.value)


@dataclass
class LaunchVerdict:
    ok: bool
    pcr: bytes
    measurements: list[Measurement]
    mismatched: list[int] = field(default_factory=list)
    pcr_ok: bool = True


def verify_launch(manifest: GoldenManifest | None, artifacts: Sequence[bytes],
                  names: Sequence[str] | None = None) -> LaunchVerdict:
    """Measure ``artifacts`` in order into a fresh PCR and compare with the
    manifest, entry by entry and on the final value."""
    if manifest is None:
        raise ManifestMissing("no golden manifest loaded")
    pcr = Pcr()
    mismatched = []
    for i, data in enumerate(artifacts):
        name = names[i] if names else (manifest.entries[i].name if i < len(manifest.entries) else f"#{i}")
        m = Measurement(name, measure(data))
        pcr.extend(m)
        if i >= len(manifest.entries) or manifest.entries[i].digest != m.digest:
            mismatched.append(i)
    pcr_ok = (len(artifacts) == len(manifest.entries)
              and hmac.compare_digest(pcr.value, manifest.expected_pcr))
    return LaunchVerdict(not mismatched and pcr_ok, pcr.value, pcr.log, mismatched, pcr_ok)


# -- message integrity ------------------------------------------------------

KEY_SIZE = 32


def _check_key(key: bytes | None) -> bytes:
    if key is None:
        raise KeyMissing("keyed mode is on but no key is configured")
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    return key


def tag_message(key: bytes | None, data: bytes) -> bytes:
    return hmac.new(_check_key(key), data, hashlib.sha256).digest()


def verify_message(key: bytes | None, data: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(tag_message(key, data), tag)


# -- policy files -----------------------------------------------------------

@dataclass
class Policy:
    ranges: TypeRangePolicy = field(default_factory=TypeRangePolicy)
    protected: ProtectedRegion = field(default_factory=ProtectedRegion)
    severities: dict[ReportKind, int] = field(default_factory=lambda: dict(DEFAULT_SEVERITY))
    manifest: GoldenManifest | None = None
    mac_key: bytes | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> Policy:
        if not isinstance(doc, dict):
            raise PolicyError("policy must be a JSON object")
        try:
            decls = []
            for r in doc.get("ranges", []):
                kind, idx = parse_target(r["target"])
                decls.append(RangeDecl(kind, idx, int(r["lo"]), int(r["hi"])))
            prot = doc.get("protected")
            region = ProtectedRegion(int(prot["lo"]), int(prot["hi"])) if prot else ProtectedRegion()
            sev = dict(DEFAULT_SEVERITY)
            for name, value in doc.get("severities", {}).items():
                sev[ReportKind(name)] = int(value)
                if not 1 <= sev[ReportKind(name)] <= 100:
                    raise PolicyError(f"severity for {name} outside [1, 100]")
            manifest = None
            if "golden_manifest" in doc:
                entries = tuple(Measurement(e["name"], bytes.fromhex(e["sha256_hex"]))
                                for e in doc["golden_manifest"])
                manifest = GoldenManifest(entries, bytes.fromhex(doc["expected_pcr_hex"]))
            key = bytes.fromhex(doc["mac_key_hex"]) if doc.get("mac_key_hex") else None
            if key is not None and len(key) != KEY_SIZE:
                raise PolicyError(f"mac_key_hex must encode {KEY_SIZE} bytes")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PolicyError):
                raise
            raise PolicyError(f"bad policy: {exc}") from None
        return cls(TypeRangePolicy(tuple(decls)), region, sev, manifest, key)

    @classmethod
    def load(cls, path: str | Path) -> Policy:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PolicyError(f"cannot read policy {path}: {exc}") from None
        return cls.from_dict(doc)
