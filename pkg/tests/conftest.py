import json
from pathlib import Path

import pytest

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def write_scenario(root: Path, programs: dict, policy: dict | None = None,
                   manifest: bool = False, key: bytes | None = None, **doc) -> Path:
    """Write program sources, an optional shared policy, manifest and key
    file plus ``scenario.json`` under ``root``; returns the scenario path."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for pid, src in programs.items():
        name = f"{pid}.asm"
        (root / name).write_bytes(src.encode() if isinstance(src, str) else src)
        entry = {"pid": pid, "path": name}
        if policy is not None:
            entry["policy"] = "policy.json"
        entries.append(entry)
    if policy is not None:
        (root / "policy.json").write_text(json.dumps(policy))
    full = {"programs": entries, **doc}
    if manifest:
        from selfwatch.trust import GoldenManifest
        man = GoldenManifest.from_artifacts(
            (pid, (root / f"{pid}.asm").read_bytes()) for pid in programs)
        (root / "manifest.json").write_text(json.dumps({
            "golden_manifest": [{"name": m.name, "sha256_hex": m.digest.hex()}
                                for m in man.entries],
            "expected_pcr_hex": man.expected_pcr.hex(),
        }))
        full["manifest"] = "manifest.json"
    if key is not None:
        (root / "key.json").write_text(json.dumps({"mac_key_hex": key.hex()}))
        full["mac_key"] = "key.json"
    path = root / "scenario.json"
    path.write_text(json.dumps(full, indent=1))
    return path


@pytest.fixture
def scenario_dir(tmp_path):
    def make(programs, **kw):
        return write_scenario(tmp_path / "sc", programs, **kw)
    return make


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
