"""Command-line entry point.

Exit codes: 0 ok, 1 failed check (verify-log), 2 scenario invalid,
3 attestation mismatch, 4 replay divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import socketserver
import sys
import threading
from pathlib import Path

from .judgement import LogIntegrityError, verify_lines
from .scenario import Scenario, ScenarioInvalid
from .supervisor import Supervisor, replay
from .trust import GoldenManifest, KeyMissing, PolicyError

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_ATTESTATION, EXIT_DIVERGENCE = 0, 1, 2, 3, 4


def _load(path: str) -> Scenario:
    p = Path(path)
    if p.is_dir():
        p = p / "scenario.json"
    return Scenario.load(p)


def cmd_run(args) -> int:
    sup = Supervisor(_load(args.scenario))
    summary = sup.run()
    if args.logdir:
        sup.write_logs(args.logdir)
    for line in summary.lines():
        print(line)
    return summary.exit_code


def cmd_ask(args) -> int:
    sup = Supervisor(_load(args.scenario))
    sup.run(until=args.at)
    resp = sup.serve_line(f"ASK {args.pid} {args.prop}")
    sys.stdout.write(resp.text())
    return EXIT_FAILED if resp.is_error else EXIT_OK


def cmd_replay(args) -> int:
    result = replay(_load(args.scenario), args.logdir)
    print(result.message())
    return EXIT_OK if result.ok else EXIT_DIVERGENCE


def cmd_attest(args) -> int:
    sup = Supervisor(_load(args.scenario))
    sup.launch()
    for line in sup.attestation_lines():
        print(line)
    return EXIT_ATTESTATION if sup.refused else EXIT_OK


def cmd_verify_log(args) -> int:
    try:
        text = Path(args.log).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"verify-log: cannot read {args.log}: {exc.strerror}")
        return EXIT_FAILED
    try:
        n = verify_lines(text.splitlines())
    except LogIntegrityError as exc:
        print(f"verify-log: FAIL {exc}")
        return EXIT_FAILED
    print(f"verify-log: ok ({n} records)")
    return EXIT_OK


def cmd_make_manifest(args) -> int:
    sc = _load(args.scenario)
    manifest = GoldenManifest.from_artifacts((p.pid, p.source) for p in sc.programs)
    doc = {
        "golden_manifest": [{"name": m.name, "sha256_hex": m.digest.hex()}
                            for m in manifest.entries],
        "expected_pcr_hex": manifest.expected_pcr.hex(),
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _serve_stream(sup: Supervisor, lock: threading.Lock, rfile, wfile) -> None:
    for raw in rfile:
        line = raw.decode("utf-8", "replace") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        with lock:
            text = sup.serve_line(line.rstrip("\r\n")).text()
        wfile.write(text.encode("utf-8") if isinstance(raw, bytes) else text)
        wfile.flush()


def cmd_serve(args) -> int:
    sup = Supervisor(_load(args.scenario))
    sup.run(until=args.at)
    lock = threading.Lock()
    if args.socket:
        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                _serve_stream(sup, lock, self.rfile, self.wfile)

        with socketserver.ThreadingUnixStreamServer(args.socket, Handler) as server:
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
    else:
        _serve_stream(sup, lock, sys.stdin, sys.stdout)
    if args.logdir:
        sup.write_logs(args.logdir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfwatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log reports to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run a scenario")
    s.add_argument("scenario")
    s.add_argument("--logdir", help="write history, judgement, report and transcript logs here")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("ask", help="run a scenario, then ask a yes/no question")
    s.add_argument("pid")
    s.add_argument("prop")
    s.add_argument("--scenario", required=True)
    s.add_argument("--at", type=int, help="stop at this tick before asking")
    s.set_defaults(func=cmd_ask)

    s = sub.add_parser("replay", help="re-run a scenario and compare against recorded logs")
    s.add_argument("scenario")
    s.add_argument("logdir")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("attest", help="measure launch artifacts and print the PCRs")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_attest)

    s = sub.add_parser("verify-log", help="verify a judgement log hash chain")
    s.add_argument("log")
    s.set_defaults(func=cmd_verify_log)

    s = sub.add_parser("make-manifest", help="print a golden manifest for a scenario's programs")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_make_manifest)

    s = sub.add_parser("serve", help="run a scenario, then answer requests on stdin or a socket")
    s.add_argument("scenario")
    s.add_argument("--at", type=int)
    s.add_argument("--socket", help="listen on this Unix socket path instead of stdin")
    s.add_argument("--logdir")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ScenarioInvalid, PolicyError, KeyMissing) as exc:
        print(f"scenario invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
