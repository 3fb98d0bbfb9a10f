"""Line protocol framing.

One request per line. A response block is either a single line (``yes id=N``,
``no id=N``, ``err <code>``) or an ``ok <VERB> <n>`` header followed by ``n``
lines. In keyed mode a ``#mac=<hex>`` line follows the block, tagging the
block text (lines joined by ``\\n``); inbound requests carry the same tag as
a trailing `` #mac=<hex>`` on the request line.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trust import tag_message, verify_message

VERBS = ("ASK", "STATUS", "HISTORY", "REPORTS", "TRUST", "ATTEST", "KILL", "LIST")

ERR_UNKNOWN_COMMAND = "unknown-command"
ERR_UNKNOWN_PID = "unknown-pid"
ERR_BAD_PROP = "bad-prop"
ERR_CONFIRMATION = "confirmation-required"
ERR_INTEGRITY = "integrity-failure"
ERR_BAD_ARGUMENTS = "bad-arguments"
ERR_NO_STATE = "no-state"

MAC_MARK = "#mac="


@dataclass(frozen=True)
class Request:
    verb: str
    args: tuple[str, ...]
    rest: str
    raw: str


def parse_request(line: str) -> Request:
    """Split a request line; ``rest`` keeps the text after the verb verbatim."""
    text = line.strip()
    parts = text.split(None, 1)
    verb = parts[0].upper() if parts else ""
    rest = parts[1] if len(parts) > 1 else ""
    return Request(verb, tuple(rest.split()), rest, line)


def split_mac(line: str) -> tuple[str, bytes | None]:
    """Separate a trailing `` #mac=<hex>`` from a request line."""
    body = line.rstrip("\r\n")
    idx = body.rfind(" " + MAC_MARK)
    if idx < 0:
        return body, None
    try:
        tag = bytes.fromhex(body[idx + 1 + len(MAC_MARK):])
    except ValueError:
        return body[:idx], b""
    return body[:idx], tag


def sign_request(key: bytes, line: str) -> str:
    return f"{line} {MAC_MARK}{tag_message(key, line.encode()).hex()}"


@dataclass
class Response:
    lines: list[str]
    mac: bytes | None = None

    @classmethod
    def error(cls, code: str) -> Response:
        return cls([f"err {code}"])

    @classmethod
    def block(cls, verb: str, body: list[str]) -> Response:
        return cls([f"ok {verb} {len(body)}"] + body)

    @property
    def body(self) -> str:
        return "\n".join(self.lines)

    @property
    def is_error(self) -> bool:
        return self.lines[0].startswith("err ")

    def signed(self, key: bytes | None) -> Response:
        if key is None:
            return self
        return Response(self.lines, tag_message(key, self.body.encode()))

    def text(self) -> str:
        out = self.body + "\n"
        if self.mac is not None:
            out += f"{MAC_MARK}{self.mac.hex()}\n"
        return out


def read_block(lines: list[str], start: int = 0) -> tuple[Response, int]:
    """Parse one response block from ``lines``; returns it and the next index."""
    first = lines[start]
    if first.startswith("ok "):
        n = int(first.split()[2])
        body = lines[start:start + 1 + n]
    else:
        body = [first]
    i = start + len(body)
    mac = None
    if i < len(lines) and lines[i].startswith(MAC_MARK):
        mac = bytes.fromhex(lines[i][len(MAC_MARK):])
        i += 1
    return Response(body, mac), i


def verify_response(key: bytes, resp: Response) -> bool:
    return resp.mac is not None and verify_message(key, resp.body.encode(), resp.mac)
