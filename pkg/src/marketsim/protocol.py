"""HTTP/1.1 wire codec with flat ``key=value`` bodies.

Both directions are encoded by this module only, so a loopback transport and a
socket transport carry byte-identical streams for the same logical calls.
"""
from __future__ import annotations

from dataclasses import dataclass
from urllib.parse import quote, unquote

CRLF = b"\r\n"
HEADER_END = b"\r\n\r\n"
ACCOUNT_HEADER = "X-Account"

REASONS = {200: "OK", 400: "Bad Request", 403: "Forbidden", 404: "Not Found", 405: "Method Not Allowed",
           500: "Internal Server Error"}

Pairs = tuple[tuple[str, str], ...]


class ProtocolError(ValueError):
    """Malformed wire data; ``offset`` is the byte position where decoding failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Request:
    method: str
    path: str
    query: Pairs = ()
    account: int | None = None
    body: Pairs = ()

    def param(self, key: str, default: str | None = None) -> str | None:
        return _lookup(self.query, key, default)

    def field(self, key: str, default: str | None = None) -> str | None:
        return _lookup(self.body, key, default)


@dataclass(frozen=True)
class Response:
    status: int
    body: Pairs = ()

    def get(self, key: str, default: str | None = None) -> str | None:
        return _lookup(self.body, key, default)

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.body if k == key]


def _lookup(pairs: Pairs, key: str, default):
    for k, v in pairs:
        if k == key:
            return v
    return default


def _check_token(text: str, what: str) -> None:
    if "\n" in text or "\r" in text:
        raise ValueError(f"{what} may not contain line breaks: {text!r}")


def encode_body(pairs: Pairs) -> bytes:
    lines = []
    for k, v in pairs:
        if not k or "=" in k:
            raise ValueError(f"bad key {k!r}")
        _check_token(k, "key")
        _check_token(v, "value")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def decode_body(data: bytes, base: int = 0) -> Pairs:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError("body is not UTF-8", base + exc.start) from None
    if text and not text.endswith("\n"):
        raise ProtocolError("body does not end with a newline", base + len(data))
    pairs = []
    offset = base
    for line in text.split("\n")[:-1] if text else []:
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise ProtocolError(f"expected key=value, got {line!r}", offset)
        pairs.append((key, value))
        offset += len(line.encode("utf-8")) + 1
    return tuple(pairs)


def _encode_target(path: str, query: Pairs) -> str:
    if not query:
        return path
    return path + "?" + "&".join(f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in query)


def encode_request(req: Request) -> bytes:
    body = encode_body(req.body)
    lines = [f"{req.method} {_encode_target(req.path, req.query)} HTTP/1.1", "Host: exchange"]
    if req.account is not None:
        lines.append(f"{ACCOUNT_HEADER}: {req.account}")
    lines.append("Content-Type: text/plain; charset=utf-8")
    lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("ascii") + body


def encode_response(resp: Response) -> bytes:
    body = encode_body(resp.body)
    head = (f"HTTP/1.1 {resp.status} {REASONS.get(resp.status, 'Unknown')}\r\n"
            "Content-Type: text/plain; charset=utf-8\r\n"
            f"Content-Length: {len(body)}\r\n\r\n")
    return head.encode("ascii") + body


def _split_message(data: bytes) -> tuple[str, dict[str, str], bytes, int]:
    end = data.find(HEADER_END)
    if end < 0:
        raise ProtocolError("header block not terminated", len(data))
    try:
        head = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise ProtocolError("non-ASCII header", exc.start) from None
    lines = head.split("\r\n")
    headers: dict[str, str] = {}
    offset = len(lines[0]) + 2
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if not sep:
            raise ProtocolError(f"bad header line {line!r}", offset)
        headers[name.strip().lower()] = value.strip()
        offset += len(line) + 2
    body_start = end + len(HEADER_END)
    length_text = headers.get("content-length")
    if length_text is None or not length_text.isdigit():
        raise ProtocolError("missing or bad Content-Length", end)
    length = int(length_text)
    body = data[body_start:]
    if len(body) < length:
        raise ProtocolError(f"body truncated: {len(body)} of {length} bytes", len(data))
    if len(body) > length:
        raise ProtocolError("trailing bytes after body", body_start + length)
    return lines[0], headers, body, body_start


def decode_request(data: bytes) -> Request:
    start, headers, body, body_start = _split_message(data)
    parts = start.split(" ")
    if len(parts) != 3 or parts[2] != "HTTP/1.1":
        raise ProtocolError(f"bad request line {start!r}", 0)
    method, target, _ = parts
    path, _, qs = target.partition("?")
    query = []
    if qs:
        for item in qs.split("&"):
            k, sep, v = item.partition("=")
            if not sep:
                raise ProtocolError(f"bad query item {item!r}", len(method) + 1 + len(path))
            query.append((unquote(k), unquote(v)))
    account = headers.get(ACCOUNT_HEADER.lower())
    if account is not None:
        try:
            account = int(account)
        except ValueError:
            raise ProtocolError(f"bad {ACCOUNT_HEADER} header", 0) from None
    return Request(method, path, tuple(query), account, decode_body(body, body_start))


def decode_response(data: bytes) -> Response:
    start, _, body, body_start = _split_message(data)
    parts = start.split(" ", 2)
    if len(parts) < 2 or parts[0] != "HTTP/1.1" or not parts[1].isdigit():
        raise ProtocolError(f"bad status line {start!r}", 0)
    return Response(int(parts[1]), decode_body(body, body_start))


def message_length(buffer: bytes) -> int | None:
    """Total length of the first complete message in ``buffer``, or None if more bytes are needed."""
    end = buffer.find(HEADER_END)
    if end < 0:
        return None
    length = 0
    for line in buffer[:end].split(CRLF)[1:]:
        name, _, value = line.partition(b":")
        if name.strip().lower() == b"content-length":
            value = value.strip()
            if not value.isdigit():
                raise ProtocolError("bad Content-Length", end)
            length = int(value)
    total = end + len(HEADER_END) + length
    return total if len(buffer) >= total else None
