"""Client library agents use to talk to the exchange.

Two transports share one interface: :class:`LoopbackTransport` hands the
encoded request straight to an in-process service, :class:`SocketTransport`
sends it over TCP. Both carry exactly the bytes produced by the codec.
"""
from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import Protocol

from .book import Level, OrderKind, Side, format_price, parse_price
from .protocol import ProtocolError, Request, Response, decode_response, encode_request, message_length


class TransportError(ConnectionError):
    """The request did not complete: timeout, refused or dropped connection."""


class Rejected(Exception):
    """The exchange answered and refused the request; ``reason`` is its reason code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(reason + (f": {detail}" if detail else ""))
        self.reason = reason


class Transport(Protocol):
    def roundtrip(self, payload: bytes, timeout: float) -> bytes: ...

    def close(self) -> None: ...


class LoopbackTransport:
    """In-memory transport; ``tap`` (if a list) records every request/response pair."""

    def __init__(self, service, tap: list | None = None):
        self.service = service
        self.tap = tap

    def roundtrip(self, payload: bytes, timeout: float) -> bytes:
        if self.service is None:
            raise TransportError("loopback transport is closed")
        reply = self.service.handle(payload)
        if self.tap is not None:
            self.tap.append((payload, reply))
        return reply

    def close(self) -> None:
        self.service = None


class SocketTransport:
    """Keep-alive TCP transport. A failed call drops the connection; the next call reconnects."""

    def __init__(self, address: tuple[str, int], tap: list | None = None):
        self.address = address
        self.tap = tap
        self._sock: socket.socket | None = None
        self._buffer = b""

    def _connect(self, timeout: float) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=timeout)
            except OSError as exc:
                raise TransportError(f"connect {self.address}: {exc}") from exc
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._buffer = b""
        self._sock.settimeout(timeout)
        return self._sock

    def roundtrip(self, payload: bytes, timeout: float) -> bytes:
        sock = self._connect(timeout)
        try:
            sock.sendall(payload)
            while True:
                n = message_length(self._buffer)
                if n is not None:
                    break
                chunk = sock.recv(65536)
                if not chunk:
                    raise TransportError("connection closed by peer")
                self._buffer += chunk
        except TransportError:
            self.close()
            raise
        except OSError as exc:
            self.close()
            raise TransportError(str(exc) or type(exc).__name__) from exc
        reply, self._buffer = self._buffer[:n], self._buffer[n:]
        if self.tap is not None:
            self.tap.append((payload, reply))
        return reply

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._buffer = b""


# ------------------------------------------------------------------ views

@dataclass(frozen=True, slots=True)
class QuoteView:
    asset: int
    bid: int | None
    ask: int | None
    mid: float | None  # ticks, may be a half tick
    volume: int
    t: float
    last_mid: float | None = None

    @property
    def reference_mid(self) -> float | None:
        """Current mid, or the last two-sided mid while one side of the book is empty."""
        return self.mid if self.mid is not None else self.last_mid

    @property
    def spread(self) -> int | None:
        if self.bid is None or self.ask is None:
            return None
        return self.ask - self.bid


@dataclass(frozen=True, slots=True)
class OrderAck:
    order_id: int
    filled: int
    notional: int
    resting: int


@dataclass(frozen=True, slots=True)
class AccountView:
    account_id: int
    kind: str
    cash: int
    reserved_cash: int
    holdings: tuple[int, ...]
    reserved_shares: tuple[int, ...]

    @property
    def available_cash(self) -> int:
        return self.cash - self.reserved_cash

    def available_shares(self, asset: int) -> int:
        return self.holdings[asset] - self.reserved_shares[asset]


@dataclass(frozen=True, slots=True)
class ClockView:
    t: float
    open: bool
    t_close: float


def _mid_ticks(text: str) -> float | None:
    if not text:
        return None
    whole, _, frac = text.partition(".")
    return int(whole) * 100 + int(frac.ljust(3, "0")) / 10


def _price_or_none(text: str | None) -> int | None:
    return parse_price(text) if text else None


def _level(text: str) -> Level:
    price, qty, count = text.split(",")
    return Level(parse_price(price), int(qty), int(count))


class ClientSession:
    """One agent's session. Not shareable between threads.

    Queries and cancels are retried up to ``retry_budget`` times after a
    transport failure; order submissions never are, since a lost
    acknowledgment does not mean the order was lost.
    """

    def __init__(self, transport: Transport, account_id: int | None = None, request_timeout: int = 5000,
                 retry_budget: int = 2):
        self.transport = transport
        self.account_id = account_id
        self.request_timeout = request_timeout
        self.retry_budget = retry_budget

    def call(self, request: Request, idempotent: bool) -> Response:
        payload = encode_request(request)
        attempts = 1 + (self.retry_budget if idempotent else 0)
        for attempt in range(attempts):
            try:
                raw = self.transport.roundtrip(payload, self.request_timeout / 1000)
                break
            except TransportError:
                if attempt == attempts - 1:
                    raise
        response = decode_response(raw)
        if response.status != 200:
            raise Rejected(response.get("error", f"http_{response.status}"), response.get("detail", ""))
        return response

    def _get(self, path: str, query=()) -> Response:
        return self.call(Request("GET", path, tuple(query), self.account_id), idempotent=True)

    def close(self) -> None:
        self.transport.close()

    # ------------------------------------------------------------ wrappers

    def submit(self, asset: int, side: Side, kind: OrderKind, quantity: int, price: int | None = None) -> OrderAck:
        """Send one order; raises :class:`Rejected` if the exchange refuses it."""
        body = (
            ("asset", str(asset)),
            ("side", Side(side).value),
            ("kind", OrderKind(kind).value),
            ("qty", str(quantity)),
            ("price", "" if price is None else format_price(price)),
        )
        resp = self.call(Request("POST", "/order", (), self.account_id, body), idempotent=False)
        if resp.get("accepted") != "true":
            raise Rejected(resp.get("reason", "unknown"))
        return OrderAck(int(resp.get("order_id")), int(resp.get("filled")), parse_price(resp.get("notional")),
                        int(resp.get("resting")))

    def cancel_order(self, order_id: int) -> int:
        resp = self.call(Request("POST", "/cancel", (), self.account_id, (("order_id", str(order_id)),)),
                         idempotent=True)
        return int(resp.get("cancelled"))

    def get_quote(self, asset: int) -> QuoteView:
        r = self._get(f"/quote/{asset}")
        return QuoteView(asset, _price_or_none(r.get("bid")), _price_or_none(r.get("ask")), _mid_ticks(r.get("mid")),
                         int(r.get("volume")), float(r.get("t")), _mid_ticks(r.get("last_mid", "")))

    def get_depth(self, asset: int, levels: int = 10) -> tuple[list[Level], list[Level]]:
        r = self._get(f"/depth/{asset}", (("levels", str(levels)),))
        return [_level(v) for v in r.get_all("bid")], [_level(v) for v in r.get_all("ask")]

    def get_history(self, asset: int, since: float | None = None, last: int | None = None) -> list[tuple[float, float]]:
        """``(t, mid)`` points with mid in ticks."""
        query = []
        if since is not None:
            query.append(("since", repr(float(since))))
        if last is not None:
            query.append(("last", str(last)))
        r = self._get(f"/history/{asset}", query)
        out = []
        for v in r.get_all("point"):
            t, mid = v.split(",")
            out.append((float(t), _mid_ticks(mid)))
        return out

    def get_volume(self, asset: int) -> int:
        return int(self._get(f"/volume/{asset}").get("volume"))

    def get_account(self, account_id: int | None = None) -> AccountView:
        account_id = self.account_id if account_id is None else account_id
        r = self._get(f"/account/{account_id}")
        holdings, reserved = [], []
        for v in r.get_all("holding"):
            _, h, res = v.split(",")
            holdings.append(int(h))
            reserved.append(int(res))
        return AccountView(int(r.get("account")), r.get("kind"), parse_price(r.get("cash")),
                           parse_price(r.get("reserved_cash")), tuple(holdings), tuple(reserved))

    def get_clock(self) -> ClockView:
        r = self._get("/clock")
        return ClockView(float(r.get("t")), r.get("open") == "true", float(r.get("t_close")))


__all__ = [
    "AccountView", "ClientSession", "ClockView", "LoopbackTransport", "OrderAck", "ProtocolError", "QuoteView",
    "Rejected", "SocketTransport", "TransportError",
]
