"""Wire-level front end for :class:`~marketsim.exchange.Exchange`.

``ExchangeService.handle`` maps request bytes to response bytes and is shared
by the in-process loopback transport and the threaded TCP server.
"""
from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading

from .book import OrderKind, Side, format_price, parse_price
from .exchange import Exchange, ExchangeError, Reason
from .protocol import (ProtocolError, Request, Response, decode_request, encode_response,
                       message_length)

log = logging.getLogger(__name__)

LISTEN_ENV = "SIM_LISTEN_ADDR"
DEFAULT_LISTEN = "127.0.0.1:0"

_STATUS = {
    Reason.UNKNOWN_ASSET: 404,
    Reason.UNKNOWN_ACCOUNT: 404,
    Reason.NOT_OWNER: 403,
    Reason.INVALID_ORDER: 400,
}


def format_mid(ticks: float) -> str:
    """Exact decimal text for a mid price held in (possibly half) ticks."""
    doubled = round(ticks * 2)
    sign = "-" if doubled < 0 else ""
    doubled = abs(doubled)
    return f"{sign}{doubled // 200}.{(doubled % 200) * 5:03d}"


def format_time(t: float) -> str:
    return f"{t:.3f}"


class BadRequest(Exception):
    pass


def _error(status: int, reason: str, detail: str = "") -> Response:
    body = (("error", reason),) + ((("detail", detail),) if detail else ())
    return Response(status, body)


def _int(value: str | None, name: str) -> int:
    if value is None:
        raise BadRequest(f"missing {name}")
    try:
        return int(value)
    except ValueError:
        raise BadRequest(f"bad {name}: {value!r}") from None


def _float(value: str | None, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise BadRequest(f"bad {name}: {value!r}") from None


class ExchangeService:
    def __init__(self, exchange: Exchange):
        self.exchange = exchange
        self.requests = 0

    def handle(self, raw: bytes) -> bytes:
        self.requests += 1
        try:
            request = decode_request(raw)
        except ProtocolError as exc:
            return encode_response(_error(400, "protocol_error", str(exc)))
        return encode_response(self.dispatch(request))

    def dispatch(self, req: Request) -> Response:
        parts = req.path.strip("/").split("/")
        route = parts[0]
        try:
            if req.method == "POST":
                if len(parts) != 1 or route not in ("order", "cancel"):
                    return _error(404, "not_found", req.path)
                if req.account is None:
                    raise BadRequest("missing X-Account header")
                return self._order(req) if route == "order" else self._cancel(req)
            if req.method != "GET":
                return _error(405, "method_not_allowed", req.method)
            if route == "clock" and len(parts) == 1:
                return self._clock()
            if len(parts) != 2 or route not in ("quote", "depth", "history", "volume", "account"):
                return _error(404, "not_found", req.path)
            key = _int(parts[1], "path id")
            if route == "quote":
                return self._quote(key)
            if route == "depth":
                return self._depth(key, _int(req.param("levels", "10"), "levels"))
            if route == "history":
                return self._history(key, req)
            if route == "volume":
                return Response(200, (("asset", str(key)), ("volume", str(self.exchange.volume(key)))))
            return self._account(req, key)
        except ExchangeError as exc:
            return _error(_STATUS.get(exc.reason, 400), exc.reason.value)
        except BadRequest as exc:
            return _error(400, "bad_request", str(exc))

    # ------------------------------------------------------------ handlers

    def _order(self, req: Request) -> Response:
        try:
            side = Side(req.field("side"))
            kind = OrderKind(req.field("kind"))
        except ValueError:
            raise BadRequest("bad side or kind") from None
        price_text = req.field("price", "")
        try:
            price = parse_price(price_text) if price_text else None
        except ValueError:
            raise BadRequest(f"bad price {price_text!r}") from None
        if kind is OrderKind.CANCEL:
            raise BadRequest("cancels go to /cancel")
        ack = self.exchange.submit_order(req.account, _int(req.field("asset"), "asset"), side, kind,
                                         _int(req.field("qty"), "qty"), price)
        if not ack.accepted:
            return Response(200, (("accepted", "false"), ("reason", ack.reason.value)))
        return Response(200, (
            ("accepted", "true"),
            ("order_id", str(ack.order_id)),
            ("filled", str(ack.filled)),
            ("notional", format_price(ack.notional)),
            ("resting", str(ack.resting)),
        ))

    def _cancel(self, req: Request) -> Response:
        qty = self.exchange.cancel_order(req.account, _int(req.field("order_id"), "order_id"))
        return Response(200, (("cancelled", str(qty)),))

    def _clock(self) -> Response:
        ex = self.exchange
        return Response(200, (
            ("t", format_time(ex.clock.now())),
            ("open", "true" if ex.is_open and not ex.closed else "false"),
            ("t_close", repr(ex.t_close)),
        ))

    def _quote(self, asset: int) -> Response:
        info = self.exchange.query_market(asset)
        mid = info.mid
        return Response(200, (
            ("asset", str(asset)),
            ("bid", "" if info.bid is None else format_price(info.bid)),
            ("ask", "" if info.ask is None else format_price(info.ask)),
            ("mid", "" if mid is None else format_mid(mid)),
            ("last_mid", "" if info.last_mid is None else format_mid(info.last_mid)),
            ("volume", str(info.volume)),
            ("t", format_time(info.t)),
        ))

    def _depth(self, asset: int, levels: int) -> Response:
        if levels < 1:
            raise BadRequest("levels must be positive")
        bids, asks = self.exchange.query_depth(asset, levels)
        body = [("asset", str(asset))]
        body += [("bid", f"{format_price(lv.price)},{lv.quantity},{lv.order_count}") for lv in bids]
        body += [("ask", f"{format_price(lv.price)},{lv.quantity},{lv.order_count}") for lv in asks]
        return Response(200, tuple(body))

    def _history(self, asset: int, req: Request) -> Response:
        since = req.param("since")
        last = req.param("last")
        points = self.exchange.query_history(
            asset,
            since=_float(since, "since") if since is not None else float("-inf"),
            last=_int(last, "last") if last is not None else None,
        )
        body = [("asset", str(asset))]
        body += [("point", f"{format_time(t)},{format_mid(m)}") for t, m in points]
        return Response(200, tuple(body))

    def _account(self, req: Request, account_id: int) -> Response:
        if req.account is None:
            raise ExchangeError(Reason.NOT_OWNER, "anonymous request")
        acct = self.exchange.query_account(req.account, account_id)
        body = [
            ("account", str(acct.account_id)),
            ("kind", acct.kind.value),
            ("cash", format_price(acct.cash)),
            ("reserved_cash", format_price(acct.reserved_cash)),
        ]
        body += [("holding", f"{k},{h},{r}") for k, (h, r) in enumerate(zip(acct.holdings, acct.reserved_shares))]
        return Response(200, tuple(body))


# ---------------------------------------------------------------- sockets

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: ExchangeService = self.server.service
        sock = self.request
        self.server.track(sock)
        buffer = b""
        while True:
            try:
                n = message_length(buffer)
            except ProtocolError:
                return
            if n is None:
                try:
                    chunk = sock.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buffer += chunk
                continue
            raw, buffer = buffer[:n], buffer[n:]
            try:
                sock.sendall(service.handle(raw))
            except OSError:
                return


class ExchangeServer(socketserver.ThreadingTCPServer):
    """Threaded keep-alive TCP server; one thread per client connection."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: ExchangeService, address: tuple[str, int]):
        super().__init__(address, _Handler)
        self.service = service
        self._thread: threading.Thread | None = None
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    def track(self, sock: socket.socket) -> None:
        with self._conns_lock:
            self._conns.add(sock)

    def shutdown_request(self, request) -> None:
        with self._conns_lock:
            self._conns.discard(request)
        super().shutdown_request(request)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def start(self) -> ExchangeServer:
        self._thread = threading.Thread(target=self.serve_forever, name="exchange-server", daemon=True)
        self._thread.start()
        log.info("exchange listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        """Stop listening and drop every open client connection."""
        self.shutdown()
        self.server_close()
        with self._conns_lock:
            conns, self._conns = list(self._conns), set()
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join()


def parse_listen_addr(text: str | None = None) -> tuple[str, int]:
    text = text if text is not None else os.environ.get(LISTEN_ENV, DEFAULT_LISTEN)
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def serve(exchange: Exchange, address: tuple[str, int] | None = None) -> ExchangeServer:
    """Start a background server bound to ``address`` (default from ``SIM_LISTEN_ADDR``)."""
    return ExchangeServer(ExchangeService(exchange), address or parse_listen_addr()).start()
