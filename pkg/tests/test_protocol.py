import socket
import threading
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from marketsim.book import OrderKind, Side
from marketsim.client import (ClientSession, LoopbackTransport, Rejected, SocketTransport, TransportError)
from marketsim.clock import SimClock
from marketsim.exchange import AccountKind, Exchange
from marketsim.protocol import (ProtocolError, Request, Response, decode_request, decode_response, encode_request,
                                encode_response, message_length)
from marketsim.server import ExchangeServer, ExchangeService, format_mid, parse_listen_addr

GOLDEN = Path(__file__).parent / "golden"


def seeded_exchange():
    """Two assets; asset 1 quoted 99.50 / 100.50 by a dealer, plus a funded standard account."""
    ex = Exchange(2, clock=SimClock())
    dealer = ex.open_account(AccountKind.DEALER)
    trader = ex.open_account(AccountKind.STANDARD, 1_000_000, [50, 50])
    ex.open_market()
    ex.submit_order(dealer.account_id, 1, Side.BUY, OrderKind.LIMIT, 100, 9950)
    ex.submit_order(dealer.account_id, 1, Side.SELL, OrderKind.LIMIT, 100, 10050)
    return ex, dealer.account_id, trader.account_id


# ------------------------------------------------------------------ codec

def test_buy_limit_request_round_trip():
    req = Request("POST", "/order", (), 7, (("asset", "0"), ("side", "buy"), ("kind", "limit"), ("qty", "10"),
                                          ("price", "99.50")))
    assert decode_request(encode_request(req)) == req


def test_query_string_round_trip():
    req = Request("GET", "/history/0", (("since", "12.5"), ("last", "3")), 2)
    assert decode_request(encode_request(req)) == req


def test_truncated_response_body():
    raw = encode_response(Response(200, (("a", "1"), ("b", "2"))))
    with pytest.raises(ProtocolError) as err:
        decode_response(raw[:-3])
    assert err.value.offset == len(raw) - 3


@pytest.mark.parametrize("raw", [
    b"HTTP/1.1 200 OK\r\nContent-Length: 4\r\n\r\nabc\n",   # line without '='
    b"HTTP/1.1 200 OK\r\nContent-Length: 3\r\n\r\na=1",      # missing final newline
    b"HTTP/1.1 200 OK\r\nContent-Length: 4\r\n\r\na=1\nX",   # trailing bytes
    b"HTTP/1.1 OK\r\nContent-Length: 0\r\n\r\n",             # bad status line
    b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\n",             # unterminated header
    b"HTTP/1.1 200 OK\r\n\r\n",                              # no length
])
def test_malformed_responses(raw):
    with pytest.raises(ProtocolError):
        decode_response(raw)


def test_message_length_framing():
    one = encode_response(Response(200, (("k", "v"),)))
    assert message_length(one[:10]) is None
    assert message_length(one[:-1]) is None
    assert message_length(one + one) == len(one)


_text = st.text(alphabet=st.characters(blacklist_characters="\r\n", blacklist_categories=("Cs",)), max_size=12)
_key = _text.filter(lambda s: s and "=" not in s)


@given(st.integers(100, 599), st.lists(st.tuples(_key, _text), max_size=8))
def test_response_codec_identity(status, pairs):
    resp = Response(status, tuple(pairs))
    assert decode_response(encode_response(resp)) == resp


@given(st.sampled_from(["GET", "POST"]), st.lists(st.tuples(_key, _text), max_size=4),
       st.lists(st.tuples(_key, _text), max_size=4), st.none() | st.integers(0, 10**9))
def test_request_codec_identity(method, query, body, account):
    req = Request(method, "/order", tuple(query), account, tuple(body))
    assert decode_request(encode_request(req)) == req


def test_format_mid():
    assert format_mid(10000) == "100.000"
    assert format_mid(10000.5) == "100.005"
    assert format_mid(1) == "0.010"


# ----------------------------------------------------------------- golden

def test_golden_quote_bytes_from_live_service():
    ex, _, _ = seeded_exchange()
    request = (GOLDEN / "quote_1_request.http").read_bytes()
    assert encode_request(Request("GET", "/quote/1")) == request
    assert ExchangeService(ex).handle(request) == (GOLDEN / "quote_1_response.http").read_bytes()


def test_golden_quote_decodes():
    ex, _, _ = seeded_exchange()
    golden = (GOLDEN / "quote_1_response.http").read_bytes()

    class Replay:
        def roundtrip(self, payload, timeout):
            return golden

        def close(self):
            pass

    q = ClientSession(Replay()).get_quote(1)
    assert (q.bid, q.ask, q.mid, q.volume) == (9950, 10050, 10000, 0)


# ----------------------------------------------------------------- server

def test_routes_and_error_statuses():
    ex, dealer, trader = seeded_exchange()
    svc = ExchangeService(ex)

    def call(method, path, account=None, body=(), query=()):
        return decode_response(svc.handle(encode_request(Request(method, path, query, account, body))))

    assert call("GET", "/quote/9").get("error") == "unknown_asset"
    assert call("GET", "/quote/9").status == 404
    assert call("GET", f"/account/{dealer}", account=trader).status == 403
    assert call("GET", "/account/99", account=99).status == 404
    assert call("GET", "/nowhere").status == 404
    assert call("PUT", "/order").status == 405
    assert call("POST", "/order", body=(("asset", "1"),)).status == 400  # no account header
    assert call("POST", "/order", account=trader, body=(("asset", "1"), ("side", "up"))).status == 400
    assert decode_response(svc.handle(b"garbage")).get("error") == "protocol_error"
    clock = call("GET", "/clock")
    assert clock.get("open") == "true" and clock.get("t") == "0.000"
    depth = call("GET", "/depth/1", query=(("levels", "1"),))
    assert depth.get_all("bid") == ["99.50,100,1"] and depth.get_all("ask") == ["100.50,100,1"]
    hist = call("GET", "/history/1")
    assert hist.get_all("point")[-1] == "0.000,100.000"
    acct = call("GET", f"/account/{trader}", account=trader)
    assert acct.get("cash") == "10000.00" and acct.get_all("holding") == ["0,50,0", "1,50,0"]


def test_client_wrappers_over_loopback():
    ex, dealer, trader = seeded_exchange()
    s = ClientSession(LoopbackTransport(ExchangeService(ex)), trader)
    q = s.get_quote(1)
    assert (q.bid, q.ask, q.reference_mid, q.spread) == (9950, 10050, 10000, 100)
    ack = s.submit(1, Side.BUY, OrderKind.MARKET, 30)
    assert (ack.filled, ack.notional, ack.resting) == (30, 30 * 10050, 0)
    assert s.get_volume(1) == 30
    ack = s.submit(0, Side.BUY, OrderKind.LIMIT, 5, 1000)
    assert ack.resting == 5
    assert s.get_account().reserved_cash == 5000
    assert s.cancel_order(ack.order_id) == 5
    assert s.cancel_order(ack.order_id) == 0
    bids, asks = s.get_depth(1, 5)
    assert asks[0].quantity == 70
    assert s.get_clock().open
    assert s.get_history(1, last=1) == [(0.0, 10000.0)]
    with pytest.raises(Rejected) as err:
        s.submit(1, Side.BUY, OrderKind.LIMIT, 10**6, 10000)
    assert err.value.reason == "insufficient_funds"
    assert not isinstance(err.value, TransportError)
    with pytest.raises(Rejected) as err:
        s.get_account(dealer)
    assert err.value.reason == "not_owner"


def _script(session):
    session.get_quote(1)
    session.get_depth(1, 3)
    session.submit(1, Side.BUY, OrderKind.LIMIT, 10, 9960)
    session.submit(1, Side.SELL, OrderKind.MARKET, 4)
    session.get_history(1)
    session.get_account()
    session.get_volume(1)
    try:
        session.submit(0, Side.SELL, OrderKind.LIMIT, 10**6, 100)
    except Rejected:
        pass
    session.get_clock()


def test_loopback_and_socket_streams_are_byte_identical():
    ex_a, _, trader = seeded_exchange()
    ex_b, _, _ = seeded_exchange()
    tap_loop, tap_sock = [], []
    _script(ClientSession(LoopbackTransport(ExchangeService(ex_a), tap_loop), trader))
    server = ExchangeServer(ExchangeService(ex_b), ("127.0.0.1", 0)).start()
    try:
        session = ClientSession(SocketTransport(server.address, tap_sock), trader)
        _script(session)
        session.close()
    finally:
        server.stop()
    assert len(tap_loop) == 9
    assert tap_loop == tap_sock


def test_killed_server_gives_transport_error():
    ex, _, trader = seeded_exchange()
    server = ExchangeServer(ExchangeService(ex), ("127.0.0.1", 0)).start()
    session = ClientSession(SocketTransport(server.address), trader, request_timeout=500)
    assert session.get_quote(1).bid == 9950
    server.stop()
    with pytest.raises(TransportError):
        session.get_quote(1)
    with pytest.raises(TransportError):
        session.submit(1, Side.BUY, OrderKind.MARKET, 1)


def test_silent_server_times_out():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen()
    held = []
    t = threading.Thread(target=lambda: held.append(listener.accept()), daemon=True)
    t.start()
    try:
        session = ClientSession(SocketTransport(listener.getsockname()), 1, request_timeout=200, retry_budget=0)
        with pytest.raises(TransportError):
            session.get_clock()
    finally:
        listener.close()
        for conn, _ in held:
            conn.close()


class Flaky:
    """Loopback that drops the first ``failures`` calls."""

    def __init__(self, service, failures):
        self.inner = LoopbackTransport(service)
        self.failures = failures
        self.calls = 0

    def roundtrip(self, payload, timeout):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("dropped")
        return self.inner.roundtrip(payload, timeout)

    def close(self):
        pass


def test_queries_retry_but_orders_do_not():
    ex, _, trader = seeded_exchange()
    flaky = Flaky(ExchangeService(ex), failures=2)
    assert ClientSession(flaky, trader, retry_budget=2).get_quote(1).bid == 9950
    assert flaky.calls == 3
    flaky = Flaky(ExchangeService(ex), failures=1)
    with pytest.raises(TransportError):
        ClientSession(flaky, trader, retry_budget=2).submit(1, Side.BUY, OrderKind.MARKET, 1)
    assert flaky.calls == 1
    assert ex.volume(1) == 0


def test_parse_listen_addr(monkeypatch):
    assert parse_listen_addr("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_listen_addr(":81") == ("127.0.0.1", 81)
    monkeypatch.setenv("SIM_LISTEN_ADDR", "127.0.0.1:5555")
    assert parse_listen_addr() == ("127.0.0.1", 5555)
    with pytest.raises(ValueError):
        parse_listen_addr("nope")
