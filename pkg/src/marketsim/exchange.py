"""Brokerage/exchange: accounts, escrow, order routing, settlement and the event log."""
from __future__ import annotations

import bisect
import json
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .book import Level, Order, OrderBook, OrderKind, Side, Trade, format_price, parse_price
from .clock import SimClock


class AccountKind(str, Enum):
    STANDARD = "standard"
    DEALER = "dealer"


class Reason(str, Enum):
    INSUFFICIENT_FUNDS = "insufficient_funds"
    INSUFFICIENT_SHARES = "insufficient_shares"
    MARKET_CLOSED = "market_closed"
    UNKNOWN_ASSET = "unknown_asset"
    UNKNOWN_ACCOUNT = "unknown_account"
    NOT_OWNER = "not_owner"
    INVALID_ORDER = "invalid_order"


class ExchangeError(Exception):
    """A query or cancel the exchange refuses; ``reason`` is a :class:`Reason`."""

    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(f"{reason.value}{': ' + detail if detail else ''}")
        self.reason = reason


class ReplayError(Exception):
    def __init__(self, position: int, message: str):
        super().__init__(f"event #{position}: {message}")
        self.position = position


@dataclass
class Account:
    account_id: int
    kind: AccountKind
    cash: int
    holdings: list[int]
    reserved_cash: int = 0
    reserved_shares: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.reserved_shares:
            self.reserved_shares = [0] * len(self.holdings)

    @property
    def dealer(self) -> bool:
        return self.kind is AccountKind.DEALER

    @property
    def available_cash(self) -> int:
        return self.cash - self.reserved_cash

    def available_shares(self, asset: int) -> int:
        return self.holdings[asset] - self.reserved_shares[asset]

    def copy(self) -> Account:
        return Account(self.account_id, self.kind, self.cash, list(self.holdings), self.reserved_cash,
                       list(self.reserved_shares))


@dataclass(frozen=True, slots=True)
class Ack:
    accepted: bool
    reason: Reason | None = None
    order_id: int | None = None
    filled: int = 0
    notional: int = 0
    resting: int = 0


@dataclass(frozen=True, slots=True)
class MarketInfo:
    asset: int
    bid: int | None
    ask: int | None
    volume: int
    t: float
    last_mid: float | None = None  # most recent two-sided mid, survives a side emptying

    @property
    def mid(self) -> float | None:
        """Midpoint in ticks."""
        if self.bid is None or self.ask is None:
            return None
        return (self.bid + self.ask) / 2


@dataclass(frozen=True, slots=True)
class LedgerEvent:
    seq: int
    t: float
    kind: str
    data: tuple[tuple[str, str], ...] = ()

    def get(self, key: str) -> str:
        for k, v in self.data:
            if k == key:
                return v
        raise KeyError(key)

    def to_line(self) -> str:
        record = {"seq": str(self.seq), "t": f"{self.t:.3f}", "kind": self.kind}
        record.update(self.data)
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> LedgerEvent:
        record = json.loads(line)
        seq = int(record.pop("seq"))
        t = float(record.pop("t"))
        kind = record.pop("kind")
        return cls(seq, t, kind, tuple((k, str(v)) for k, v in record.items()))


@dataclass
class _Live:
    account_id: int
    asset: int
    side: Side
    price: int
    remaining: int


def _fmt_t(t: float) -> str:
    return f"{t:.3f}"


class Exchange:
    """Central order-processing service.

    Every mutating call runs under one lock, which serializes each asset's
    pipeline and gives the event log a single total order. Market views are
    immutable objects swapped in after each operation, so readers never block.
    """

    def __init__(self, n_assets: int, clock: SimClock | None = None, t_close: float = math.inf,
                 log_path: str | Path | None = None):
        self.n_assets = n_assets
        self.clock = clock or SimClock()
        self.t_close = t_close
        self.books = [OrderBook(k) for k in range(n_assets)]
        self.accounts: dict[int, Account] = {}
        self.events: list[LedgerEvent] = []
        self.is_open = False
        self.closed = False
        self.next_order_id = 1
        self.next_account_id = 1
        self.seq = 0
        self._live: dict[int, _Live] = {}
        self._volume = [0] * n_assets
        self._history_t: list[list[float]] = [[] for _ in range(n_assets)]
        self._history_mid: list[list[float]] = [[] for _ in range(n_assets)]
        self._market = [MarketInfo(k, None, None, 0, self.clock.now()) for k in range(n_assets)]
        self._lock = threading.RLock()
        self._sink = open(log_path, "a", encoding="utf-8") if log_path else None

    # ------------------------------------------------------------------ log

    def _emit(self, kind: str, **data) -> LedgerEvent:
        self.seq += 1
        event = LedgerEvent(self.seq, self.clock.now(), kind, tuple((k, str(v)) for k, v in data.items()))
        self.events.append(event)
        if self._sink is not None:
            self._sink.write(event.to_line() + "\n")
        return event

    def flush(self) -> None:
        if self._sink is not None:
            self._sink.flush()

    def close_log(self) -> None:
        if self._sink is not None:
            self._sink.close()
            self._sink = None

    def log_lines(self) -> list[str]:
        return [e.to_line() for e in self.events]

    # ------------------------------------------------------------- accounts

    def open_account(self, kind: AccountKind, cash: int = 0, holdings: Sequence[int] | None = None,
                     account_id: int | None = None) -> Account:
        with self._lock:
            holdings = list(holdings) if holdings is not None else [0] * self.n_assets
            if len(holdings) != self.n_assets:
                raise ValueError("holdings must cover every asset")
            if kind is AccountKind.STANDARD and (cash < 0 or min(holdings, default=0) < 0):
                raise ValueError("standard accounts cannot start negative")
            if account_id is None:
                account_id = self.next_account_id
            if account_id in self.accounts:
                raise ValueError(f"account {account_id} exists")
            self.next_account_id = max(self.next_account_id, account_id + 1)
            account = Account(account_id, kind, cash, holdings)
            self.accounts[account_id] = account
            self._emit("account_opened", account=account_id, account_kind=kind.value, cash=format_price(cash),
                       holdings=",".join(map(str, holdings)))
            return account

    def open_market(self) -> None:
        with self._lock:
            self.is_open = True
            self._emit("market_open", assets=self.n_assets, t_close=repr(self.t_close))
            self._refresh_all()

    # --------------------------------------------------------------- orders

    def _reject(self, account_id, asset, side, kind, quantity, price, reason: Reason) -> Ack:
        self._emit("order_rejected", account=account_id, asset=asset, side=side.value, order_kind=kind.value,
                   qty=quantity, price="" if price is None else format_price(price), reason=reason.value)
        return Ack(False, reason)

    def submit_order(self, account_id: int, asset: int, side: Side, kind: OrderKind, quantity: int,
                     limit_price: int | None = None) -> Ack:
        """Check, escrow, match and settle one order; all trades settle before returning."""
        with self._lock:
            side, kind = Side(side), OrderKind(kind)
            if kind is OrderKind.CANCEL:
                raise ValueError("use cancel_order for cancels")
            if not self.is_open or self.closed or self.clock.now() >= self.t_close:
                return self._reject(account_id, asset, side, kind, quantity, limit_price, Reason.MARKET_CLOSED)
            if not 0 <= asset < self.n_assets:
                return self._reject(account_id, asset, side, kind, quantity, limit_price, Reason.UNKNOWN_ASSET)
            account = self.accounts.get(account_id)
            if account is None:
                return self._reject(account_id, asset, side, kind, quantity, limit_price, Reason.UNKNOWN_ACCOUNT)
            if quantity < 1 or (kind is OrderKind.LIMIT and (limit_price is None or limit_price <= 0)):
                return self._reject(account_id, asset, side, kind, quantity, limit_price, Reason.INVALID_ORDER)
            if kind is OrderKind.MARKET:
                limit_price = None
            book = self.books[asset]

            reserve = 0
            budget = None
            if not account.dealer:
                if side is Side.BUY:
                    if kind is OrderKind.LIMIT:
                        reserve = quantity * limit_price
                    else:
                        best_ask = book.asks.best()
                        reserve = 0 if best_ask is None else quantity * best_ask
                        budget = reserve
                    if reserve > account.available_cash:
                        return self._reject(account_id, asset, side, kind, quantity, limit_price,
                                            Reason.INSUFFICIENT_FUNDS)
                    account.reserved_cash += reserve
                else:
                    if quantity > account.available_shares(asset):
                        return self._reject(account_id, asset, side, kind, quantity, limit_price,
                                            Reason.INSUFFICIENT_SHARES)
                    reserve = quantity
                    account.reserved_shares[asset] += quantity

            order_id = self.next_order_id
            self.next_order_id += 1
            self._emit("order_accepted", order_id=order_id, account=account_id, asset=asset, side=side.value,
                       order_kind=kind.value, qty=quantity,
                       price="" if limit_price is None else format_price(limit_price), reserve=reserve)
            order = Order(order_id, account_id, asset, side, kind, quantity, limit_price)
            if kind is OrderKind.LIMIT:
                trades, rest = book.place_limit(order)
                unfilled = 0
            elif budget == 0:
                # standard market buy into an empty ask side: nothing to escrow or fill
                trades, rest, unfilled = [], None, quantity
            else:
                trades, unfilled = book.place_market(order, budget=budget)
                rest = None
            filled = notional = 0
            for trade in trades:
                self._settle(trade, taker_side=side, taker_limit=limit_price)
                filled += trade.quantity
                notional += trade.quantity * trade.price
            if not account.dealer and kind is OrderKind.MARKET:
                # release escrow the sweep did not consume
                if side is Side.BUY:
                    account.reserved_cash -= reserve - notional
                else:
                    account.reserved_shares[asset] -= unfilled
            resting = 0
            if rest is not None:
                resting = rest.quantity
                self._live[order_id] = _Live(account_id, asset, side, limit_price, resting)
            self._refresh(asset)
            return Ack(True, None, order_id, filled, notional, resting)

    def settle_trade(self, trade: Trade, taker_side: Side, taker_limit: int | None) -> None:
        """Apply one trade to both accounts and release the escrow it consumed."""
        with self._lock:
            self._settle(trade, taker_side, taker_limit)

    def _settle(self, trade: Trade, taker_side: Side, taker_limit: int | None) -> None:
        qty, price, asset = trade.quantity, trade.price, trade.asset
        value = qty * price
        maker = self.accounts[trade.maker_account]
        taker = self.accounts[trade.taker_account]
        if taker_side is Side.BUY:
            buyer, seller = taker, maker
            buyer_release = value if taker_limit is None else qty * taker_limit
        else:
            buyer, seller = maker, taker
            buyer_release = value  # resting bids escrow at their own price
        if not buyer.dealer:
            buyer.reserved_cash -= buyer_release
        buyer.cash -= value
        buyer.holdings[asset] += qty
        if not seller.dealer:
            seller.reserved_shares[asset] -= qty
        seller.cash += value
        seller.holdings[asset] -= qty
        self._volume[asset] += qty
        live = self._live.get(trade.maker_order_id)
        if live is not None:
            live.remaining -= qty
            if live.remaining == 0:
                del self._live[trade.maker_order_id]
        self._emit("trade_settled", trade_id=trade.trade_id, asset=asset, price=format_price(price), qty=qty,
                   maker_order=trade.maker_order_id, taker_order=trade.taker_order_id,
                   maker_acct=trade.maker_account, taker_acct=trade.taker_account)

    def cancel_order(self, account_id: int, order_id: int) -> int:
        """Remove a resting order; returns the cancelled quantity (0 if already gone)."""
        with self._lock:
            live = self._live.get(order_id)
            if live is None:
                return 0
            if live.account_id != account_id:
                raise ExchangeError(Reason.NOT_OWNER, f"order {order_id}")
            return self._cancel(order_id, live)

    def _cancel(self, order_id: int, live: _Live) -> int:
        qty = self.books[live.asset].cancel(order_id)
        del self._live[order_id]
        account = self.accounts[live.account_id]
        if not account.dealer:
            if live.side is Side.BUY:
                account.reserved_cash -= qty * live.price
            else:
                account.reserved_shares[live.asset] -= qty
        self._emit("order_cancelled", order_id=order_id, account=live.account_id, asset=live.asset, qty=qty)
        self._refresh(live.asset)
        return qty

    def close_market(self) -> None:
        """Cancel every resting order and stop accepting new ones."""
        with self._lock:
            if self.closed:
                return
            # closed first, so the sweep does not write mid-price history
            self.closed = True
            for order_id in sorted(self._live):
                self._cancel(order_id, self._live[order_id])
            self._emit("market_close")
            self.flush()

    def live_orders(self, account_id: int) -> list[int]:
        with self._lock:
            return [oid for oid, live in self._live.items() if live.account_id == account_id]

    # -------------------------------------------------------------- queries

    def _refresh(self, asset: int) -> None:
        quote = self.books[asset].best_quote()
        t = self.clock.now()
        mids = self._history_mid[asset]
        mid = None if quote.bid is None or quote.ask is None else (quote.bid + quote.ask) / 2
        if mid is not None and not self.closed and (not mids or mids[-1] != mid):
            self._history_t[asset].append(t)
            mids.append(mid)
        self._market[asset] = MarketInfo(asset, quote.bid, quote.ask, self._volume[asset], t,
                                         mids[-1] if mids else None)

    def _refresh_all(self) -> None:
        for k in range(self.n_assets):
            self._refresh(k)

    def _check_asset(self, asset: int) -> None:
        if not 0 <= asset < self.n_assets:
            raise ExchangeError(Reason.UNKNOWN_ASSET, str(asset))

    def query_market(self, asset: int) -> MarketInfo:
        self._check_asset(asset)
        return self._market[asset]

    def query_history(self, asset: int, since: float = -math.inf, last: int | None = None) -> list[tuple[float, float]]:
        """``(t, mid)`` pairs (mid in ticks) recorded at or after ``since``; optionally only the newest ``last``."""
        self._check_asset(asset)
        times, mids = self._history_t[asset], self._history_mid[asset]
        n = len(mids)
        start = bisect.bisect_left(times, since, 0, n)
        if last is not None:
            start = max(start, n - last)
        return list(zip(times[start:n], mids[start:n]))

    def query_depth(self, asset: int, levels: int) -> tuple[list[Level], list[Level]]:
        self._check_asset(asset)
        with self._lock:
            return self.books[asset].depth_snapshot(levels)

    def query_account(self, requester: int, account_id: int) -> Account:
        account = self.accounts.get(account_id)
        if account is None:
            raise ExchangeError(Reason.UNKNOWN_ACCOUNT, str(account_id))
        if requester != account_id:
            raise ExchangeError(Reason.NOT_OWNER, str(account_id))
        with self._lock:
            return account.copy()

    def volume(self, asset: int) -> int:
        self._check_asset(asset)
        return self._volume[asset]

    # ---------------------------------------------------------------- audit

    def totals(self) -> tuple[int, list[int]]:
        with self._lock:
            cash = sum(a.cash for a in self.accounts.values())
            shares = [sum(a.holdings[k] for a in self.accounts.values()) for k in range(self.n_assets)]
            return cash, shares

    def state_fingerprint(self) -> dict:
        """Everything replay must reproduce, as plain data."""
        with self._lock:
            return {
                "accounts": {aid: (a.kind.value, a.cash, tuple(a.holdings), a.reserved_cash, tuple(a.reserved_shares))
                             for aid, a in sorted(self.accounts.items())},
                "books": [[(o.order_id, o.account_id, o.side.value, o.limit_price, o.quantity, o.submitted_seq)
                           for o in b.resting_orders()] for b in self.books],
                "volume": list(self._volume),
                "next_order_id": self.next_order_id,
                "seq": self.seq,
                "closed": self.closed,
            }

    # ------------------------------------------------------------ snapshots

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "n_assets": str(self.n_assets),
                "t_close": repr(self.t_close),
                "t": _fmt_t(self.clock.now()),
                "seq": str(self.seq),
                "next_order_id": str(self.next_order_id),
                "next_account_id": str(self.next_account_id),
                "is_open": self.is_open,
                "closed": self.closed,
                "accounts": [
                    {"id": str(a.account_id), "kind": a.kind.value, "cash": format_price(a.cash),
                     "holdings": [str(h) for h in a.holdings], "reserved_cash": format_price(a.reserved_cash),
                     "reserved_shares": [str(h) for h in a.reserved_shares]}
                    for a in self.accounts.values()
                ],
                "books": [
                    {"next_seq": str(b.next_seq), "next_trade_seq": str(b.next_trade_seq),
                     "orders": [[str(o.order_id), str(o.account_id), o.side.value, format_price(o.limit_price),
                                 str(o.quantity), str(o.submitted_seq)] for o in b.resting_orders()]}
                    for b in self.books
                ],
                "volume": [str(v) for v in self._volume],
                "history": [[[_fmt_t(t), repr(m)] for t, m in zip(ts, ms)]
                            for ts, ms in zip(self._history_t, self._history_mid)],
            }

    def save_snapshot(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), indent=1), encoding="utf-8")

    @classmethod
    def from_snapshot(cls, snap: dict, clock: SimClock | None = None) -> Exchange:
        clock = clock or SimClock(start=float(snap["t"]))
        ex = cls(int(snap["n_assets"]), clock=clock, t_close=float(snap["t_close"]))
        ex.seq = int(snap["seq"])
        ex.next_order_id = int(snap["next_order_id"])
        ex.next_account_id = int(snap["next_account_id"])
        ex.is_open = bool(snap["is_open"])
        ex.closed = bool(snap["closed"])
        for a in snap["accounts"]:
            ex.accounts[int(a["id"])] = Account(
                int(a["id"]), AccountKind(a["kind"]), parse_price(a["cash"]), [int(h) for h in a["holdings"]],
                parse_price(a["reserved_cash"]), [int(h) for h in a["reserved_shares"]])
        for k, b in enumerate(snap["books"]):
            orders = []
            for oid, acct, side, price, qty, seq in b["orders"]:
                order = Order(int(oid), int(acct), k, Side(side), OrderKind.LIMIT, int(qty), parse_price(price),
                              None, int(seq))
                orders.append(order)
                ex._live[order.order_id] = _Live(order.account_id, k, order.side, order.limit_price, order.quantity)
            ex.books[k].restore(orders, int(b["next_seq"]), int(b["next_trade_seq"]))
        ex._volume = [int(v) for v in snap["volume"]]
        for k, pts in enumerate(snap["history"]):
            ex._history_t[k] = [float(t) for t, _ in pts]
            ex._history_mid[k] = [float(m) for _, m in pts]
        for k in range(ex.n_assets):
            q = ex.books[k].best_quote()
            ex._market[k] = MarketInfo(k, q.bid, q.ask, ex._volume[k], clock.now(),
                                       ex._history_mid[k][-1] if ex._history_mid[k] else None)
        return ex


def read_log(path: str | Path) -> Iterator[str]:
    """Raw non-blank lines; :func:`replay_log` parses them and reports bad ones by position."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield line


def replay_log(events: Iterable[LedgerEvent | str], snapshot: dict | None = None, n_assets: int = 0) -> Exchange:
    """Rebuild an exchange by re-executing every command in the log.

    Commands (account openings, submissions, cancels, open/close) are re-run in
    sequence order; the events they regenerate must equal the logged ones, so
    a corrupt, reordered or foreign record aborts replay with its position.
    Replay proceeds one whole operation at a time.
    """
    clock = SimClock(start=float(snapshot["t"]) if snapshot else 0.0)
    if snapshot is not None:
        ex = Exchange.from_snapshot(snapshot, clock=clock)
    else:
        ex = Exchange(n_assets, clock=clock)
    expected: list[LedgerEvent] = []
    last_seq = ex.seq
    for pos, raw in enumerate(events):
        try:
            event = LedgerEvent.from_line(raw) if isinstance(raw, str) else raw
        except (ValueError, KeyError) as exc:
            raise ReplayError(pos, f"unreadable record ({exc})") from None
        if event.seq <= last_seq:
            raise ReplayError(pos, f"sequence {event.seq} not after {last_seq}")
        last_seq = event.seq
        if expected:
            if expected[0].to_line() != event.to_line():
                raise ReplayError(pos, f"diverged: expected {expected[0].to_line()}")
            expected.pop(0)
            continue
        if event.seq != ex.seq + 1:
            raise ReplayError(pos, f"gap before sequence {event.seq}")
        if event.t < clock.now():
            raise ReplayError(pos, "timestamp moves backwards")
        clock.advance_to(event.t)
        mark = len(ex.events)
        try:
            _apply(ex, event)
        except (KeyError, ValueError, ExchangeError) as exc:
            raise ReplayError(pos, f"cannot apply {event.kind} ({exc})") from None
        produced = ex.events[mark:]
        if not produced or produced[0].to_line() != event.to_line():
            got = produced[0].to_line() if produced else "nothing"
            raise ReplayError(pos, f"diverged: replay produced {got}")
        expected = produced[1:]
    # a log cut inside an operation leaves ``expected`` non-empty; those
    # effects were applied as part of the whole operation
    return ex


def _apply(ex: Exchange, event: LedgerEvent) -> None:
    kind = event.kind
    if kind == "account_opened":
        holdings = [int(h) for h in event.get("holdings").split(",")] if event.get("holdings") else []
        if ex.n_assets == 0 and not ex.accounts and holdings:
            _resize(ex, len(holdings))
        ex.open_account(AccountKind(event.get("account_kind")), parse_price(event.get("cash")), holdings,
                        account_id=int(event.get("account")))
    elif kind == "market_open":
        if ex.n_assets == 0:
            _resize(ex, int(event.get("assets")))
        ex.t_close = float(event.get("t_close"))
        ex.open_market()
    elif kind in ("order_accepted", "order_rejected"):
        price = event.get("price")
        ex.submit_order(int(event.get("account")), int(event.get("asset")), Side(event.get("side")),
                        OrderKind(event.get("order_kind")), int(event.get("qty")),
                        parse_price(price) if price else None)
    elif kind == "order_cancelled":
        order_id = int(event.get("order_id"))
        live = ex._live.get(order_id)
        if live is None:
            raise KeyError(f"order {order_id} is not resting")
        with ex._lock:
            ex._cancel(order_id, live)
    elif kind == "market_close":
        ex.close_market()
    else:
        raise ValueError(f"{kind} cannot start an operation")


def _resize(ex: Exchange, n_assets: int) -> None:
    ex.n_assets = n_assets
    ex.books = [OrderBook(k) for k in range(n_assets)]
    ex._volume = [0] * n_assets
    ex._history_t = [[] for _ in range(n_assets)]
    ex._history_mid = [[] for _ in range(n_assets)]
    ex._market = [MarketInfo(k, None, None, 0, ex.clock.now()) for k in range(n_assets)]


def conservation_audit(exchange: Exchange, initial: tuple[int, Sequence[int]]) -> tuple[int, list[int]]:
    """Current totals minus ``initial`` totals: ``(cash_delta, per-asset share_delta)``."""
    cash, shares = exchange.totals()
    cash0, shares0 = initial
    return cash - cash0, [s - s0 for s, s0 in zip(shares, shares0)]
