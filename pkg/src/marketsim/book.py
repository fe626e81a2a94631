"""Per-asset limit order book with price-time priority matching.

Prices are integer ticks (one tick = 0.01 currency units). Marketable orders
execute at the resting order's price.
"""
from __future__ import annotations

import bisect
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum


TICK = 0.01
TICKS_PER_UNIT = 100


class Side(str, Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def opposite(self) -> Side:
        return Side.SELL if self is Side.BUY else Side.BUY


class OrderKind(str, Enum):
    LIMIT = "limit"
    MARKET = "market"
    CANCEL = "cancel"


class InvalidOrder(ValueError):
    """Raised for orders the book refuses outright; the book is left untouched."""


@dataclass(slots=True)
class Order:
    order_id: int
    account_id: int
    asset: int
    side: Side
    kind: OrderKind
    quantity: int
    limit_price: int | None = None
    target_order_id: int | None = None
    submitted_seq: int = 0


@dataclass(slots=True)
class Trade:
    trade_id: int
    asset: int
    price: int
    quantity: int
    maker_order_id: int
    taker_order_id: int
    maker_account: int
    taker_account: int
    seq: int

    def to_record(self) -> str:
        """One line of the trade log: ``seq,asset,price,qty,maker_order,taker_order,maker_acct,taker_acct``."""
        p = self.price
        return "%d,%d,%d.%02d,%d,%d,%d,%d,%d" % (
            self.seq, self.asset, p // 100, p % 100, self.quantity,
            self.maker_order_id, self.taker_order_id, self.maker_account, self.taker_account,
        )


@dataclass(frozen=True, slots=True)
class Level:
    price: int
    quantity: int
    order_count: int


@dataclass(frozen=True, slots=True)
class Quote:
    bid: int | None
    ask: int | None

    @property
    def mid(self) -> float | None:
        """Midpoint in ticks (may be a half tick)."""
        if self.bid is None or self.ask is None:
            return None
        return (self.bid + self.ask) / 2


def format_price(ticks: int) -> str:
    sign = "-" if ticks < 0 else ""
    whole, frac = divmod(abs(ticks), TICKS_PER_UNIT)
    return f"{sign}{whole}.{frac:02d}"


def parse_price(text: str) -> int:
    """Parse a decimal currency string into whole ticks; sub-tick digits are an error."""
    text = text.strip()
    neg = text.startswith("-")
    if neg or text.startswith("+"):
        text = text[1:]
    whole, _, frac = text.partition(".")
    if not whole.isdigit() or (frac and not frac.isdigit()):
        raise ValueError(f"not a price: {text!r}")
    frac = frac.rstrip("0")
    if len(frac) > 2:
        raise ValueError(f"price finer than one tick: {text!r}")
    ticks = int(whole) * TICKS_PER_UNIT + int(frac.ljust(2, "0") or 0)
    return -ticks if neg else ticks


def to_ticks(price: float, side: Side) -> int:
    """Round a currency price to the tick grid toward the passive side.

    Buys round down and sells round up, so an agent never quotes more
    aggressively than it computed.
    """
    raw = round(price * TICKS_PER_UNIT, 6)
    return math.floor(raw) if side is Side.BUY else math.ceil(raw)


class _Resting:
    __slots__ = ("order_id", "account_id", "side", "price", "remaining", "seq")

    def __init__(self, order_id: int, account_id: int, side: Side, price: int, remaining: int, seq: int):
        self.order_id = order_id
        self.account_id = account_id
        self.side = side
        self.price = price
        self.remaining = remaining
        self.seq = seq


@dataclass
class _BookSide:
    descending: bool
    levels: dict[int, OrderedDict[int, _Resting]] = field(default_factory=dict)
    # ascending on both sides; bids read from the end
    prices: list[int] = field(default_factory=list)

    def best(self) -> int | None:
        if not self.prices:
            return None
        return self.prices[-1] if self.descending else self.prices[0]

    def add(self, entry: _Resting) -> None:
        level = self.levels.get(entry.price)
        if level is None:
            level = self.levels[entry.price] = OrderedDict()
            bisect.insort(self.prices, entry.price)
        level[entry.order_id] = entry

    def drop_level(self, price: int) -> None:
        del self.levels[price]
        self.prices.remove(price)

    def iter_prices(self):
        return reversed(self.prices) if self.descending else iter(self.prices)


class OrderBook:
    """Continuous double auction book for one asset.

    All mutating calls are expected to be serialized by the caller.
    """

    def __init__(self, asset: int = 0):
        self.asset = asset
        self.bids = _BookSide(descending=True)
        self.asks = _BookSide(descending=False)
        self.next_seq = 1
        self.next_trade_seq = 1
        self._index: dict[int, _Resting] = {}

    def _side(self, side: Side) -> _BookSide:
        return self.bids if side is Side.BUY else self.asks

    def _stamp(self, order: Order) -> None:
        order.submitted_seq = self.next_seq
        self.next_seq += 1

    def _sweep(self, order: Order, quantity: int, limit: int | None, budget: int | None) -> tuple[list[Trade], int]:
        """Match ``quantity`` against the opposite side; returns trades and unfilled quantity."""
        buying = order.side is Side.BUY
        book = self.asks if buying else self.bids
        trades: list[Trade] = []
        remaining = quantity
        prices = book.prices
        levels = book.levels
        index = self._index
        asset = self.asset
        oid, acct = order.order_id, order.account_id
        while remaining > 0 and prices:
            price = prices[0] if buying else prices[-1]
            if limit is not None and (price > limit if buying else price < limit):
                break
            cap = remaining if budget is None else min(remaining, budget // price)
            if cap <= 0:
                break
            level = levels[price]
            while cap > 0 and level:
                maker = next(iter(level.values()))
                qty = cap if cap < maker.remaining else maker.remaining
                maker.remaining -= qty
                remaining -= qty
                cap -= qty
                if budget is not None:
                    budget -= qty * price
                seq = self.next_trade_seq
                self.next_trade_seq = seq + 1
                trades.append(Trade(seq, asset, price, qty, maker.order_id, oid, maker.account_id, acct, seq))
                if maker.remaining == 0:
                    level.popitem(last=False)
                    del index[maker.order_id]
            if not level:
                del levels[price]
                if buying:
                    del prices[0]
                else:
                    prices.pop()
        return trades, remaining

    def place_limit(self, order: Order) -> tuple[list[Trade], Order | None]:
        if order.kind is not OrderKind.LIMIT:
            raise InvalidOrder("not a limit order")
        price = order.limit_price
        if order.quantity < 1:
            raise InvalidOrder("non-positive quantity")
        if price is None or price <= 0:
            raise InvalidOrder("non-positive price")
        seq = order.submitted_seq = self.next_seq
        self.next_seq = seq + 1
        if order.side is Side.BUY:
            opposite, own = self.asks.prices, self.bids
            marketable = bool(opposite) and opposite[0] <= price
        else:
            opposite, own = self.bids.prices, self.asks
            marketable = bool(opposite) and opposite[-1] >= price
        if marketable:
            trades, remaining = self._sweep(order, order.quantity, price, None)
            if remaining == 0:
                return trades, None
        else:
            trades, remaining = [], order.quantity
        entry = _Resting(order.order_id, order.account_id, order.side, price, remaining, seq)
        own.add(entry)
        self._index[order.order_id] = entry
        rest = Order(order.order_id, order.account_id, order.asset, order.side, order.kind, remaining,
                     price, None, seq)
        return trades, rest

    def place_market(self, order: Order, budget: int | None = None) -> tuple[list[Trade], int]:
        """Sweep the opposite side; the unfilled remainder is dropped.

        ``budget`` caps the notional (in ticks times shares) a buy may spend.
        Returns the trades and the unfilled quantity.
        """
        if order.kind is not OrderKind.MARKET:
            raise InvalidOrder("not a market order")
        if order.quantity < 1:
            raise InvalidOrder("non-positive quantity")
        self._stamp(order)
        return self._sweep(order, order.quantity, None, budget)

    def cancel(self, target_order_id: int) -> int:
        entry = self._index.pop(target_order_id, None)
        if entry is None:
            return 0
        side = self._side(entry.side)
        level = side.levels[entry.price]
        del level[target_order_id]
        if not level:
            side.drop_level(entry.price)
        return entry.remaining

    def resting(self, order_id: int) -> int:
        """Remaining quantity of a resting order, 0 if it is not in the book."""
        entry = self._index.get(order_id)
        return entry.remaining if entry is not None else 0

    def best_quote(self) -> Quote:
        return Quote(self.bids.best(), self.asks.best())

    def depth_snapshot(self, max_levels: int) -> tuple[list[Level], list[Level]]:
        if max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        out = []
        for side in (self.bids, self.asks):
            levels = []
            for price in side.iter_prices():
                if len(levels) == max_levels:
                    break
                level = side.levels[price]
                levels.append(Level(price, sum(o.remaining for o in level.values()), len(level)))
            out.append(levels)
        return out[0], out[1]

    def resting_orders(self) -> list[Order]:
        """Every resting order, in submission order."""
        orders = [
            Order(e.order_id, e.account_id, self.asset, e.side, OrderKind.LIMIT, e.remaining, e.price, None, e.seq)
            for e in self._index.values()
        ]
        orders.sort(key=lambda o: o.submitted_seq)
        return orders

    def restore(self, orders: list[Order], next_seq: int, next_trade_seq: int) -> None:
        """Rebuild resting state from a snapshot (orders in submission order)."""
        for o in orders:
            entry = _Resting(o.order_id, o.account_id, o.side, o.limit_price, o.quantity, o.submitted_seq)
            self._side(o.side).add(entry)
            self._index[o.order_id] = entry
        self.next_seq = next_seq
        self.next_trade_seq = next_trade_seq

    def __len__(self) -> int:
        return len(self._index)
