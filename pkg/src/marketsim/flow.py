"""Zero-intelligence order flow: liquidity takers, liquidity providers and market makers.

Each population is split into a pure function that turns a market view plus
random draws into order intents, and a small agent class that gathers the
view through a :class:`~marketsim.client.ClientSession`, draws from its own
random stream and sends the intents.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .book import OrderKind, Side, to_ticks
from .client import ClientSession, Rejected
from .estimators import realized_volatility

log = logging.getLogger(__name__)

TICK = 1
LP_WINDOW = 100
LP_SIGMA_FALLBACK = 0.005
EPS_MIN, EPS_MAX = -0.5, 1.0
ORDER_SIZE = 100


@dataclass(frozen=True, slots=True)
class OrderIntent:
    asset: int
    side: Side
    kind: OrderKind
    quantity: int
    price: int | None = None  # ticks, limit orders only


class ActivationGate:
    """Fires on a tick with probability ``1 / t_freq``."""

    __slots__ = ("t_freq", "rng", "threshold")

    def __init__(self, t_freq: float, rng: np.random.Generator):
        if t_freq < 1:
            raise ValueError("t_freq must be >= 1")
        self.t_freq = t_freq
        self.rng = rng
        self.threshold = 1.0 / t_freq

    def fires(self) -> bool:
        return self.rng.random() < self.threshold


def reference_spread(bid: int | None, ask: int | None) -> float:
    """Half the quoted spread in ticks, floored at one tick (one tick when a side is empty)."""
    if bid is None or ask is None:
        return TICK
    return max((ask - bid) / 2, TICK)


def dirichlet_weights(rng: np.random.Generator, k: int) -> np.ndarray:
    if k == 1:
        return np.ones(1)
    return rng.dirichlet(np.ones(k))


# ------------------------------------------------------------------ takers

def lt_orders(cash: int, holdings: Sequence[int], mids: Sequence[float | None], risk_fraction: float,
              weights: Sequence[float]) -> list[OrderIntent]:
    """Rebalance toward a random risky-wealth allocation using market orders.

    ``cash`` and ``mids`` are in ticks. Assets without a mid are skipped.
    """
    wealth = cash + sum(h * m for h, m in zip(holdings, mids) if m is not None)
    risky = risk_fraction * wealth
    out = []
    for k, (h, m) in enumerate(zip(holdings, mids)):
        if m is None or m <= 0:
            continue
        target = math.floor(weights[k] * risky / m)
        delta = target - h
        if delta > 0:
            out.append(OrderIntent(k, Side.BUY, OrderKind.MARKET, delta))
        elif delta < 0:
            out.append(OrderIntent(k, Side.SELL, OrderKind.MARKET, -delta))
    return out


# --------------------------------------------------------------- providers

def lp_limit_price(mid: float, shock: float) -> float:
    return mid * (1.0 + shock)


def lp_orders(cash: int, holdings: Sequence[int], quotes: Sequence[tuple[int | None, int | None, float | None]],
              limit_prices: Sequence[float | None], volume_draws: Sequence[float],
              cash_weights_for) -> list[OrderIntent]:
    """Limit orders for one provider activation.

    ``quotes`` holds ``(bid, ask, mid)`` per asset and ``limit_prices`` the
    randomized limit price per asset (all in ticks; an empty side is None
    and then only the limit price bounds the order). ``volume_draws[k]`` is
    the uniform fraction of holdings offered when the sell branch fires.
    ``cash_weights_for(n)`` returns the cash split over ``n`` buy-eligible
    assets; it is only called when at least one asset is eligible.
    """
    out = []
    eligible = []
    for k, (h, (bid, ask, mid), pl) in enumerate(zip(holdings, quotes, limit_prices)):
        if pl is None or mid is None:
            continue
        if h > 0 and mid < pl:
            qty = math.floor(volume_draws[k] * h)
            if qty > 0:
                price = pl if ask is None else max(ask, pl)
                out.append(OrderIntent(k, Side.SELL, OrderKind.LIMIT, qty, to_ticks(price / 100, Side.SELL)))
        elif cash > mid:
            eligible.append((k, bid, pl))
    if eligible:
        weights = cash_weights_for(len(eligible))
        for w, (k, bid, pl) in zip(weights, eligible):
            price = to_ticks((pl if bid is None else min(bid, pl)) / 100, Side.BUY)
            if price < 1:
                continue
            qty = math.floor(w * cash / price)
            if qty > 0:
                out.append(OrderIntent(k, Side.BUY, OrderKind.LIMIT, qty, price))
    return out


# ------------------------------------------------------------ market makers

def mm_quotes(asset: int, mid: float, s_ref: float, eps_buy: float, eps_sell: float,
              size: int = ORDER_SIZE) -> tuple[OrderIntent, OrderIntent]:
    """Bid below and ask above the mid; positive tweaks quote deeper in the book."""
    bid = max(to_ticks((mid - s_ref * (1 + eps_buy)) / 100, Side.BUY), 1)
    ask = to_ticks((mid + s_ref * (1 + eps_sell)) / 100, Side.SELL)
    return (OrderIntent(asset, Side.BUY, OrderKind.LIMIT, size, bid),
            OrderIntent(asset, Side.SELL, OrderKind.LIMIT, size, ask))


def mm_hedge(asset: int, inventory: int, fraction: float) -> OrderIntent | None:
    qty = math.floor(fraction * abs(inventory))
    if inventory == 0 or qty == 0:
        return None
    side = Side.SELL if inventory > 0 else Side.BUY
    return OrderIntent(asset, side, OrderKind.MARKET, qty)


# ------------------------------------------------------------------ agents

class Agent:
    kind = "agent"

    def __init__(self, agent_id: int, session: ClientSession, rng: np.random.Generator, n_assets: int):
        self.agent_id = agent_id
        self.session = session
        self.rng = rng
        self.n_assets = n_assets
        self.submitted = 0
        self.rejected = 0

    @property
    def account_id(self) -> int:
        return self.session.account_id

    def step(self, t: float) -> None:
        raise NotImplementedError

    def send(self, intent: OrderIntent):
        self.submitted += 1
        try:
            return self.session.submit(intent.asset, intent.side, intent.kind, intent.quantity, intent.price)
        except Rejected as exc:
            self.rejected += 1
            log.debug("agent %d order rejected: %s", self.agent_id, exc.reason)
            return None

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def restore_rng(self, state: dict) -> None:
        self.rng.bit_generator.state = state


class LiquidityTaker(Agent):
    kind = "lt"

    def __init__(self, agent_id, session, rng, n_assets, t_freq: float):
        super().__init__(agent_id, session, rng, n_assets)
        self.gate = ActivationGate(t_freq, rng)

    def step(self, t: float) -> None:
        if not self.gate.fires():
            return
        risk_fraction = self.rng.random()
        weights = dirichlet_weights(self.rng, self.n_assets)
        acct = self.session.get_account()
        mids = [self.session.get_quote(k).reference_mid for k in range(self.n_assets)]
        holdings = [acct.available_shares(k) for k in range(self.n_assets)]
        for intent in lt_orders(acct.available_cash, holdings, mids, risk_fraction, weights):
            self.send(intent)


class LiquidityProvider(Agent):
    kind = "lp"

    def __init__(self, agent_id, session, rng, n_assets, t_freq: float, window: int = LP_WINDOW,
                 sigma_fallback: float = LP_SIGMA_FALLBACK):
        super().__init__(agent_id, session, rng, n_assets)
        self.gate = ActivationGate(t_freq, rng)
        self.window = window
        self.sigma_fallback = sigma_fallback

    def volatility(self, asset: int) -> float:
        mids = [m for _, m in self.session.get_history(asset, last=self.window)]
        sigma = realized_volatility(mids) if len(mids) >= 2 else 0.0
        return sigma if sigma > 0 else self.sigma_fallback

    def step(self, t: float) -> None:
        if not self.gate.fires():
            return
        quotes, limits = [], []
        for k in range(self.n_assets):
            q = self.session.get_quote(k)
            mid = q.reference_mid
            quotes.append((q.bid, q.ask, mid))
            if mid is None:
                limits.append(None)
                continue
            limits.append(lp_limit_price(mid, self.rng.normal(0.0, self.volatility(k))))
        draws = self.rng.random(self.n_assets)
        acct = self.session.get_account()
        holdings = [acct.available_shares(k) for k in range(self.n_assets)]
        intents = lp_orders(acct.available_cash, holdings, quotes, limits, draws,
                            lambda n: dirichlet_weights(self.rng, n))
        for intent in intents:
            self.send(intent)


class MarketMaker(Agent):
    """Dealer quoting both sides; quotes live for one tick, then are pulled."""

    kind = "mm"

    def __init__(self, agent_id, session, rng, n_assets, t_freq: float, eps_min: float = EPS_MIN,
                 eps_max: float = EPS_MAX, order_size: int = ORDER_SIZE):
        super().__init__(agent_id, session, rng, n_assets)
        if not eps_min < eps_max:
            raise ValueError("eps_min must be below eps_max")
        if order_size < 1:
            raise ValueError("order_size must be >= 1")
        self.gate = ActivationGate(t_freq, rng)
        self.eps_min, self.eps_max = eps_min, eps_max
        self.order_size = order_size
        self.inventory = [0] * n_assets
        self.cash = 0
        self.live: list[int] = []
        self.pending = False

    def step(self, t: float) -> None:
        if self.pending:
            self.settle()
            return
        if not self.gate.fires():
            return
        for k in range(self.n_assets):
            eps_buy = self.rng.uniform(self.eps_min, self.eps_max)
            eps_sell = self.rng.uniform(self.eps_min, self.eps_max)
            fraction = self.rng.random()
            q = self.session.get_quote(k)
            mid = q.reference_mid
            if mid is None:
                continue
            for intent in mm_quotes(k, mid, reference_spread(q.bid, q.ask), eps_buy, eps_sell, self.order_size):
                ack = self.send(intent)
                if ack is not None and ack.resting:
                    self.live.append(ack.order_id)
            hedge = mm_hedge(k, self.inventory[k], fraction)
            if hedge is not None:
                self.send(hedge)
        self.pending = True

    def settle(self) -> None:
        for order_id in self.live:
            self.session.cancel_order(order_id)
        self.live.clear()
        acct = self.session.get_account()
        self.cash = acct.cash
        self.inventory = list(acct.holdings)
        self.pending = False
