import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marketsim.book import OrderKind, Side
from marketsim.client import ClientSession, LoopbackTransport
from marketsim.clock import SimClock
from marketsim.exchange import AccountKind, Exchange
from marketsim.flow import (ActivationGate, LiquidityProvider, LiquidityTaker, MarketMaker, OrderIntent,
                            dirichlet_weights, lp_limit_price, lp_orders, lt_orders, mm_hedge, mm_quotes,
                            reference_spread)
from marketsim.server import ExchangeService


def no_split(n):
    raise AssertionError("no asset should be buy-eligible")


# ------------------------------------------------------------------ takers

def test_lt_balanced_portfolio_sends_nothing():
    assert lt_orders(1_000_000, [100], [10000], 0.5, [1.0]) == []


def test_lt_full_risk_buys_the_difference():
    assert lt_orders(1_000_000, [100], [10000], 1.0, [1.0]) == [OrderIntent(0, Side.BUY, OrderKind.MARKET, 100)]


def test_lt_sells_down_and_skips_missing_mid():
    out = lt_orders(0, [100, 40], [10000, None], 0.25, [1.0, 0.0])
    assert out == [OrderIntent(0, Side.SELL, OrderKind.MARKET, 75)]


def test_single_asset_dirichlet_weight_is_one():
    rng = np.random.default_rng(0)
    state = copy.deepcopy(rng.bit_generator.state)
    assert dirichlet_weights(rng, 1).tolist() == [1.0]
    assert rng.bit_generator.state == state
    w = dirichlet_weights(rng, 5)
    assert w.shape == (5,) and w.sum() == pytest.approx(1.0)


@settings(max_examples=300)
@given(st.integers(0, 10**8), st.lists(st.integers(0, 500), min_size=1, max_size=5), st.data())
def test_lt_budget_feasibility(cash, holdings, data):
    k = len(holdings)
    mids = data.draw(st.lists(st.integers(1, 50_000), min_size=k, max_size=k))
    x = data.draw(st.floats(0, 1))
    weights = dirichlet_weights(np.random.default_rng(data.draw(st.integers(0, 1000))), k)
    wealth = cash + sum(h * m for h, m in zip(holdings, mids))
    target = list(holdings)
    for o in lt_orders(cash, holdings, mids, x, weights):
        target[o.asset] += o.quantity if o.side is Side.BUY else -o.quantity
        assert o.quantity >= 1
    assert all(t >= 0 for t in target)
    assert sum(t * m for t, m in zip(target, mids)) <= x * wealth + sum(mids) + 1e-6 * wealth


# --------------------------------------------------------------- providers

def test_lp_positive_shock_sells():
    pl = lp_limit_price(10000, 0.02)
    assert pl == pytest.approx(10200)
    out = lp_orders(10**6, [50], [(9990, 10010, 10000)], [pl], [0.5], no_split)
    assert out == [OrderIntent(0, Side.SELL, OrderKind.LIMIT, 25, 10200)]
    # the ask bounds the price when it is higher
    out = lp_orders(10**6, [50], [(9990, 10300, 10000)], [pl], [0.5], no_split)
    assert out[0].price == 10300


def test_lp_negative_shock_buys_when_cash_exceeds_mid():
    pl = lp_limit_price(10000, -0.02)
    out = lp_orders(1_000_000, [50], [(9990, 10010, 10000)], [pl], [0.5], lambda n: [1.0] * n)
    assert out == [OrderIntent(0, Side.BUY, OrderKind.LIMIT, 102, 9800)]
    assert lp_orders(10000, [50], [(9990, 10010, 10000)], [pl], [0.5], no_split) == []


def test_lp_flat_history_sells_nothing():
    pl = lp_limit_price(10000, 0.0)
    out = lp_orders(100_000, [50], [(9990, 10010, 10000)], [pl], [0.9], lambda n: [1.0] * n)
    assert all(o.side is Side.BUY for o in out)


def test_lp_one_sided_book_uses_limit_price():
    out = lp_orders(1_000_000, [50], [(None, 10010, 10000)], [9900.4], [0.5], lambda n: [1.0] * n)
    assert out == [OrderIntent(0, Side.BUY, OrderKind.LIMIT, 101, 9900)]


@settings(max_examples=300)
@given(st.integers(0, 10**7), st.lists(st.integers(0, 300), min_size=1, max_size=4), st.data())
def test_lp_orders_stay_within_balances(cash, holdings, data):
    k = len(holdings)
    quotes, limits = [], []
    for _ in range(k):
        mid = data.draw(st.integers(200, 20_000))
        half = data.draw(st.integers(1, 100))
        quotes.append((mid - half, mid + half, float(mid)))
        limits.append(mid * (1 + data.draw(st.floats(-0.3, 0.3))))
    draws = data.draw(st.lists(st.floats(0, 0.999), min_size=k, max_size=k))
    rng = np.random.default_rng(data.draw(st.integers(0, 100)))
    out = lp_orders(cash, holdings, quotes, limits, draws, lambda n: dirichlet_weights(rng, n))
    spend = 0
    for o in out:
        assert o.kind is OrderKind.LIMIT and o.quantity >= 1 and o.price >= 1
        if o.side is Side.SELL:
            assert o.quantity <= holdings[o.asset]
        else:
            spend += o.quantity * o.price
    assert spend <= cash


# ------------------------------------------------------------ market makers

def test_mm_quote_examples():
    bid, ask = mm_quotes(0, 10000, 50, 0.0, 0.0)
    assert (bid.price, ask.price, bid.quantity) == (9950, 10050, 100)
    bid, _ = mm_quotes(0, 10000, 50, -0.5, 0.0)
    assert bid.price == 9975


def test_mm_hedge_examples():
    assert mm_hedge(0, 80, 0.5) == OrderIntent(0, Side.SELL, OrderKind.MARKET, 40)
    assert mm_hedge(0, -80, 0.5) == OrderIntent(0, Side.BUY, OrderKind.MARKET, 40)
    assert mm_hedge(0, 0, 0.9) is None
    assert mm_hedge(0, 1, 0.5) is None


@given(st.integers(2, 10**6), st.integers(1, 1000), st.floats(-0.5, 1.0), st.floats(-0.5, 1.0))
def test_mm_quotes_never_cross(mid2, half_spread2, eb, es):
    mid = mid2 / 2
    s_ref = reference_spread(None, None) if half_spread2 == 1 else half_spread2 / 2
    bid, ask = mm_quotes(0, mid, max(s_ref, 1), eb, es)
    assert bid.price < ask.price


def test_reference_spread():
    assert reference_spread(9950, 10050) == 50
    assert reference_spread(100, 101) == 1
    assert reference_spread(None, 101) == 1


# -------------------------------------------------------------- activation

@pytest.mark.parametrize("t_freq", [1, 2, 5, 10])
def test_activation_rate(t_freq):
    gate = ActivationGate(t_freq, np.random.default_rng(t_freq))
    n = 100_000
    hits = sum(gate.fires() for _ in range(n))
    assert abs(hits / n - 1 / t_freq) <= 0.05 / t_freq


def test_gate_rejects_subsecond_frequency():
    with pytest.raises(ValueError):
        ActivationGate(0.5, np.random.default_rng())


# ------------------------------------------------------------------ agents

def small_market():
    clock = SimClock()
    ex = Exchange(1, clock=clock)
    system = ex.open_account(AccountKind.STANDARD, 10**7, [1000])
    ex.open_market()
    for j in range(1, 6):
        ex.submit_order(system.account_id, 0, Side.BUY, OrderKind.LIMIT, 100, 10000 - j)
        ex.submit_order(system.account_id, 0, Side.SELL, OrderKind.LIMIT, 100, 10000 + j)
    return ex, clock, ExchangeService(ex)


def session(ex, service, kind, cash=0, shares=0):
    acct = ex.open_account(kind, cash, [shares])
    return ClientSession(LoopbackTransport(service), acct.account_id)


def emitted(agent, ticks, clock):
    sent = []
    original = agent.send

    def spy(intent):
        sent.append(intent)
        return original(intent)

    agent.send = spy
    for t in ticks:
        clock.advance_to(float(t))
        agent.step(float(t))
    return sent


@pytest.mark.parametrize("cls,args", [(LiquidityTaker, (2,)), (LiquidityProvider, (2,))])
def test_stateless_agents_restore_to_same_stream(cls, args):
    streams = []
    for restore in (False, True):
        ex, clock, svc = small_market()
        agent = cls(1, session(ex, svc, AccountKind.STANDARD, 500_000, 100), np.random.default_rng(9), 1, *args)
        emitted(agent, range(20), clock)
        # free the escrow so the second phase has something to trade with
        for oid in ex.live_orders(agent.account_id):
            ex.cancel_order(agent.account_id, oid)
        state = copy.deepcopy(agent.rng_state())
        if restore:
            # rebuild the agent from nothing but its serialized random state
            agent = cls(1, agent.session, np.random.default_rng(), 1, *args)
            agent.restore_rng(state)
        streams.append(emitted(agent, range(20, 60), clock))
    assert streams[0] == streams[1]
    assert len(streams[0]) > 0


def test_market_maker_pulls_quotes_after_one_tick():
    ex, clock, svc = small_market()
    mm = MarketMaker(1, session(ex, svc, AccountKind.DEALER), np.random.default_rng(1), 1, 1.0)
    sent = emitted(mm, [0], clock)
    assert [o.side for o in sent[:2]] == [Side.BUY, Side.SELL]
    assert len(ex.live_orders(mm.account_id)) == 2
    emitted(mm, [1], clock)
    assert ex.live_orders(mm.account_id) == []
    assert not mm.pending


def test_market_maker_hedges_inventory():
    ex, clock, svc = small_market()
    mm = MarketMaker(1, session(ex, svc, AccountKind.DEALER), np.random.default_rng(4), 1, 1.0)
    mm.inventory = [500]
    sent = emitted(mm, [0], clock)
    hedges = [o for o in sent if o.kind is OrderKind.MARKET]
    assert len(hedges) == 1 and hedges[0].side is Side.SELL and 0 <= hedges[0].quantity <= 500


def test_taker_with_no_mid_skips():
    clock = SimClock()
    ex = Exchange(1, clock=clock)
    ex.open_market()
    svc = ExchangeService(ex)
    lt = LiquidityTaker(1, session(ex, svc, AccountKind.STANDARD, 10_000, 10), np.random.default_rng(0), 1, 1)
    assert emitted(lt, range(5), clock) == []
