"""Market initialization and the simulation loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .book import OrderKind, Side
from .client import ClientSession, LoopbackTransport, SocketTransport
from .clock import SimClock
from .exchange import AccountKind, Exchange, conservation_audit
from .flow import LiquidityProvider, LiquidityTaker, MarketMaker
from .ia_policy import IaConfig, IntelligentAgent
from .scenario import ScenarioConfig
from .server import ExchangeService, ExchangeServer
from .stylized import RunReport, validate_run

log = logging.getLogger(__name__)


class RunAborted(RuntimeError):
    def __init__(self, agent_id: int, kind: str, seq: int, cause: BaseException):
        super().__init__(f"agent {agent_id} ({kind}) failed after event seq {seq}: {cause!r}")
        self.agent_id = agent_id
        self.seq = seq


def make_rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    """Counter-based generator, so each stream is independent of scheduling."""
    return np.random.Generator(np.random.Philox(seed_seq))


@dataclass
class Market:
    config: ScenarioConfig
    exchange: Exchange
    service: ExchangeService
    agents: list
    system_account: int
    initial_mids: list[int]
    initial_totals: tuple[int, list[int]]
    initial_wealth: dict[int, int]
    scheduler: np.random.Generator
    server: ExchangeServer | None = None


def _agent_counts(cfg: ScenarioConfig) -> list[tuple[str, int]]:
    return [("lt", cfg.n_lt), ("lp", cfg.n_lp), ("mm", cfg.n_mm), ("ia", cfg.n_ia)]


def initialize_market(cfg: ScenarioConfig, log_path: str | Path | None = None, transport: str = "loopback",
                      tap: list | None = None) -> Market:
    """Accounts, a seeded ladder around each opening mid, and one agent per account."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    init_seq, sched_seq, agents_seq = root.spawn(3)
    init_rng = make_rng(init_seq)
    clock = SimClock(0.0, cfg.acceleration)
    ex = Exchange(cfg.n_assets, clock=clock, t_close=cfg.t_close, log_path=log_path)
    K = cfg.n_assets

    mids = [int(round(m * 100)) for m in init_rng.uniform(cfg.mid_min, cfg.mid_max, size=K)]
    n_traders = cfg.n_lt + cfg.n_lp
    shares = init_rng.integers(cfg.h_min, cfg.h_max + 1, size=(n_traders, K))
    raw_cash = init_rng.uniform(cfg.c_min, cfg.c_max, size=n_traders)
    # scale the cash range so total cash matches total share value at the opening mids
    share_value = float(sum(mids[k] * int(shares[:, k].sum()) for k in range(K)))
    scale = share_value / raw_cash.sum() if n_traders and raw_cash.sum() > 0 else 1.0
    cash = [int(round(c * scale)) for c in raw_cash]

    levels = range(1, cfg.seed_levels + 1)
    ladder_cash = sum(cfg.seed_level_qty * (mids[k] - j) for k in range(K) for j in levels)
    system = ex.open_account(AccountKind.STANDARD, ladder_cash, [cfg.seed_level_qty * cfg.seed_levels] * K)
    ex.open_market()
    for k in range(K):
        if mids[k] - cfg.seed_levels < 1:
            raise ValueError("opening mid too low for the seeded ladder")
        for j in levels:
            ex.submit_order(system.account_id, k, Side.BUY, OrderKind.LIMIT, cfg.seed_level_qty, mids[k] - j)
            ex.submit_order(system.account_id, k, Side.SELL, OrderKind.LIMIT, cfg.seed_level_qty, mids[k] + j)

    service = ExchangeService(ex)
    server = None
    if transport == "socket":
        from .server import parse_listen_addr
        server = ExchangeServer(service, parse_listen_addr()).start()
    elif transport != "loopback":
        raise ValueError(f"unknown transport {transport!r}")

    def session(account_id: int) -> ClientSession:
        if server is not None:
            return ClientSession(SocketTransport(server.address, tap), account_id)
        return ClientSession(LoopbackTransport(service, tap), account_id)

    ia_cfg = IaConfig(eta_ms=cfg.eta_ms, delta_tol=cfg.delta_tol, gamma=cfg.gamma, z_max=cfg.z_max,
                      order_size=cfg.order_size, t_freq=cfg.freq_ia, eps_min=cfg.eps_min, eps_max=cfg.eps_max,
                      watchdog=cfg.ia_watchdog, vol_window=cfg.lp_window) if cfg.n_ia else None
    agent_seqs = agents_seq.spawn(sum(n for _, n in _agent_counts(cfg)))
    agents = []
    wealth0 = {}
    i = 0
    for kind, count in _agent_counts(cfg):
        for _ in range(count):
            rng = make_rng(agent_seqs[i])
            if kind in ("lt", "lp"):
                acct = ex.open_account(AccountKind.STANDARD, cash[i], [int(h) for h in shares[i]])
                wealth0[acct.account_id] = cash[i] + sum(int(shares[i, k]) * mids[k] for k in range(K))
            else:
                acct = ex.open_account(AccountKind.DEALER)
                wealth0[acct.account_id] = 0
            s = session(acct.account_id)
            if kind == "lt":
                agent = LiquidityTaker(i, s, rng, K, cfg.freq_lt)
            elif kind == "lp":
                agent = LiquidityProvider(i, s, rng, K, cfg.freq_lp, cfg.lp_window, cfg.lp_sigma_fallback)
            elif kind == "mm":
                agent = MarketMaker(i, s, rng, K, cfg.freq_mm, cfg.eps_min, cfg.eps_max, cfg.order_size)
            else:
                agent = IntelligentAgent(i, s, rng, 0, ia_cfg)
            agents.append(agent)
            i += 1
    return Market(cfg, ex, service, agents, system.account_id, mids, ex.totals(), wealth0, make_rng(sched_seq),
                  server)


@dataclass
class RunResult:
    config: ScenarioConfig
    exchange: Exchange
    agents: list
    system_account: int
    initial_mids: list[int]
    audit: tuple[int, list[int]]
    samples: np.ndarray  # (ticks, assets, 2): best bid, best ask in ticks; nan when a side is empty
    sample_times: np.ndarray
    reports: list[RunReport]
    pnl: dict[str, dict[str, float]]
    wall_seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def trade_count(self) -> int:
        return sum(1 for e in self.exchange.events if e.kind == "trade_settled")

    def mid_series(self, asset: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Event-time mid-price series in currency units."""
        return _mids(self.exchange, asset)

    def sampled_spread(self, asset: int = 0) -> np.ndarray:
        bid, ask = self.samples[:, asset, 0], self.samples[:, asset, 1]
        return (ask - bid) / 100

    def sampled_mid(self, asset: int = 0) -> np.ndarray:
        return self.samples[:, asset, :].mean(axis=1) / 100

    @property
    def conserved(self) -> bool:
        cash, shares = self.audit
        return cash == 0 and all(s == 0 for s in shares)


def _pnl(market: Market) -> dict[str, dict[str, float]]:
    ex = market.exchange
    final_mids = []
    for k in range(ex.n_assets):
        info = ex.query_market(k)
        pts = ex.query_history(k, last=1)
        final_mids.append(info.mid if info.mid is not None else (pts[-1][1] if pts else market.initial_mids[k]))
    out: dict[str, dict[str, float]] = {}
    for agent in market.agents:
        acct = ex.accounts[agent.account_id]
        wealth = acct.cash + sum(h * m for h, m in zip(acct.holdings, final_mids))
        pnl = (wealth - market.initial_wealth[agent.account_id]) / 100
        row = out.setdefault(agent.kind, {"count": 0, "total": 0.0, "min": math.inf, "max": -math.inf})
        row["count"] += 1
        row["total"] += pnl
        row["min"] = min(row["min"], pnl)
        row["max"] = max(row["max"], pnl)
    for row in out.values():
        row["mean"] = row["total"] / row["count"]
    return out


def run(cfg: ScenarioConfig, log_path: str | Path | None = None, transport: str = "loopback",
        market: Market | None = None) -> RunResult:
    """Advance one-second ticks until the close; agents act in a seeded random order each tick."""
    wall0 = time.perf_counter()
    market = market or initialize_market(cfg, log_path=log_path, transport=transport)
    ex = market.exchange
    clock = ex.clock
    agents = market.agents
    K = cfg.n_assets
    n_ticks = int(math.ceil(cfg.t_close))
    samples = np.full((n_ticks, K, 2), np.nan)
    try:
        for t in range(n_ticks):
            clock.sleep_until(float(t))
            for i in market.scheduler.permutation(len(agents)).tolist():
                agent = agents[i]
                try:
                    agent.step(float(t))
                except Exception as exc:
                    raise RunAborted(agent.agent_id, agent.kind, ex.seq, exc) from exc
            for k in range(K):
                info = ex.query_market(k)
                if info.bid is not None:
                    samples[t, k, 0] = info.bid
                if info.ask is not None:
                    samples[t, k, 1] = info.ask
        clock.sleep_until(float(cfg.t_close))
        ex.close_market()
    finally:
        ex.close_log()
        if market.server is not None:
            for agent in agents:
                agent.session.close()
            market.server.stop()
    audit = conservation_audit(ex, market.initial_totals)
    reports = []
    for k in range(K):
        _, mids = _mids(ex, k)
        reports.append(validate_run(mids))
    return RunResult(cfg, ex, agents, market.system_account, market.initial_mids, audit, samples,
                     np.arange(n_ticks, dtype=float), reports, _pnl(market), time.perf_counter() - wall0)


def _mids(ex: Exchange, asset: int) -> tuple[np.ndarray, np.ndarray]:
    pts = ex.query_history(asset)
    if not pts:
        return np.zeros(0), np.zeros(0)
    t, m = zip(*pts)
    return np.asarray(t), np.asarray(m) / 100
