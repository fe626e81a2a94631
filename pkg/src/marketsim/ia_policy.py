"""Adaptive market maker: target-share pricing, inventory skew and a constrained hedge.

The three decisions are solved by exhaustive grid search over explicit
estimator state (:class:`PolicyInputs`), which keeps them deterministic and
easy to check against a brute-force oracle.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .book import OrderKind, Side, format_price
from .client import ClientSession, Rejected
from .estimators import OnlineMoments, RlsEstimator, flow_features, ia_sigma, pnl_features, realized_volatility
from .flow import OrderIntent, mm_quotes, reference_spread

log = logging.getLogger(__name__)


@dataclass(slots=True)
class IaConfig:
    eta_ms: float = 0.25
    delta_tol: float = 0.05
    gamma: float = 2.0
    z_max: int = 3000
    order_size: int = 100
    t_freq: float = 2.0
    eps_min: float = -0.5
    eps_max: float = 1.0
    eps_step: float = 0.01
    x_step: float = 0.01
    watchdog: float = 30.0
    vol_window: int = 100
    p0: float = 1e6

    def __post_init__(self):
        if not 0 < self.eta_ms < 1:
            raise ValueError("eta_ms must lie in (0, 1)")
        if self.delta_tol <= 0:
            raise ValueError("delta_tol must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.z_max <= 0:
            raise ValueError("z_max must be positive")
        if self.eps_min >= self.eps_max or self.eps_min <= -1:
            raise ValueError("need -1 < eps_min < eps_max")

    def eps_grid(self) -> np.ndarray:
        return grid(self.eps_min, self.eps_max, self.eps_step)

    def x_grid(self) -> np.ndarray:
        return grid(0.0, 1.0, self.x_step)


def grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)


@dataclass(frozen=True, slots=True)
class PolicyInputs:
    """Everything the solvers read. Prices and spreads are in currency units."""

    nu_coef: np.ndarray  # length 4
    s_coef: np.ndarray  # length 6
    var_nu: float
    var_s: float
    mid: float
    s_ref: float
    sigma: float
    z: int

    def expected_nu(self, eps) -> np.ndarray:
        return flow_features(self.mid, self.s_ref, eps) @ self.nu_coef

    def expected_s(self, eps) -> np.ndarray:
        return pnl_features(self.mid, self.s_ref, eps) @ self.s_coef

    @property
    def flow_sign(self) -> int:
        # fills on the skewed side offset inventory: the ask sells down a long book,
        # the bid buys back a short (or flat) one
        return -1 if self.z > 0 else 1


def solve_target_eps(inputs: PolicyInputs, v_market: float, cfg: IaConfig, previous: float = 0.0,
                     eps: np.ndarray | None = None) -> float:
    """Most passive tweak whose expected share of volume is within tolerance of the target."""
    if v_market <= 0:
        return previous
    eps = cfg.eps_grid() if eps is None else eps
    cost = np.abs(cfg.eta_ms - inputs.expected_nu(eps) / v_market)
    feasible = np.flatnonzero(cost <= cfg.delta_tol)
    if feasible.size:
        return float(eps[feasible[-1]])
    return float(eps[int(np.argmin(cost))])


def skew_objective(inputs: PolicyInputs, eps: np.ndarray, gamma: float) -> np.ndarray:
    e_nu = inputs.expected_nu(eps)
    e_s = inputs.expected_s(eps)
    with np.errstate(over="ignore", invalid="ignore"):
        flow_sq = (inputs.z + inputs.flow_sign * e_nu) ** 2 + inputs.var_nu
        risk = np.sqrt(np.float64(inputs.s_ref) ** 2 * inputs.var_s + np.float64(inputs.sigma) ** 2 * flow_sq)
        return -inputs.s_ref * e_s + gamma * risk


def solve_skew_eps(inputs: PolicyInputs, cfg: IaConfig, eps: np.ndarray | None = None) -> float:
    """Tweak for the inventory-reducing side: spread income against inventory risk."""
    eps = cfg.eps_grid() if eps is None else eps
    j = skew_objective(inputs, eps, cfg.gamma)
    ok = np.isfinite(j)
    if not ok.any():
        raise ValueError("skew objective is not finite anywhere on the grid")
    j = np.where(ok, j, np.inf)
    return float(eps[int(np.argmin(j))])


def hedge_objective(inputs: PolicyInputs, x: np.ndarray, eps_quoted: float, gamma: float) -> np.ndarray:
    e_nu = float(inputs.expected_nu(eps_quoted)[0])
    left = inputs.z * (1 - x)
    with np.errstate(over="ignore", invalid="ignore"):
        flow_sq = (left + inputs.flow_sign * e_nu) ** 2 + inputs.var_nu
        return np.abs(x * inputs.z) * inputs.s_ref + gamma * np.sqrt(np.float64(inputs.sigma) ** 2 * flow_sq)


def solve_hedge_fraction(inputs: PolicyInputs, eps_quoted: float, cfg: IaConfig,
                         x: np.ndarray | None = None) -> float:
    """Fraction of inventory to cross the spread with, keeping the remainder within the bound."""
    if inputs.z == 0:
        return 0.0
    x = cfg.x_grid() if x is None else x
    h = hedge_objective(inputs, x, eps_quoted, cfg.gamma)
    h = np.where(np.abs(inputs.z * (1 - x)) <= cfg.z_max + 1e-9, h, np.inf)
    h = np.where(np.isfinite(h), h, np.inf)
    if not np.isfinite(h).any():
        return 1.0
    return float(x[int(np.argmin(h))])


# ------------------------------------------------------------------- agent

@dataclass(slots=True)
class _QuoteLeg:
    side: Side
    eps: float
    order_id: int | None
    filled_now: int
    resting: int


@dataclass(slots=True)
class _Cycle:
    t: float
    mid: float
    s_ref: float
    legs: list[_QuoteLeg]
    baseline_volume: int
    next_poll: float


DIAGNOSTIC_FIELDS = ("t", "eps_star", "eps_skew", "x_hedge", "z", "cash", "E_nu", "E_s")


@dataclass(slots=True)
class IaState:
    nu_model: RlsEstimator
    s_model: RlsEstimator
    nu_moments: OnlineMoments = field(default_factory=OnlineMoments)
    s_moments: OnlineMoments = field(default_factory=OnlineMoments)
    z: int = 0
    cash: int = 0
    eps_star: float = 0.0
    last_volume: int = 0
    last_mid: float | None = None
    mids: deque = field(default_factory=deque)


class IntelligentAgent:
    """Single-asset adaptive dealer driven tick by tick.

    Each cycle quotes both sides and hedges, then polls the traded volume
    every ``t_freq`` seconds; once it moves (or the watchdog expires) the
    unfilled quotes are pulled and the fills are fed to the estimators.
    """

    kind = "ia"

    def __init__(self, agent_id: int, session: ClientSession, rng: np.random.Generator, asset: int = 0,
                 config: IaConfig | None = None):
        self.agent_id = agent_id
        self.session = session
        self.rng = rng  # unused by the policy itself; kept for a uniform agent interface
        self.asset = asset
        self.cfg = config or IaConfig()
        self.state = IaState(RlsEstimator(4, self.cfg.p0), RlsEstimator(6, self.cfg.p0),
                             mids=deque(maxlen=self.cfg.vol_window))
        self.cycle: _Cycle | None = None
        self.next_try = -math.inf
        self.diagnostics: list[tuple] = []
        self.submitted = 0
        self.rejected = 0

    @property
    def account_id(self) -> int:
        return self.session.account_id

    def step(self, t: float) -> None:
        if self.cycle is not None:
            if t < self.cycle.next_poll:
                return
            volume = self.session.get_volume(self.asset)
            if volume == self.cycle.baseline_volume and t - self.cycle.t < self.cfg.watchdog:
                self.cycle.next_poll = t + self.cfg.t_freq
                return
            self.finish_cycle()
        if t >= self.next_try:
            self.start_cycle(t)

    def _send(self, intent: OrderIntent):
        self.submitted += 1
        try:
            return self.session.submit(intent.asset, intent.side, intent.kind, intent.quantity, intent.price)
        except Rejected as exc:
            self.rejected += 1
            log.debug("ia order rejected: %s", exc.reason)
            return None

    def inputs(self, mid: float, s_ref: float, sigma: float) -> PolicyInputs:
        st = self.state
        return PolicyInputs(st.nu_model.coef.copy(), st.s_model.coef.copy(), st.nu_moments.variance_or(0.0),
                            st.s_moments.variance_or(0.0), mid, s_ref, sigma, st.z)

    def start_cycle(self, t: float) -> None:
        cfg, st = self.cfg, self.state
        quote = self.session.get_quote(self.asset)
        ref_mid = quote.reference_mid
        if ref_mid is None:
            self.next_try = t + cfg.t_freq
            return
        mid = ref_mid / 100
        s_ref = reference_spread(quote.bid, quote.ask) / 100
        v_market = quote.volume - st.last_volume
        st.last_volume = quote.volume
        st.mids.append(mid)
        sigma_ret = realized_volatility(list(st.mids)) if len(st.mids) >= 2 else 0.0
        sigma = ia_sigma(sigma_ret, 0.0 if st.last_mid is None else mid - st.last_mid)
        st.last_mid = mid

        inputs = self.inputs(mid, s_ref, sigma)
        st.eps_star = solve_target_eps(inputs, v_market, cfg, previous=st.eps_star)
        eps_skew = solve_skew_eps(inputs, cfg)
        if st.z > 0:
            eps_bid, eps_ask = st.eps_star, eps_skew
        else:
            eps_bid, eps_ask = eps_skew, st.eps_star
        legs = []
        for intent, eps in zip(mm_quotes(self.asset, ref_mid, s_ref * 100, eps_bid, eps_ask, cfg.order_size),
                               (eps_bid, eps_ask)):
            ack = self._send(intent)
            if ack is None:
                legs.append(_QuoteLeg(intent.side, eps, None, 0, 0))
            else:
                legs.append(_QuoteLeg(intent.side, eps, ack.order_id, ack.filled, ack.resting))

        x = solve_hedge_fraction(inputs, eps_skew, cfg)
        hedge_qty = math.floor(x * abs(st.z))
        if hedge_qty > 0:
            side = Side.SELL if st.z > 0 else Side.BUY
            self._send(OrderIntent(self.asset, side, OrderKind.MARKET, hedge_qty))

        self.diagnostics.append((t, st.eps_star, eps_skew, x, st.z, st.cash,
                                 float(inputs.expected_nu(st.eps_star)[0]), float(inputs.expected_s(eps_skew)[0])))
        baseline = self.session.get_volume(self.asset)
        self.cycle = _Cycle(t, mid, s_ref, legs, baseline, t + cfg.t_freq)

    def finish_cycle(self) -> None:
        cycle, st = self.cycle, self.state
        self.cycle = None
        observations = []
        for leg in cycle.legs:
            if leg.order_id is None:
                continue
            cancelled = self.session.cancel_order(leg.order_id) if leg.resting else 0
            nu = leg.filled_now + leg.resting - cancelled
            observations.append((leg.eps, nu))
        acct = self.session.get_account()
        st.cash = acct.cash
        st.z = acct.holdings[self.asset]
        for eps, nu in observations:
            s = nu * (1 + eps)
            st.nu_model.update(flow_features(cycle.mid, cycle.s_ref, eps)[0], nu)
            st.s_model.update(pnl_features(cycle.mid, cycle.s_ref, eps)[0], s)
            st.nu_moments.update(nu)
            st.s_moments.update(s)

    def write_diagnostics(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAGNOSTIC_FIELDS)
            for t, eps_star, eps_skew, x, z, cash, e_nu, e_s in self.diagnostics:
                writer.writerow([f"{t:.3f}", f"{eps_star:.2f}", f"{eps_skew:.2f}", f"{x:.2f}", z,
                                 format_price(cash), f"{e_nu:.6g}", f"{e_s:.6g}"])
