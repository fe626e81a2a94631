"""Agent-based limit order book market simulator.

The exchange (:mod:`marketsim.exchange`) runs a price-time priority continuous
double auction over integer ticks and cents. Agents reach it through
:mod:`marketsim.client` over an in-process or TCP transport, and
:mod:`marketsim.runner` drives a whole scenario on a virtual clock.
"""
from .book import OrderBook, OrderKind, Side
from .exchange import AccountKind, Exchange, conservation_audit, replay_log
from .runner import initialize_market, run
from .scenario import PRESETS, ScenarioConfig, load_scenario, preset

__version__ = "0.1.0"

__all__ = [
    "AccountKind", "Exchange", "OrderBook", "OrderKind", "PRESETS", "ScenarioConfig", "Side",
    "conservation_audit", "initialize_market", "load_scenario", "preset", "replay_log", "run",
]
