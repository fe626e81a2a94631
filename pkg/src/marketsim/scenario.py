"""Scenario configuration: named presets and flat ``key=value`` files."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid scenario; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(slots=True)
class ScenarioConfig:
    name: str = "custom"
    n_lt: int = 70
    n_lp: int = 70
    n_mm: int = 1
    n_ia: int = 1
    c_min: float = 5_000.0
    c_max: float = 15_000.0
    h_min: int = 50
    h_max: int = 150
    freq_lt: float = 5.0
    freq_lp: float = 10.0
    freq_mm: float = 2.0
    freq_ia: float = 2.0
    n_assets: int = 1
    t_close: float = 3600.0
    mid_min: float = 85.0
    mid_max: float = 115.0
    seed: int = 0
    acceleration: float = math.inf
    # book seeding
    seed_levels: int = 5
    seed_level_qty: int = 100
    # flow agents
    lp_window: int = 100
    lp_sigma_fallback: float = 0.005
    eps_min: float = -0.5
    eps_max: float = 1.0
    order_size: int = 100
    # intelligent agent
    eta_ms: float = 0.25
    delta_tol: float = 0.05
    gamma: float = 2.0
    z_max: int = 3000
    ia_watchdog: float = 30.0

    def validate(self) -> ScenarioConfig:
        for key in ("n_lt", "n_lp", "n_mm", "n_ia"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "agent counts must be >= 0")
        if self.c_min < 0:
            raise ConfigError("c_min", "must be >= 0")
        if self.c_min > self.c_max:
            raise ConfigError("c_min", "must not exceed c_max")
        if self.h_min < 0:
            raise ConfigError("h_min", "must be >= 0")
        if self.h_min > self.h_max:
            raise ConfigError("h_min", "must not exceed h_max")
        for key in ("freq_lt", "freq_lp", "freq_mm", "freq_ia"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "trading frequency must be >= 1 second")
        if self.n_assets < 1:
            raise ConfigError("n_assets", "must be >= 1")
        if not self.t_close > 0:
            raise ConfigError("t_close", "must be positive")
        if not 0 < self.mid_min <= self.mid_max:
            raise ConfigError("mid_min", "need 0 < mid_min <= mid_max")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if not self.acceleration > 0:
            raise ConfigError("acceleration", "must be positive")
        if self.seed_levels < 1 or self.seed_level_qty < 1:
            raise ConfigError("seed_levels", "book seeding needs at least one level of one share")
        if self.lp_window < 2:
            raise ConfigError("lp_window", "must be >= 2")
        if not -1 < self.eps_min < self.eps_max:
            raise ConfigError("eps_min", "need -1 < eps_min < eps_max")
        if self.order_size < 1:
            raise ConfigError("order_size", "must be >= 1")
        if self.n_ia and not 0 < self.eta_ms < 1:
            raise ConfigError("eta_ms", "must lie in (0, 1)")
        if self.n_ia and self.delta_tol <= 0:
            raise ConfigError("delta_tol", "must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma", "must be >= 0")
        if self.z_max <= 0:
            raise ConfigError("z_max", "must be positive")
        return self

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={'inf' if value == math.inf else value}")
        return "\n".join(lines) + "\n"


PRESETS: dict[str, ScenarioConfig] = {
    "small-univariate": ScenarioConfig(
        name="small-univariate", n_lt=70, n_lp=70, n_mm=1, n_ia=1, c_min=5_000, c_max=15_000, h_min=50, h_max=150,
        freq_lt=5, freq_lp=10, freq_mm=2, freq_ia=2, n_assets=1),
    "medium-multivariate": ScenarioConfig(
        name="medium-multivariate", n_lt=650, n_lp=5850, n_mm=200, n_ia=0, c_min=25_000, c_max=75_000, h_min=50,
        h_max=150, freq_lt=720, freq_lp=720, freq_mm=2, n_assets=5),
    "large-multivariate": ScenarioConfig(
        name="large-multivariate", n_lt=8000, n_lp=100_000, n_mm=500, n_ia=0, c_min=150_000, c_max=450_000,
        h_min=50, h_max=150, freq_lt=7200, freq_lp=7200, freq_mm=2, n_assets=30),
    # desk-scale cut of the medium case, same per-agent parameters
    "reduced-medium": ScenarioConfig(
        name="reduced-medium", n_lt=65, n_lp=585, n_mm=20, n_ia=0, c_min=25_000, c_max=75_000, h_min=50,
        h_max=150, freq_lt=720, freq_lp=720, freq_mm=2, n_assets=5),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return dataclasses.replace(PRESETS[name])
    except KeyError:
        raise ConfigError("scenario", f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None


def _coerce(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {kind}") from None


def parse_scenario(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse ``key=value`` lines over ``base`` (defaults when omitted). ``#`` starts a comment.

    A ``preset=<name>`` line, if present, must come first and selects the base.
    """
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    cfg = dataclasses.replace(base) if base is not None else ScenarioConfig()
    seen_setting = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", "expected key=value")
        if key == "preset":
            if seen_setting:
                raise ConfigError("preset", "must precede other settings")
            cfg = preset(value.strip())
            continue
        if key not in types:
            raise ConfigError(key, "unknown setting")
        setattr(cfg, key, _coerce(key, types[key], value))
        seen_setting = True
    return cfg.validate()


def load_scenario(source: str | Path) -> ScenarioConfig:
    """A preset name or a path to a ``key=value`` file."""
    if isinstance(source, str) and source in PRESETS:
        return preset(source).validate()
    path = Path(source)
    if not path.exists():
        raise ConfigError("scenario", f"no preset or file named {str(source)!r}")
    cfg = parse_scenario(path.read_text())
    if cfg.name == "custom":
        cfg.name = path.stem
    return cfg
