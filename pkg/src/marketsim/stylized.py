"""Univariate stylized-fact statistics for simulated price series."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

NONLINEAR_TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "abs": np.abs,
    "square": np.square,
    "abs_square": lambda r: np.abs(np.square(r)),
    "cos": np.cos,
    "log1p_square": lambda r: np.log1p(np.square(r)),
}


def log_returns(prices: Sequence[float], stride: int = 1) -> np.ndarray:
    """Log returns of the series sampled every ``stride`` points."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    p = np.asarray(prices, dtype=float)
    if p.size <= stride:
        raise ValueError(f"need more than {stride} prices, got {p.size}")
    if not np.all(p > 0):
        raise ValueError("prices must be positive")
    return np.diff(np.log(p[::stride]))


@dataclass(frozen=True, slots=True)
class AcfResult:
    lags: np.ndarray
    values: np.ndarray
    ci_band: float
    n: int

    def inside_fraction(self, lo: int, hi: int) -> float:
        sel = (self.lags >= lo) & (self.lags <= hi)
        return float(np.mean(np.abs(self.values[sel]) <= self.ci_band))

    def above_fraction(self, lo: int, hi: int) -> float:
        sel = (self.lags >= lo) & (self.lags <= hi)
        return float(np.mean(self.values[sel] > self.ci_band))


def acf(series: Sequence[float], max_lag: int) -> AcfResult:
    """Sample autocorrelation at lags 1..max_lag using the full-sample mean and variance."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise ValueError(f"series of length {n} is too short for lag {max_lag}")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0 or not math.isfinite(denom):
        raise ValueError("autocorrelation of a series with zero variance")
    lags = np.arange(1, max_lag + 1)
    values = np.array([np.dot(x[:-k], x[k:]) / denom for k in lags])
    return AcfResult(lags, values, 1.96 / math.sqrt(n), n)


def excess_kurtosis(series: Sequence[float]) -> float:
    x = np.asarray(series, dtype=float)
    if x.size < 4:
        raise ValueError("need at least four values")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0:
        raise ValueError("kurtosis of a series with zero variance")
    m4 = float(np.mean(d ** 4))
    return m4 / (m2 * m2) - 3.0


def nonlinear_acf_suite(series: Sequence[float], max_lag: int) -> dict[str, AcfResult]:
    r = np.asarray(series, dtype=float)
    return {name: acf(f(r), max_lag) for name, f in NONLINEAR_TRANSFORMS.items()}


@dataclass(frozen=True, slots=True)
class FirstPassage:
    gains: np.ndarray
    losses: np.ndarray
    censored: int
    rho: float

    @property
    def censored_fraction(self) -> float:
        total = self.gains.size + self.losses.size + self.censored
        return self.censored / total if total else 0.0


def first_passage_times(prices: Sequence[float], rho_multiplier: float = 5.0) -> FirstPassage:
    """Steps until the cumulative log return from each start first reaches +rho or -rho.

    ``rho`` is ``rho_multiplier`` times the (population) standard deviation of
    one-step log returns. Starts that never reach either level are censored.
    """
    logp = np.log(np.asarray(prices, dtype=float))
    if logp.size < 2:
        raise ValueError("need at least two prices")
    sd = float(np.std(np.diff(logp)))
    if sd == 0:
        raise ValueError("first passage undefined for a constant series")
    rho = rho_multiplier * sd
    n = logp.size
    gains, losses, censored = [], [], 0
    for t in range(n - 1):
        width = 64
        lo = t + 1
        while True:
            hi = min(n, lo + width)
            d = logp[lo:hi] - logp[t]
            hit = np.flatnonzero((d >= rho) | (d <= -rho))
            if hit.size:
                i = int(hit[0])
                (gains if d[i] >= rho else losses).append(lo + i - t)
                break
            if hi == n:
                censored += 1
                break
            lo, width = hi, width * 2
    return FirstPassage(np.asarray(gains, dtype=int), np.asarray(losses, dtype=int), censored, rho)


# ----------------------------------------------------------------- verdicts

@dataclass(frozen=True, slots=True)
class Thresholds:
    min_points: int = 2000
    kurtosis_min: float = 0.5
    acf_lags: tuple[int, int] = (2, 50)
    acf_inside_min: float = 0.9
    abs_acf_lags: tuple[int, int] = (1, 20)
    abs_acf_above_min: float = 0.6
    coarse_stride: int = 5
    rho_multiplier: float = 5.0


@dataclass(slots=True)
class RunReport:
    n_points: int
    inconclusive: str = ""
    kurtosis: float = math.nan
    kurtosis_coarse: float = math.nan
    acf_inside: float = math.nan
    abs_acf_above: float = math.nan
    heavy_tails: bool = False
    no_return_autocorrelation: bool = False
    volatility_clustering: bool = False
    aggregational_gaussianity: bool = False
    passage_gains: int = 0
    passage_losses: int = 0
    passage_censored: int = 0
    passage_mean_gain: float = math.nan
    passage_mean_loss: float = math.nan
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.inconclusive and all(
            (self.heavy_tails, self.no_return_autocorrelation, self.volatility_clustering,
             self.aggregational_gaussianity))

    def verdicts(self) -> dict[str, str]:
        if self.inconclusive:
            return {k: "inconclusive" for k in ("a", "b", "cd", "f")}
        word = {True: "pass", False: "fail"}
        return {"a": word[self.heavy_tails], "b": word[self.no_return_autocorrelation],
                "cd": word[self.volatility_clustering], "f": word[self.aggregational_gaussianity]}

    def as_rows(self) -> list[tuple[str, str]]:
        rows = []
        for key, value in asdict(self).items():
            if key == "extras":
                continue
            if isinstance(value, float):
                value = "nan" if math.isnan(value) else f"{value:.6g}"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            rows.append((key, str(value)))
        rows.append(("passed", "true" if self.passed else "false"))
        return rows


def validate_run(prices: Sequence[float], thresholds: Thresholds = Thresholds()) -> RunReport:
    """Apply the stylized-fact checks to one mid-price series."""
    p = np.asarray(prices, dtype=float)
    report = RunReport(int(p.size))
    if p.size < thresholds.min_points:
        report.inconclusive = f"only {p.size} points (need {thresholds.min_points})"
        return report
    r = log_returns(p)
    if np.std(r) == 0:
        report.inconclusive = "constant price series"
        return report
    r_coarse = log_returns(p, thresholds.coarse_stride)
    if np.std(r_coarse) == 0:
        report.inconclusive = "constant coarse-grained series"
        return report
    lo, hi = thresholds.acf_lags
    alo, ahi = thresholds.abs_acf_lags
    report.kurtosis = excess_kurtosis(r)
    report.kurtosis_coarse = excess_kurtosis(r_coarse)
    report.acf_inside = acf(r, hi).inside_fraction(lo, hi)
    report.abs_acf_above = acf(np.abs(r), ahi).above_fraction(alo, ahi)
    report.heavy_tails = report.kurtosis > thresholds.kurtosis_min
    report.no_return_autocorrelation = report.acf_inside >= thresholds.acf_inside_min
    report.volatility_clustering = report.abs_acf_above >= thresholds.abs_acf_above_min
    report.aggregational_gaussianity = report.kurtosis > report.kurtosis_coarse
    fp = first_passage_times(p, thresholds.rho_multiplier)
    report.passage_gains = int(fp.gains.size)
    report.passage_losses = int(fp.losses.size)
    report.passage_censored = fp.censored
    if fp.gains.size:
        report.passage_mean_gain = float(fp.gains.mean())
    if fp.losses.size:
        report.passage_mean_loss = float(fp.losses.mean())
    return report


# ---------------------------------------------------------------------- I/O

SERIES_HEADER = ("t", "asset", "p_mid")


def write_series(path: str | Path, rows: Sequence[tuple[float, int, float]]) -> None:
    """Write ``(t, asset, mid)`` rows; mids are in currency units."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for t, asset, mid in rows:
            writer.writerow([f"{t:.3f}", asset, f"{mid:.3f}"])


def read_series(path: str | Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-asset ``(times, mids)`` arrays from a ``t,asset,p_mid`` file."""
    times: dict[int, list[float]] = {}
    mids: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SERIES_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SERIES_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, asset, mid = float(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: bad row {row!r}") from None
            times.setdefault(asset, []).append(t)
            mids.setdefault(asset, []).append(mid)
    return {k: (np.asarray(times[k]), np.asarray(mids[k])) for k in sorted(times)}
