"""Online estimators used by the intelligent market maker."""
from __future__ import annotations

import math
from math import isfinite
from operator import mul
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_P0 = 1e6


class RlsEstimator:
    """Recursive least squares with ``P`` initialised to ``p0 * I``.

    After enough well-conditioned observations the coefficients agree with a
    batch least-squares solve up to an initialisation bias of order ``1/p0``.
    The models here have four or six features, where plain float arithmetic
    is several times faster than numpy's per-call overhead; ``coef`` and ``P``
    are exposed as arrays.
    """

    def __init__(self, dim: int, p0: float = DEFAULT_P0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.p0 = p0
        self._coef = [0.0] * dim
        self._P = [[p0 if i == j else 0.0 for j in range(dim)] for i in range(dim)]
        self._gain = [0.0] * dim
        self.count = 0

    @property
    def coef(self) -> np.ndarray:
        return np.array(self._coef)

    @coef.setter
    def coef(self, value) -> None:
        value = [float(v) for v in value]
        if len(value) != self.dim:
            raise ValueError(f"expected {self.dim} coefficients")
        self._coef = value

    @property
    def P(self) -> np.ndarray:
        return np.array(self._P)

    @property
    def gain(self) -> np.ndarray:
        return np.array(self._gain)

    def _row(self, row) -> list[float]:
        a = row.tolist() if isinstance(row, np.ndarray) else [float(v) for v in row]
        if len(a) != self.dim or (a and isinstance(a[0], list)):
            raise ValueError(f"expected row of length {self.dim}, got {np.shape(row)}")
        return a

    def update(self, row: Sequence[float], y: float) -> bool:
        """Fold in one observation. Non-finite input is rejected and leaves the state unchanged."""
        a = self._row(row)
        y = float(y)
        if not (all(map(isfinite, a)) and isfinite(y)):
            return False
        P = self._P
        Pa = [sum(map(mul, r, a)) for r in P]
        denom = 1.0 + sum(map(mul, a, Pa))
        if not isfinite(denom):
            # float products overflow to inf instead of raising; such a row would wreck P
            return False
        k = [v / denom for v in Pa]
        err = y - sum(map(mul, a, self._coef))
        self._coef = [c + g * err for c, g in zip(self._coef, k)]
        # (Pa_i * Pa_j) / denom is the same float either way round, so P stays symmetric bit for bit
        self._P = [[p - pi * pj / denom for p, pj in zip(r, Pa)] for r, pi in zip(P, Pa)]
        self._gain = k
        self.count += 1
        return True

    def predict(self, row: Sequence[float]) -> float:
        return sum(map(mul, self._row(row), self._coef))

    def predict_many(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"expected rows of width {self.dim}")
        return rows @ self.coef


def flow_features(mid: float, s_ref: float, eps) -> np.ndarray:
    """Design rows ``[1, mid, S_ref, eps]`` for the order-flow model (one row per eps)."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    ones = np.ones_like(eps)
    return np.column_stack([ones, ones * mid, ones * s_ref, eps])


def pnl_features(mid: float, s_ref: float, eps) -> np.ndarray:
    """Design rows ``[1, mid, S_ref, eps, eps^2, eps^3]`` for the spread-PnL model."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    ones = np.ones_like(eps)
    return np.column_stack([ones, ones * mid, ones * s_ref, eps, eps**2, eps**3])


@dataclass
class OnlineMoments:
    """Welford running mean and population variance."""

    count: int = 0
    mean: float = 0.0
    m2: float = field(default=0.0)

    def update(self, x: float) -> OnlineMoments:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        return self

    def extend(self, xs) -> OnlineMoments:
        for x in xs:
            self.update(float(x))
        return self

    @property
    def variance(self) -> float:
        if self.count == 0:
            raise ValueError("variance of an empty set")
        return max(self.m2 / self.count, 0.0)

    def variance_or(self, default: float = 0.0) -> float:
        return self.variance if self.count else default

    def merge(self, other: OnlineMoments) -> OnlineMoments:
        """Combine two disjoint summaries (Chan et al. pairwise update)."""
        n = self.count + other.count
        if n == 0:
            return OnlineMoments()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return OnlineMoments(n, mean, m2)


def log_returns(prices: Sequence[float]) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    return np.diff(np.log(p))


def realized_volatility(prices: Sequence[float]) -> float:
    """Population standard deviation of one-step log returns."""
    if len(prices) < 2:
        raise ValueError("need at least two prices")
    r = log_returns(prices)
    return float(np.sqrt(np.mean((r - r.mean()) ** 2)))


def ia_sigma(sigma_returns: float, mid_change: float) -> float:
    """Market-volatility scale used in the inventory-risk terms.

    The square root is taken of the absolute mid-price move so downward moves
    stay real.
    """
    return sigma_returns * math.sqrt(abs(mid_change))
