"""Portfolios, wealth processes and long-run diagnostics of the market."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .gauge import DriftVolSnapshot
from .market import MarketPath

WEALTH_SCHEMES = ("euler-returns", "log-ito")
WEIGHT_SUM_TOL = 1e-12
DEFAULT_BOUND = 10.0


class WeightSumError(ValueError):
    pass


class WealthFloorError(ArithmeticError):
    """A benchmark wealth fell below the floor required for relative quantities."""


def check_weights(w, bound: float = DEFAULT_BOUND) -> np.ndarray:
    """Validate weights (a vector or one row per slice) without renormalising."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    dev = np.abs(w.sum(axis=-1) - 1.0)
    if np.any(dev > WEIGHT_SUM_TOL):
        where = int(np.argmax(dev)) if w.ndim > 1 else 0
        raise WeightSumError(f"weights sum to {w.sum(axis=-1).flat[where]!r} (slice {where}), not 1")
    if np.any(np.abs(w) > bound):
        raise ValueError(f"weights exceed the bound {bound}")
    return w


@dataclass(frozen=True, eq=False)
class Portfolio:
    kind: str
    weights: np.ndarray | None = None
    bound: float = DEFAULT_BOUND

    def __post_init__(self):
        if self.kind not in ("constant", "market", "schedule"):
            raise ValueError(f"unknown portfolio kind {self.kind!r}")
        if self.kind == "market":
            if self.weights is not None:
                raise ValueError("the market portfolio takes no weights")
            return
        w = check_weights(self.weights, self.bound)
        if self.kind == "constant" and w.ndim != 1:
            raise ValueError("constant weights must be a vector")
        if self.kind == "schedule" and w.ndim != 2:
            raise ValueError("a weight schedule must have one row per slice")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, weights, bound: float = DEFAULT_BOUND) -> "Portfolio":
        return cls("constant", np.asarray(weights, dtype=float), bound)

    @classmethod
    def market(cls) -> "Portfolio":
        return cls("market")

    @classmethod
    def schedule(cls, weights, bound: float = DEFAULT_BOUND) -> "Portfolio":
        return cls("schedule", np.asarray(weights, dtype=float), bound)

    @classmethod
    def equal(cls, n: int) -> "Portfolio":
        return cls.constant(np.full(n, 1.0 / n))

    def weights_for(self, path: MarketPath) -> np.ndarray:
        """Weights held over each slice, shape (steps, n)."""
        n, steps = path.prices.shape[0], path.prices.shape[1] - 1
        if self.kind == "market":
            return (path.prices[:, :-1] / path.prices[:, :-1].sum(axis=0)).T
        if self.kind == "constant":
            if self.weights.shape != (n,):
                raise ValueError(f"portfolio has {self.weights.shape[0]} weights, market has {n} securities")
            return np.broadcast_to(self.weights, (steps, n))
        if self.weights.shape != (steps, n):
            raise ValueError(f"weight schedule has shape {self.weights.shape}, path needs {(steps, n)}")
        return self.weights


def as_portfolio(pf) -> Portfolio:
    return pf if isinstance(pf, Portfolio) else Portfolio.constant(pf)


@dataclass(frozen=True, eq=False)
class WealthPath:
    times: np.ndarray
    values: np.ndarray
    scheme: str

    def csv_table(self) -> tuple[list[str], list[list]]:
        return ["t", "Z"], [[t, z] for t, z in zip(self.times, self.values)]


def weighted_returns(weights: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Sum of ``weights * returns`` over the last axis.

    Shared by the wealth recursion and the connection increment so both
    produce identical floating-point results.
    """
    return (weights * returns).sum(axis=-1)


def portfolio_value(path: MarketPath, pf, Z0: float = 1.0, scheme: str = "euler-returns") -> WealthPath:
    """Wealth of portfolio ``pf`` along ``path``.

    ``euler-returns`` applies ``Z_k+1 = Z_k (1 + sum_i pi_i dS_i/S_i)`` to
    the realised returns.  ``log-ito`` steps ``log Z`` by
    ``(pi.alpha - |pi^T sigma|^2 / 2) dt + pi^T sigma dW`` using the path's
    coefficients and increments, which is exact for constant weights and
    piecewise-constant coefficients.
    """
    if not Z0 > 0:
        raise ValueError(f"Z0 must be positive, got {Z0}")
    if scheme not in WEALTH_SCHEMES:
        raise ValueError(f"unknown wealth scheme {scheme!r}; expected one of {WEALTH_SCHEMES}")
    pf = as_portfolio(pf)
    W = pf.weights_for(path)
    if scheme == "euler-returns":
        growth = 1.0 + weighted_returns(W, path.returns())
        values = np.cumprod(np.concatenate([[Z0], growth]))
    else:
        alpha, sigma = path.spec.coefficients(path.grid)
        b = np.einsum("ki,kia->ka", W, sigma)
        drift = (W * alpha).sum(axis=1) - 0.5 * (b**2).sum(axis=1)
        y = drift * path.grid.dt + (b * path.driver_increments.T).sum(axis=1)
        values = Z0 * np.exp(np.concatenate([[0.0], np.cumsum(y)]))
    return WealthPath(path.times, values, scheme)


def market_portfolio(prices) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
        raise ValueError("market weights need finite, strictly positive prices")
    return prices / prices.sum()


def growth_rate(snapshot: DriftVolSnapshot) -> np.ndarray:
    return snapshot.alpha - 0.5 * (snapshot.sigma**2).sum(axis=1)


@dataclass(frozen=True)
class RelativeArbitrageReport:
    q: float
    T: float
    frac_geq: float
    frac_gt: float
    floor_ok: float
    verdict: bool
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "q": self.q, "T": self.T, "frac_geq": self.frac_geq, "frac_gt": self.frac_gt,
            "floor_ok": self.floor_ok, "verdict": self.verdict, "n_paths": self.n_paths,
        }


def detect_relative_arbitrage(Zpi, Zrho, q: float, T: float) -> RelativeArbitrageReport:
    """Empirical relative-arbitrage check on paired wealth ensembles.

    ``Zpi`` and ``Zrho`` have shape (n_paths, steps+1) and must come from the
    same driver paths.  The verdict only summarises the sample; it is not a
    statement about almost-sure behaviour.
    """
    Zpi = np.atleast_2d(np.asarray(Zpi, dtype=float))
    Zrho = np.atleast_2d(np.asarray(Zrho, dtype=float))
    if Zpi.shape != Zrho.shape:
        raise ValueError(f"unpaired ensembles: shapes {Zpi.shape} and {Zrho.shape}")
    if not q > 0:
        raise ValueError("q must be positive")
    if not np.allclose(Zpi[:, 0], Zrho[:, 0], rtol=1e-12, atol=0):
        raise ValueError("relative arbitrage needs equal initial wealth")
    if np.any(Zrho <= 0):
        raise WealthFloorError("benchmark wealth must stay positive")
    geq = Zpi[:, -1] >= Zrho[:, -1]
    gt = Zpi[:, -1] > Zrho[:, -1]
    floor = np.min(Zpi / Zrho, axis=1) >= q
    frac_geq, frac_gt, floor_ok = float(geq.mean()), float(gt.mean()), float(floor.mean())
    verdict = frac_geq == 1.0 and frac_gt > 0.0 and floor_ok == 1.0
    return RelativeArbitrageReport(float(q), float(T), frac_geq, frac_gt, floor_ok, bool(verdict), Zpi.shape[0])


def check_nondegeneracy(snapshot: DriftVolSnapshot, eps: float) -> tuple[bool, float]:
    """Whether the smallest eigenvalue of ``sigma sigma^T`` is at least ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    cov = snapshot.sigma @ snapshot.sigma.T
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    return min_eig >= eps, min_eig


@dataclass(frozen=True)
class CoherenceRow:
    horizon: float
    security: int
    mean: float
    q05: float
    q50: float
    q95: float
    mean_abs: float


def coherence_values(path: MarketPath, horizons: Sequence[float]) -> np.ndarray:
    """``(1/T) log(mu_T / mu_0)`` for each horizon (rows) and security (columns)."""
    idx = [path.grid.index_of(T) for T in horizons]
    if any(k == 0 for k in idx):
        raise ValueError("horizons must be positive")
    mu = path.prices / path.prices.sum(axis=0)
    return np.array([np.log(mu[:, k] / mu[:, 0]) / (k * path.grid.dt) for k in idx])


def coherence_table(values: np.ndarray, horizons: Sequence[float]) -> list[CoherenceRow]:
    """Summarise stacked :func:`coherence_values` of shape (paths, horizons, n)."""
    arr = np.asarray(values, float)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("empty ensemble")
    rows = []
    for h, T in enumerate(horizons):
        for i in range(arr.shape[2]):
            x = arr[:, h, i]
            q05, q50, q95 = np.quantile(x, [0.05, 0.5, 0.95])
            rows.append(CoherenceRow(float(T), i + 1, float(x.mean()), float(q05), float(q50), float(q95),
                                     float(np.abs(x).mean())))
    return rows


def check_coherence(paths: Iterable[MarketPath], horizons: Sequence[float]) -> list[CoherenceRow]:
    """Finite-horizon trend of ``(1/T) log(mu_T / mu_0)`` per security.

    Coherence is a statement about ``T -> infinity``; the table is a
    diagnostic of how the ensemble behaves at the given horizons.  The
    initial weight is divided out so that a market whose weights never move
    reports exactly zero.
    """
    values = [coherence_values(p, horizons) for p in paths]
    if not values:
        raise ValueError("empty ensemble")
    return coherence_table(np.array(values), horizons)


def coherence_csv(rows: Sequence[CoherenceRow]) -> tuple[list[str], list[list]]:
    header = ["T", "security", "mean", "q05", "q50", "q95", "mean_abs"]
    return header, [[r.horizon, r.security, r.mean, r.q05, r.q50, r.q95, r.mean_abs] for r in rows]
