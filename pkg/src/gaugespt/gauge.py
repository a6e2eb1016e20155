"""Split of security drifts into market, volatility-explained and arbitrage parts.

For one time slice with drifts ``alpha`` (n,) and loadings ``sigma`` (n, m)::

    alpha = abar * 1 + sigma_hat @ beta + J @ alpha_A

where ``abar`` is the cross-sectional mean drift, ``sigma_hat`` the loadings
minus their cross-sectional mean, ``beta`` the minimum-norm least-squares
coefficients and ``J`` an orthonormal basis of the directions that sum to zero
and are orthogonal to every column of ``sigma_hat``.  ``alpha_A @ alpha_A`` is
the arbitrage measure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import MarketSpec, TimeGrid


@dataclass(frozen=True, eq=False)
class DriftVolSnapshot:
    alpha: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = sigma[:, None]
        if alpha.ndim != 1 or sigma.ndim != 2 or sigma.shape[0] != alpha.shape[0]:
            raise ValueError(f"alpha must be (n,) and sigma (n, m); got {alpha.shape} and {sigma.shape}")
        if alpha.shape[0] < 2:
            raise ValueError("a snapshot needs at least two securities")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(sigma))):
            raise ValueError("snapshot coefficients must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]


@dataclass(frozen=True, eq=False)
class GaugeDecomposition:
    market_drift: float
    market_vol: np.ndarray
    excess_vol: np.ndarray
    beta: np.ndarray
    J: np.ndarray
    alpha_A: np.ndarray
    k: int
    rank: int
    reconstruction_residual: float

    @property
    def alpha_star(self) -> float:
        """Drift shared by all securities once drivers are shifted by ``beta``."""
        return float(self.market_drift - self.beta @ self.market_vol)

    @property
    def arbitrage_drift(self) -> np.ndarray:
        """Per-security arbitrage component ``J @ alpha_A``."""
        return self.J @ self.alpha_A

    @property
    def measure(self) -> float:
        return arbitrage_measure(self)

    def to_dict(self) -> dict:
        return {
            "abar": self.market_drift,
            "sbar": self.market_vol.tolist(),
            "beta": self.beta.tolist(),
            "k": self.k,
            "alphaA": self.alpha_A.tolist(),
            "measure": self.measure,
            "residual": self.reconstruction_residual,
        }

    def J_table(self) -> tuple[list[str], list[list]]:
        header = ["security"] + [f"J{c + 1}" for c in range(self.k)]
        return header, [[i + 1, *row] for i, row in enumerate(self.J)]


def _orient(J: np.ndarray, alpha: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    n, k = J.shape
    for c in range(k):
        col = np.abs(J[:, c])
        # lowest index among (numerically) tied maxima
        i = int(np.flatnonzero(col >= col.max() - 1e-12)[0])
        if J[i, c] < 0:
            J[:, c] = -J[:, c]
    alpha_A = J.T @ alpha

    def first_nonzero(c):
        nz = np.flatnonzero(np.abs(J[:, c]) > 1e-12)
        return int(nz[0]) if nz.size else n

    order = sorted(range(k), key=lambda c: (-round(abs(alpha_A[c]) / scale, 12), first_nonzero(c)))
    return J[:, order], alpha_A[order]


def decompose(snapshot: DriftVolSnapshot, rank_tol: float = 1e-10, k: int | None = None) -> GaugeDecomposition:
    """Decompose one drift/vol snapshot.

    Parameters
    ----------
    snapshot : DriftVolSnapshot
    rank_tol : float
        Singular values of the excess volatility below ``rank_tol`` times the
        largest one count as zero.
    k : int, optional
        Keep only the first ``k`` basis vectors (after ordering by
        ``|alpha_A|``).  Defaults to the full complement,
        ``n - 1 - rank(sigma_hat)``.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    alpha, sigma = snapshot.alpha, snapshot.sigma
    n = alpha.shape[0]
    abar = float(alpha.mean())
    sbar = sigma.mean(axis=0)
    shat = sigma - sbar

    U, s, Vt = np.linalg.svd(shat, full_matrices=True)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    centered = alpha - abar
    beta = Vt[:rank].T @ ((U[:, :rank].T @ centered) / s[:rank])

    spanned = np.column_stack([np.full(n, 1.0 / np.sqrt(n)), U[:, :rank]])
    Q, _ = np.linalg.qr(spanned, mode="complete")
    J = Q[:, rank + 1:].copy()
    J, alpha_A = _orient(J, alpha, 1.0 + np.abs(alpha).max())
    k_full = J.shape[1]
    if k is not None:
        if not 0 <= k <= k_full:
            raise ValueError(f"k must lie in [0, {k_full}], got {k}")
        J, alpha_A = J[:, :k], alpha_A[:k]

    recon = abar + shat @ beta + J @ alpha_A
    residual = float(np.linalg.norm(alpha - recon))
    return GaugeDecomposition(abar, sbar, shat, beta, J, alpha_A, J.shape[1], rank, residual)


def reconstruct_drift(decomp: GaugeDecomposition) -> np.ndarray:
    return decomp.market_drift + decomp.excess_vol @ decomp.beta + decomp.J @ decomp.alpha_A


def arbitrage_measure(decomp: GaugeDecomposition) -> float:
    return float(decomp.alpha_A @ decomp.alpha_A)


def arbitrage_wealth(decomps: Sequence[GaugeDecomposition], grid: TimeGrid) -> float:
    """Integral of the arbitrage measure over the grid (one decomposition per slice)."""
    if len(decomps) != grid.steps:
        raise ValueError(f"expected {grid.steps} decompositions, got {len(decomps)}")
    return float(sum(arbitrage_measure(d) for d in decomps) * grid.dt)


def decompose_spec(spec: MarketSpec, rank_tol: float = 1e-10) -> list[GaugeDecomposition]:
    """One decomposition per coefficient segment of ``spec``."""
    return [
        decompose(DriftVolSnapshot(spec.drift[s], spec.vol[s], float(spec.breakpoints[s])), rank_tol)
        for s in range(spec.n_segments)
    ]


def decompose_schedule(spec: MarketSpec, grid: TimeGrid, rank_tol: float = 1e-10) -> list[GaugeDecomposition]:
    """Per-slice decompositions; slices in the same segment share one object."""
    per_segment = decompose_spec(spec, rank_tol)
    return [per_segment[s] for s in spec.segment_index(grid)]


@dataclass(frozen=True, eq=False)
class GaugeSchedule:
    """Per-slice gauge quantities stacked into arrays (leading axis = slice)."""

    market_drift: np.ndarray  # (steps,)
    market_vol: np.ndarray  # (steps, m)
    excess_vol: np.ndarray  # (steps, n, m)
    beta: np.ndarray  # (steps, m)
    arbitrage_drift: np.ndarray  # (steps, n)
    measure: np.ndarray  # (steps,)

    @property
    def alpha_star(self) -> np.ndarray:
        return self.market_drift - (self.beta * self.market_vol).sum(axis=1)


def stack_schedule(decomps: Sequence[GaugeDecomposition]) -> GaugeSchedule:
    """Stack per-slice decompositions; shared objects are evaluated once."""
    if isinstance(decomps, GaugeSchedule):
        return decomps
    slot: dict[int, int] = {}
    uniq: list[GaugeDecomposition] = []
    idx = np.empty(len(decomps), dtype=np.intp)
    for k, d in enumerate(decomps):
        i = slot.get(id(d))
        if i is None:
            i = slot[id(d)] = len(uniq)
            uniq.append(d)
        idx[k] = i
    return GaugeSchedule(
        np.array([d.market_drift for d in uniq])[idx],
        np.array([d.market_vol for d in uniq])[idx],
        np.array([d.excess_vol for d in uniq])[idx],
        np.array([d.beta for d in uniq])[idx],
        np.array([d.arbitrage_drift for d in uniq])[idx],
        np.array([d.measure for d in uniq])[idx],
    )


def beta_schedule(decomps: Sequence[GaugeDecomposition]) -> np.ndarray:
    """Per-slice ``beta``, shape (steps, m)."""
    return stack_schedule(decomps).beta
