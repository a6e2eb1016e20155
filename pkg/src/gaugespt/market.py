"""Market definition and price-path simulation.

The market has ``n`` securities driven by ``m <= n`` Brownian motions,

    dS_i / S_i = alpha_i(t) dt + sum_a sigma_ia(t) dW_a,

with coefficients that are piecewise constant in time.  Securities are
indexed ``0..n-1``; no security is singled out as numeraire here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .rng import ordered_map, path_generator

SCHEMES = ("log-exact", "euler")


class NonPositivePriceError(ArithmeticError):
    """An Euler step produced a price that is zero or negative."""

    def __init__(self, step: int, security: int, value: float):
        self.step = step
        self.security = security
        self.value = value
        super().__init__(
            f"euler step {step} produced non-positive price {value!r} for security {security}"
        )


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        steps = int(round(horizon / dt))
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * horizon:
            raise ValueError(f"horizon {horizon} is not a whole number of steps of size {dt}")
        return cls(horizon, steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(self.horizon, 1.0):
            raise ValueError(f"time {t} is not on the grid (dt={self.dt}, T={self.horizon})")
        return k

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Piecewise-constant coefficient table of the market.

    ``drift`` has shape ``(segments, n)``, ``vol`` has shape
    ``(segments, n, m)`` and ``breakpoints`` holds the start time of each
    segment (the first one is 0).  A constant market may be given with
    ``drift`` of shape ``(n,)`` and ``vol`` of shape ``(n, m)``.
    """

    drift: np.ndarray
    vol: np.ndarray
    initial_prices: np.ndarray
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        drift = np.array(self.drift, dtype=float)
        vol = np.array(self.vol, dtype=float)
        s0 = np.array(self.initial_prices, dtype=float)
        bp = np.atleast_1d(np.array(self.breakpoints, dtype=float))
        if drift.ndim == 1:
            drift = drift[None, :]
        if vol.ndim == 2:
            vol = vol[None, :, :]
        if drift.ndim != 2 or vol.ndim != 3:
            raise ValueError("drift must be (segments, n) and vol (segments, n, m)")
        segments, n = drift.shape
        if vol.shape[:2] != (segments, n):
            raise ValueError(f"vol shape {vol.shape} does not match drift shape {drift.shape}")
        m = vol.shape[2]
        if m < 1:
            raise ValueError("at least one driver is required")
        if m > n:
            raise ValueError(f"n_drivers ({m}) must not exceed n_securities ({n})")
        if s0.shape != (n,):
            raise ValueError(f"initial_prices must have length {n}, got shape {s0.shape}")
        if not np.all(np.isfinite(s0)) or np.any(s0 <= 0):
            raise ValueError("initial prices must be finite and strictly positive")
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(vol))):
            raise ValueError("drift and vol must be finite")
        if bp.shape != (segments,):
            raise ValueError(f"need one breakpoint per segment ({segments}), got {bp.shape[0]}")
        if bp[0] != 0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        for name, value in (("drift", drift), ("vol", vol), ("initial_prices", s0), ("breakpoints", bp)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def constant(cls, drift, vol, initial_prices) -> "MarketSpec":
        return cls(np.asarray(drift, float), np.asarray(vol, float), initial_prices)

    @property
    def n_securities(self) -> int:
        return self.drift.shape[1]

    @property
    def n_drivers(self) -> int:
        return self.vol.shape[2]

    @property
    def n_segments(self) -> int:
        return self.drift.shape[0]

    def segment_index(self, grid: TimeGrid) -> np.ndarray:
        """Segment in force on each slice ``[t_k, t_k+1)``, judged at its midpoint."""
        mid = (np.arange(grid.steps) + 0.5) * grid.dt
        return np.searchsorted(self.breakpoints, mid, side="right") - 1

    def coefficients(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """Per-slice ``alpha`` of shape (steps, n) and ``sigma`` of shape (steps, n, m)."""
        seg = self.segment_index(grid)
        return self.drift[seg], self.vol[seg]

    def to_dict(self) -> dict:
        return {
            "n_securities": self.n_securities,
            "n_drivers": self.n_drivers,
            "drift": self.drift.tolist(),
            "vol": self.vol.tolist(),
            "initial_prices": self.initial_prices.tolist(),
            "breakpoints": self.breakpoints.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketSpec":
        drift = np.asarray(d["drift"], dtype=float)
        vol = np.asarray(d["vol"], dtype=float)
        spec = cls(drift, vol, d["initial_prices"], d.get("breakpoints", [0.0]))
        for key, actual in (("n_securities", spec.n_securities), ("n_drivers", spec.n_drivers)):
            if key in d and int(d[key]) != actual:
                raise ValueError(f"{key} = {d[key]} disagrees with coefficient shapes ({actual})")
        return spec

    def __eq__(self, other):
        if not isinstance(other, MarketSpec):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("drift", "vol", "initial_prices", "breakpoints")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MarketPath:
    times: np.ndarray
    prices: np.ndarray  # (n, steps+1)
    driver_increments: np.ndarray  # (m, steps)
    seed: int
    scheme: str
    spec: MarketSpec
    grid: TimeGrid
    path_index: int = 0

    def returns(self) -> np.ndarray:
        """Arithmetic returns ``dS/S`` per slice, shape (steps, n)."""
        return (self.prices[:, 1:] / self.prices[:, :-1] - 1.0).T

    def csv_table(self) -> tuple[list[str], list[list]]:
        n, m = self.prices.shape[0], self.driver_increments.shape[0]
        header = ["t"] + [f"S{i + 1}" for i in range(n)] + [f"dW{a + 1}" for a in range(m)]
        rows = []
        for k, t in enumerate(self.times):
            dw = [None] * m if k == 0 else list(self.driver_increments[:, k - 1])
            rows.append([t, *self.prices[:, k], *dw])
        return header, rows


def draw_increments(seed: int, path_index: int, n_drivers: int, grid: TimeGrid) -> np.ndarray:
    """iid N(0, dt) driver increments of shape (m, steps) for one path."""
    rng = path_generator(seed, path_index)
    return rng.standard_normal((n_drivers, grid.steps)) * np.sqrt(grid.dt)


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum blocks of ``factor`` consecutive increments (the last axis)."""
    steps = increments.shape[-1]
    if steps % factor:
        raise ValueError(f"{steps} steps cannot be coarsened by a factor {factor}")
    return increments.reshape(*increments.shape[:-1], steps // factor, factor).sum(axis=-1)


def simulate_market(
    spec: MarketSpec,
    grid: TimeGrid,
    seed: int = 0,
    scheme: str = "log-exact",
    path_index: int = 0,
    increments: np.ndarray | None = None,
) -> MarketPath:
    """Simulate one price path.

    Parameters
    ----------
    spec, grid
        Market coefficients and time discretisation.
    seed, path_index
        Select the counter-based stream that supplies the driver increments.
    scheme : {"log-exact", "euler"}
        ``log-exact`` steps ``log S`` by ``(alpha - |sigma_i|^2 / 2) dt +
        sigma_i dW`` and is exact for piecewise-constant coefficients;
        ``euler`` multiplies by ``1 + alpha dt + sigma_i dW``.
    increments : ndarray, optional
        Driver increments of shape (m, steps) to use instead of drawing them,
        e.g. fine increments coarsened for a convergence study.

    Raises
    ------
    NonPositivePriceError
        If an Euler step leaves a price at or below zero.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    m = spec.n_drivers
    if increments is None:
        dW = draw_increments(seed, path_index, m, grid)
    else:
        dW = np.asarray(increments, dtype=float)
        if dW.shape != (m, grid.steps):
            raise ValueError(f"increments must have shape {(m, grid.steps)}, got {dW.shape}")
    alpha, sigma = spec.coefficients(grid)
    noise = np.einsum("kia,ak->ki", sigma, dW)
    s0 = spec.initial_prices
    if scheme == "log-exact":
        y = (alpha - 0.5 * (sigma**2).sum(axis=2)) * grid.dt + noise
        growth = np.exp(np.cumsum(y, axis=0))
        prices = np.vstack([s0, s0 * growth]).T
    else:
        factors = 1.0 + alpha * grid.dt + noise
        bad = np.argwhere(factors <= 0)
        if bad.size:
            step, sec = bad[0]
            raise NonPositivePriceError(int(step) + 1, int(sec), float(s0[sec] * np.prod(factors[: step + 1, sec])))
        prices = np.vstack([s0, s0 * np.cumprod(factors, axis=0)]).T
    return MarketPath(grid.times, prices, dW, int(seed), scheme, spec, grid, int(path_index))


def simulate_drift_only(spec: MarketSpec, grid: TimeGrid, drift_override) -> MarketPath:
    """Propagate prices with every driver increment forced to zero.

    ``drift_override`` is a vector of length ``n`` or a per-slice table of
    shape (steps, n).  The path solves ``dS/S = drift dt`` exactly; because
    the conditioned path carries no quadratic variation, no ``-sigma^2 / 2``
    term is applied.  The returned path's ``spec`` is the zero-volatility
    market with the override as its drift, so wealth computed on it from the
    spec's coefficients uses the same drift.
    """
    n, m = spec.n_securities, spec.n_drivers
    g = np.asarray(drift_override, dtype=float)
    if g.ndim == 1:
        g = np.broadcast_to(g, (grid.steps, n))
    if g.shape != (grid.steps, n):
        raise ValueError(f"drift_override must have shape ({n},) or ({grid.steps}, {n}), got {np.shape(drift_override)}")
    drift_spec = MarketSpec(g.copy(), np.zeros((grid.steps, n, m)), spec.initial_prices, grid.times[:-1])
    path = simulate_market(drift_spec, grid, scheme="log-exact", increments=np.zeros((m, grid.steps)))
    return MarketPath(path.times, path.prices, path.driver_increments, 0, "drift-only", drift_spec, grid)


def iter_paths(
    spec: MarketSpec, grid: TimeGrid, seed: int, n_paths: int, scheme: str = "log-exact"
) -> Iterator[MarketPath]:
    for p in range(n_paths):
        yield simulate_market(spec, grid, seed, scheme, path_index=p)


def map_paths(fn, spec: MarketSpec, grid: TimeGrid, seed: int, n_paths: int,
              scheme: str = "log-exact", threads: int | None = None) -> list:
    """Evaluate ``fn(path)`` on every path of an ensemble, in path order.

    Only ``fn``'s results are retained, so long grids do not need the whole
    ensemble in memory.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    return ordered_map(lambda p: fn(simulate_market(spec, grid, seed, scheme, path_index=p)),
                       range(n_paths), threads)


def stack_prices(paths: Sequence[MarketPath]) -> np.ndarray:
    return np.stack([p.prices for p in paths])
