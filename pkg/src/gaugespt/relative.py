"""Gauge coefficients of relative wealth ``Z^pi / Z^rho`` and its long-run residual.

Because ``sum(pi - rho) = 0`` the market mean drift and mean volatility drop
out of the relative wealth.  What remains is the excess volatility with
sensitivities

    beta_hat   = beta - rho^T sigma                 (level)
    beta_tilde = beta - (pi + rho)^T sigma / 2      (log)

plus the unchanged arbitrage part ``J alpha_A``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fitting import loglog_fit
from .gauge import DriftVolSnapshot, GaugeDecomposition, GaugeSchedule, decompose_schedule, stack_schedule
from .market import MarketPath, MarketSpec, TimeGrid, map_paths
from .portfolio import (
    WEIGHT_SUM_TOL,
    WealthFloorError,
    as_portfolio,
    check_weights,
    portfolio_value,
)

FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RelativeCoefficients:
    beta_hat: np.ndarray
    beta_tilde: np.ndarray
    alpha_A: np.ndarray
    J: np.ndarray

    def to_dict(self) -> dict:
        return {"beta_hat": self.beta_hat.tolist(), "beta_tilde": self.beta_tilde.tolist()}


@dataclass(frozen=True, eq=False)
class RelativeSDE:
    drift: float
    vol: np.ndarray
    log_drift: float

    def to_dict(self) -> dict:
        return {"drift": self.drift, "vol": self.vol.tolist(), "log_drift": self.log_drift}


def _pair(pi, rho, n: int) -> tuple[np.ndarray, np.ndarray]:
    pi, rho = check_weights(pi, np.inf), check_weights(rho, np.inf)
    if pi.shape != (n,) or rho.shape != (n,):
        raise ValueError(f"weights must have length {n}")
    # the mean drift and mean vol terms carry the factor sum(pi - rho)
    if abs((pi - rho).sum()) > 2 * WEIGHT_SUM_TOL:
        raise ValueError("sum(pi - rho) must vanish")
    return pi, rho


def predicted_relative_coeffs(decomp: GaugeDecomposition, snapshot: DriftVolSnapshot, pi, rho) -> RelativeCoefficients:
    pi, rho = _pair(pi, rho, snapshot.n)
    sigma = snapshot.sigma
    beta_hat = decomp.beta - rho @ sigma
    beta_tilde = decomp.beta - 0.5 * (pi + rho) @ sigma
    return RelativeCoefficients(beta_hat, beta_tilde, decomp.alpha_A, decomp.J)


def relative_sde_coeffs(snapshot: DriftVolSnapshot, decomp: GaugeDecomposition, pi, rho) -> RelativeSDE:
    """Coefficients of ``dZhat/Zhat`` computed straight from the market (Ito quotient rule)."""
    pi, rho = _pair(pi, rho, snapshot.n)
    d = pi - rho
    cov = snapshot.sigma @ snapshot.sigma.T
    drift = float(d @ (snapshot.alpha - cov @ rho))
    vol = d @ snapshot.sigma
    return RelativeSDE(drift, vol, drift - 0.5 * float(vol @ vol))


def gauge_relative_drift(decomp: GaugeDecomposition, snapshot: DriftVolSnapshot, pi, rho, log: bool = False) -> float:
    """Relative drift rebuilt from the gauge coefficients.

    ``sum_i (pi_i - rho_i) (b . sigma_hat_i + (J alpha_A)_i)`` with
    ``b = beta_hat`` (level) or ``beta_tilde`` (log).
    """
    coeffs = predicted_relative_coeffs(decomp, snapshot, pi, rho)
    b = coeffs.beta_tilde if log else coeffs.beta_hat
    d = np.asarray(pi, float) - np.asarray(rho, float)
    return float(d @ (decomp.excess_vol @ b + decomp.J @ decomp.alpha_A))


def relative_drift_schedule(path: MarketPath, decomps: Sequence[GaugeDecomposition] | GaugeSchedule, pi, rho,
                            log: bool = True) -> np.ndarray:
    """Per-slice gauge drift of the relative wealth along a path (weights may vary)."""
    g = stack_schedule(decomps)
    Wp, Wr = as_portfolio(pi).weights_for(path), as_portfolio(rho).weights_for(path)
    _, sigma = path.spec.coefficients(path.grid)
    mix = 0.5 * (Wp + Wr) if log else Wr
    sens = g.beta - np.einsum("ki,kia->ka", mix, sigma)
    per_security = np.einsum("kia,ka->ki", g.excess_vol, sens) + g.arbitrage_drift
    return ((Wp - Wr) * per_security).sum(axis=1)


def relative_sde_schedule(alpha: np.ndarray, sigma: np.ndarray, Wp: np.ndarray, Wr: np.ndarray):
    """Vectorised :func:`relative_sde_coeffs` over slices: (drift, vol, log_drift)."""
    d = Wp - Wr
    b_rho = np.einsum("ki,kia->ka", Wr, sigma)
    cov_rho = np.einsum("kia,ka->ki", sigma, b_rho)
    drift = (d * (alpha - cov_rho)).sum(axis=1)
    vol = np.einsum("ki,kia->ka", d, sigma)
    return drift, vol, drift - 0.5 * (vol**2).sum(axis=1)


def relative_wealth_paths(Zpi, Zrho, floor: float = FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ratio ``Z^pi / Z^rho`` and its logarithm."""
    zp = np.asarray(getattr(Zpi, "values", Zpi), dtype=float)
    zr = np.asarray(getattr(Zrho, "values", Zrho), dtype=float)
    if zp.shape != zr.shape:
        raise ValueError(f"wealth paths differ in shape: {zp.shape} vs {zr.shape}")
    z0 = zr[..., :1]
    if np.any(zr < floor * z0):
        raise WealthFloorError(f"benchmark wealth fell below {floor} of its initial value")
    ratio = zp / zr
    return ratio, np.log(ratio)


def simulate_relative_sde(path: MarketPath, pi, rho, Zhat0: float = 1.0, scheme: str = "milstein") -> np.ndarray:
    """Integrate ``dZhat/Zhat = drift dt + vol . dW`` directly on the path's increments.

    The noise is commutative (one scalar state), so the Milstein correction
    needs no Levy areas.
    """
    if scheme not in ("milstein", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    Wp, Wr = as_portfolio(pi).weights_for(path), as_portfolio(rho).weights_for(path)
    alpha, sigma = path.spec.coefficients(path.grid)
    dt = path.grid.dt
    drift, vol, _ = relative_sde_schedule(alpha, sigma, Wp, Wr)
    x = (vol * path.driver_increments.T).sum(axis=1)
    factors = 1.0 + drift * dt + x
    if scheme == "milstein":
        factors += 0.5 * (x * x - (vol**2).sum(axis=1) * dt)
    return np.cumprod(np.concatenate([[Zhat0], factors]))


@dataclass(frozen=True)
class ResidualRow:
    T: float
    rms_residual: float
    mean_residual: float
    n_paths: int


def _residuals_at(logZhat: np.ndarray, predicted_drift: np.ndarray, grid: TimeGrid,
                  horizons: Sequence[float]) -> np.ndarray:
    logZhat = np.atleast_2d(logZhat)
    predicted_drift = np.asarray(predicted_drift, float)
    if predicted_drift.shape[-1] != grid.steps or logZhat.shape[-1] != grid.steps + 1:
        raise ValueError("path and drift lengths must match the grid")
    cum = np.concatenate([np.zeros(predicted_drift.shape[:-1] + (1,)), np.cumsum(predicted_drift, -1) * grid.dt], -1)
    cum = np.atleast_2d(cum)
    out = np.empty((logZhat.shape[0], len(horizons)))
    for h, T in enumerate(horizons):
        k = grid.index_of(T)
        if k == 0:
            raise ValueError("horizons must be positive")
        out[:, h] = (logZhat[:, k] - logZhat[:, 0] - cum[:, k]) / (k * grid.dt)
    return out


def residual_table(residuals: np.ndarray, horizons: Sequence[float]) -> list[ResidualRow]:
    residuals = np.atleast_2d(residuals)
    return [
        ResidualRow(float(T), float(np.sqrt((residuals[:, h] ** 2).mean())), float(residuals[:, h].mean()),
                    residuals.shape[0])
        for h, T in enumerate(horizons)
    ]


def longterm_residual(logZhat, predicted_drift, grid: TimeGrid, horizons: Sequence[float]) -> list[ResidualRow]:
    """``(1/T)(log Zhat_T - log Zhat_0 - int_0^T drift dt)`` over an ensemble.

    ``logZhat`` is one path (steps+1,) or an ensemble (n_paths, steps+1);
    ``predicted_drift`` holds the per-slice log drift, either shared or one
    row per path.
    """
    return residual_table(_residuals_at(np.asarray(logZhat, float), predicted_drift, grid, horizons), horizons)


def residual_csv(rows: Sequence[ResidualRow]) -> tuple[list[str], list[list]]:
    return ["T", "rms_residual", "mean_residual", "n_paths"], [
        [r.T, r.rms_residual, r.mean_residual, r.n_paths] for r in rows
    ]


def residual_decay(rows: Sequence[ResidualRow]) -> tuple[float, float]:
    """Log-log slope (and R^2) of the RMS residual against the horizon."""
    return loglog_fit([r.T for r in rows], [r.rms_residual for r in rows])


def longrun_residual_experiment(spec: MarketSpec, grid: TimeGrid, pi, rho, seed: int, n_paths: int,
                         horizons: Sequence[float], price_scheme: str = "log-exact",
                         wealth_scheme: str = "euler-returns", rank_tol: float = 1e-10,
                         threads: int | None = None) -> list[ResidualRow]:
    """Simulate relative wealth and tabulate the long-run residual at ``horizons``.

    Each path is reduced to its residuals as soon as it is simulated.
    """
    decomps = stack_schedule(decompose_schedule(spec, grid, rank_tol))

    def one(path: MarketPath) -> np.ndarray:
        zp = portfolio_value(path, pi, 1.0, wealth_scheme)
        zr = portfolio_value(path, rho, 1.0, wealth_scheme)
        _, logz = relative_wealth_paths(zp, zr)
        drift = relative_drift_schedule(path, decomps, pi, rho, log=True)
        return _residuals_at(logz, drift, grid, horizons)[0]

    res = np.array(map_paths(one, spec, grid, seed, n_paths, price_scheme, threads))
    return residual_table(res, horizons)
