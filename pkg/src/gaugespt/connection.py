"""Malaney-Weinstein connections, the numeraire shift, curvature and
stochastic parallel transport of portfolio wealth.

Conventions used throughout:

* ``beta`` comes from the gauge decomposition, ``alpha* = abar - beta . sbar``
  and the shifted drivers are ``W* = W + int beta dt``.  Under the measure
  that makes ``W*`` Brownian, every security drifts at
  ``alpha* + (J alpha_A)_i``.
* The Nelson derivative is read per measure: under P* the drift of
  ``log S_i`` is ``alpha* + (J alpha_A)_i``, under P it is the growth rate
  ``gamma_i``.
* The normal expectation (conditioning on all drivers staying at zero) is
  evaluated by drift-only propagation, see :func:`simulate_drift_only`.

The pathwise transport identity obtained from the auxiliary asset ``Lambda``
is, by Ito's product rule,

    log(Lambda_T Z_T / Lambda_t Z_t) = int (b - beta) dW - 1/2 int |b - beta|^2 ds.

The variant without the ``-1/2 int |b - beta|^2`` term is kept behind
``corrections=False`` so its bias can be measured.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gauge import DriftVolSnapshot, GaugeDecomposition, GaugeSchedule, decompose_schedule, stack_schedule
from .market import MarketPath, MarketSpec, TimeGrid, map_paths, simulate_drift_only
from .portfolio import (
    WEIGHT_SUM_TOL,
    as_portfolio,
    check_weights,
    growth_rate,
    portfolio_value,
    weighted_returns,
)

# Coordinate components of the portfolio-valued curvature in the (pi, S)
# chart.  Documentation values only; curvature_density is the computed form.
CURVATURE_COMPONENTS = {
    "R_00": "0",
    "R_01": "1/(2 S)",
    "R_10": "-1/(2 S)",
    "R_11": "0",
}


def mw_connection_increment(phi, deltaS, V: float) -> float:
    """Discrete connection increment ``phi . dS / V`` of a trading strategy."""
    if V == 0:
        raise ZeroDivisionError("wealth V must be non-zero")
    return float(np.dot(np.asarray(phi, float), np.asarray(deltaS, float)) / V)


def portfolio_connection_increment(pi, returns) -> float:
    """Increment ``sum_i pi_i dS_i / S_i`` of the portfolio-valued connection.

    Parallel transport ``(d - A^pi) Z = 0`` discretises to
    ``Z_k+1 = Z_k (1 + increment)``, which is exactly the euler-returns wealth
    step of :func:`portfolio_value`.
    """
    pi = check_weights(pi, np.inf)
    return float(weighted_returns(pi, np.asarray(returns, float)))


def numeraire_gauge_shift(pi, returns, numeraire_return: float) -> tuple[float, float]:
    """Connection increment after discounting by a numeraire, and the affine shift.

    Returns ``(A_hat, Lambda)`` with ``A_hat = sum_i pi_i r_hat_i`` where
    ``r_hat_i = (1 + r_i) / (1 + r_0) - 1 = (r_i - r_0) / (1 + r_0)``, and ``Lambda = A_hat - A^pi``.
    To first order in the returns ``Lambda = -r_0``.
    """
    if numeraire_return <= -1:
        raise ValueError("numeraire return must exceed -1")
    pi = check_weights(pi, np.inf)
    r = np.asarray(returns, float)
    discounted = (r - numeraire_return) / (1.0 + numeraire_return)
    a_hat = float(weighted_returns(pi, discounted))
    return a_hat, a_hat - float(weighted_returns(pi, r))


def numeraire_shift_path(path: MarketPath, pi, numeraire: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice ``(A_hat, Lambda)`` when security ``numeraire`` discounts the others."""
    W = as_portfolio(pi).weights_for(path)
    R = path.returns()
    r0 = R[:, numeraire]
    disc = (R - r0[:, None]) / (1.0 + r0[:, None])
    a_hat = weighted_returns(W, disc)
    return a_hat, a_hat - weighted_returns(W, R)


def curvature_density(growth, pi_schedule) -> np.ndarray:
    """Per-slice expected curvature ``sum_i gamma_i dpi_i``.

    ``pi_schedule`` holds weights at consecutive times (rows); ``growth`` is
    one vector (applied to every slice) or one row per weight change.
    Vanishes when the weights do not move or when every log price has zero
    drift.
    """
    pi = np.asarray(pi_schedule, float)
    if pi.ndim != 2 or pi.shape[0] < 2:
        raise ValueError("pi_schedule needs at least two rows of weights")
    dpi = np.diff(pi, axis=0)
    g = np.asarray(growth, float)
    if g.ndim == 1:
        g = np.broadcast_to(g, dpi.shape)
    if g.shape != dpi.shape:
        raise ValueError(f"growth shape {g.shape} does not match {dpi.shape[0]} weight changes")
    return (g * dpi).sum(axis=1)


def portfolio_mw_connection(decomp: GaugeDecomposition, pi) -> float:
    """Density of the stochastic portfolio connection, ``alpha* + pi . (J alpha_A)``."""
    pi = check_weights(pi, np.inf)
    return decomp.alpha_star + float(pi @ decomp.arbitrage_drift)


def stochastic_mw_connection(decomp: GaugeDecomposition, snapshot: DriftVolSnapshot, phi, prices, V: float) -> float:
    """Density of the stochastic connection of a self-financing strategy ``phi``."""
    phi = np.asarray(phi, float)
    prices = np.asarray(prices, float)
    if phi.shape != (snapshot.n,) or prices.shape != (snapshot.n,):
        raise ValueError("phi and prices must match the snapshot's securities")
    if abs(V - phi @ prices) > 1e-10 * max(abs(V), 1.0):
        raise ValueError(f"V = {V!r} is not the strategy value {phi @ prices!r}")
    return decomp.alpha_star + float(decomp.arbitrage_drift @ (phi * prices)) / V


def holdings_from_weights(pi, prices, V: float) -> np.ndarray:
    """Units ``phi_i = pi_i V / S_i`` held by a portfolio of value ``V``."""
    return np.asarray(pi, float) * V / np.asarray(prices, float)


# ---------------------------------------------------------------------------
# measure change


def girsanov_density(beta, driver_increments, dt: float, t_index: int = 0, increments_under: str = "P"):
    """Radon-Nikodym density ``dP/dP*`` over ``[t, T]``.

    ``exp(-1/2 int |beta|^2 ds + int beta . dW*)`` with ``dW* = dW + beta dt``.
    ``driver_increments`` has shape (..., m, steps); a leading axis evaluates
    an ensemble.  Pass ``increments_under="P*"`` when the increments were
    drawn as P*-Brownian motion (then they are ``dW*`` already).
    """
    beta = np.asarray(beta, float)
    dW = np.asarray(driver_increments, float)
    steps = dW.shape[-1]
    if beta.ndim == 1:
        beta = np.broadcast_to(beta, (steps, beta.shape[0]))
    if beta.shape != (steps, dW.shape[-2]):
        raise ValueError(f"beta shape {beta.shape} does not match increments {dW.shape}")
    if not 0 <= t_index <= steps:
        raise IndexError(f"t_index {t_index} outside [0, {steps}]")
    if increments_under not in ("P", "P*"):
        raise ValueError("increments_under must be 'P' or 'P*'")
    b = beta[t_index:]
    inc = dW[..., t_index:]
    dWstar = inc + b.T * dt if increments_under == "P" else inc
    log_density = -0.5 * float((b**2).sum()) * dt + np.einsum("ka,...ak->...", b, dWstar)
    return np.exp(log_density)


def novikov_estimate(beta, dt: float, batches: int = 4, tol: float = 0.05) -> float:
    """Estimate ``E[exp(1/2 int |beta|^2 dt)]``.

    ``beta`` of shape (steps, m) is deterministic and gives the closed form.
    An ensemble (n_paths, steps, m) is averaged on nested batches of size
    N/2^j; if the estimate keeps moving by more than ``tol`` (relative)
    across the last doublings it is reported as ``inf``.
    """
    beta = np.asarray(beta, float)
    if beta.ndim == 2:
        return float(np.exp(0.5 * (beta**2).sum() * dt))
    with np.errstate(over="ignore"):
        x = np.exp(0.5 * (beta**2).sum(axis=(1, 2)) * dt)
    if not np.all(np.isfinite(x)):
        return float("inf")
    n = x.shape[0]
    sizes = [max(n >> j, 1) for j in range(batches - 1, -1, -1)]
    est = [float(x[:s].mean()) for s in sizes]
    jumps = [abs(b - a) / a for a, b in zip(est, est[1:])]
    if len(jumps) >= 2 and all(j > tol for j in jumps[-2:]):
        return float("inf")
    return est[-1]


@dataclass(frozen=True, eq=False)
class MeasureChange:
    beta: np.ndarray  # (steps, m)
    alpha_star: np.ndarray  # (steps,)
    shifted_increments: np.ndarray  # (m, steps)
    density: float
    novikov_estimate: float


def measure_change(path: MarketPath, decomps, t_index: int = 0) -> MeasureChange:
    g = stack_schedule(decomps)
    dt = path.grid.dt
    return MeasureChange(
        g.beta, g.alpha_star, path.driver_increments + g.beta.T * dt,
        float(girsanov_density(g.beta, path.driver_increments, dt, t_index)),
        novikov_estimate(g.beta, dt),
    )


# ---------------------------------------------------------------------------
# Lambda asset and transport identities


def portfolio_coefficients(path: MarketPath, pi) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice ``a = pi . alpha`` (steps,) and ``b = pi^T sigma`` (steps, m)."""
    W = as_portfolio(pi).weights_for(path)
    alpha, sigma = path.spec.coefficients(path.grid)
    return (W * alpha).sum(axis=1), np.einsum("ki,kia->ka", W, sigma)


def lambda_process(path: MarketPath, pi, beta, Lambda0: float = 1.0) -> np.ndarray:
    """Auxiliary asset ``dLambda = Lambda ((-a + b . beta) dt - beta . dW)``.

    Stepped exactly in log space, so ``Lambda Z`` is a discrete martingale
    whenever ``Z`` is.
    """
    a, b = portfolio_coefficients(path, pi)
    beta = np.asarray(beta, float)
    if beta.ndim == 1:
        beta = np.broadcast_to(beta, b.shape)
    if beta.shape != b.shape:
        raise ValueError(f"beta shape {beta.shape} does not match {b.shape}")
    dt = path.grid.dt
    y = (-a + (b * beta).sum(axis=1) - 0.5 * (beta**2).sum(axis=1)) * dt - (beta * path.driver_increments.T).sum(axis=1)
    return Lambda0 * np.exp(np.concatenate([[0.0], np.cumsum(y)]))


@dataclass(frozen=True, eq=False)
class ConnectionPath:
    gamma: np.ndarray
    gamma_pi: np.ndarray
    a_coef: np.ndarray
    b_coef: np.ndarray
    lambda_: np.ndarray


def connection_path(path: MarketPath, pi, decomps, Lambda0: float = 1.0,
                    wealth_scheme: str = "euler-returns") -> ConnectionPath:
    """Connection densities along a path.

    ``gamma`` evaluates the strategy form with holdings induced by the
    portfolio (``phi_i = pi_i V / S_i``, ``V`` the wealth at slice start);
    ``gamma_pi`` the portfolio form.  The two agree slice by slice.
    """
    decomps = list(decomps)
    pf = as_portfolio(pi)
    W = pf.weights_for(path)
    V = portfolio_value(path, pf, 1.0, wealth_scheme).values
    alpha, sigma = path.spec.coefficients(path.grid)
    steps = path.grid.steps
    gamma = np.empty(steps)
    gamma_pi = np.empty(steps)
    for k in range(steps):
        S = path.prices[:, k]
        phi = holdings_from_weights(W[k], S, V[k])
        gamma[k] = stochastic_mw_connection(decomps[k], DriftVolSnapshot(alpha[k], sigma[k]), phi, S, float(phi @ S))
        gamma_pi[k] = portfolio_mw_connection(decomps[k], W[k])
    a, b = portfolio_coefficients(path, pf)
    lam = lambda_process(path, pf, stack_schedule(decomps).beta, Lambda0)
    return ConnectionPath(gamma, gamma_pi, a, b, lam)


def gamma_pi_schedule(path: MarketPath, pi, decomps) -> np.ndarray:
    """Vectorised per-slice ``alpha* + pi . (J alpha_A)``."""
    g = stack_schedule(decomps)
    W = as_portfolio(pi).weights_for(path)
    if np.any(np.abs(W.sum(axis=1) - 1.0) > WEIGHT_SUM_TOL):
        raise ValueError("weights must sum to one on every slice")
    return g.alpha_star + (W * g.arbitrage_drift).sum(axis=1)


def transport_log_gap(path: MarketPath, pi, beta, t_index: int = 0, corrections: bool = True,
                      wealth_scheme: str = "euler-returns", Z: np.ndarray | None = None) -> float:
    """``log(rhs / Z_t)`` of the pathwise transport identity.

    ``rhs = Z_T (Lambda_T / Lambda_t) exp(-int_t^T (b - beta) dW [+ 1/2 int_t^T |b - beta|^2 ds])``,
    the bracket present when ``corrections`` is on.
    """
    steps = path.grid.steps
    if not 0 <= t_index < steps:
        raise IndexError(f"t_index {t_index} outside [0, {steps})")
    pf = as_portfolio(pi)
    if Z is None:
        Z = portfolio_value(path, pf, 1.0, wealth_scheme).values
    _, b = portfolio_coefficients(path, pf)
    beta = np.asarray(beta, float)
    if beta.ndim == 1:
        beta = np.broadcast_to(beta, b.shape)
    lam = lambda_process(path, pf, beta)
    diff = (b - beta)[t_index:]
    stoch = float((diff * path.driver_increments[:, t_index:].T).sum())
    log_rhs = np.log(Z[-1]) + np.log(lam[-1]) - np.log(lam[t_index]) - stoch
    if corrections:
        log_rhs += 0.5 * float((diff**2).sum()) * path.grid.dt
    return float(log_rhs - np.log(Z[t_index]))


def transport_identity_check(path: MarketPath, pi, beta, t_index: int = 0, corrections: bool = True,
                             wealth_scheme: str = "euler-returns") -> float:
    """Relative residual ``|Z_t - rhs| / Z_t`` of the pathwise transport identity."""
    return abs(float(np.expm1(transport_log_gap(path, pi, beta, t_index, corrections, wealth_scheme))))


def transport_correction(path: MarketPath, pi, beta, t_index: int = 0) -> float:
    """``1/2 int_t^T |b - beta|^2 ds``, the term missing from the uncorrected identity."""
    _, b = portfolio_coefficients(path, pi)
    beta = np.asarray(beta, float)
    if beta.ndim == 1:
        beta = np.broadcast_to(beta, b.shape)
    return 0.5 * float(((b - beta)[t_index:] ** 2).sum()) * path.grid.dt


def normal_expectation_check(spec: MarketSpec, pi, decomps, grid: TimeGrid, t_index: int = 0) -> float:
    """Residual of ``Z_t = Z_T exp(-int_t^T Gamma^pi)`` under drift-only propagation.

    Prices are propagated with the P*-drift ``alpha* + (J alpha_A)_i`` and no
    noise; the wealth is the continuously rebalanced solution on that path.
    """
    if not 0 <= t_index < grid.steps:
        raise IndexError(f"t_index {t_index} outside [0, {grid.steps})")
    g = stack_schedule(decomps)
    if g.beta.shape[0] != grid.steps:
        raise ValueError("need one decomposition per slice")
    star_drift = g.alpha_star[:, None] + g.arbitrage_drift
    path = simulate_drift_only(spec, grid, star_drift)
    Z = portfolio_value(path, pi, 1.0, "log-ito").values
    gamma = gamma_pi_schedule(path, pi, g)
    rhs = Z[-1] * np.exp(-gamma[t_index:].sum() * grid.dt)
    return float(abs(Z[t_index] - rhs) / Z[t_index])


def growth_schedule(spec: MarketSpec, grid: TimeGrid) -> np.ndarray:
    """Per-slice growth rates ``gamma_i`` (the P-drift of ``log S_i``)."""
    alpha, sigma = spec.coefficients(grid)
    return np.array([growth_rate(DriftVolSnapshot(alpha[k], sigma[k])) for k in range(grid.steps)])


# ---------------------------------------------------------------------------
# ensemble report


@dataclass(frozen=True)
class TransportReport:
    t: float
    T: float
    residual_corrected_mean: float
    residual_corrected_max: float
    residual_verbatim_mean: float
    residual_verbatim_max: float
    verbatim_bias_mean: float
    correction_integral: float
    normal_expectation_residual: float
    novikov_estimate: float
    density_mean: float
    density_se: float
    martingale_mean: float
    martingale_se: float
    n_paths: int
    dt: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def transport_report(spec: MarketSpec, grid: TimeGrid, pi, seed: int, n_paths: int, t_index: int = 0,
                     price_scheme: str = "log-exact", wealth_scheme: str = "euler-returns",
                     rank_tol: float = 1e-10, threads: int | None = None) -> TransportReport:
    """Run both transport identities and the martingale checks on an ensemble.

    ``density_mean`` reuses each path's increments as P*-Brownian increments,
    so its expectation is one.  ``martingale_mean`` averages
    ``Lambda_T Z_T / (Lambda_0 Z_0)`` under P.
    ``verbatim_bias_mean`` is the mean of ``log(Z_t / rhs)`` for the
    uncorrected identity; ``correction_integral`` is
    ``1/2 int_t^T |b - beta|^2 ds`` averaged over paths.
    """
    decomps = decompose_schedule(spec, grid, rank_tol)
    g = stack_schedule(decomps)
    beta = g.beta
    pf = as_portfolio(pi)

    def one(path: MarketPath):
        Z = portfolio_value(path, pf, 1.0, wealth_scheme).values
        corr = transport_log_gap(path, pf, beta, t_index, True, wealth_scheme, Z)
        verb = transport_log_gap(path, pf, beta, t_index, False, wealth_scheme, Z)
        lam = lambda_process(path, pf, beta)
        dens = float(girsanov_density(beta, path.driver_increments, grid.dt, t_index, increments_under="P*"))
        return corr, verb, transport_correction(path, pf, beta, t_index), dens, lam[-1] * Z[-1] / (lam[0] * Z[0])

    rows = np.array(map_paths(one, spec, grid, seed, n_paths, price_scheme, threads))
    corr, verb, correction, dens, mart = rows.T
    res_c, res_v = np.abs(np.expm1(corr)), np.abs(np.expm1(verb))
    se = lambda x: float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return TransportReport(
        t=float(grid.times[t_index]), T=grid.horizon,
        residual_corrected_mean=float(res_c.mean()), residual_corrected_max=float(res_c.max()),
        residual_verbatim_mean=float(res_v.mean()), residual_verbatim_max=float(res_v.max()),
        verbatim_bias_mean=float(-verb.mean()), correction_integral=float(correction.mean()),
        normal_expectation_residual=normal_expectation_check(spec, pf, g, grid, t_index),
        novikov_estimate=novikov_estimate(beta, grid.dt),
        density_mean=float(dens.mean()), density_se=se(dens),
        martingale_mean=float(mart.mean()), martingale_se=se(mart),
        n_paths=n_paths, dt=grid.dt,
    )
