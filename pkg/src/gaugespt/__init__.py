"""Gauge decomposition of security drifts and stochastic-portfolio-theory dynamics.

Modules
-------
market       price-path simulation
gauge        drift decomposition and arbitrage measure
portfolio    portfolios, wealth and market diagnostics
relative     gauge coefficients of relative wealth, long-run residual
connection   connections, measure change and parallel transport
estimation   price tables and drift/vol estimation
reports      bit-stable JSON/CSV output
cli          experiment runner
"""

from .gauge import DriftVolSnapshot, GaugeDecomposition, arbitrage_measure, arbitrage_wealth, decompose, reconstruct_drift
from .market import MarketPath, MarketSpec, TimeGrid, simulate_drift_only, simulate_market
from .portfolio import Portfolio, WealthPath, portfolio_value

__version__ = "0.1.0"

__all__ = [
    "DriftVolSnapshot", "GaugeDecomposition", "arbitrage_measure", "arbitrage_wealth", "decompose",
    "reconstruct_drift", "MarketPath", "MarketSpec", "TimeGrid", "simulate_drift_only", "simulate_market",
    "Portfolio", "WealthPath", "portfolio_value",
]
