"""Price tables and rolling drift/volatility estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gauge import DriftVolSnapshot
from .reports import dumps_csv


class PriceTableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PriceTable:
    times: np.ndarray
    prices: np.ndarray  # (n, rows)
    labels: tuple[str, ...]

    def __post_init__(self):
        times = np.asarray(self.times, float)
        prices = np.asarray(self.prices, float)
        if prices.ndim != 2 or prices.shape[1] != times.shape[0]:
            raise PriceTableError(f"prices must be (n, {times.shape[0]}), got {prices.shape}")
        if len(self.labels) != prices.shape[0]:
            raise PriceTableError("one label per security is required")
        if times.size < 2:
            raise PriceTableError("a price table needs at least two rows")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise PriceTableError("times must increase strictly")
        dt = steps.mean()
        if np.any(np.abs(steps - dt) > 1e-9 * dt):
            raise PriceTableError("times must lie on a uniform grid")
        bad = np.argwhere(~(prices > 0) | ~np.isfinite(prices))
        if bad.size:
            i, r = bad[0]
            raise PriceTableError(f"non-positive price {prices[i, r]!r} at row {r + 1}, column {self.labels[i]!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    @property
    def n(self) -> int:
        return self.prices.shape[0]

    def csv_table(self) -> tuple[list[str], list[list]]:
        return ["t", *self.labels], [[t, *self.prices[:, r]] for r, t in enumerate(self.times)]


def load_prices(file_path) -> PriceTable:
    """Read a ``t,<label1>,...,<labeln>`` CSV into a validated table."""
    path = Path(file_path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceTableError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip() != "t":
            raise PriceTableError(f"{path}: header must start with 't' followed by security labels")
        labels = [h.strip() for h in header[1:]]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PriceTableError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise PriceTableError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise PriceTableError(f"{path}: no data rows")
    data = np.array(rows)
    return PriceTable(data[:, 0], data[:, 1:].T, labels)


def write_prices(table: PriceTable, file_path) -> None:
    Path(file_path).write_text(dumps_csv(*table.csv_table()), encoding="utf-8")


def factor_covariance(cov: np.ndarray, n_drivers: int = 0, var_threshold: float = 0.99,
                      rank_tol: float = 1e-12) -> np.ndarray:
    """Top-``m`` spectral factor ``F`` (n, m) with ``F F^T`` approximating ``cov``.

    Columns are eigenvectors scaled by the square root of their eigenvalue,
    signed so the largest-magnitude entry is positive.  ``n_drivers=0``
    picks the smallest ``m`` whose eigenvalues reach ``var_threshold`` of the
    trace.
    """
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    w, V = w[::-1], V[:, ::-1]
    w = np.where(w > 0, w, 0.0)
    top = w[0] if w.size else 0.0
    rank = int(np.sum(w > rank_tol * top)) if top > 0 else 0
    if n_drivers == 0:
        total = w.sum()
        m = 0 if total == 0 else int(np.searchsorted(np.cumsum(w) / total, var_threshold - 1e-15) + 1)
        m = min(m, rank)
    else:
        m = n_drivers
        if m > rank:
            raise ValueError(f"requested {m} drivers but the covariance has rank {rank}")
    F = V[:, :m] * np.sqrt(w[:m])
    for c in range(m):
        i = int(np.argmax(np.abs(F[:, c])))
        if F[i, c] < 0:
            F[:, c] = -F[:, c]
    return F


def estimate_drift_vol(table: PriceTable, window: int, n_drivers: int = 0, var_threshold: float = 0.99,
                       stride: int | None = None) -> list[DriftVolSnapshot]:
    """Moment estimates of ``alpha`` and a factor ``sigma`` on rolling windows.

    Each window of ``window`` log returns gives the sample mean ``m`` and
    covariance ``C``; then ``alpha = m/dt + diag(C)/(2 dt)`` (the SDE drift,
    not the growth rate) and ``sigma`` is the spectral factor of ``C/dt``.
    The snapshot time is the end of the window.
    """
    if n_drivers < 0 or n_drivers > table.n:
        raise ValueError(f"n_drivers must lie in [0, {table.n}]")
    if window < n_drivers + 2:
        raise ValueError(f"window must be at least n_drivers + 2 = {n_drivers + 2}")
    logret = np.diff(np.log(table.prices), axis=1)  # (n, rows-1)
    if window > logret.shape[1]:
        raise ValueError(f"window {window} exceeds the {logret.shape[1]} available returns")
    stride = window if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be positive")
    dt = table.dt
    out = []
    for start in range(0, logret.shape[1] - window + 1, stride):
        x = logret[:, start:start + window]
        mean = x.mean(axis=1)
        cov = np.cov(x, ddof=1)
        alpha = mean / dt + 0.5 * np.diag(cov) / dt
        sigma = factor_covariance(cov / dt, n_drivers, var_threshold)
        out.append(DriftVolSnapshot(alpha, sigma, float(table.times[start + window])))
    return out


def snapshots_csv(snapshots: Sequence[DriftVolSnapshot]) -> tuple[list[str], list[list]]:
    """``t,alpha_1..alpha_n,sigma_11..sigma_nm`` rows (sigma row-major)."""
    if not snapshots:
        return ["t"], []
    n, m = snapshots[0].n, max(s.m for s in snapshots)
    header = ["t"] + [f"alpha_{i + 1}" for i in range(n)] + [
        f"sigma_{i + 1}{a + 1}" for i in range(n) for a in range(m)
    ]
    rows = []
    for s in snapshots:
        sig = np.zeros((n, m))
        sig[:, : s.m] = s.sigma
        rows.append([s.t, *s.alpha, *sig.ravel()])
    return header, rows
