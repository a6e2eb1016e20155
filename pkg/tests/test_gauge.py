import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugespt.gauge import (
    DriftVolSnapshot,
    arbitrage_measure,
    arbitrage_wealth,
    decompose,
    decompose_schedule,
    reconstruct_drift,
    stack_schedule,
)
from gaugespt.market import MarketSpec, TimeGrid

from oracles import normal_equations_beta

REF_SIGMA = [[0.1], [0.2], [0.3]]


def random_snapshot(rng, n, m):
    return DriftVolSnapshot(rng.normal(0.05, 0.05, n), rng.normal(0, 0.2, (n, m)))


# worked reference market


def test_golden_symmetric_drift():
    d = decompose(DriftVolSnapshot([0.05, 0.05, 0.05], REF_SIGMA))
    assert d.market_drift == pytest.approx(0.05, abs=1e-15)
    np.testing.assert_allclose(d.market_vol, [0.2], atol=1e-15)
    np.testing.assert_allclose(d.excess_vol[:, 0], [-0.1, 0.0, 0.1], atol=1e-15)
    assert d.k == 1
    np.testing.assert_allclose(d.beta, [0.0], atol=1e-12)
    np.testing.assert_allclose(d.alpha_A, [0.0], atol=1e-12)
    assert d.measure == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(reconstruct_drift(d), [0.05] * 3, atol=1e-15)


def test_golden_volatility_explained_drift():
    d = decompose(DriftVolSnapshot([0.04, 0.05, 0.06], REF_SIGMA))
    np.testing.assert_allclose(d.beta, [0.1], atol=1e-12)
    assert d.measure == pytest.approx(0.0, abs=1e-12)


def test_golden_arbitrage_drift():
    d = decompose(DriftVolSnapshot([0.06, 0.03, 0.06], REF_SIGMA))
    np.testing.assert_allclose(d.beta, [0.0], atol=1e-12)
    assert abs(d.alpha_A[0]) == pytest.approx(0.06 / np.sqrt(6), abs=1e-12)
    assert d.measure == pytest.approx(6.0e-4, abs=1e-12)
    # orientation: largest-magnitude entry positive, so J = (-1, 2, -1)/sqrt(6)
    np.testing.assert_allclose(d.J[:, 0] * np.sqrt(6), [-1, 2, -1], atol=1e-12)


def test_goldens_match_normal_equation_oracle():
    for alpha in ([0.05] * 3, [0.04, 0.05, 0.06], [0.06, 0.03, 0.06]):
        snap = DriftVolSnapshot(alpha, REF_SIGMA)
        d = decompose(snap)
        centered = snap.alpha - snap.alpha.mean()
        beta = normal_equations_beta(d.excess_vol, centered)
        np.testing.assert_allclose(d.beta, beta, atol=1e-12)
        resid = centered - d.excess_vol @ beta
        assert d.measure == pytest.approx(resid @ resid, abs=1e-12)


def test_invariants_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, n))
        snap = random_snapshot(rng, n, m)
        d = decompose(snap)
        assert d.k == n - 1 - np.linalg.matrix_rank(d.excess_vol)
        np.testing.assert_allclose(d.excess_vol.sum(axis=0), 0, atol=1e-14)
        np.testing.assert_allclose(d.J.T @ d.J, np.eye(d.k), atol=1e-10)
        np.testing.assert_allclose(d.J.sum(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(d.excess_vol.T @ d.J, 0, atol=1e-10)
        assert d.reconstruction_residual <= 1e-10 * (1 + np.linalg.norm(snap.alpha))
        assert np.linalg.norm(reconstruct_drift(d) - snap.alpha) <= 1e-10


def test_beta_matches_oracle_small_n():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, n + 1))
        snap = random_snapshot(rng, n, m)
        d = decompose(snap)
        beta = normal_equations_beta(d.excess_vol, snap.alpha - snap.alpha.mean())
        np.testing.assert_allclose(d.beta, beta, atol=1e-8)


def test_rank_deficient_excess_vol_gives_minimum_norm_beta():
    # two identical driver columns: beta split evenly
    sigma = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.1, 0.1]])
    d = decompose(DriftVolSnapshot([0.04, 0.05, 0.06, 0.04], sigma))
    assert d.rank == 1 and d.k == 2
    assert d.beta[0] == pytest.approx(d.beta[1], rel=1e-12)
    np.testing.assert_allclose(d.beta, np.linalg.pinv(d.excess_vol) @ (d.excess_vol @ d.beta), atol=1e-14)


def test_full_rank_market_has_no_arbitrage():
    rng = np.random.default_rng(2)
    snap = random_snapshot(rng, 4, 4)
    d = decompose(snap)
    assert d.k == 0 and d.measure == 0.0


def test_k_truncation_and_validation():
    rng = np.random.default_rng(3)
    snap = random_snapshot(rng, 6, 1)
    d = decompose(snap)
    d2 = decompose(snap, k=2)
    assert d.k == 4 and d2.k == 2
    np.testing.assert_array_equal(d2.J, d.J[:, :2])
    assert abs(d2.alpha_A[0]) >= abs(d2.alpha_A[1])
    with pytest.raises(ValueError):
        decompose(snap, k=5)
    with pytest.raises(ValueError):
        decompose(snap, rank_tol=0)
    with pytest.raises(ValueError):
        DriftVolSnapshot([0.1], [[0.1]])
    with pytest.raises(ValueError):
        DriftVolSnapshot([0.1, np.inf], [[0.1], [0.1]])


def test_arbitrage_wealth_quadrature():
    grid = TimeGrid(2.0, 4)
    c = decompose(DriftVolSnapshot([0.06, 0.03, 0.06], REF_SIGMA))
    assert arbitrage_wealth([c] * 4, grid) == pytest.approx(1.2e-3, abs=1e-15)
    z = decompose(DriftVolSnapshot([0.05] * 3, REF_SIGMA))
    assert arbitrage_wealth([z] * 4, grid) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        arbitrage_wealth([c] * 3, grid)


def test_arbitrage_wealth_piecewise():
    # measure 1e-3 on [0,1], 2e-3 on [1,2]: scale the J direction
    J = np.array([1, -2, 1]) / np.sqrt(6)
    a1 = 0.05 + np.sqrt(1e-3) * J
    a2 = 0.05 + np.sqrt(2e-3) * J
    spec = MarketSpec([a1, a2], np.array([REF_SIGMA, REF_SIGMA]), [1, 1, 1], [0.0, 1.0])
    grid = TimeGrid(2.0, 8)
    assert arbitrage_wealth(decompose_schedule(spec, grid), grid) == pytest.approx(3e-3, abs=1e-15)


def test_stack_schedule_shares_segments():
    spec = MarketSpec.constant([0.06, 0.03, 0.06], REF_SIGMA, [1, 1, 1])
    grid = TimeGrid(1.0, 5)
    g = stack_schedule(decompose_schedule(spec, grid))
    assert g.beta.shape == (5, 1) and g.arbitrage_drift.shape == (5, 3)
    np.testing.assert_allclose(g.arbitrage_drift[0], [0.01, -0.02, 0.01], atol=1e-15)
    np.testing.assert_allclose(g.alpha_star, 0.05, atol=1e-15)


def test_export_keys():
    d = decompose(DriftVolSnapshot([0.06, 0.03, 0.06], REF_SIGMA))
    assert set(d.to_dict()) == {"abar", "sbar", "beta", "k", "alphaA", "measure", "residual"}
    header, rows = d.J_table()
    assert header == ["security", "J1"] and len(rows) == 3


# properties

dims = st.integers(2, 7).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n - 1), st.integers(0, 2**32 - 1)))


@settings(max_examples=60, deadline=None)
@given(dims)
def test_permutation_equivariance(args):
    n, m, seed = args
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, n, m)
    perm = rng.permutation(n)
    d = decompose(snap)
    dp = decompose(DriftVolSnapshot(snap.alpha[perm], snap.sigma[perm]))
    assert dp.measure == pytest.approx(d.measure, rel=1e-9, abs=1e-15)
    np.testing.assert_allclose(dp.excess_vol, d.excess_vol[perm], atol=1e-14)
    np.testing.assert_allclose(dp.beta, d.beta, atol=1e-9)
    # J rows permute: the projectors onto span(J) agree
    np.testing.assert_allclose(dp.J @ dp.J.T, (d.J @ d.J.T)[np.ix_(perm, perm)], atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(dims, st.floats(-1, 1))
def test_drift_shift_invariance(args, c):
    n, m, seed = args
    snap = random_snapshot(np.random.default_rng(seed), n, m)
    d = decompose(snap)
    ds = decompose(DriftVolSnapshot(snap.alpha + c, snap.sigma))
    assert ds.market_drift == pytest.approx(d.market_drift + c, abs=1e-14)
    np.testing.assert_allclose(ds.beta, d.beta, atol=1e-9)
    np.testing.assert_allclose(ds.J @ ds.alpha_A, d.J @ d.alpha_A, atol=1e-12)
    assert ds.measure == pytest.approx(d.measure, rel=1e-9, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(dims)
def test_driver_rotation_invariance(args):
    n, m, seed = args
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, n, m)
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    d = decompose(snap)
    dr = decompose(DriftVolSnapshot(snap.alpha, snap.sigma @ Q))
    np.testing.assert_allclose(dr.beta, Q.T @ d.beta, atol=1e-9)
    assert dr.measure == pytest.approx(d.measure, rel=1e-9, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(dims)
def test_measure_is_squared_residual_of_regression(args):
    n, m, seed = args
    snap = random_snapshot(np.random.default_rng(seed), n, m)
    d = decompose(snap)
    X = np.column_stack([np.ones(n), snap.sigma])
    coef, *_ = np.linalg.lstsq(X, snap.alpha, rcond=None)
    r = snap.alpha - X @ coef
    assert d.measure == pytest.approx(r @ r, rel=1e-8, abs=1e-14)
    assert arbitrage_measure(d) >= 0
