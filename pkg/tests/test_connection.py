import numpy as np
import pytest
import sympy as sp

from gaugespt.connection import (
    CURVATURE_COMPONENTS,
    connection_path,
    curvature_density,
    girsanov_density,
    holdings_from_weights,
    lambda_process,
    measure_change,
    mw_connection_increment,
    normal_expectation_check,
    novikov_estimate,
    numeraire_gauge_shift,
    numeraire_shift_path,
    portfolio_coefficients,
    portfolio_connection_increment,
    portfolio_mw_connection,
    stochastic_mw_connection,
    transport_correction,
    transport_identity_check,
    transport_log_gap,
    transport_report,
)
from gaugespt.gauge import DriftVolSnapshot, decompose, decompose_schedule, stack_schedule
from gaugespt.market import MarketSpec, TimeGrid, coarsen_increments, draw_increments, map_paths, simulate_market
from gaugespt.portfolio import Portfolio, portfolio_value

REF_SIGMA = [[0.1], [0.2], [0.3]]


def ito_reduce(expr, dt, dW):
    """Apply dW^2 = dt and drop dt^2, dt dW and higher orders."""
    expr = sp.expand(expr)
    poly = sp.Poly(expr, dt, dW)
    out = 0
    for (i, j), c in poly.terms():
        order = i + sp.Rational(j, 2)
        if order > 1:
            continue
        if j == 2:
            out += c * dt
        else:
            out += c * dt**i * dW**j
    return sp.expand(out)


def test_symbolic_one_step_log_drift_of_lambda_times_wealth():
    a, b, beta, dt, dW = sp.symbols("a b beta dt dW", real=True)
    rz = a * dt + b * dW
    rl = (-a + b * beta) * dt - beta * dW
    # Ito product rule: d(LZ)/(LZ) = dZ/Z + dL/L + (dZ/Z)(dL/L)
    x = ito_reduce(rz + rl + rz * rl, dt, dW)
    assert sp.simplify(x - (b - beta) * dW) == 0
    log_step = ito_reduce(x - x**2 / 2, dt, dW)
    drift = log_step.coeff(dt)
    assert sp.simplify(drift + (b - beta) ** 2 / 2) == 0
    # a product rule with half the cross term leaves a drift, so LZ would not be a martingale
    x_half = ito_reduce(rz + rl + rz * rl / 2, dt, dW)
    assert sp.simplify(x_half.coeff(dt) - b * beta / 2) == 0


def test_mw_connection_increment_examples():
    assert mw_connection_increment([1, 2], [0, 0], 3.0) == 0
    S = np.array([2.0, 5.0])
    assert mw_connection_increment([0, 1], [0.0, 0.1], S[1]) == pytest.approx(0.02)
    with pytest.raises(ZeroDivisionError):
        mw_connection_increment([1], [1], 0.0)


def test_buy_and_hold_increments_telescope():
    spec = MarketSpec.constant([0.05, 0.08], [[0.2], [0.1]], [1.0, 2.0])
    grid = TimeGrid(1.0, 4000)
    path = simulate_market(spec, grid, 1)
    phi = np.array([3.0, 1.0])
    V = phi @ path.prices
    inc = [mw_connection_increment(phi, path.prices[:, k + 1] - path.prices[:, k], V[k]) for k in range(grid.steps)]
    ito = 0.5 * np.sum((np.diff(V) / V[:-1]) ** 2)
    assert sum(inc) - ito == pytest.approx(np.log(V[-1] / V[0]), abs=2e-3)


def test_portfolio_increment_is_wealth_step():
    spec = MarketSpec.constant([0.05, 0.08, 0.0], np.full((3, 2), 0.15), [1.0, 2.0, 3.0])
    path = simulate_market(spec, TimeGrid(1.0, 50), 2)
    pi = np.array([0.5, 0.3, 0.2])
    Z = portfolio_value(path, pi).values
    R = path.returns()
    for k in range(50):
        assert Z[k + 1] == Z[k] * (1.0 + portfolio_connection_increment(pi, R[k]))
    assert portfolio_connection_increment(pi, np.zeros(3)) == 0
    assert portfolio_connection_increment([0, 1, 0], [0.1, 0.2, 0.3]) == 0.2


def test_numeraire_shift():
    pi = [0.2, 0.3, 0.5]
    a, lam = numeraire_gauge_shift(pi, [0.01, 0.02, -0.01], 0.0)
    assert lam == 0
    a, lam = numeraire_gauge_shift(pi, [0.03] * 3, 0.03)
    assert a == pytest.approx(0, abs=1e-16) and lam == pytest.approx(-0.03, abs=1e-16)
    _, lam = numeraire_gauge_shift(pi, [0.0, 0.0, 0.0], 1e-4)
    assert abs(lam + 1e-4) <= 1e-7
    with pytest.raises(ValueError):
        numeraire_gauge_shift(pi, [0, 0, 0], -1.0)
    spec = MarketSpec.constant([0.05, 0.08, 0.0], np.full((3, 1), 0.15), [1.0, 2.0, 3.0])
    path = simulate_market(spec, TimeGrid(1.0, 10), 2)
    A_hat, Lam = numeraire_shift_path(path, pi, 0)
    k = 3
    exp = numeraire_gauge_shift(pi, path.returns()[k], path.returns()[k, 0])
    assert (A_hat[k], Lam[k]) == pytest.approx(exp, abs=1e-17)


def test_curvature_density():
    assert curvature_density([0.03, 0.01], [[0.5, 0.5], [0.6, 0.4]])[0] == pytest.approx(0.002, abs=1e-17)
    assert np.all(curvature_density([0.03, 0.01], [[0.5, 0.5]] * 4) == 0)
    assert np.all(curvature_density([0.0, 0.0], [[0.5, 0.5], [0.6, 0.4], [0.2, 0.8]]) == 0)
    # converse: moving weights and non-zero growth give a non-zero value
    assert curvature_density([0.03, 0.0], [[0.5, 0.5], [0.6, 0.4]])[0] != 0
    with pytest.raises(ValueError):
        curvature_density(np.zeros((3, 2)), [[0.5, 0.5], [0.6, 0.4]])
    assert set(CURVATURE_COMPONENTS) == {"R_00", "R_01", "R_10", "R_11"}


def test_connection_densities_reference_market():
    snap = DriftVolSnapshot([0.06, 0.03, 0.06], REF_SIGMA)
    d = decompose(snap)
    astar = d.alpha_star
    assert astar == pytest.approx(0.05, abs=1e-15)
    assert portfolio_mw_connection(d, [1 / 3, 1 / 3, 1 - 2 / 3]) == pytest.approx(astar, abs=1e-15)
    assert portfolio_mw_connection(d, [0, 0, 1]) == pytest.approx(astar + 0.01, abs=1e-15)
    S = np.array([1.0, 2.0, 4.0])
    phi = holdings_from_weights([0, 0, 1], S, 8.0)
    assert stochastic_mw_connection(d, snap, phi, S, 8.0) == pytest.approx(astar + 0.01, abs=1e-15)
    with pytest.raises(ValueError):
        stochastic_mw_connection(d, snap, phi, S, 9.0)
    d0 = decompose(DriftVolSnapshot([0.05] * 3, REF_SIGMA))
    assert stochastic_mw_connection(d0, snap, [1, 1, 1], S, 7.0) == pytest.approx(d0.alpha_star, abs=1e-15)
    k0 = decompose(DriftVolSnapshot([0.05, 0.02], [[0.1, 0.0], [0.0, 0.2]]))
    assert portfolio_mw_connection(k0, [0.3, 0.7]) == k0.alpha_star


def test_strategy_and_portfolio_connections_agree_along_path():
    spec = MarketSpec([[0.05, 0.08, 0.02, 0.1], [0.01, 0.0, 0.06, 0.03]],
                      np.array([[[0.2], [0.1], [0.3], [0.25]], [[0.1], [0.1], [0.2], [0.4]]]),
                      [1, 2, 3, 4], [0.0, 0.5])
    grid = TimeGrid(1.0, 40)
    path = simulate_market(spec, grid, 5)
    for pf in (Portfolio.market(), Portfolio.constant([0.4, 0.3, 0.2, 0.1])):
        cp = connection_path(path, pf, decompose_schedule(spec, grid))
        assert np.abs(cp.gamma - cp.gamma_pi).max() <= 1e-12
        assert cp.lambda_.shape == (41,) and cp.b_coef.shape == (40, 1)


def test_girsanov_density_basics():
    grid = TimeGrid(1.0, 10)
    dW = draw_increments(0, 0, 2, grid)
    assert girsanov_density(np.zeros(2), dW, grid.dt) == 1.0
    assert novikov_estimate(np.zeros((10, 2)), grid.dt) == 1.0
    beta = np.array([0.3, -0.4])
    assert novikov_estimate(np.tile(beta, (10, 1)), grid.dt) == pytest.approx(np.exp(0.5 * 0.25), rel=1e-14)
    # density under P written directly: exp(int beta dW + 1/2 int |beta|^2)
    expected = np.exp(beta @ dW.sum(axis=1) + 0.5 * 0.25)
    assert girsanov_density(beta, dW, grid.dt) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(ValueError):
        girsanov_density(beta, dW, grid.dt, increments_under="Q")


def test_girsanov_martingale_and_reweighting():
    # beta = 0.5, m = 1, T = 1; increments drawn as P*-Brownian motion
    grid = TimeGrid(1.0, 8)
    rng = np.random.Generator(np.random.Philox(17))
    dWs = rng.standard_normal((100_000, 1, grid.steps)) * np.sqrt(grid.dt)
    dens = girsanov_density([0.5], dWs, grid.dt, increments_under="P*")
    se = dens.std(ddof=1) / np.sqrt(dens.size)
    assert abs(dens.mean() - 1) < 4 * se
    # reweighting P*-expectations recovers P-drift of log S: under P, dW = dW* - beta dt
    sigma, alpha = 0.3, 0.08
    W = dWs.sum(axis=(1, 2)) - 0.5 * 1.0
    logS = (alpha - 0.5 * sigma**2) * 1.0 + sigma * W
    est = np.mean(dens * logS)
    se2 = np.std(dens * logS, ddof=1) / np.sqrt(dens.size)
    assert abs(est - (alpha - 0.5 * sigma**2)) < 4 * se2


def test_novikov_ensemble_batches():
    rng = np.random.default_rng(0)
    tame = rng.normal(0, 0.1, (256, 10, 1))
    assert np.isfinite(novikov_estimate(tame, 0.1))
    wild = np.zeros((256, 10, 1))
    wild[-1] = 60.0  # one path dominates every larger batch
    wild[127] = 45.0
    assert novikov_estimate(wild, 0.1) == float("inf")


def test_lambda_cancels_wealth_without_noise():
    spec = MarketSpec.constant([0.05, 0.02, 0.09], np.zeros((3, 1)), [1, 1, 1])
    grid = TimeGrid(1.0, 20)
    path = simulate_market(spec, grid)
    pi = [0.2, 0.3, 0.5]
    a, _ = portfolio_coefficients(path, pi)
    lam = lambda_process(path, pi, np.zeros(1))
    np.testing.assert_allclose(lam[-1], np.exp(-a.sum() * grid.dt), rtol=1e-14)
    Z = portfolio_value(path, pi, 1, "log-ito").values
    np.testing.assert_allclose(lam * Z, 1.0, rtol=1e-14)


def test_lambda_with_beta_equal_b_has_no_diffusion():
    spec = MarketSpec.constant([0.05, 0.02, 0.09], REF_SIGMA, [1, 1, 1])
    grid = TimeGrid(1.0, 200)
    path = simulate_market(spec, grid, 3)
    pi = [0.2, 0.3, 0.5]
    _, b = portfolio_coefficients(path, pi)
    Z = portfolio_value(path, pi, 1, "log-ito").values
    np.testing.assert_allclose(lambda_process(path, pi, b) * Z, 1.0, rtol=1e-13)
    Ze = portfolio_value(path, pi).values
    assert np.abs(lambda_process(path, pi, b) * Ze - 1).max() < 1e-3


def test_lambda_wealth_martingale():
    spec = MarketSpec.constant([0.05, 0.02, 0.09], [[0.2, 0.0], [0.1, 0.3], [0.0, 0.25]], [1, 1, 1])
    grid = TimeGrid(1.0, 10)
    pi = [0.2, 0.3, 0.5]
    beta = stack_schedule(decompose_schedule(spec, grid)).beta
    M = np.array(map_paths(lambda p: (lambda_process(p, pi, beta) * portfolio_value(p, pi, 1, "log-ito").values)[-1],
                           spec, grid, 4, 10_000))
    assert abs(M.mean() - 1) < 4 * M.std(ddof=1) / 100


def test_transport_trivial_cases():
    spec = MarketSpec.constant([0.05, 0.02, 0.09], np.zeros((3, 1)), [1, 1, 1])
    grid = TimeGrid(1.0, 50)
    path = simulate_market(spec, grid)
    for corr in (True, False):
        assert transport_identity_check(path, [0.2, 0.3, 0.5], np.zeros(1), 0, corr, "log-ito") == pytest.approx(0, abs=1e-15)
    spec = MarketSpec.constant([0.05, 0.02, 0.09], REF_SIGMA, [1, 1, 1])
    path = simulate_market(spec, grid, 1)
    _, b = portfolio_coefficients(path, [0.2, 0.3, 0.5])
    assert transport_correction(path, [0.2, 0.3, 0.5], b) == 0
    on = transport_identity_check(path, [0.2, 0.3, 0.5], b, 5, True)
    off = transport_identity_check(path, [0.2, 0.3, 0.5], b, 5, False)
    assert on == off
    with pytest.raises(IndexError):
        transport_identity_check(path, [0.2, 0.3, 0.5], b, 50)


def test_corrected_transport_is_exact_for_log_wealth():
    spec = MarketSpec.constant([0.04, 0.06, 0.09], REF_SIGMA, [1, 1, 1])
    grid = TimeGrid(1.0, 100)
    beta = stack_schedule(decompose_schedule(spec, grid)).beta
    path = simulate_market(spec, grid, 2)
    pi = [0.5, 0.3, 0.2]
    assert abs(transport_log_gap(path, pi, beta, 10, True, "log-ito")) < 1e-13
    off = transport_log_gap(path, pi, beta, 10, False, "log-ito")
    assert -off == pytest.approx(transport_correction(path, pi, beta, 10), rel=1e-10)


def test_corrected_transport_converges_in_dt():
    spec = MarketSpec.constant([0.04, 0.06, 0.09], REF_SIGMA, [1, 1, 1])
    fine = TimeGrid(1.0, 4096)
    pi = [0.5, 0.3, 0.2]
    res = {4: [], 1: []}
    for p in range(20):
        dW = draw_increments(8, p, 1, fine)
        for f in res:
            grid = TimeGrid(1.0, fine.steps // f)
            path = simulate_market(spec, grid, increments=coarsen_increments(dW, f))
            beta = stack_schedule(decompose_schedule(spec, grid)).beta
            res[f].append(transport_identity_check(path, pi, beta))
    assert np.max(res[4]) / np.max(res[1]) >= 1.7


def test_normal_expectation_identity():
    pi = Portfolio.constant([0.5, 0.3, 0.2])
    spec = MarketSpec.constant([0.06, 0.03, 0.06], REF_SIGMA, [1, 2, 3])
    grid = TimeGrid(2.0, 40)
    assert normal_expectation_check(spec, pi, decompose_schedule(spec, grid), grid) <= 1e-12
    spec_k0 = MarketSpec.constant([0.05, 0.02], [[0.1, 0.0], [0.0, 0.2]], [1, 1])
    assert normal_expectation_check(spec_k0, [0.3, 0.7], decompose_schedule(spec_k0, grid), grid, 7) <= 1e-12
    spec_pw = MarketSpec([[0.06, 0.03, 0.06], [0.01, 0.08, 0.02]], np.array([REF_SIGMA, [[0.3], [0.1], [0.2]]]),
                         [1, 1, 1], [0.0, 0.7])
    for pf in (pi, Portfolio.market()):
        for t in (0, 13, 39):
            assert normal_expectation_check(spec_pw, pf, decompose_schedule(spec_pw, grid), grid, t) <= 1e-12
    with pytest.raises(ValueError):
        normal_expectation_check(spec, pi, decompose_schedule(spec, grid)[:5], grid)


def test_measure_change_record():
    spec = MarketSpec.constant([0.04, 0.05, 0.06], REF_SIGMA, [1, 1, 1])
    grid = TimeGrid(1.0, 10)
    path = simulate_market(spec, grid, 1)
    mc = measure_change(path, decompose_schedule(spec, grid))
    np.testing.assert_allclose(mc.beta, 0.1, atol=1e-12)
    np.testing.assert_allclose(mc.alpha_star, 0.05 - 0.1 * 0.2, atol=1e-12)
    np.testing.assert_allclose(mc.shifted_increments, path.driver_increments + 0.1 * grid.dt, atol=1e-15)
    assert mc.density > 0


def test_transport_report_fields():
    spec = MarketSpec.constant([0.04, 0.06, 0.09], REF_SIGMA, [1, 1, 1])
    rep = transport_report(spec, TimeGrid(1.0, 100), [0.5, 0.3, 0.2], 0, 5)
    d = rep.to_dict()
    for key in ("t", "T", "residual_corrected_mean", "residual_corrected_max", "residual_verbatim_mean",
                "residual_verbatim_max", "novikov_estimate", "density_mean", "n_paths", "dt"):
        assert key in d
    assert rep.residual_verbatim_mean > rep.residual_corrected_mean
