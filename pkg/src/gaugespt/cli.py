"""Command-line experiment runner.

Usage::

    gaugespt <subcommand> --config experiment.json [--seed N] [--paths N]
             [--out DIR] [--dt DT] [--tolerance TOL]

Exit status: 0 on success, 2 on invalid input, 3 when a numerical contract
is violated.  Set ``GAUGESPT_THREADS`` to spread path ensembles over threads;
results do not depend on it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config
from .connection import transport_report
from .estimation import estimate_drift_vol, load_prices, snapshots_csv
from .gauge import (
    DriftVolSnapshot,
    arbitrage_wealth,
    decompose,
    decompose_schedule,
    decompose_spec,
)
from .market import NonPositivePriceError, map_paths, simulate_market
from .portfolio import (
    check_nondegeneracy,
    coherence_csv,
    coherence_table,
    coherence_values,
    detect_relative_arbitrage,
    growth_rate,
    market_portfolio,
    portfolio_value,
)
from .relative import (
    longrun_residual_experiment,
    gauge_relative_drift,
    predicted_relative_coeffs,
    relative_sde_coeffs,
    residual_csv,
    residual_decay,
)
from .reports import write_report

SUBCOMMANDS = ("simulate", "decompose", "arb-wealth", "portfolio", "relative", "corollary", "transport", "estimate")

RECONSTRUCTION_TOL = 1e-10
IDENTITY_TOL = 1e-12
NORMAL_EXPECTATION_TOL = 1e-10


class ContractViolation(RuntimeError):
    pass


def _snapshots(cfg: ExperimentConfig) -> list[DriftVolSnapshot]:
    m = cfg.market
    return [DriftVolSnapshot(m.drift[s], m.vol[s], float(m.breakpoints[s])) for s in range(m.n_segments)]


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> None:
    opts = cfg.options
    spec, grid = cfg.market, cfg.grid

    def one(path):
        return np.log(path.prices[:, -1] / path.prices[:, 0])

    logret = np.array(map_paths(one, spec, grid, cfg.seed, cfg.n_paths, opts["scheme"]))
    for p in range(min(opts["export_paths"], cfg.n_paths)):
        path = simulate_market(spec, grid, cfg.seed, opts["scheme"], path_index=p)
        write_report(path.csv_table(), out / f"path_{p:04d}.csv", "csv")
    alpha, sigma = spec.coefficients(grid)
    var = (sigma**2).sum(axis=2)
    write_report({
        "scheme": opts["scheme"], "seed": cfg.seed, "n_paths": cfg.n_paths, "T": grid.horizon, "dt": grid.dt,
        "mean_log_return": logret.mean(axis=0),
        "var_log_return": logret.var(axis=0, ddof=1) if cfg.n_paths > 1 else np.zeros(spec.n_securities),
        "theory_mean_log_return": ((alpha - 0.5 * var).sum(axis=0) * grid.dt),
        "theory_var_log_return": var.sum(axis=0) * grid.dt,
    }, out / "simulate.json")


def cmd_decompose(cfg: ExperimentConfig, out: Path) -> None:
    segments = []
    worst = 0.0
    for s, snap in enumerate(_snapshots(cfg)):
        d = decompose(snap, cfg.options["rank_tol"])
        tol = RECONSTRUCTION_TOL * (1.0 + float(np.linalg.norm(snap.alpha)))
        worst = max(worst, d.reconstruction_residual / tol)
        segments.append({"t": snap.t, "alpha_star": d.alpha_star, "rank": d.rank, **d.to_dict()})
        if cfg.options["export_J"]:
            write_report(d.J_table(), out / f"J_segment{s}.csv", "csv")
    write_report({"segments": segments}, out / "decomposition.json")
    if worst > 1:
        raise ContractViolation("drift reconstruction residual above tolerance")


def cmd_arb_wealth(cfg: ExperimentConfig, out: Path) -> None:
    decomps = decompose_schedule(cfg.market, cfg.grid, cfg.options["rank_tol"])
    per_segment = [d.measure for d in decompose_spec(cfg.market, cfg.options["rank_tol"])]
    write_report({
        "T": cfg.grid.horizon, "dt": cfg.grid.dt,
        "segment_start": cfg.market.breakpoints, "segment_measure": per_segment,
        "arbitrage_wealth": arbitrage_wealth(decomps, cfg.grid),
    }, out / "arb_wealth.json")


def cmd_portfolio(cfg: ExperimentConfig, out: Path) -> None:
    opts = cfg.options
    names = list(cfg.portfolios)
    pfs = {name: cfg.portfolio(name) for name in names}
    horizons = opts["horizons"]

    def one(path):
        Z = {name: portfolio_value(path, pf, 1.0, opts["wealth_scheme"]).values for name, pf in pfs.items()}
        market_err = None
        if opts["wealth_scheme"] == "euler-returns":
            cap = path.prices.sum(axis=0)
            errs = [np.abs((z[1:] / z[:-1]) / (cap[1:] / cap[:-1]) - 1.0).max()
                    for name, z in Z.items() if pfs[name].kind == "market"]
            market_err = max(errs) if errs else None
        return Z[opts["pi"]], Z[opts["rho"]], {k: v[-1] for k, v in Z.items()}, coherence_values(path, horizons), market_err

    results = map_paths(one, cfg.market, cfg.grid, cfg.seed, cfg.n_paths, opts["scheme"])
    Zpi = np.array([r[0] for r in results])
    Zrho = np.array([r[1] for r in results])
    arb = detect_relative_arbitrage(Zpi, Zrho, opts["q"], cfg.grid.horizon)
    T = cfg.grid.horizon
    growth = {}
    for name in names:
        finals = np.array([r[2][name] for r in results])
        growth[name] = {"mean_log_growth": float(np.mean(np.log(finals)) / T), "mean_final_wealth": float(finals.mean())}
    rel = np.log(Zpi[:, -1] / Zrho[:, -1]) / T
    segments = []
    for snap in _snapshots(cfg):
        ok, eig = check_nondegeneracy(snap, opts["nondegeneracy_eps"])
        segments.append({"t": snap.t, "growth_rate": growth_rate(snap), "nondegenerate": ok, "min_eigenvalue": eig})
    market_errs = [r[4] for r in results if r[4] is not None]
    write_report({
        "pi": opts["pi"], "rho": opts["rho"], "wealth_scheme": opts["wealth_scheme"],
        "relative_arbitrage": arb,
        "relative_log_growth": {"mean": float(rel.mean()), "frac_positive": float((rel > 0).mean())},
        "portfolios": growth,
        "segments": segments,
        "market_identity_max_step_error": max(market_errs) if market_errs else None,
    }, out / "portfolio.json")
    write_report(coherence_csv(coherence_table(np.array([r[3] for r in results]), horizons)),
                 out / "coherence.csv", "csv")
    path0 = simulate_market(cfg.market, cfg.grid, cfg.seed, opts["scheme"], path_index=0)
    for name in (opts["pi"], opts["rho"]):
        write_report(portfolio_value(path0, pfs[name], 1.0, opts["wealth_scheme"]).csv_table(),
                     out / f"wealth_{name}.csv", "csv")


def _initial_weights(cfg: ExperimentConfig, name: str) -> np.ndarray:
    pf = cfg.portfolio(name)
    if pf.kind == "market":
        return market_portfolio(cfg.market.initial_prices)
    return pf.weights if pf.kind == "constant" else pf.weights[0]


def cmd_relative(cfg: ExperimentConfig, out: Path) -> None:
    pi, rho = _initial_weights(cfg, cfg.options["pi"]), _initial_weights(cfg, cfg.options["rho"])
    segments = []
    worst = 0.0
    for snap in _snapshots(cfg):
        d = decompose(snap, cfg.options["rank_tol"])
        pred = predicted_relative_coeffs(d, snap, pi, rho)
        sde = relative_sde_coeffs(snap, d, pi, rho)
        level = gauge_relative_drift(d, snap, pi, rho, log=False)
        logd = gauge_relative_drift(d, snap, pi, rho, log=True)
        gap = max(abs(level - sde.drift), abs(logd - sde.log_drift))
        worst = max(worst, gap)
        segments.append({
            "t": snap.t, **pred.to_dict(), **sde.to_dict(),
            "gauge_drift": level, "gauge_log_drift": logd, "identity_residual": gap,
        })
    write_report({"pi": cfg.options["pi"], "rho": cfg.options["rho"], "weights_at": 0.0,
                  "pi_weights": pi, "rho_weights": rho, "segments": segments}, out / "relative.json")
    if worst > IDENTITY_TOL:
        raise ContractViolation(f"relative drift identity off by {worst:.3e}")


def cmd_corollary(cfg: ExperimentConfig, out: Path) -> None:
    opts = cfg.options
    rows = longrun_residual_experiment(cfg.market, cfg.grid, cfg.portfolio(opts["pi"]),
                                       cfg.portfolio(opts["rho"]), cfg.seed, cfg.n_paths, opts["horizons"],
                                       opts["scheme"], opts["wealth_scheme"], opts["rank_tol"])
    write_report(residual_csv(rows), out / "corollary.csv", "csv")
    slope = r2 = None
    if len(rows) >= 2 and all(r.rms_residual > 0 for r in rows):
        slope, r2 = residual_decay(rows)
    write_report({"pi": opts["pi"], "rho": opts["rho"], "rows": rows, "loglog_slope": slope, "r2": r2,
                  "slope_in_range": None if slope is None else bool(-0.65 <= slope <= -0.35)},
                 out / "corollary.json")


def cmd_transport(cfg: ExperimentConfig, out: Path) -> None:
    opts = cfg.options
    rep = transport_report(cfg.market, cfg.grid, cfg.portfolio(opts["pi"]), cfg.seed, cfg.n_paths,
                           opts["t_index"], opts["scheme"], opts["wealth_scheme"], opts["rank_tol"])
    write_report(rep, out / "transport.json")
    if rep.residual_corrected_max > opts["tolerance"]:
        raise ContractViolation(f"transport residual {rep.residual_corrected_max:.3e} above {opts['tolerance']}")
    if rep.normal_expectation_residual > NORMAL_EXPECTATION_TOL:
        raise ContractViolation(f"normal-expectation residual {rep.normal_expectation_residual:.3e}")


def cmd_estimate(cfg: ExperimentConfig, out: Path) -> None:
    opts = cfg.options
    if not opts["prices_file"]:
        raise ConfigError("/options/prices_file", "required by the estimate subcommand")
    table = load_prices(opts["prices_file"])
    window = opts["window"] or table.times.size - 1
    snaps = estimate_drift_vol(table, window, opts["n_drivers"], opts["var_threshold"], opts["stride"])
    write_report(snapshots_csv(snaps), out / "snapshots.csv", "csv")
    decs = [{"t": s.t, "n_drivers": s.m, **decompose(s, opts["rank_tol"]).to_dict()} for s in snaps]
    write_report({"labels": list(table.labels), "window": window, "snapshots": decs}, out / "estimate.json")


COMMANDS = {
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "arb-wealth": cmd_arb_wealth,
    "portfolio": cmd_portfolio,
    "relative": cmd_relative,
    "corollary": cmd_corollary,
    "transport": cmd_transport,
    "estimate": cmd_estimate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaugespt", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="experiment configuration (JSON)")
    parser.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    parser.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--dt", type=float, help="override the grid step")
    parser.add_argument("--tolerance", type=float, help="transport residual tolerance")
    return parser


def run(subcommand: str, cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(cfg.effective(), out / "effective_config.json")
    try:
        COMMANDS[subcommand](cfg, out)
    except ContractViolation as exc:
        print(f"gaugespt {subcommand}: contract violated: {exc}", file=sys.stderr)
        return 3
    except NonPositivePriceError as exc:
        print(f"gaugespt {subcommand}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"gaugespt {subcommand}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "n_paths": args.paths, "output_dir": args.out,
                 "dt": args.dt, "tolerance": args.tolerance}
    try:
        cfg = parse_config(args.config, overrides)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"gaugespt: invalid configuration: {exc}", file=sys.stderr)
        return 2
    return run(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
