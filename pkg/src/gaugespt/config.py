"""Experiment configuration: JSON schema, defaults and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .market import MarketSpec, TimeGrid
from .portfolio import DEFAULT_BOUND, Portfolio


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


_number_array = {"type": "array"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["market", "grid"],
    "properties": {
        "market": {
            "type": "object",
            "additionalProperties": False,
            "required": ["drift", "vol", "initial_prices"],
            "properties": {
                "n_securities": {"type": "integer", "minimum": 1},
                "n_drivers": {"type": "integer", "minimum": 1},
                "drift": _number_array,
                "vol": _number_array,
                "initial_prices": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "breakpoints": {"type": "array", "items": {"type": "number"}},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["horizon"],
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "portfolios": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["constant", "market", "schedule"]},
                    "weights": {"type": "array"},
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "n_paths": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["log-exact", "euler"]},
                "wealth_scheme": {"enum": ["euler-returns", "log-ito"]},
                "rank_tol": {"type": "number", "exclusiveMinimum": 0},
                "weight_bound": {"type": "number", "exclusiveMinimum": 0},
                "q": {"type": "number", "exclusiveMinimum": 0},
                "pi": {"type": "string"},
                "rho": {"type": "string"},
                "horizons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "t_index": {"type": "integer", "minimum": 0},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "nondegeneracy_eps": {"type": "number", "exclusiveMinimum": 0},
                "export_paths": {"type": "integer", "minimum": 0},
                "export_J": {"type": "boolean"},
                "prices_file": {"type": ["string", "null"]},
                "window": {"type": ["integer", "null"], "minimum": 2},
                "n_drivers": {"type": "integer", "minimum": 0},
                "var_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "stride": {"type": ["integer", "null"], "minimum": 1},
            },
        },
    },
}

DEFAULT_OPTIONS = {
    "scheme": "log-exact",
    "wealth_scheme": "euler-returns",
    "rank_tol": 1e-10,
    "weight_bound": DEFAULT_BOUND,
    "q": 0.5,
    "t_index": 0,
    "tolerance": 1e-3,
    "nondegeneracy_eps": 1e-8,
    "export_paths": 1,
    "export_J": False,
    "prices_file": None,
    "window": None,
    "n_drivers": 0,
    "var_threshold": 0.99,
    "stride": None,
}

DEFAULT_SEED = 0
DEFAULT_PATHS = 100
DEFAULT_OUTPUT = "out"


@dataclass(eq=False)
class ExperimentConfig:
    market: MarketSpec
    grid: TimeGrid
    portfolios: dict[str, dict]
    seed: int
    n_paths: int
    output_dir: str
    options: dict = field(default_factory=dict)

    def portfolio(self, name: str) -> Portfolio:
        p = self.portfolios[name]
        bound = self.options["weight_bound"]
        if p["kind"] == "market":
            return Portfolio.market()
        if p["kind"] == "constant":
            return Portfolio.constant(p["weights"], bound)
        return Portfolio.schedule(p["weights"], bound)

    def effective(self) -> dict:
        """Fully resolved configuration; every default is spelled out."""
        return {
            "market": self.market.to_dict(),
            "grid": {"horizon": self.grid.horizon, "steps": self.grid.steps, "dt": self.grid.dt},
            "portfolios": copy.deepcopy(self.portfolios),
            "seed": self.seed,
            "n_paths": self.n_paths,
            "output_dir": self.output_dir,
            "options": dict(self.options),
        }


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _grid(doc: dict) -> TimeGrid:
    horizon = doc["horizon"]
    if "steps" in doc:
        grid = TimeGrid(horizon, doc["steps"])
        if "dt" in doc and abs(grid.dt - doc["dt"]) > 1e-9 * grid.dt:
            raise ConfigError("/grid/dt", f"dt {doc['dt']} disagrees with horizon/steps = {grid.dt}")
        return grid
    if "dt" in doc:
        try:
            return TimeGrid.from_dt(horizon, doc["dt"])
        except ValueError as exc:
            raise ConfigError("/grid/dt", str(exc)) from None
    raise ConfigError("/grid", "either 'steps' or 'dt' is required")


def _default_horizons(grid: TimeGrid) -> list[float]:
    out = []
    for div in (16, 4, 1):
        k = max(grid.steps // div, 1)
        out.append(k * grid.dt)
    return sorted(set(out))


def parse_config(source, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a configuration and fill in defaults.

    ``source`` is a path to a JSON file or an already-loaded mapping.
    ``overrides`` (command-line flags) may set ``seed``, ``n_paths``,
    ``output_dir``, ``dt`` and ``tolerance``.
    """
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from None
    else:
        doc = copy.deepcopy(source)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    try:
        market = MarketSpec.from_dict(doc["market"])
    except ValueError as exc:
        raise ConfigError("/market", str(exc)) from None
    grid_doc = dict(doc["grid"])
    if "dt" in overrides:
        grid_doc = {"horizon": grid_doc["horizon"], "dt": overrides["dt"]}
    grid = _grid(grid_doc)

    n = market.n_securities
    portfolios = doc.get("portfolios")
    if not portfolios:
        portfolios = {"equal": {"kind": "constant", "weights": [1.0 / n] * n}, "market": {"kind": "market"}}

    options = dict(DEFAULT_OPTIONS)
    options.update(doc.get("options", {}))
    if "tolerance" in overrides:
        options["tolerance"] = overrides["tolerance"]
    names = list(portfolios)
    options.setdefault("pi", names[0])
    options.setdefault("rho", names[1] if len(names) > 1 else names[0])
    options["horizons"] = [float(h) for h in options.get("horizons") or _default_horizons(grid)]

    cfg = ExperimentConfig(
        market=market,
        grid=grid,
        portfolios=portfolios,
        seed=int(overrides.get("seed", doc.get("seed", DEFAULT_SEED))),
        n_paths=int(overrides.get("n_paths", doc.get("n_paths", DEFAULT_PATHS))),
        output_dir=str(overrides.get("output_dir", doc.get("output_dir", DEFAULT_OUTPUT))),
        options=options,
    )
    if cfg.n_paths < 1:
        raise ConfigError("/n_paths", "must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("/seed", "must be an unsigned 64-bit integer")
    for key in ("pi", "rho"):
        if options[key] not in portfolios:
            raise ConfigError(f"/options/{key}", f"unknown portfolio {options[key]!r}")
    for name in portfolios:
        try:
            pf = cfg.portfolio(name)
        except ValueError as exc:
            raise ConfigError(f"/portfolios/{name}", str(exc)) from None
        if pf.kind == "constant" and pf.weights.shape != (n,):
            raise ConfigError(f"/portfolios/{name}/weights", f"expected {n} weights")
        if pf.kind == "schedule" and pf.weights.shape != (grid.steps, n):
            raise ConfigError(f"/portfolios/{name}/weights", f"expected {grid.steps} rows of {n} weights")
    for h, T in enumerate(options["horizons"]):
        try:
            grid.index_of(T)
        except ValueError as exc:
            raise ConfigError(f"/options/horizons/{h}", str(exc)) from None
    if options["t_index"] >= grid.steps:
        raise ConfigError("/options/t_index", f"must be below {grid.steps}")
    return cfg
