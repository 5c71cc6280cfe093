"""Run configuration: schema, defaults, validation, presets, hashing.

A run configuration is a JSON-compatible tree. Every tunable has a default
recorded here, so a persisted configuration is always fully materialized;
values that depend on the data (such as the Gibbs block count) are resolved
and recorded by the runner once the data are loaded. Validation collects
all problems and reports them together.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from .exceptions import ConfigurationError
from .models import MODEL_REGISTRY

SAMPLERS = ("vanilla", "permabc", "permabc-strat", "smc", "smc-os", "smc-um")

_MODEL_DEFAULTS = {"name": "gaussian-hierarchy", "hyperparameters": {}}

_DATA_DEFAULTS = {
    "kind": "synthetic",
    # synthetic
    "n_compartments": 10,
    "n_outliers": 0,
    "data_seed": None,
    "true_global": None,
    # csv
    "path": None,
    "date_range": None,
    "department_filter": None,
    "columns": None,
    "populations": None,
    "weighting": "unit",
}

_TOP_DEFAULTS = {
    "sampler": "smc",
    "n": 1000,
    "seed": 0,
    "budget_cap": 10_000_000,
    "output_dir": "permabc-run",
    "threads": 1,
    "epsilon": None,
    "target_epsilon": 0.0,
    "alpha": 0.75,
    "gamma": 0.9,
    "calibration_quantile": 0.95,
    "duplication": 5,
    "n_blocks": None,
    "m_initial": None,
    "l_initial": None,
    "proposal_rate": 1.0,
    "n_strata": 4,
    "perms_per_stratum": [1, 5, 5, 5],
    "unique_rate_floor": 0.02,
    "max_iterations": 1000,
    "move_passes": 1,
    "record_snapshots": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully materialized run configuration."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def sampler(self) -> str:
        return self.values["sampler"]

    @property
    def model(self) -> dict:
        return self.values["model"]

    @property
    def data(self) -> dict:
        return self.values["data"]

    def as_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    def config_hash(self) -> str:
        # threads and the output directory are execution details: they never
        # influence the sampled results, so they stay out of the identity
        statistical = {
            k: v for k, v in self.values.items() if k not in ("threads", "output_dir")
        }
        return _digest(statistical)

    def context_hash(self) -> str:
        """Hash of the experiment context (model and data, sampler-agnostic)."""
        return _digest({"model": self.values["model"], "data": self.values["data"]})


def _digest(tree) -> str:
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _merge_known(defaults: dict, supplied: dict, prefix: str, errors: list) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in supplied.items():
        if key not in defaults:
            errors.append(f"unknown key {prefix + key!r}")
            continue
        merged[key] = value
    return merged


def materialize(tree: dict) -> RunConfig:
    """Fill defaults, validate, and freeze a configuration tree.

    Raises a configuration error listing every problem found.
    """
    errors: list[str] = []
    tree = tree or {}
    if not isinstance(tree, dict):
        raise ConfigurationError("configuration must be a JSON object")

    known_top = set(_TOP_DEFAULTS) | {"model", "data"}
    for key in tree:
        if key not in known_top:
            errors.append(f"unknown key {key!r}")

    model_in = tree.get("model", {})
    if isinstance(model_in, str):
        model_in = {"name": model_in}
    model = _merge_known(_MODEL_DEFAULTS, model_in, "model.", errors)
    if model["name"] not in MODEL_REGISTRY:
        errors.append(
            f"unknown model {model['name']!r}; known: {', '.join(sorted(MODEL_REGISTRY))}"
        )

    data = _merge_known(_DATA_DEFAULTS, tree.get("data", {}), "data.", errors)
    if data["kind"] not in ("synthetic", "csv"):
        errors.append(f"data.kind must be 'synthetic' or 'csv', got {data['kind']!r}")
    if data["kind"] == "csv" and not data["path"]:
        errors.append("data.kind 'csv' requires data.path")
    if data["kind"] == "synthetic":
        if not isinstance(data["n_compartments"], int) or data["n_compartments"] < 1:
            errors.append("data.n_compartments must be a positive integer")
        elif not 0 <= data["n_outliers"] <= data["n_compartments"]:
            errors.append("data.n_outliers must lie in [0, n_compartments]")
    if data["weighting"] not in ("unit", "population-proportional"):
        errors.append(f"unknown data.weighting {data['weighting']!r}")

    values = _merge_known(_TOP_DEFAULTS, {k: v for k, v in tree.items() if k in _TOP_DEFAULTS}, "", errors)
    values["model"] = model
    values["data"] = data

    if values["sampler"] not in SAMPLERS:
        errors.append(f"unknown sampler {values['sampler']!r}; known: {', '.join(SAMPLERS)}")
    if not isinstance(values["n"], int) or values["n"] < 1:
        errors.append("n must be a positive integer")
    if not isinstance(values["seed"], int):
        errors.append("seed must be an integer")
    if values["sampler"] == "smc-os":
        m0 = values["m_initial"]
        k = data.get("n_compartments") if data["kind"] == "synthetic" else None
        if m0 is None:
            errors.append("sampler 'smc-os' requires m_initial")
        elif k is not None and m0 <= k:
            errors.append(f"m_initial must exceed the compartment count ({m0} <= {k})")
    if values["sampler"] == "smc-um":
        l0 = values["l_initial"]
        k = data.get("n_compartments") if data["kind"] == "synthetic" else None
        if l0 is None:
            errors.append("sampler 'smc-um' requires l_initial")
        elif k is not None and not 1 <= l0 < k:
            errors.append(f"l_initial must lie in [1, {k}), got {l0}")
    if values["sampler"] == "permabc-strat" and values["epsilon"] is None:
        errors.append("sampler 'permabc-strat' requires a fixed epsilon")
    for name, lo, hi in (("alpha", 0.0, 1.0), ("calibration_quantile", 0.0, 1.0)):
        v = values[name]
        if not isinstance(v, (int, float)) or not lo < v <= hi:
            errors.append(f"{name} must lie in ({lo}, {hi}]")
    if not isinstance(values["gamma"], (int, float)) or not 0 < values["gamma"] <= 1:
        errors.append("gamma must lie in (0, 1]")

    if errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errors))
    return RunConfig(values=values)


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a JSON configuration file and apply overrides on top."""
    tree: dict = {}
    if path is not None:
        with open(path) as fh:
            try:
                tree = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override through non-object key {part!r}")
        node[parts[-1]] = value
    return materialize(tree)


PRESETS = {
    "toy-uniform": {
        "model": {"name": "uniform-toy"},
        "sampler": "permabc",
        "data": {"kind": "synthetic", "n_compartments": 2, "data_seed": 1},
        "n": 2000,
        "epsilon": 0.14,
        "seed": 42,
        "output_dir": "runs/toy-uniform",
    },
    "gauss-benchmark": {
        "model": {"name": "gaussian-hierarchy", "hyperparameters": {"n_obs": 10}},
        "sampler": "smc",
        "data": {"kind": "synthetic", "n_compartments": 10, "data_seed": 2},
        "n": 1000,
        "budget_cap": 1_000_000,
        "seed": 42,
        "output_dir": "runs/gauss-benchmark",
    },
    "ridge": {
        "model": {"name": "ridge-gaussian"},
        "sampler": "smc",
        "data": {"kind": "synthetic", "n_compartments": 4, "data_seed": 3},
        "n": 1000,
        "target_epsilon": 1.0,
        "seed": 42,
        "output_dir": "runs/ridge",
    },
    "contaminated": {
        "model": {"name": "gaussian-hierarchy", "hyperparameters": {"n_obs": 10}},
        "sampler": "smc-um",
        "data": {"kind": "synthetic", "n_compartments": 20, "n_outliers": 4, "data_seed": 4},
        "n": 500,
        "l_initial": 10,
        "gamma": 0.8,
        "move_passes": 4,
        "seed": 42,
        "output_dir": "runs/contaminated",
    },
    "sir-synthetic": {
        "model": {"name": "sir", "hyperparameters": {"horizon": 60}},
        "sampler": "smc",
        "data": {
            "kind": "synthetic",
            "n_compartments": 5,
            "data_seed": 5,
            "true_global": [3.0],
        },
        "n": 500,
        "budget_cap": 100_000,
        "seed": 42,
        "output_dir": "runs/sir-synthetic",
    },
    "sir-csv": {
        "model": {"name": "sir", "hyperparameters": {"horizon": 120}},
        "sampler": "smc",
        "data": {
            "kind": "csv",
            "path": "admissions.csv",
            "department_filter": "mainland-94",
            "date_range": ["2020-03-19", "2020-07-16"],
        },
        "n": 500,
        "budget_cap": 5_000_000,
        "seed": 42,
        "output_dir": "runs/sir-csv",
    },
}


def preset_config(name: str, overrides: dict | None = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}"
        )
    tree = copy.deepcopy(PRESETS[name])
    for dotted, value in (overrides or {}).items():
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return materialize(tree)
