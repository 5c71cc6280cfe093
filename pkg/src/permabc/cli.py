"""Command-line entry point: run experiments, validate configs, emit plot data.

Subcommands: ``run``, ``validate-config``, ``list-presets``, ``plot-data``.
Runs persist four artifacts in the output directory: the materialized
configuration, a posterior samples table, an iteration trace, and a plain
text summary (plus snapshots, data metadata, and a load report where
applicable). Every table embeds the configuration hash so plot-data can
refuse to mix incompatible runs. Identical configuration and seed yield
byte-identical samples files for any thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig, parse_config, preset_config
from .data import ObservedData
from .diagnostics import BudgetCurveRow, TraceRow, budget_curve
from .exceptions import (
    BudgetExceededError,
    ConfigurationError,
    ExtinctionError,
    PermABCError,
)
from .ingestion import (
    draw_true_parameters,
    generate_synthetic,
    load_epidemic_csv,
    to_observed_data,
)
from .models import build_model
from .rejection import PermABC, StratifiedPermABC, VanillaABC
from .smc import PermABCSMC
from .streams import substream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXTINCTION = 3
EXIT_STALL = 4
EXIT_BUDGET = 5

_STATUS_EXIT = {"success": EXIT_OK, "stall": EXIT_STALL, "budget-exceeded": EXIT_BUDGET}

_TAG_DATA = 90


def load_observed(config: RunConfig):
    """Materialize the observed dataset described by the configuration.

    Returns ``(observed, meta, report_text)`` where meta records the truth
    for synthetic data or the department identifiers for file data.
    """
    data = config.data
    model = build_model(config.model["name"], config.model["hyperparameters"])
    if data["kind"] == "synthetic":
        seed = data["data_seed"] if data["data_seed"] is not None else config["seed"]
        rng = substream(seed, _TAG_DATA)
        truth = draw_true_parameters(
            model, data["n_compartments"], rng, n_outliers=data["n_outliers"]
        )
        if data["true_global"] is not None:
            from .models import ParameterVector

            truth = ParameterVector(
                np.asarray(data["true_global"], dtype=float), truth.local_blocks
            )
        dataset = generate_synthetic(model, truth, rng)
        meta = {
            "kind": "synthetic",
            "true_global": truth.global_block.tolist(),
            "true_locals": truth.local_blocks.tolist(),
            "department_ids": [str(k) for k in range(data["n_compartments"])],
        }
        return dataset.observed, meta, None
    table = load_epidemic_csv(
        data["path"],
        date_range=data["date_range"],
        department_filter=data["department_filter"],
        columns=data["columns"],
        populations=data["populations"],
    )
    observed = to_observed_data(table, weighting=data["weighting"])
    meta = {
        "kind": "csv",
        "department_ids": list(table.department_ids),
        "dates": [d.isoformat() for d in table.dates],
    }
    return observed, meta, table.report.summary()


def build_sampler(config: RunConfig, n_compartments: int):
    """Estimator instance for the configured sampler."""
    model = build_model(config.model["name"], config.model["hyperparameters"])
    common = dict(
        model=model,
        budget_cap=config["budget_cap"],
        random_state=config["seed"],
    )
    name = config.sampler
    if name == "vanilla":
        return VanillaABC(n_samples=config["n"], epsilon=config["epsilon"], **common)
    if name == "permabc":
        return PermABC(n_samples=config["n"], epsilon=config["epsilon"], **common)
    if name == "permabc-strat":
        return StratifiedPermABC(
            n_samples=config["n"],
            epsilon=config["epsilon"],
            proposal_rate=config["proposal_rate"],
            n_strata=config["n_strata"],
            perms_per_stratum=tuple(config["perms_per_stratum"]),
            **common,
        )
    strategy = {
        "smc": "epsilon-descent",
        "smc-os": "over-sampling",
        "smc-um": "under-matching",
    }[name]
    return PermABCSMC(
        n_particles=config["n"],
        strategy=strategy,
        target_epsilon=config["target_epsilon"],
        alpha=config["alpha"],
        gamma=config["gamma"],
        calibration_quantile=config["calibration_quantile"],
        m_initial=config["m_initial"],
        l_initial=config["l_initial"],
        duplication=config["duplication"],
        n_blocks=config["n_blocks"],
        unique_rate_floor=config["unique_rate_floor"],
        max_iterations=config["max_iterations"],
        move_passes=config["move_passes"],
        n_threads=config["threads"],
        record_snapshots=config["record_snapshots"],
        **common,
    )


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _header_line(kind: str, config: RunConfig) -> str:
    return (
        f"# permabc-v1 kind={kind} config={config.config_hash()} "
        f"context={config.context_hash()}"
    )


def _parameter_names(d_glob: int, k: int, d_loc: int):
    names = [f"global_{c}" for c in range(d_glob)]
    names += [f"local_{slot}_{c}" for slot in range(k) for c in range(d_loc)]
    return names


def _write_samples(path, config, globals_, locals_, distances, weights):
    n, d_glob = globals_.shape
    _, k, d_loc = locals_.shape
    names = _parameter_names(d_glob, k, d_loc)
    with open(path, "w", newline="") as fh:
        fh.write(_header_line("samples", config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["weight", "distance", *names])
        for i in range(n):
            row = [_fmt(weights[i]), _fmt(distances[i])]
            row += [_fmt(v) for v in globals_[i]]
            row += [_fmt(v) for v in locals_[i].ravel()]
            writer.writerow(row)


def _write_trace(path, config, trace):
    with open(path, "w", newline="") as fh:
        fh.write(_header_line("trace", config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(TraceRow.FIELDS)
        for row in trace:
            writer.writerow([_fmt(v) for v in row.as_tuple()])


def _write_snapshots(path, config, snapshots, d_loc):
    with open(path, "w", newline="") as fh:
        fh.write(_header_line("snapshots", config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "m_or_l", "epsilon", "parameter", "value"])
        for snap in snapshots:
            base = [snap["iteration"], snap["m_or_l"], _fmt(snap["epsilon"])]
            g = snap["global"]
            for c in range(g.shape[1] if g.ndim == 2 else 0):
                for v in g[:, c]:
                    writer.writerow(base + [f"global_{c}", _fmt(v)])
            loc = snap["locals"]
            for slot in range(loc.shape[1]):
                for c in range(loc.shape[2]):
                    for v in loc[:, slot, c]:
                        if np.isfinite(v):
                            writer.writerow(base + [f"local_{slot}_{c}", _fmt(v)])


def _weighted_stats(values, weights):
    w = weights / weights.sum()
    mean = float(np.sum(w * values))
    sd = float(np.sqrt(np.sum(w * (values - mean) ** 2)))
    order = np.argsort(values)
    cum = np.cumsum(w[order])
    qs = [float(values[order][np.searchsorted(cum, q, side="left")]) for q in (0.05, 0.5, 0.95)]
    return mean, sd, qs


def _write_summary(path, config, status, sampler, names, globals_, locals_, weights, runtime):
    lines = [
        f"status: {status}",
        f"sampler: {config.sampler}",
        f"model: {config.model['name']}",
        f"epsilon: {_fmt(getattr(sampler, 'epsilon_', float('nan')))}",
        f"simulator_calls: {getattr(sampler, 'n_simulations_', 0)}",
        f"assignment_solves: {getattr(sampler, 'n_assignment_solves_', 0)}",
        f"runtime_seconds: {runtime:.3f}",
        f"config_hash: {config.config_hash()}",
        f"context_hash: {config.context_hash()}",
        "",
        "parameter mean sd q05 q50 q95",
    ]
    if globals_.size or locals_.size:
        flat = np.concatenate(
            [globals_, locals_.reshape(locals_.shape[0], -1)], axis=1
        )
        for j, name in enumerate(names):
            values = flat[:, j]
            ok = np.isfinite(values)
            if not np.any(ok):
                continue
            mean, sd, qs = _weighted_stats(values[ok], weights[ok])
            lines.append(
                f"{name} {mean:.6g} {sd:.6g} {qs[0]:.6g} {qs[1]:.6g} {qs[2]:.6g}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(config: RunConfig):
    """Execute one configured run, writing all artifacts to the output dir.

    Returns the exit status code.
    """
    t0 = time.perf_counter()
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)

    observed, meta, report_text = load_observed(config)
    k = observed.n_compartments
    sampler = build_sampler(config, k)

    resolved = dict(config.values)
    resolved["n_blocks"] = (
        config["n_blocks"] if config["n_blocks"] is not None else min(k, 5)
    )
    (out / "config.json").write_text(
        json.dumps(
            {
                "config": resolved,
                "config_hash": config.config_hash(),
                "context_hash": config.context_hash(),
                "n_compartments": k,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    (out / "data_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if report_text is not None:
        (out / "load_report.txt").write_text(report_text + "\n")

    status = "success"
    try:
        sampler.fit(observed)
    except BudgetExceededError as exc:
        status = "budget-exceeded"
        sampler.samples_ = exc.partial_samples
        sampler.n_simulations_ = exc.n_simulations
        sampler.epsilon_ = config["epsilon"]
        sampler.trace_ = []
        sampler.global_samples_ = np.array(
            [s.theta.global_block for s in exc.partial_samples]
        ).reshape(len(exc.partial_samples), -1)
        sampler.local_samples_ = np.array(
            [s.theta.local_blocks for s in exc.partial_samples]
        ).reshape(len(exc.partial_samples), k, -1)
        sampler.distances_ = np.array([s.distance for s in exc.partial_samples])
        sampler.weights_ = np.array([s.weight for s in exc.partial_samples])
    except ExtinctionError as exc:
        _write_trace(out / "trace.csv", config, exc.trace)
        _write_summary(
            out / "summary.txt", config, "extinction", sampler, [], np.empty((0, 0)),
            np.empty((0, 0, 0)), np.empty(0), time.perf_counter() - t0,
        )
        return EXIT_EXTINCTION

    status = getattr(sampler, "status_", status)
    globals_ = sampler.global_samples_
    locals_ = sampler.local_samples_
    distances = sampler.distances_
    weights = getattr(sampler, "weights_", None)
    if weights is None:
        weights = np.ones(len(distances))
    names = _parameter_names(globals_.shape[1] if globals_.ndim == 2 else 0, k,
                             locals_.shape[2] if locals_.ndim == 3 else 1)

    _write_samples(out / "samples.csv", config, globals_, locals_, distances, weights)
    _write_trace(out / "trace.csv", config, sampler.trace_)
    snapshots = getattr(sampler, "snapshots_", None)
    if snapshots:
        _write_snapshots(out / "snapshots.csv", config, snapshots, locals_.shape[2])
    _write_summary(
        out / "summary.txt", config, status, sampler, names, globals_, locals_,
        weights, time.perf_counter() - t0,
    )
    return _STATUS_EXIT.get(status, EXIT_OK)


# -- plot data -------------------------------------------------------------


def _read_run(run_dir: Path):
    info = json.loads((run_dir / "config.json").read_text())
    return info


def _read_table(path: Path):
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise PermABCError(f"{path} lacks the schema header line")
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def _check_contexts(run_dirs, force: bool):
    seen = {}
    for d in run_dirs:
        info = _read_run(Path(d))
        seen[str(d)] = info["context_hash"]
    if len(set(seen.values())) > 1 and not force:
        listing = "\n  ".join(f"{d}: {h}" for d, h in seen.items())
        raise PermABCError(
            "runs come from different model/data contexts "
            f"(use --force to mix):\n  {listing}"
        )


def emit_plot_data(run_dirs, kind: str, out_path, target_unique: int = 1000, force=False):
    """Produce a tidy long-format table from one or more completed runs."""
    run_dirs = [Path(d) for d in run_dirs]
    _check_contexts(run_dirs, force)
    rows_out = []
    if kind == "budget-curve":
        traces = {}
        sizes = {}
        for d in run_dirs:
            info = _read_run(d)
            method = info["config"]["sampler"]
            header, rows = _read_table(d / "trace.csv")
            idx = {h: i for i, h in enumerate(header)}
            traces[method] = [
                TraceRow(
                    iteration=int(r[idx["iteration"]]),
                    epsilon=float(r[idx["epsilon"]]),
                    m_or_l=int(r[idx["m_or_l"]]),
                    alive_count=int(r[idx["alive_count"]]),
                    unique_particle_rate=float(r[idx["unique_particle_rate"]]),
                    simulator_calls=int(r[idx["simulator_calls"]]),
                    assignment_solves=int(r[idx["assignment_solves"]]),
                    wall_time_seconds=float(r[idx["wall_time_seconds"]]),
                )
                for r in rows
            ]
            sizes[method] = int(info["config"]["n"])
        header_out = ["method", "simulations", "epsilon", "complete"]
        for method, trace in traces.items():
            for row in budget_curve({method: trace}, target_unique, sizes[method]):
                rows_out.append([row.method, row.simulations, _fmt(row.epsilon), row.complete])
    elif kind == "marginal-hist":
        header_out = ["run", "parameter", "value", "weight"]
        for d in run_dirs:
            header, rows = _read_table(d / "samples.csv")
            params = header[2:]
            for r in rows:
                for name, value in zip(params, r[2:]):
                    rows_out.append([d.name, name, value, r[0]])
    elif kind == "os-evolution":
        header_out = ["m", "parameter", "value"]
        for d in run_dirs:
            header, rows = _read_table(d / "snapshots.csv")
            idx = {h: i for i, h in enumerate(header)}
            for r in rows:
                rows_out.append([r[idx["m_or_l"]], r[idx["parameter"]], r[idx["value"]]])
    elif kind == "map-values":
        header_out = ["department_id", "posterior_mean"]
        for d in run_dirs:
            info = _read_run(d)
            meta = json.loads((d / "data_meta.json").read_text())
            ids = meta["department_ids"]
            header, rows = _read_table(d / "samples.csv")
            idx = {h: i for i, h in enumerate(header)}
            weights = np.array([float(r[0]) for r in rows])
            weights = weights / weights.sum()
            is_sir = info["config"]["model"]["name"] == "sir"
            for slot, dep in enumerate(ids):
                if is_sir:
                    delta = np.array([float(r[idx[f"local_{slot}_2"]]) for r in rows])
                    repro = np.array([float(r[idx["global_0"]]) for r in rows])
                    values = delta / repro
                else:
                    values = np.array([float(r[idx[f"local_{slot}_0"]]) for r in rows])
                rows_out.append([dep, _fmt(float(np.sum(weights * values)))])
    else:
        raise ConfigurationError(f"unknown plot-data kind {kind!r}")

    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header_out)
        writer.writerows(rows_out)


# -- argument parsing --------------------------------------------------------


def _parse_set(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _config_from_args(args) -> RunConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.threads is not None:
        overrides["threads"] = args.threads
    elif os.environ.get("PERMABC_THREADS"):
        overrides["threads"] = int(os.environ["PERMABC_THREADS"])
    if args.preset:
        return preset_config(args.preset, overrides)
    return parse_config(args.config, overrides)


def _add_config_args(parser):
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--preset", help="named preset (see list-presets)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (dotted paths allowed)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--threads", type=int, help="worker threads (never changes results)")
    parser.add_argument("--output-dir", help="override the output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="permabc",
        description="Permutation-matched ABC for exchangeable-compartment models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    _add_config_args(p_run)

    p_val = sub.add_parser("validate-config", help="check a configuration and print it")
    _add_config_args(p_val)

    sub.add_parser("list-presets", help="list available experiment presets")

    p_plot = sub.add_parser("plot-data", help="emit tidy plot data from finished runs")
    p_plot.add_argument("run_dirs", nargs="+", help="run output directories")
    p_plot.add_argument("--kind", required=True,
                        choices=["budget-curve", "marginal-hist", "os-evolution", "map-values"])
    p_plot.add_argument("--out", required=True, help="output CSV path")
    p_plot.add_argument("--target-unique", type=int, default=1000)
    p_plot.add_argument("--force", action="store_true",
                        help="allow mixing runs with different contexts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "list-presets":
            for name in sorted(PRESETS):
                cfg = PRESETS[name]
                print(f"{name}: model={cfg['model']['name']} sampler={cfg['sampler']}")
            return EXIT_OK
        if args.command == "validate-config":
            config = _config_from_args(args)
            print(config.as_json())
            return EXIT_OK
        if args.command == "run":
            config = _config_from_args(args)
            code = run_experiment(config)
            print(f"run finished with status code {code} (artifacts in {config['output_dir']})")
            return code
        if args.command == "plot-data":
            emit_plot_data(
                args.run_dirs, args.kind, args.out,
                target_unique=args.target_unique, force=args.force,
            )
            return EXIT_OK
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExtinctionError as exc:
        print(f"extinction: {exc}", file=sys.stderr)
        return EXIT_EXTINCTION
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except PermABCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
