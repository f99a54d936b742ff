"""Command-line front end: configure, generate data, run, and export tables.

Three subcommands:

``run``
    Execute one sampler run from a JSON experiment config and write the
    posterior sample, pre-resampling weights, mode table, optional
    trajectory table, and a JSON run report into the output directory.
``generate``
    Simulate a dataset at a parameter vector and write it as CSV with a
    JSON meta sidecar recording the vector and seed.
``trajectories``
    Solve the ODE at rows of an existing samples CSV (plus the posterior
    mean) and write a long-format table ready for plotting.

Exit codes: 0 on success, 1 on configuration errors, 2 when every initial
particle floods (the data and model cannot be reconciled).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imis_core import (
    STREAM_DATA,
    AllFloodError,
    RunConfig,
    run,
    substream,
)
from .models import (
    DEFAULT_GENERATION_THETA,
    FHN_PARAM_NAMES,
    FHN_TRUTH,
    MODEL_NAMES,
    RICKER_PARAM_NAMES,
    SIR_PARAM_NAMES,
    generate_dataset,
    get_model,
)
from .ode_engine import (
    FHN_STEP,
    SIR_STEP,
    fhn_default_grid,
    fhn_rhs,
    sir_rhs,
    solve_rk4_batch,
)
from .simulators import (
    SIR_N_POP,
    read_observations_csv,
    sir_default_grid,
    write_observations_csv,
)

THREADS_ENV_VAR = "IMIS_SHOPT_THREADS"

SAMPLE_COLUMNS = {
    "fhn1": ("c",),
    "fhn2": FHN_PARAM_NAMES,
    "sir": SIR_PARAM_NAMES,
    "ricker": RICKER_PARAM_NAMES,
}

ODE_MODELS = ("fhn1", "fhn2", "sir")


class ConfigError(ValueError):
    """Raised for any unusable configuration or input file; maps to exit 1."""


# ---------------------------------------------------------------------------
# Experiment configuration

_TOP_KEYS = {
    "model",
    "variant",
    "seed",
    "counts",
    "data",
    "priors",
    "synthetic_likelihood",
    "out_dir",
    "emit",
    "threads",
    "shotgun_methods",
}
_COUNT_KEYS = {"n0", "b", "d", "q", "j", "n_iter"}
_REQUIRED_COUNTS = ("n0", "b", "d", "q", "j")
_DATA_KEYS = {"path", "generate"}
_GENERATE_KEYS = {"theta", "seed"}
_PRIOR_KEYS = {"normal_spread", "fhn_c"}
_SL_KEYS = {"n_replicates", "ridge"}
_EMIT_KEYS = {"samples", "weights", "modes", "trajectories", "trajectory_draws"}


@dataclass
class ExperimentConfig:
    model: str
    variant: str
    seed: int
    counts: dict
    data: dict
    priors: dict
    sl: dict
    out_dir: str
    emit: dict
    threads: int
    shotgun_methods: Optional[tuple]


def _check_keys(section, allowed, where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("%s must be a JSON object" % where)
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError("unknown key(s) in %s: %s" % (where, ", ".join(unknown)))
    return section


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON document, rejecting unknown keys at every level."""
    _check_keys(raw, _TOP_KEYS, "config")

    model = raw.get("model")
    if model not in MODEL_NAMES:
        raise ConfigError("config.model must be one of %s, got %r" % (MODEL_NAMES, model))

    counts = _check_keys(raw.get("counts", {}), _COUNT_KEYS, "config.counts")
    missing = [k for k in _REQUIRED_COUNTS if k not in counts]
    if missing:
        raise ConfigError("config.counts missing key(s): %s" % ", ".join(missing))

    data = _check_keys(raw.get("data", {}), _DATA_KEYS, "config.data")
    if ("path" in data) == ("generate" in data):
        raise ConfigError("config.data needs exactly one of 'path' or 'generate'")
    if "generate" in data:
        _check_keys(data["generate"], _GENERATE_KEYS, "config.data.generate")

    priors = _check_keys(raw.get("priors", {}), _PRIOR_KEYS, "config.priors")
    sl = _check_keys(
        raw.get("synthetic_likelihood", {}), _SL_KEYS, "config.synthetic_likelihood"
    )

    emit = dict(
        _check_keys(raw.get("emit", {}), _EMIT_KEYS, "config.emit")
    )
    emit.setdefault("samples", True)
    emit.setdefault("weights", True)
    emit.setdefault("modes", True)
    emit.setdefault("trajectories", False)
    emit.setdefault("trajectory_draws", 20)
    for key in ("samples", "weights", "modes", "trajectories"):
        if not isinstance(emit[key], bool):
            raise ConfigError("config.emit.%s must be true or false" % key)
    if int(emit["trajectory_draws"]) < 0:
        raise ConfigError("config.emit.trajectory_draws must be >= 0")
    emit["trajectory_draws"] = int(emit["trajectory_draws"])

    methods = raw.get("shotgun_methods")
    if methods is not None:
        if not isinstance(methods, list) or not methods:
            raise ConfigError("config.shotgun_methods must be a non-empty list")
        methods = tuple(str(m) for m in methods)

    threads = raw.get("threads", int(os.environ.get(THREADS_ENV_VAR, "1")))

    return ExperimentConfig(
        model=model,
        variant=str(raw.get("variant", "IMIS-ShOpt")),
        seed=int(raw.get("seed", 0)),
        counts=dict(counts),
        data=dict(data),
        priors=dict(priors),
        sl=dict(sl),
        out_dir=str(raw.get("out_dir", ".")),
        emit=emit,
        threads=int(threads),
        shotgun_methods=methods,
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config is not valid JSON: %s" % exc) from exc
    return parse_experiment_config(raw)


# ---------------------------------------------------------------------------
# Table writing

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "" if np.isnan(v) else "%.17g" % v


def _write_table(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_samples_csv(path: str, expected_columns) -> np.ndarray:
    """Read a samples table, selecting the expected columns in canonical order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("samples file %s is empty" % path) from None
        missing = [c for c in expected_columns if c not in header]
        if missing:
            raise ConfigError(
                "samples file %s is missing column(s): %s" % (path, ", ".join(missing))
            )
        idx = [header.index(c) for c in expected_columns]
        rows = [[float(line[i]) for i in idx] for line in reader if line]
    if not rows:
        raise ConfigError("samples file %s has no data rows" % path)
    return np.asarray(rows, dtype=float)


# ---------------------------------------------------------------------------
# Trajectory tables

def _dynamics_for(model_name: str, thetas: np.ndarray):
    """Map sample rows to batched ODE inputs for the named model."""
    if model_name in ("fhn1", "fhn2"):
        if model_name == "fhn1":
            full = np.tile(FHN_TRUTH, (thetas.shape[0], 1))
            full[:, 2] = thetas[:, 0]
        else:
            full = thetas
        return {
            "rhs": fhn_rhs,
            "params": full[:, 0:3],
            "x0": full[:, 5:7],
            "grid": fhn_default_grid(),
            "states": ("V", "R"),
            "step": FHN_STEP,
            "lower": None,
            "upper": None,
        }
    if model_name == "sir":
        i0 = thetas[:, 2]
        x0 = np.column_stack([SIR_N_POP - i0, i0, np.zeros(thetas.shape[0])])
        return {
            "rhs": sir_rhs,
            "params": thetas[:, 0:2],
            "x0": x0,
            "grid": sir_default_grid(),
            "states": ("S", "I", "R"),
            "step": SIR_STEP,
            "lower": -1e-6,
            "upper": SIR_N_POP + 1e-6,
        }
    raise ConfigError(
        "trajectories need a deterministic ODE model (%s), got %r"
        % (", ".join(ODE_MODELS), model_name)
    )


def build_trajectory_table(model_name: str, samples: np.ndarray, n_draws: int):
    """Long-format trajectory rows for n_draws sample rows plus their mean.

    The posterior-mean trajectory carries draw id -1; sample rows are taken
    from the top of the file (a multinomial resample is exchangeable, so the
    leading rows are an unbiased subsample).  Returns (header, rows) with
    exactly (n_draws + 1) * n_states * n_times rows.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if n_draws < 0:
        raise ConfigError("n_draws must be >= 0")
    if n_draws > samples.shape[0]:
        raise ConfigError(
            "asked for %d draws but the samples file has %d rows"
            % (n_draws, samples.shape[0])
        )
    sel = np.vstack([np.mean(samples, axis=0)[None, :], samples[:n_draws]])
    draw_ids = [-1] + list(range(n_draws))
    dyn = _dynamics_for(model_name, sel)
    states, _ = solve_rk4_batch(
        dyn["rhs"],
        dyn["x0"],
        dyn["params"],
        dyn["grid"],
        dyn["step"],
        state_lower=dyn["lower"],
        state_upper=dyn["upper"],
    )
    rows = []
    for i, draw_id in enumerate(draw_ids):
        for s, state_name in enumerate(dyn["states"]):
            for t, time in enumerate(dyn["grid"]):
                rows.append((draw_id, state_name, time, states[i, t, s]))
    return ("draw_id", "state", "time", "value"), rows


# ---------------------------------------------------------------------------
# Subcommands

def _resolve_data(cfg: ExperimentConfig):
    if "path" in cfg.data:
        return read_observations_csv(cfg.data["path"])
    gen = cfg.data["generate"]
    theta = gen.get("theta")
    if theta is None:
        theta = DEFAULT_GENERATION_THETA[cfg.model]
    rng = substream(int(gen.get("seed", 0)), STREAM_DATA)
    return generate_dataset(cfg.model, np.asarray(theta, dtype=float), rng)


def cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = int(args.threads)
    if cfg.emit["trajectories"] and cfg.model not in ODE_MODELS:
        raise ConfigError(
            "emit.trajectories requires an ODE model (%s)" % ", ".join(ODE_MODELS)
        )

    run_config = RunConfig(
        n0=cfg.counts["n0"],
        b=cfg.counts["b"],
        d=cfg.counts["d"],
        q=cfg.counts["q"],
        j=cfg.counts["j"],
        n_iter=cfg.counts.get("n_iter", 100),
        variant=cfg.variant,
        seed=cfg.seed,
        threads=cfg.threads,
        shotgun_methods=cfg.shotgun_methods,
    )
    if cfg.emit["trajectories"] and cfg.emit["trajectory_draws"] > run_config.j:
        raise ConfigError("emit.trajectory_draws cannot exceed counts.j")

    data = _resolve_data(cfg)
    model = get_model(cfg.model, data, run_seed=cfg.seed, priors=cfg.priors, sl=cfg.sl)
    result = run(model, run_config)

    os.makedirs(cfg.out_dir, exist_ok=True)
    param_names = list(model.param_names)

    if cfg.emit["samples"]:
        _write_table(
            os.path.join(cfg.out_dir, "posterior_samples.csv"),
            param_names,
            result.resampled,
        )
    if cfg.emit["weights"]:
        ps = result.particles
        weights = np.exp(ps.log_weights)
        _write_table(
            os.path.join(cfg.out_dir, "weights_pre_resample.csv"),
            param_names + ["weight"],
            np.column_stack([ps.thetas, weights]),
        )
    if cfg.emit["modes"]:
        mode_rows = [
            (
                oc.result.method,
                oc.d_index,
                oc.q_index,
                oc.result.objective_value,
                bool(oc.result.converged),
                oc.context_value,
            )
            + tuple(oc.result.theta_hat)
            for oc in result.outcomes
        ]
        _write_table(
            os.path.join(cfg.out_dir, "modes.csv"),
            ["method", "d", "q", "objective", "converged", "context_value"]
            + param_names,
            mode_rows,
        )
    if cfg.emit["trajectories"]:
        header, rows = build_trajectory_table(
            cfg.model, result.resampled, cfg.emit["trajectory_draws"]
        )
        _write_table(os.path.join(cfg.out_dir, "trajectories.csv"), header, rows)

    report = dict(result.report)
    report["data_source"] = cfg.data
    report["threads"] = cfg.threads
    with open(os.path.join(cfg.out_dir, "run_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")

    print(
        "%s %s: %d resampled draws from %d particles (%d components, "
        "stopped by %s) in %.1fs -> %s"
        % (
            cfg.model,
            cfg.variant,
            run_config.j,
            report["n_particles"],
            report["n_components"],
            report["stopped_by"],
            report["wall_time_s"],
            cfg.out_dir,
        )
    )
    return 0


def _parse_theta_arg(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ConfigError("--theta must be comma-separated numbers: %s" % exc) from exc


def cmd_generate(args) -> int:
    if args.model not in MODEL_NAMES:
        raise ConfigError("--model must be one of %s" % (MODEL_NAMES,))
    if args.theta is not None:
        theta = _parse_theta_arg(args.theta)
    else:
        theta = DEFAULT_GENERATION_THETA[args.model]
    rng = substream(int(args.seed), STREAM_DATA)
    try:
        obs = generate_dataset(args.model, theta, rng)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_observations_csv(args.out, obs)
    meta = {
        "model": args.model,
        "theta": [float(v) for v in np.asarray(theta, dtype=float)],
        "seed": int(args.seed),
    }
    with open(args.out + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("wrote %d observations to %s" % (obs.times.shape[0], args.out))
    return 0


def cmd_trajectories(args) -> int:
    if args.model not in MODEL_NAMES:
        raise ConfigError("--model must be one of %s" % (MODEL_NAMES,))
    samples = _read_samples_csv(args.samples, SAMPLE_COLUMNS[args.model])
    header, rows = build_trajectory_table(args.model, samples, args.n_draws)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    _write_table(args.out, header, rows)
    print("wrote %d trajectory rows to %s" % (len(rows), args.out))
    return 0


# ---------------------------------------------------------------------------
# Entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imis-shopt",
        description="Incremental mixture importance sampling with shotgun optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a sampler run from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument(
        "--threads",
        type=int,
        default=None,
        help="override the thread count (default: config, then $%s)" % THREADS_ENV_VAR,
    )

    p_gen = sub.add_parser("generate", help="simulate a dataset and write it as CSV")
    p_gen.add_argument("--model", required=True, help="one of %s" % (MODEL_NAMES,))
    p_gen.add_argument(
        "--theta", default=None, help="comma-separated parameter vector (default: built-in)"
    )
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    p_tr = sub.add_parser(
        "trajectories", help="solve the ODE at sampled parameter rows"
    )
    p_tr.add_argument("--samples", required=True, help="posterior samples CSV")
    p_tr.add_argument("--model", required=True, help="one of %s" % (ODE_MODELS,))
    p_tr.add_argument("--n-draws", type=int, default=0, dest="n_draws")
    p_tr.add_argument("--out", required=True, help="output CSV path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "generate": cmd_generate,
        "trajectories": cmd_trajectories,
    }
    try:
        return handlers[args.command](args)
    except AllFloodError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
