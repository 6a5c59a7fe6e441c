"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``decode``, ``evaluate``, ``experiment``.
Exit codes: 0 success, 1 usage error, 2 validation error (bad config or
input data), 3 runtime failure.  Every run writes a resolved configuration
copy into the output directory so it can be replayed bit-identically
(timestamps live only in metadata files).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import (
    FIT_PRESETS,
    FIT_SCHEMA,
    SIM_PRESETS,
    ValidationError,
    dump_yaml,
    fit_result_to_dict,
    fit_spec_from_config,
    load_yaml,
    model_from_fit_file,
    sim_config_from_dict,
)
from .emissions import mode_count
from .evaluate import auc, density_grid, switch_count
from .experiments import default_threads, run_experiment
from .fit import FitError, fit
from .hmm import local_state_probs, viterbi
from .simulate import LabeledSeries, run_simulation

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="splinehmm", description=__doc__)
    p.add_argument("--version", action="version", version=f"splinehmm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate replicate series as CSV files")
    sim.add_argument("--preset", choices=sorted(SIM_PRESETS), help="built-in generator")
    sim.add_argument("--config", type=Path, help="YAML simulation config")
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--T", type=int, dest="T")
    sim.add_argument("--seed", type=int)
    sim.set_defaults(func=_cmd_simulate)

    fit_p = sub.add_parser("fit", help="fit a model to a series CSV (column 'x')")
    fit_p.add_argument("data", type=Path)
    fit_p.add_argument("--model", choices=["parametric", "spline", "unimodal"])
    fit_p.add_argument("--preset", choices=sorted(FIT_PRESETS))
    fit_p.add_argument("--config", type=Path)
    fit_p.add_argument("--out", type=Path, required=True)
    fit_p.add_argument("--seed", type=int)
    fit_p.add_argument("--starts", type=int)
    fit_p.add_argument("--subtract", type=float,
                       help="offset to subtract from raw observations before fitting")
    fit_p.set_defaults(func=_cmd_fit)

    dec = sub.add_parser("decode", help="state probabilities and most likely path")
    dec.add_argument("data", type=Path)
    dec.add_argument("--fit", type=Path, required=True, dest="fit_file")
    dec.add_argument("--out", type=Path, required=True)
    dec.set_defaults(func=_cmd_decode)

    ev = sub.add_parser("evaluate", help="summarise decoded CSVs against true labels")
    ev.add_argument("decoded", type=Path, nargs="+")
    ev.add_argument("--fits", type=Path, nargs="*", default=[],
                    help="fit-result files aligned with the decoded CSVs")
    ev.add_argument("--out", type=Path, required=True)
    ev.set_defaults(func=_cmd_evaluate)

    exp = sub.add_parser("experiment", help="replicate a full simulation study")
    exp.add_argument("preset", choices=["sim1", "sim2"])
    exp.add_argument("--out", type=Path, required=True)
    exp.add_argument("--replicates", type=int)
    exp.add_argument("--starts", type=int)
    exp.add_argument("--seed", type=int, default=1)
    exp.add_argument("--T", type=int, dest="T")
    exp.add_argument("--threads", type=int, default=None)
    exp.set_defaults(func=_cmd_experiment)
    return p


def _outdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_series(path: Path) -> LabeledSeries:
    if not path.exists():
        raise ValidationError(f"data file not found: {path}")
    try:
        series = LabeledSeries.from_csv(path)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    bad = np.flatnonzero(~np.isfinite(series.x))
    if bad.size:
        raise ValidationError(f"{path}: non-finite observation at row {bad[0]}")
    return series


def _cmd_simulate(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise UsageError("simulate needs exactly one of --preset or --config")
    cfg = dict(SIM_PRESETS[args.preset]) if args.preset else load_yaml(args.config)
    for key, val in (("replicates", args.replicates), ("T", args.T), ("seed", args.seed)):
        if val is not None:
            cfg[key] = val
    config = sim_config_from_dict(cfg)
    out = _outdir(args.out)
    series = run_simulation(config)
    paths = []
    for r, s in enumerate(series):
        path = out / f"{config.prefix}_r{r:03d}.csv"
        s.to_csv(path)
        paths.append(path.name)
    dump_yaml(config.extra["resolved"], out / "config_resolved.yaml")
    dump_yaml(
        {
            "rng": "numpy PCG64 via SeedSequence-spawned substreams",
            "files": paths,
            "created_unix": time.time(),
        },
        out / "metadata.yaml",
    )
    print(f"wrote {len(paths)} replicate file(s) to {out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    series = _read_series(args.data)
    cfg = {}
    if args.preset:
        cfg.update(FIT_PRESETS[args.preset])
    if args.config:
        user = load_yaml(args.config)
        base = dict(cfg)
        base.update(user)
        cfg = base
    overrides = {"seed": args.seed, "n_starts": args.starts, "subtract": args.subtract}
    if args.model:
        cfg["model"] = args.model
    spec, resolved = fit_spec_from_config(cfg, overrides=overrides)
    x = series.x - float(resolved["subtract"])
    out = _outdir(args.out)
    dump_yaml(resolved, out / "config_resolved.yaml")
    result = fit(spec, x)
    dump_yaml(fit_result_to_dict(result), out / "fit_result.yaml")
    grid = density_grid(
        result.model,
        grid_size=int(resolved["grid_size"]),
        x_range=None if hasattr(result.model.emission, "basis")
        else (float(x.min()), float(x.max())),
    )
    grid.to_csv(out / "density_grid.csv", index=False)
    status = "converged" if result.converged else "NOT converged"
    print(f"fit {spec.model_kind}: loglik={result.loglik:.4f} ({status}); results in {out}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    series = _read_series(args.data)
    if not args.fit_file.exists():
        raise ValidationError(f"fit-result file not found: {args.fit_file}")
    model, _ = model_from_fit_file(args.fit_file)
    posts = local_state_probs(model, series.x)
    path = viterbi(model, series.x)
    frame = {"t": np.arange(1, len(series) + 1), "x": series.x}
    if series.states is not None:
        frame["state"] = series.states + 1
    frame["viterbi_state"] = path + 1
    for i in range(model.n_states):
        frame[f"p_state_{i + 1}"] = posts[:, i]
    out = pd.DataFrame(frame)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(args.out, index=False)
    print(f"decoded {len(series)} observations -> {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    if args.fits and len(args.fits) != len(args.decoded):
        raise ValidationError("--fits must align one-to-one with the decoded CSVs")
    rows = []
    for i, path in enumerate(args.decoded):
        if not path.exists():
            raise ValidationError(f"decoded file not found: {path}")
        df = pd.read_csv(path)
        p_cols = sorted(c for c in df.columns if c.startswith("p_state_"))
        row: dict = {"file": path.name, "n_obs": len(df)}
        if "viterbi_state" in df:
            row["switch_count_viterbi"] = switch_count(df["viterbi_state"].to_numpy())
        if "state" in df:
            row["switch_count_truth"] = switch_count(df["state"].to_numpy())
        if "state" in df and len(p_cols) == 2:
            truth = df["state"].to_numpy() == 1
            try:
                row["auc"] = auc(df["p_state_1"].to_numpy(), truth).auc
            except ValueError:
                row["auc"] = np.nan
        else:
            row["auc"] = np.nan
        if args.fits:
            model, data = model_from_fit_file(args.fits[i])
            row["loglik"] = data.get("loglik")
            row["converged"] = data.get("converged")
            tpm = model.transition.tpm
            for a in range(model.n_states):
                for b in range(model.n_states):
                    row[f"gamma_{a + 1}{b + 1}"] = tpm[a, b]
            if hasattr(model.emission, "basis"):
                for s in range(model.n_states):
                    row[f"mode_count_{s + 1}"] = mode_count(model.emission, s)
        rows.append(row)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(args.out, index=False)
    print(f"evaluated {len(rows)} file(s) -> {args.out}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    out = _outdir(args.out)
    rep_df, summary = run_experiment(
        args.preset, replicates=args.replicates, starts=args.starts,
        seed=args.seed, T=args.T, threads=args.threads,
    )
    resolved = {
        "experiment": args.preset,
        "replicates": args.replicates,
        "starts": args.starts,
        "seed": args.seed,
        "T": args.T,
        "threads": args.threads if args.threads is not None else default_threads(),
    }
    dump_yaml(resolved, out / "config_resolved.yaml")
    rep_df.to_csv(out / "replicates.csv", index=False)
    summary.to_csv(out / "summary.csv", index=False)
    print(summary.to_string(index=False))
    print(f"replicate table and summary written to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FitError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
