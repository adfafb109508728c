"""Command-line entry point for the flow-coreset pipeline.

Subcommands cover single pipeline stages (prepare, coreset, train, eval)
and the two packaged experiment grids (offline, stream) plus report
regeneration. Exit codes: 0 success, 1 config error, 2 data error,
3 numerical failure (a diagnostics JSON file is written next to the
output).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from .coreset import (
    frankwolfe_construct,
    giga_construct,
    load_coreset,
    materialize,
    random_construct,
    save_coreset,
)
from .data import (
    Dataset,
    StandardizationParams,
    apply_standardization,
    fit_standardization,
    load_dataset,
)
from .embed import MODEL_BLR, build_projection_basis, embed_log_likelihoods
from .errors import ConfigError, DataError, NumericalError
from .experiments import (
    ExperimentConfig,
    load_config,
    prepare_datasets,
    regenerate_report,
    run_offline,
    run_stream_experiment,
)
from .inference import (
    WeightedBLRModel,
    accuracy,
    hmc_sample,
    load_posterior,
    save_posterior,
)
from .seeds import derive_seed

log = logging.getLogger("flowcoreset")

_MODE_FLAGS = {
    "pool": "pool_full",
    "coreset": "coreset_aggregate",
    "random": "random_aggregate",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for data
    errors, so usage problems are routed through ConfigError instead."""

    def error(self, message):
        raise ConfigError(message)


def resolve_config(name: str) -> ExperimentConfig:
    """A config flag is either a JSON file path or a packaged config name."""
    path = Path(name)
    if path.exists():
        return load_config(path)
    packaged = resources.files("flowcoreset") / "configs" / f"{name}.json"
    if packaged.is_file():
        return ExperimentConfig.from_dict(json.loads(packaged.read_text()))
    raise ConfigError(
        f"config not found: {name!r} is neither a file nor a packaged config")


def _parse_budgets(text: str) -> tuple[int, ...]:
    try:
        budgets = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad budget list {text!r}") from exc
    if not budgets:
        raise ConfigError("budget list is empty")
    return budgets


def _configure(args) -> ExperimentConfig:
    config = resolve_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["rng_seed"] = args.seed
    if getattr(args, "budgets", None):
        updates["budgets"] = _parse_budgets(args.budgets)
    return dataclasses.replace(config, **updates) if updates else config


def _standardization_path(stem: str | Path) -> Path:
    return Path(stem).with_suffix(".std.json")


def cmd_prepare(args) -> int:
    config = _configure(args)
    written = prepare_datasets(config, args.out)
    for path in written:
        print(path)
    return 0


def cmd_coreset(args) -> int:
    data, _ = load_dataset(args.data)
    started = time.perf_counter()
    if args.method == "random":
        built = random_construct(
            data.n, min(args.budget, data.n), args.seed,
            model_family=MODEL_BLR)
    else:
        params = fit_standardization(data)
        std = apply_standardization(data, params)
        pilot = WeightedBLRModel.from_dataset(std)
        basis = build_projection_basis(
            MODEL_BLR, pilot, args.d, derive_seed(args.seed, "basis"),
            weighting=args.weighting)
        embedding = embed_log_likelihoods(std, MODEL_BLR, basis)
        construct = giga_construct if args.method == "giga" else frankwolfe_construct
        built = construct(embedding, args.budget, MODEL_BLR)
    elapsed = time.perf_counter() - started
    save_coreset(built, args.out)
    diag = built.construction
    print(json.dumps({
        "method": args.method,
        "entries": built.size,
        "relative_error": (diag.relative_error if diag else None),
        "seconds": elapsed,
        "path": str(args.out),
    }))
    return 0


def cmd_train(args) -> int:
    data, _ = load_dataset(args.data)
    if args.coreset:
        built = load_coreset(args.coreset)
        sources = {batch_id: data for batch_id in set(built.batch_ids)}
        x, y, weights = materialize(built, sources)
        rows = Dataset(x, y)
        params = fit_standardization(rows)
        std = apply_standardization(rows, params)
        model = WeightedBLRModel(std.x, std.y, weights)
    else:
        params = fit_standardization(data)
        model = WeightedBLRModel.from_dataset(apply_standardization(data, params))
    settings = {
        "total_samples": args.total_samples,
        "burn_frac": args.burn_frac,
        "thin": args.thin,
        "target_accept": args.target_accept,
        "leapfrog_steps": args.leapfrog_steps,
        "jitter": args.jitter,
        "initial_step_size": args.initial_step_size,
    }
    posterior = hmc_sample(model, rng_seed=args.seed, **settings)
    save_posterior(posterior, args.out)
    _standardization_path(args.out).write_text(
        json.dumps(params.to_dict()) + "\n")
    print(json.dumps({
        "n_draws": posterior.n_draws,
        "acceptance_rate": posterior.acceptance_rate,
        "step_size": posterior.step_size,
        "weight_rescale": posterior.weight_rescale,
        "path": str(args.out),
    }))
    return 0


def cmd_eval(args) -> int:
    posterior = load_posterior(args.posterior)
    std_path = _standardization_path(args.posterior)
    data, _ = load_dataset(args.data)
    if std_path.exists():
        params = StandardizationParams.from_dict(
            json.loads(std_path.read_text()))
        data = apply_standardization(data, params)
    draws = min(args.draws, posterior.n_draws)
    acc = accuracy(posterior, data, n_draws=draws)
    print(json.dumps({"accuracy": acc, "samples": data.n, "draws": draws}))
    return 0


def cmd_offline(args) -> int:
    config = _configure(args)
    report = run_offline(config, args.out,
                         sequential_timing=args.sequential_timing)
    for condition, mean in report["grand_mean_accuracy"].items():
        log.info("%s: mean accuracy %.4f", condition, mean)
    print(Path(args.out) / "report.json")
    return 0


def cmd_stream(args) -> int:
    config = _configure(args)
    mode = _MODE_FLAGS[args.mode] if args.mode else None
    report, _ = run_stream_experiment(
        config, args.out, mode_override=mode,
        sequential_timing=args.sequential_timing)
    for arm in report["arms"]:
        last = arm["steps"][-1]
        log.info("%s budget=%s: final step accuracy %.4f",
                 arm["mode"], arm["budget"], last["mean_accuracy"])
    print(Path(args.out) / "stream_report.json")
    return 0


def cmd_report(args) -> int:
    for path in regenerate_report(args.run, fmt=args.format):
        print(path)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="flowcoreset",
                     description="Coreset-compressed Bayesian classification "
                                 "of network flows.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_budgets=True):
        p.add_argument("--config", required=True,
                       help="config JSON path or packaged name (sim1, sim2)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's root seed")
        if with_budgets:
            p.add_argument("--budgets", default=None,
                           help="override budgets, e.g. 100,500,1000")

    p = sub.add_parser("prepare", help="materialize train/test datasets")
    add_config_flags(p, with_budgets=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("coreset", help="build one coreset from a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("giga", "fw", "random"),
                   default="giga")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--d", type=int, default=500,
                   help="embedding dimension for giga/fw")
    p.add_argument("--weighting", choices=("laplace", "prior"),
                   default="laplace")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_coreset)

    p = sub.add_parser("train", help="sample a posterior, optionally "
                                     "weighted by a coreset")
    p.add_argument("--data", required=True)
    p.add_argument("--coreset", default=None)
    p.add_argument("--out", required=True, help="output stem for .npy/.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--total-samples", type=int, default=10000)
    p.add_argument("--burn-frac", type=float, default=0.5)
    p.add_argument("--thin", type=int, default=2)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--leapfrog-steps", type=int, default=20)
    p.add_argument("--jitter", type=float, default=0.2)
    p.add_argument("--initial-step-size", type=float, default=None,
                   help="skip the automatic step-size search")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="classify a test CSV with a posterior")
    p.add_argument("--posterior", required=True, help="stem used by train")
    p.add_argument("--data", required=True)
    p.add_argument("--draws", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("offline", help="run the offline experiment grid")
    add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sequential-timing", action="store_true",
                   help="disable parallelism so wall clocks are honest")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("stream", help="run the streaming experiment grid")
    add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=tuple(_MODE_FLAGS), default=None,
                   help="run a single reduction mode instead of the "
                        "config's list")
    p.add_argument("--sequential-timing", action="store_true")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("report", help="regenerate reports from a run "
                                      "directory")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("csv", "json", "both"),
                   default="both")
    p.set_defaults(func=cmd_report)
    return parser


def _diagnostics_dir(args) -> Path:
    for attr in ("out", "run"):
        value = getattr(args, attr, None)
        if value:
            path = Path(value)
            return path if path.suffix == "" else path.parent
    return Path(".")


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = None
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except DataError as exc:
        log.error("data error: %s", exc)
        return 2
    except NumericalError as exc:
        target = _diagnostics_dir(args) if args is not None else Path(".")
        target.mkdir(parents=True, exist_ok=True)
        path = target / "numerical_failure.json"
        path.write_text(json.dumps(
            {"error": str(exc), "diagnostics": exc.diagnostics},
            indent=2, default=str) + "\n")
        log.error("numerical failure: %s (diagnostics at %s)", exc, path)
        return 3


if __name__ == "__main__":
    sys.exit(main())
