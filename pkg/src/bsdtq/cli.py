"""Command-line interface: synth, train, eval, gradcheck, experiment.

All machine-readable output goes to stdout or files; diagnostics go to
stderr (verbosity via the BSDTQ_LOG environment variable).  Exit codes:
0 success, 2 config error, 3 data/dimension error, 4 training error,
5 oracle failure, 1 other I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import boosting, data as data_mod, evaluation, experiments
from .configio import config_from_dict, config_to_dict
from .data import CsvSchema, SplitSpec, SynthSpec
from .errors import ConfigError, DataError, OracleError, TrainingError

log = logging.getLogger("bsdtq")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


@dataclass(frozen=True)
class CsvSourceConfig:
    path: str
    time_col: str = "time"
    target_col: str = "y"
    series_col: str | None = "series_id"
    feature_cols: tuple[str, ...] | None = None

    def schema(self) -> CsvSchema:
        return CsvSchema(time_col=self.time_col, target_col=self.target_col,
                         series_col=self.series_col,
                         feature_cols=self.feature_cols)


@dataclass(frozen=True)
class DataConfig:
    synthetic: SynthSpec | None = None
    csv: CsvSourceConfig | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("exactly one of 'synthetic' or 'csv' must be set")


@dataclass(frozen=True)
class FeatureConfig:
    lags: tuple[int, ...] = data_mod.DEFAULT_LAGS
    roll_windows: tuple[int, ...] = data_mod.DEFAULT_ROLL_WINDOWS
    roll_stats: tuple[str, ...] = data_mod.DEFAULT_ROLL_STATS
    calendar_periods: tuple[int, ...] = data_mod.DEFAULT_CALENDAR_PERIODS


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs, as parsed from a config JSON."""

    data: DataConfig
    split: SplitSpec = field(default_factory=SplitSpec)
    boost: boosting.BoostConfig = field(default_factory=boosting.BoostConfig)
    features: FeatureConfig | None = None
    scale_targets: bool = False
    variants: tuple[str, ...] = ("bsdtq", "bsdt")
    out_dir: str = "."

    def __post_init__(self):
        if not self.variants:
            raise ValueError("need at least one variant")
        for v in self.variants:
            boosting.Variant(v)


def _setup_logging() -> None:
    level_name = os.environ.get("BSDTQ_LOG", "warn").lower()
    if level_name not in _LOG_LEVELS:
        level_name = "warn"
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("bsdtq")
    root.handlers[:] = [handler]
    root.setLevel(_LOG_LEVELS[level_name])


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsdtq",
        description="Boosted soft decision trees with a learnable input transform.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--series", type=int, default=50)
    p.add_argument("--horizon", type=int, default=196)
    p.add_argument("--relevant", type=int, default=5)
    p.add_argument("--irrelevant", type=int, default=45)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--weight-low", type=float, default=0.5)
    p.add_argument("--weight-high", type=float, default=1.5)
    p.add_argument("--seed", type=int, required=True,
                   help="explicit RNG seed (required for reproducibility)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train models from a config JSON")
    p.add_argument("--config", required=True, help="path to a RunConfig JSON")
    p.add_argument("--rounds", type=int)
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--tree-depth", type=int)
    p.add_argument("--tree-steps", type=int)
    p.add_argument("--tree-lr", type=float)
    p.add_argument("--q-steps", type=int)
    p.add_argument("--q-lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model file on a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV with the model's features")
    p.add_argument("--out", default=".")
    p.add_argument("--tag", default=None, help="label written into the report")
    p.add_argument("--in-sample", action="store_true",
                   help="mark the report as an in-sample evaluation")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--depths", default="1,2,3,4",
                   help="comma-separated tree depths")
    p.add_argument("--max-din", type=int, default=16)
    p.add_argument("--max-dout", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["sign-flip"],
                   help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("experiment", help="run a full reproducible experiment")
    p.add_argument("name", choices=["synthetic", "weights"])
    p.add_argument("--out", default=".")
    p.add_argument("--manifest", help="re-run exactly from a manifest JSON")
    p.add_argument("--runs", type=int, help="(weights) number of trainings")
    p.add_argument("--series", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--relevant", type=int)
    p.add_argument("--irrelevant", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int, help="data seed override")
    p.add_argument("--rounds", type=int)
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--tree-depth", type=int)
    p.add_argument("--q-steps", type=int)
    p.add_argument("--q-lr", type=float)
    p.add_argument("--train-seed", type=int)
    p.set_defaults(handler=cmd_experiment)

    return parser


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_series=args.series, horizon=args.horizon, n_relevant=args.relevant,
        n_irrelevant=args.irrelevant, noise_std=args.noise,
        weight_low=args.weight_low, weight_high=args.weight_high,
        seed=args.seed,
    )
    ds, weights = data_mod.generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset_path = out / "synthetic.csv"
    weights_path = out / "weights.json"
    data_mod.save_csv(ds, dataset_path)
    _write_json(weights_path, {
        "weights": weights.tolist(),
        "feature_names": list(ds.feature_names),
        "spec": config_to_dict(spec),
    })
    _print_json({"rows": ds.n_rows, "cols": ds.n_features,
                 "dataset": str(dataset_path), "weights": str(weights_path)})
    return 0


def _load_run_config(args) -> RunConfig:
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}, "
                          f"column {err.colno}") from None
    cfg = config_from_dict(RunConfig, doc)

    boost = cfg.boost
    if args.rounds is not None:
        boost = replace(boost, rounds=args.rounds)
    if args.shrinkage is not None:
        boost = replace(boost, shrinkage=args.shrinkage)
    if args.tree_depth is not None:
        boost = replace(boost, tree_depth=args.tree_depth)
    if args.tree_steps is not None:
        boost = replace(boost, tree=replace(boost.tree, steps=args.tree_steps))
    if args.tree_lr is not None:
        boost = replace(boost, tree=replace(boost.tree,
                                            learning_rate=args.tree_lr))
    if args.q_steps is not None:
        boost = replace(boost, transform=replace(boost.transform,
                                                 steps=args.q_steps))
    if args.q_lr is not None:
        boost = replace(boost, transform=replace(boost.transform,
                                                 learning_rate=args.q_lr))
    if args.seed is not None:
        boost = replace(boost, seed=args.seed)
    cfg = replace(cfg, boost=boost)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _prepare_dataset(cfg: RunConfig):
    if cfg.data.synthetic is not None:
        ds, _ = data_mod.generate_synthetic(cfg.data.synthetic)
    else:
        ds = data_mod.load_csv(cfg.data.csv.path, cfg.data.csv.schema())
    if cfg.scale_targets:
        ds = data_mod.minmax_scale(ds, test_len=cfg.split.test_len)
    if cfg.features is not None:
        ds = data_mod.engineer_features(
            ds, lags=cfg.features.lags, roll_windows=cfg.features.roll_windows,
            roll_stats=cfg.features.roll_stats,
            calendar_periods=cfg.features.calendar_periods)
    return data_mod.split(ds, cfg.split)


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = _prepare_dataset(cfg)
    data_mod.save_csv(train_ds, out / "train.csv")
    data_mod.save_csv(test_ds, out / "test.csv")

    summary = {"out_dir": str(out), "models": {}, "config": config_to_dict(cfg)}
    for name in cfg.variants:
        variant = boosting.Variant(name)
        log.info("training variant %s", name)
        model, trace = boosting.train(train_ds.features, train_ds.target,
                                      cfg.boost, variant)
        model_path = out / f"model_{name}.json"
        boosting.save_model(model, model_path)
        _write_json(out / f"trace_{name}.json",
                    {"variant": name, "train_mse_per_round": trace.tolist()})
        summary["models"][name] = str(model_path)
    _write_json(out / "train_summary.json", summary)
    _print_json({"models": summary["models"],
                 "train_rows": train_ds.n_rows, "test_rows": test_ds.n_rows})
    return 0


def cmd_eval(args) -> int:
    model = boosting.load_model(args.model)
    ds = data_mod.load_csv(args.data)
    predictions, truths = {}, {}
    for sid, block in ds.iter_series():
        predictions[sid] = boosting.predict(model, ds.features[block])
        truths[sid] = ds.target[block]
    tag = args.tag or model.variant.value
    report = evaluation.mse_curves(predictions, truths, model_tag=tag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["in_sample"] = bool(args.in_sample)
    _write_json(out / f"report_{tag}.json", doc)
    evaluation.write_curves_csv(report, out / f"curves_{tag}.csv")
    _print_json({"model_tag": tag, "aggregate_mse": report.aggregate_mse,
                 "in_sample": bool(args.in_sample)})
    return 0


def cmd_gradcheck(args) -> int:
    try:
        depths = tuple(int(tok) for tok in args.depths.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"--depths must be comma-separated integers, "
                          f"got {args.depths!r}") from None
    if not depths or any(d < 1 for d in depths):
        raise ConfigError(f"--depths must be positive integers, got {args.depths!r}")
    result = evaluation.run_gradient_checks(
        trials=args.trials, depths=depths, max_d_in=args.max_din,
        max_d_out=args.max_dout, h=args.step, tolerance=args.tolerance,
        seed=args.seed, fault=args.inject_fault)
    for kind, err in sorted(result.max_errors.items()):
        status = "PASS" if err < result.tolerance else "FAIL"
        print(f"{kind}: max relative error {err:.3e} {status}")
    _print_json(result.to_dict())
    return 0 if result.passed else 5


def cmd_experiment(args) -> int:
    out = Path(args.out)
    if args.manifest is not None:
        name, cfg = experiments.load_manifest(args.manifest)
        if name != args.name:
            raise ConfigError(
                f"manifest is for experiment {name!r}, not {args.name!r}")
    elif args.name == "synthetic":
        cfg = _synthetic_config_from_flags(args)
    else:
        cfg = _weights_config_from_flags(args)

    if args.name == "synthetic":
        summary = experiments.run_synthetic_experiment(cfg, out_dir=out)
        reports = summary.pop("reports")
        if {"bsdtq", "bsdt"} <= set(reports):
            final_cmse = {name: float(r.cmse_t[-1]) for name, r in reports.items()}
            summary["final_cmse"] = final_cmse
        _print_json(summary)
    else:
        report = experiments.run_weight_recovery(cfg, out_dir=out)
        _print_json({"experiment": "weights", "runs": report.runs,
                     "mean_weights": report.mean_weights.tolist(),
                     "std_weights": report.std_weights.tolist(),
                     "true_weights_normalized":
                         report.true_weights_normalized.tolist()})
    return 0


def _synthetic_config_from_flags(args) -> experiments.SyntheticExperimentConfig:
    cfg = experiments.SyntheticExperimentConfig()
    synth = cfg.synth
    for flag, fld in (("series", "n_series"), ("horizon", "horizon"),
                      ("relevant", "n_relevant"), ("irrelevant", "n_irrelevant"),
                      ("noise", "noise_std"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            synth = replace(synth, **{fld: value})
    boost = _boost_overrides(cfg.boost, args)
    return replace(cfg, synth=synth, boost=boost)


def _weights_config_from_flags(args) -> experiments.WeightRecoveryConfig:
    cfg = experiments.WeightRecoveryConfig()
    synth = cfg.synth
    for flag, fld in (("series", "n_series"), ("horizon", "horizon"),
                      ("relevant", "n_relevant"), ("irrelevant", "n_irrelevant"),
                      ("noise", "noise_std"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            synth = replace(synth, **{fld: value})
    boost = _boost_overrides(cfg.boost, args)
    cfg = replace(cfg, synth=synth, boost=boost)
    if args.runs is not None:
        cfg = replace(cfg, runs=args.runs)
    return cfg


def _boost_overrides(boost: boosting.BoostConfig, args) -> boosting.BoostConfig:
    if args.rounds is not None:
        boost = replace(boost, rounds=args.rounds)
    if args.shrinkage is not None:
        boost = replace(boost, shrinkage=args.shrinkage)
    if args.tree_depth is not None:
        boost = replace(boost, tree_depth=args.tree_depth)
    if args.q_steps is not None:
        boost = replace(boost, transform=replace(boost.transform,
                                                 steps=args.q_steps))
    if args.q_lr is not None:
        boost = replace(boost, transform=replace(boost.transform,
                                                 learning_rate=args.q_lr))
    if args.train_seed is not None:
        boost = replace(boost, seed=args.train_seed)
    return boost


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    try:
        return args.handler(args)
    except ConfigError as err:
        log.error("config error: %s", err)
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DataError, ValueError) as err:
        log.error("data error: %s", err)
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except TrainingError as err:
        print(f"training error: {err}", file=sys.stderr)
        return 4
    except OracleError as err:
        print(f"oracle error: {err}", file=sys.stderr)
        return 5
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
