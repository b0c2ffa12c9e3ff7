"""Command-line entry point: ``tmrn {synth,train,eval,gradcheck,sweep-n,ablate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .blocks import init_params, parameter_count
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TmrnConfig, parse_key_values
from .data import DatasetFormatError, read_dataset, write_dataset
from .experiments import VARIANTS, ablation_table, median_mae, sweep_n, synthetic_splits
from .metrics import MetricError
from .training import evaluate, train
from .verification import run_suite, tiny_config

logger = logging.getLogger("tmrn")


def load_config(args) -> TmrnConfig:
    config = TmrnConfig.from_file(args.config) if args.config else TmrnConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides.update(parse_key_values(item))
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return TmrnConfig.from_mapping(overrides, base=config).validate()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj, path: Path | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n", encoding="utf-8")
    print(text)


def _datasets(config: TmrnConfig):
    """Dataset files named in the config, or seeded synthetic splits when none are given."""
    if config.train_path:
        if not config.valid_path:
            raise ConfigError("valid_path is required when train_path is set")
        tr, va = read_dataset(config.train_path), read_dataset(config.valid_path)
        te = read_dataset(config.test_path) if config.test_path else []
    else:
        tr, va, te = synthetic_splits(config, config.seed)
    widths = (config.d_t, config.d_a, config.d_v)
    got = tuple(m.shape[1] for m in (tr[0].text, tr[0].audio, tr[0].visual)) if tr else widths
    if got != widths:
        raise ConfigError(f"dataset feature widths {got} do not match config (d_t, d_a, d_v) = {widths}")
    return tr, va, te


def cmd_synth(args) -> int:
    config = load_config(args)
    out = _out_dir(args)
    widths = (config.d_t, config.d_a, config.d_v)
    summary = {}
    for name, split in zip(("train", "valid", "test"), synthetic_splits(config, config.seed)):
        path = out / f"{name}.tmds"
        write_dataset(split, path, widths)
        summary[name] = {"path": str(path), "n": len(split)}
    _emit(summary)
    return 0


def cmd_train(args) -> int:
    config = load_config(args)
    out = _out_dir(args)
    tr, va, te = _datasets(config)
    params = init_params(config)
    result = train(params, config, tr, va, log_path=out / "train_log.jsonl")
    save_checkpoint(out / "model.tmrn", config, params)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    report = {
        "best_epoch": result.best_epoch,
        "best_valid_mae": result.best_valid_mae,
        "epochs_run": len(result.history),
        "n_params": parameter_count(params),
        "test": evaluate(params, config, te).to_dict() if len(te) >= 2 else None,
    }
    _emit(report, out / "metrics.json")
    return 0


def cmd_eval(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    samples = read_dataset(args.data)
    report = evaluate(params, config, samples).to_dict()
    path = _out_dir(args) / "eval_metrics.json" if args.out else None
    _emit(report, path)
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args) if (args.config or args.set) else tiny_config(seed=args.seed or 0)
    report = run_suite(config, seed=config.seed, rtol=args.rtol)
    _emit(report, _out_dir(args) / "gradcheck.json" if args.out else None)
    return 0 if report["passed"] else 1


def cmd_sweep_n(args) -> int:
    config = load_config(args)
    n_values = [int(x) for x in args.n_list.split(",")] if args.n_list else config.sweep_values()
    rows = sweep_n(config, n_values)
    _emit({"rows": rows}, _out_dir(args) / "sweep_n.json" if args.out else None)
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args)
    variants = args.variants.split(",")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    table = ablation_table(config, variants, seeds)
    rows = {
        v: {"median_test_mae": median_mae(runs), "runs": [dataclasses.asdict(r) for r in runs]}
        for v, runs in table.items()
    }
    _emit({"seeds": seeds, "variants": rows}, _out_dir(args) / "ablation.json" if args.out else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmrn", description="Text-centred multimodal sentiment regression.")
    parser.add_argument("--log-level", default="WARNING", help="python logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, out_default=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--out", default=out_default, help="output directory")
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "write seeded synthetic train/valid/test TMDS files", "data")
    add("train", cmd_train, "train a model; writes checkpoint, epoch log and metrics", "run")
    p = add("eval", cmd_eval, "evaluate a checkpoint on a TMDS dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p = add("gradcheck", cmd_gradcheck, "finite-difference suite on a tiny model")
    p.add_argument("--rtol", type=float, default=1e-4)
    p = add("sweep-n", cmd_sweep_n, "train one model per depth N and tabulate F1")
    p.add_argument("--n-list", help="comma-separated depths (default: config n_list)")
    p = add("ablate", cmd_ablate, "median test MAE of model variants over several seeds")
    p.add_argument("--variants", default="full,acoustic_oriented,visual_oriented,wo_tcca,wo_tgsa")
    p.add_argument("--seeds", default="0,1,2,3,4")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, CheckpointError, MetricError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
