"""Desk-scale ablation and depth-sensitivity protocols on synthetic data."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from statistics import median
from typing import Sequence

from .blocks import expected_parameter_count, init_params, parameter_count
from .config import TmrnConfig
from .data import Sample, SyntheticSpec, generate_synthetic, split_samples
from .training import evaluate, train

logger = logging.getLogger(__name__)

VARIANTS: dict[str, dict] = {
    "full": {},
    "wo_audio": {"drop_audio": True},
    "wo_visual": {"drop_visual": True},
    "acoustic_oriented": {"center_modality": "audio"},
    "visual_oriented": {"center_modality": "visual"},
    "wo_tcca": {"disable_tcca_cross": True},
    "wo_tgsa": {"disable_tgsa": True},
}


def synthetic_spec(config: TmrnConfig, n_samples: int, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        n_samples=n_samples,
        widths=(config.d_t, config.d_a, config.d_v),
        weights=(config.w_t, config.w_a, config.w_v),
        feature_noise=(config.noise_t, config.noise_a, config.noise_v),
        label_noise=config.label_noise,
        n_keys=config.n_keys,
        key_strength=config.key_strength,
        seed=seed,
    )


def synthetic_splits(config: TmrnConfig, seed: int) -> tuple[list[Sample], list[Sample], list[Sample]]:
    n = config.n_train + config.n_valid + config.n_test
    samples = generate_synthetic(synthetic_spec(config, n, seed))
    tr, va, te = split_samples(samples, (config.n_train, config.n_valid, config.n_test))
    return tr, va, te


@dataclass
class RunResult:
    variant: str
    seed: int
    test_mae: float
    test_f1_posneg: float
    best_epoch: int
    n_params: int
    seconds: float


def run_variant(
    base: TmrnConfig,
    variant: str,
    seed: int,
    splits: tuple[Sequence[Sample], Sequence[Sample], Sequence[Sample]] | None = None,
) -> RunResult:
    config = dataclasses.replace(base, seed=seed, **VARIANTS[variant]).validate()
    tr, va, te = splits if splits is not None else synthetic_splits(config, seed)
    start = time.perf_counter()
    params = init_params(config)
    result = train(params, config, tr, va)
    report = evaluate(params, config, te)
    out = RunResult(
        variant, seed, report.mae, report.f1_posneg, result.best_epoch, parameter_count(params),
        time.perf_counter() - start,
    )
    logger.info("%s seed=%d test_mae=%.4f epoch=%d %.1fs", variant, seed, out.test_mae, out.best_epoch, out.seconds)
    return out


def ablation_table(base: TmrnConfig, variants: Sequence[str], seeds: Sequence[int]) -> dict[str, list[RunResult]]:
    """Run every variant on every seed; variants share each seed's dataset."""
    table: dict[str, list[RunResult]] = {v: [] for v in variants}
    for seed in seeds:
        splits = synthetic_splits(base, seed)
        for v in variants:
            table[v].append(run_variant(base, v, seed, splits))
    return table


def median_mae(runs: Sequence[RunResult]) -> float:
    return median(r.test_mae for r in runs)


def sweep_n(base: TmrnConfig, n_values: Sequence[int], seed: int | None = None) -> list[dict]:
    """Train one model per depth N and report test F1 and parameter counts."""
    seed = base.seed if seed is None else seed
    splits = synthetic_splits(base, seed)
    rows = []
    for n in n_values:
        config = dataclasses.replace(base, n_layers=n, seed=seed).validate()
        params = init_params(config)
        result = train(params, config, splits[0], splits[1])
        report = evaluate(params, config, splits[2])
        rows.append(
            {
                "N": n,
                "f1_nonneg": report.f1_nonneg,
                "f1_posneg": report.f1_posneg,
                "mae": report.mae,
                "best_epoch": result.best_epoch,
                "n_params": parameter_count(params),
                "expected_n_params": expected_parameter_count(config),
            }
        )
    return rows
