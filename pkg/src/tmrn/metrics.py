"""Regression and polarity metrics for sentiment scores in [-3, 3]."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


@dataclass
class MetricsReport:
    mae: float
    corr: float
    acc7: float
    acc2_nonneg: float
    acc2_posneg: float
    f1_nonneg: float
    f1_posneg: float
    n: int
    n_posneg: int

    def to_dict(self) -> dict:
        # NaN (undefined metric) becomes null in JSON
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, ties away from zero (2.5 -> 3, -0.5 -> -1)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sentiment_class7(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), -3, 3).astype(np.int64)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise MetricError("correlation undefined: zero variance")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def binary_f1(pred_pos: np.ndarray, true_pos: np.ndarray) -> float:
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def compute_metrics(pred, label, strict: bool = True) -> MetricsReport:
    """MAE, Pearson correlation, 7-class accuracy, and the two Acc2/F1 variants.

    Non-negative/negative: positive class is x >= 0, all samples.
    Positive/negative: positive class is x > 0, samples with label != 0 only.

    With ``strict=False`` undefined metrics are reported as NaN instead of
    raising :class:`MetricError`.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    label = np.asarray(label, dtype=np.float64).reshape(-1)
    if pred.shape != label.shape:
        raise ValueError(f"pred and label lengths differ: {pred.size} vs {label.size}")
    if pred.size < 2:
        raise MetricError("need at least two samples")

    mae = float(np.mean(np.abs(pred - label)))
    try:
        corr = pearson(pred, label)
    except MetricError:
        if strict:
            raise
        corr = math.nan
    acc7 = float(np.mean(sentiment_class7(pred) == sentiment_class7(label)))

    p_nn, l_nn = pred >= 0, label >= 0
    acc2_nn = float(np.mean(p_nn == l_nn))
    f1_nn = binary_f1(p_nn, l_nn)

    keep = label != 0
    n_pn = int(keep.sum())
    if n_pn == 0:
        if strict:
            raise MetricError("positive/negative metrics undefined: every label is zero")
        acc2_pn = f1_pn = math.nan
    else:
        p_pn, l_pn = pred[keep] > 0, label[keep] > 0
        acc2_pn = float(np.mean(p_pn == l_pn))
        f1_pn = binary_f1(p_pn, l_pn)
    return MetricsReport(mae, corr, acc7, acc2_nn, acc2_pn, f1_nn, f1_pn, int(pred.size), n_pn)
