"""scikit-learn style regressor around the TMRN model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_array, check_consistent_length
from sklearn.utils.validation import check_is_fitted

from .blocks import init_params
from .config import TmrnConfig
from .data import LABEL_RANGE, Sample
from .training import predict, train


def check_multimodal(X, y=None, widths: tuple[int, int, int] | None = None):
    """Validate tri-modal input and return a list of :class:`Sample`.

    ``X`` is a sequence whose items are either ``Sample`` objects or
    ``(text, audio, visual)`` matrices of shape (T_m, d_m). Every matrix must
    be finite and non-empty, and widths must agree across items (and with
    ``widths`` when given). ``y``, if provided, must match ``X`` in length and
    lie in [-3, 3].
    """
    if isinstance(X, np.ndarray) and X.dtype != object:
        raise ValueError("X must be a sequence of (text, audio, visual) triples, not a dense array")
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    if y is not None:
        y = check_array(y, ensure_2d=False, dtype=np.float64)
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        check_consistent_length(items, y)
        if np.any(y < LABEL_RANGE[0]) or np.any(y > LABEL_RANGE[1]):
            raise ValueError(f"labels must lie in {list(LABEL_RANGE)}")
    samples = []
    for i, item in enumerate(items):
        if isinstance(item, Sample):
            mats, label, ident = (item.text, item.audio, item.visual), item.label, item.id
        else:
            if len(item) != 3:
                raise ValueError(f"item {i}: expected 3 modality matrices, got {len(item)}")
            mats, label, ident = item, 0.0, f"x{i}"
        mats = tuple(check_array(m, dtype=np.float64, input_name=f"X[{i}][{k}]") for k, m in enumerate(mats))
        got = tuple(m.shape[1] for m in mats)
        widths = widths or got
        if got != tuple(widths):
            raise ValueError(f"item {i}: feature widths {got} differ from {tuple(widths)}")
        if y is not None:
            label = float(y[i])
        samples.append(Sample(*mats, label, ident))
    return samples


class TMRNRegressor(RegressorMixin, BaseEstimator):
    """Sentiment-score regressor over unaligned text, acoustic and visual sequences.

    Parameters mirror :class:`TmrnConfig`. A ``validation_fraction`` of the
    training data (taken from the end) drives early stopping; with 0 the
    training set itself is used.
    """

    def __init__(
        self,
        d=16,
        n_layers=3,
        lstm_hidden=0,
        d_ff=0,
        center_modality="text",
        disable_tcca_cross=False,
        disable_tgsa=False,
        batch_size=64,
        epochs=40,
        lr=1e-3,
        patience=10,
        clip_norm=1.0,
        validation_fraction=0.1,
        random_state=42,
    ):
        self.d = d
        self.n_layers = n_layers
        self.lstm_hidden = lstm_hidden
        self.d_ff = d_ff
        self.center_modality = center_modality
        self.disable_tcca_cross = disable_tcca_cross
        self.disable_tgsa = disable_tgsa
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.clip_norm = clip_norm
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _make_config(self, widths) -> TmrnConfig:
        params = self.get_params()
        fraction = params.pop("validation_fraction")
        if not 0.0 <= fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        seed = params.pop("random_state")
        return TmrnConfig(**params, seed=int(seed or 0), d_t=widths[0], d_a=widths[1], d_v=widths[2]).validate()

    def fit(self, X, y):
        samples = check_multimodal(X, y)
        widths = tuple(m.shape[1] for m in (samples[0].text, samples[0].audio, samples[0].visual))
        config = self._make_config(widths)
        n_valid = int(round(self.validation_fraction * len(samples)))
        if self.validation_fraction > 0:
            n_valid = max(2, n_valid)  # metrics need two samples
        if n_valid and n_valid < len(samples) - 1:
            tr, va = samples[:-n_valid], samples[-n_valid:]
        else:
            tr = va = samples
        params = init_params(config)
        result = train(params, config, tr, va)
        self.config_ = config
        self.params_ = params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = 3
        self.feature_widths_ = widths
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        samples = check_multimodal(X, widths=self.feature_widths_)
        return predict(self.params_, self.config_, samples)
