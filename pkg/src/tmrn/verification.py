"""End-to-end finite-difference suite: primitive ops, layers and a tiny full model."""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, attention_pool, cross_attention
from .autodiff import GradCheckReport, Tensor, finite_diff_check
from .blocks import forward, init_params, named_parameters
from .config import TmrnConfig
from .encoders import bilstm_forward, init_lstm
from .training import l1_loss

TINY_LENGTHS = (3, 2, 4)


def tiny_config(**overrides) -> TmrnConfig:
    base = TmrnConfig(d=4, n_layers=1, d_t=3, d_a=2, d_v=3, seed=0)
    return dataclasses.replace(base, **overrides).validate()


def tiny_batch(config: TmrnConfig, batch_size: int = 2, lengths=TINY_LENGTHS, seed: int = 0):
    """Random padded features; rows after the first are one step shorter where possible."""
    rng = np.random.default_rng(seed)
    feats, masks = {}, {}
    for m, T in zip(("t", "a", "v"), lengths):
        feats[m] = rng.standard_normal((batch_size, T, config.widths[m]))
        mask = np.ones((batch_size, T), dtype=bool)
        if T > 1:
            mask[1:, -1] = False
        masks[m] = mask
    labels = rng.uniform(-3.0, 3.0, batch_size)
    return feats, masks, labels


def model_gradcheck(
    config: TmrnConfig | None = None,
    batch_size: int = 2,
    lengths=TINY_LENGTHS,
    seed: int = 0,
    step: float = 1e-5,
    rtol: float = 1e-4,
) -> GradCheckReport:
    """Check the L1 training loss against every parameter tensor of a freshly initialised model."""
    config = config or tiny_config()
    params = init_params(config)
    feats, masks, labels = tiny_batch(config, batch_size, lengths, seed)
    return finite_diff_check(
        lambda: l1_loss(forward(params, config, feats, masks), labels), named_parameters(params), step, rtol
    )


def _weighted(y: Tensor) -> Tensor:
    # fixed non-uniform weights, so every output element matters and f stays deterministic
    w = np.cos(np.arange(y.size) + 1.0).reshape(y.shape)
    return ad.sum_all(ad.hadamard(y, Tensor(w)))


def _op_cases(rng) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    def leaf(shape, name):
        return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)

    a, b, bias = leaf((2, 3, 4), "a"), leaf((4, 5), "b"), leaf((5,), "bias")
    x = leaf((2, 3, 5), "x")
    gamma, beta = leaf((5,), "gamma"), leaf((5,), "beta")
    mask = np.array([[True, True, False, True, True]] * 3)
    seq = leaf((2, 4, 3), "seq")
    fwd, bwd = init_lstm(rng, 3, 2, "fwd"), init_lstm(rng, 3, 2, "bwd")
    q, kv = leaf((2, 2, 4), "q"), leaf((2, 3, 4), "kv")
    att = AttentionParams(leaf((4, 4), "W_Q"), leaf((4, 4), "W_K"), leaf((4, 4), "W_V"))
    w = leaf((4,), "w")
    return {
        "linear": (lambda: _weighted(ad.linear(a, b, bias)), {"a": a, "b": b, "bias": bias}),
        "elementwise": (
            lambda: _weighted(ad.hadamard(ad.sigmoid(x), ad.tanh(ad.sub(x, bias)))),
            {"x": x, "bias": bias},
        ),
        "softmax_masked": (lambda: _weighted(ad.softmax_rows(x, mask)), {"x": x}),
        "layer_norm": (lambda: _weighted(ad.layer_norm(x, gamma, beta)), {"x": x, "gamma": gamma, "beta": beta}),
        "bilstm": (
            lambda: _weighted(bilstm_forward(seq, fwd, bwd, lengths=np.array([4, 2]))),
            {"seq": seq, "fwd.W_ih": fwd.W_ih, "fwd.W_hh": fwd.W_hh, "fwd.b": fwd.b, "bwd.W_ih": bwd.W_ih},
        ),
        "cross_attention": (
            lambda: _weighted(cross_attention(q, kv, att, np.array([[True, True, False], [True] * 3]))),
            {"q": q, "kv": kv, "W_Q": att.W_Q, "W_K": att.W_K, "W_V": att.W_V},
        ),
        "attention_pool": (lambda: _weighted(attention_pool(kv, w)), {"kv": kv, "w": w}),
    }


def op_gradchecks(seed: int = 0, step: float = 1e-5, rtol: float = 1e-4) -> dict[str, GradCheckReport]:
    cases = _op_cases(np.random.default_rng(seed))
    return {name: finite_diff_check(f, tensors, step, rtol) for name, (f, tensors) in cases.items()}


def run_suite(config: TmrnConfig | None = None, seed: int = 0, rtol: float = 1e-4) -> dict:
    """Primitive-op checks plus the full-model check; JSON-ready summary."""
    ops = op_gradchecks(seed, rtol=rtol)
    model = model_gradcheck(config, seed=seed, rtol=rtol)
    return {
        "passed": model.passed and all(r.passed for r in ops.values()),
        "rtol": rtol,
        "ops": {k: {"passed": r.passed, "max_rel_error": r.max_rel_error} for k, r in ops.items()},
        "model": {"passed": model.passed, "max_rel_error": model.max_rel_error, "per_parameter": model.per_tensor},
    }
