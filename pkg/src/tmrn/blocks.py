"""Text-centred cross-modal attention (TCCA), text-gated self-attention (TGSA),
their stacking, and the pooling + regression head.

Streams are addressed by modality key ("t", "a", "v"). One of them is the
*center* stream: it supplies the cross-attention queries and the TGSA gates.
The others are *branches*. In the standard model the center is text.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, attend, attention_pool, cross_attention, masked_mean, self_attention
from .autodiff import DimensionError, Tensor
from .config import MODALITIES, TmrnConfig
from .encoders import (
    BiLstmParams,
    LinearParams,
    ModalityEncoder,
    encode_all,
    init_linear,
    init_lstm,
    uniform_weight,
    zeros_param,
)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class PffParams:
    inner: LinearParams
    outer: LinearParams


@dataclass
class FusionParams:
    """Adaptive fusion gate G = sigmoid(F_center W_center + F_branch W_branch + b)."""

    W_center: Tensor
    W_branch: Tensor
    b: Tensor


@dataclass
class TccaBranchParams:
    # ca, fusion and ln_in are None when cross-attention is ablated
    ca: AttentionParams | None
    fusion: FusionParams | None
    ln_in: LayerNormParams | None
    ln_pff: LayerNormParams
    pff: PffParams


@dataclass
class TccaLayerParams:
    sa: AttentionParams  # shared by every branch
    ln_in: LayerNormParams
    ln_pff: LayerNormParams
    pff: PffParams
    branches: dict[str, TccaBranchParams]


@dataclass
class TgsaBranchParams:
    gate: LinearParams
    attn: AttentionParams


@dataclass
class TgsaLayerParams:
    branches: dict[str, TgsaBranchParams]


@dataclass
class HeadParams:
    hidden: LinearParams
    out: LinearParams


@dataclass
class TmrnParams:
    encoders: dict[str, ModalityEncoder]
    tcca: list[TccaLayerParams]
    tgsa: list[TgsaLayerParams | None]
    pool: dict[str, Tensor]
    head: HeadParams


def _walk(obj, prefix: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from _walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk(v, f"{prefix}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _walk(v, f"{prefix}.{i}")


def named_parameters(params: TmrnParams) -> dict[str, Tensor]:
    """Ordered name -> tensor map; a shared tensor appears once under its first name."""
    out: dict[str, Tensor] = {}
    seen: set[int] = set()
    for name, t in _walk(params, ""):
        if id(t) not in seen:
            seen.add(id(t))
            out[name] = t
    return out


# initialization -------------------------------------------------------------


def _init_attention(rng, d: int, name: str) -> AttentionParams:
    return AttentionParams(*(uniform_weight(rng, d, (d, d), f"{name}.{w}") for w in ("W_Q", "W_K", "W_V")))


def _init_ln(d: int, name: str) -> LayerNormParams:
    return LayerNormParams(
        Tensor(np.ones(d), requires_grad=True, name=f"{name}.gamma"), zeros_param(d, f"{name}.beta")
    )


def _init_pff(rng, d: int, d_ff: int, name: str) -> PffParams:
    return PffParams(init_linear(rng, d, d_ff, f"{name}.inner"), init_linear(rng, d_ff, d, f"{name}.outer"))


def init_params(config: TmrnConfig, rng: np.random.Generator | None = None) -> TmrnParams:
    """Fresh parameters. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except LSTM forget gates."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d, h, d_ff = config.d, config.hidden, config.ff_width
    widths = config.widths
    encoders = {}
    for m in config.modalities:
        if m == "t":
            encoders[m] = ModalityEncoder(init_linear(rng, widths[m], d, "enc.t.proj"))
        else:
            lstm = BiLstmParams(
                init_lstm(rng, widths[m], h, f"enc.{m}.fwd"), init_lstm(rng, widths[m], h, f"enc.{m}.bwd")
            )
            encoders[m] = ModalityEncoder(init_linear(rng, 2 * h, d, f"enc.{m}.proj"), lstm)

    tcca, tgsa = [], []
    for i in range(config.n_layers):
        pre = f"layer{i}"
        branches = {}
        for m in config.branches:
            bp = f"{pre}.tcca.{m}"
            if config.disable_tcca_cross:
                ca = fusion = ln_in = None
            else:
                ca = _init_attention(rng, d, f"{bp}.ca")
                fusion = FusionParams(
                    uniform_weight(rng, d, (d, d), f"{bp}.fusion.W_center"),
                    uniform_weight(rng, d, (d, d), f"{bp}.fusion.W_branch"),
                    zeros_param(d, f"{bp}.fusion.b"),
                )
                ln_in = _init_ln(d, f"{bp}.ln_in")
            branches[m] = TccaBranchParams(ca, fusion, ln_in, _init_ln(d, f"{bp}.ln_pff"), _init_pff(rng, d, d_ff, f"{bp}.pff"))
        cp = f"{pre}.tcca.center"
        tcca.append(
            TccaLayerParams(
                _init_attention(rng, d, f"{cp}.sa"),
                _init_ln(d, f"{cp}.ln_in"),
                _init_ln(d, f"{cp}.ln_pff"),
                _init_pff(rng, d, d_ff, f"{cp}.pff"),
                branches,
            )
        )
        if config.disable_tgsa:
            tgsa.append(None)
        else:
            tgsa.append(
                TgsaLayerParams(
                    {
                        m: TgsaBranchParams(
                            init_linear(rng, d, d, f"{pre}.tgsa.{m}.gate"),
                            _init_attention(rng, d, f"{pre}.tgsa.{m}.attn"),
                        )
                        for m in config.branches
                    }
                )
            )
    pool = {m: uniform_weight(rng, d, (d,), f"pool.{m}") for m in config.modalities}
    k = len(config.modalities)
    head = HeadParams(init_linear(rng, k * d, d, "head.hidden"), init_linear(rng, d, 1, "head.out"))
    return TmrnParams(encoders, tcca, tgsa, pool, head)


def expected_parameter_count(config: TmrnConfig) -> int:
    """Closed-form parameter total for a configuration."""
    d, h, f = config.d, config.hidden, config.ff_width
    widths = config.widths
    mods = config.modalities
    n_branch = len(config.branches)
    enc = 0
    for m in mods:
        if m == "t":
            enc += widths[m] * d + d
        else:
            enc += 2 * 4 * h * (widths[m] + h + 1) + 2 * h * d + d
    pff = d * f + f + f * d + d
    ln = 2 * d
    center = 3 * d * d + 2 * ln + pff
    if config.disable_tcca_cross:
        branch = ln + pff
    else:
        branch = 3 * d * d + (2 * d * d + d) + 2 * ln + pff
    tgsa = 0 if config.disable_tgsa else n_branch * (d * d + d + 3 * d * d)
    layer = center + n_branch * branch + tgsa
    head = len(mods) * d * d + d + d + 1
    return enc + config.n_layers * layer + len(mods) * d + head


def parameter_count(params: TmrnParams) -> int:
    return sum(t.size for t in named_parameters(params).values())


# layers ---------------------------------------------------------------------


def layer_norm(x: Tensor, p: LayerNormParams, eps: float = 1e-5) -> Tensor:
    return ad.layer_norm(x, p.gamma, p.beta, eps)


def pff_residual(x: Tensor, ln: LayerNormParams, p: PffParams, eps: float = 1e-5) -> Tensor:
    """x + PFF(LN(x)), PFF = linear -> ReLU -> linear."""
    return ad.add(p.outer(ad.relu(p.inner(layer_norm(x, ln, eps)))), x)


def adaptive_fusion(F_center: Tensor, F_branch: Tensor, p: FusionParams) -> tuple[Tensor, Tensor]:
    """Return (fused, G) with fused = G * F_center + (1 - G) * F_branch."""
    G = ad.sigmoid(ad.add(ad.add(ad.matmul(F_center, p.W_center), ad.matmul(F_branch, p.W_branch)), p.b))
    # kept in the two-product form so a saturated gate selects one input exactly
    fused = ad.add(ad.hadamard(G, F_center), ad.hadamard(ad.add_scalar(ad.scale(G, -1.0), 1.0), F_branch))
    return fused, G


def tcca_layer(
    F_center: Tensor,
    F_branches: dict[str, Tensor],
    p: TccaLayerParams,
    center_mask=None,
    branch_masks: dict[str, np.ndarray] | None = None,
    eps: float = 1e-5,
) -> tuple[Tensor, dict[str, Tensor]]:
    """One TCCA layer.

    Branch outputs take the center length (cross-attention queries come from
    the center). With cross-attention ablated (``p.branches[m].ca is None``),
    a branch keeps its own length and only gets the PFF sublayer.
    """
    branch_masks = branch_masks or {}
    d = F_center.shape[-1]
    for m, F in F_branches.items():
        if F.shape[-1] != d:
            raise DimensionError(f"branch {m!r} width {F.shape[-1]} != center width {d}")
    c_norm = layer_norm(F_center, p.ln_in, eps)
    c_next = self_attention(c_norm, p.sa, center_mask)
    out = {}
    for m, F in F_branches.items():
        bp = p.branches[m]
        if bp.ca is None:
            out[m] = pff_residual(F, bp.ln_pff, bp.pff, eps)
            continue
        crossed = cross_attention(c_norm, layer_norm(F, bp.ln_in, eps), bp.ca, branch_masks.get(m))
        fused, _ = adaptive_fusion(c_next, crossed, bp.fusion)
        out[m] = pff_residual(fused, bp.ln_pff, bp.pff, eps)
    return pff_residual(c_next, p.ln_pff, p.pff, eps), out


def text_gate(F_center: Tensor, p: TgsaBranchParams) -> Tensor:
    return ad.sigmoid(p.gate(F_center))


def tgsa_layer(
    F_center: Tensor,
    F_branch: Tensor,
    p: TgsaBranchParams,
    mask=None,
    aligned: bool = True,
    center_mask=None,
) -> Tensor:
    """Gated self-attention on one branch: queries/keys from (1 + g) * F, values from F, plus residual.

    ``aligned=False`` is for branches that never went through cross-attention
    and so do not share the center's length: the gate is then computed from
    the center's mean over valid steps and applied to every branch row.
    """
    if F_branch.shape[-1] != F_center.shape[-1]:
        raise DimensionError(f"tgsa widths differ: {F_center.shape} vs {F_branch.shape}")
    if aligned:
        if F_branch.shape != F_center.shape:
            raise DimensionError(f"tgsa needs equal shapes, got {F_center.shape} and {F_branch.shape}")
        g = text_gate(F_center, p)
    else:
        summary = text_gate(masked_mean(F_center, center_mask), p)
        g = ad.matmul(Tensor(np.ones(F_branch.shape[:-1] + (1,))), summary)
    gated = ad.add(F_branch, ad.hadamard(g, F_branch))
    return ad.add(attend(gated, gated, F_branch, p.attn, mask), F_branch)


# full model -----------------------------------------------------------------


def forward_streams(
    params: TmrnParams,
    config: TmrnConfig,
    features: dict[str, Tensor],
    masks: dict[str, np.ndarray],
) -> tuple[dict[str, Tensor], dict[str, np.ndarray]]:
    """Run encoders and the N stacked (TCCA, TGSA) layers; return final streams and their masks."""
    lengths = {m: masks[m].sum(axis=-1) for m in config.modalities}
    F = encode_all(features, params.encoders, config.widths, lengths)
    c = config.center
    center = F[c]
    branches = {m: F[m] for m in config.branches}
    bmasks = {m: masks[m] for m in config.branches}
    aligned = not config.disable_tcca_cross
    for tcca, tgsa in zip(params.tcca, params.tgsa):
        center, branches = tcca_layer(center, branches, tcca, masks[c], bmasks, config.ln_eps)
        if aligned:
            bmasks = {m: masks[c] for m in branches}
        if tgsa is not None:
            branches = {
                m: tgsa_layer(center, F_m, tgsa.branches[m], bmasks[m], aligned, masks[c])
                for m, F_m in branches.items()
            }
    streams = {c: center, **branches}
    stream_masks = {c: masks[c], **bmasks}
    return streams, stream_masks


def forward(
    params: TmrnParams,
    config: TmrnConfig,
    features: dict[str, Tensor | np.ndarray],
    masks: dict[str, np.ndarray],
) -> Tensor:
    """Predict one sentiment score per batch row. Features are padded (B, T_m, d_m) blocks."""
    feats = {m: x if isinstance(x, Tensor) else Tensor(x) for m, x in features.items() if m in config.modalities}
    for m in config.modalities:
        if feats[m].data.ndim != 3:
            raise DimensionError(f"modality {m!r}: expected a (B, T, d) block, got {feats[m].shape}")
    streams, stream_masks = forward_streams(params, config, feats, masks)
    pooled = [attention_pool(streams[m], params.pool[m], stream_masks[m]) for m in MODALITIES if m in streams]
    f = ad.concat(pooled, axis=-1)
    y = params.head.out(ad.relu(params.head.hidden(f)))
    return ad.reshape(y, (y.shape[0],))
