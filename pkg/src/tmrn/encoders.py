"""Unimodal encoders: BiLSTM for acoustic/visual streams, projection to width d."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


@dataclass
class LinearParams:
    W: Tensor
    b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.W, self.b)


@dataclass
class LstmParams:
    """One direction of an LSTM. Gate columns are laid out as [input, forget, cell, output]."""

    W_ih: Tensor
    W_hh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[0]


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams


@dataclass
class ModalityEncoder:
    """``lstm`` is None for the text stream, whose features arrive precomputed."""

    proj: LinearParams
    lstm: BiLstmParams | None = None


def uniform_weight(rng: np.random.Generator, fan_in: int, shape, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, name: str) -> LinearParams:
    return LinearParams(uniform_weight(rng, n_in, (n_in, n_out), f"{name}.W"), zeros_param(n_out, f"{name}.b"))


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int, name: str) -> LstmParams:
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate
    return LstmParams(
        uniform_weight(rng, d_in, (d_in, 4 * hidden), f"{name}.W_ih"),
        uniform_weight(rng, hidden, (hidden, 4 * hidden), f"{name}.W_hh"),
        Tensor(b, requires_grad=True, name=f"{name}.b"),
    )


def _gates(z: Tensor, h: int):
    i = ad.sigmoid(ad.slice_cols(z, 0, h))
    f = ad.sigmoid(ad.slice_cols(z, h, 2 * h))
    g = ad.tanh(ad.slice_cols(z, 2 * h, 3 * h))
    o = ad.sigmoid(ad.slice_cols(z, 3 * h, 4 * h))
    return i, f, g, o


def _cell(z: Tensor, c_prev: Tensor, h: int) -> tuple[Tensor, Tensor]:
    i, f, g, o = _gates(z, h)
    c = ad.add(ad.hadamard(f, c_prev), ad.hadamard(i, g))
    return ad.hadamard(o, ad.tanh(c)), c


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step. Inputs are vectors or (B, width) row blocks."""
    h = p.hidden
    if x_t.shape[-1] != p.W_ih.shape[0] or h_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise DimensionError(
            f"lstm_cell_step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs params "
            f"({p.W_ih.shape[0]} -> {h})"
        )
    vector = x_t.data.ndim == 1
    if vector:
        x_t, h_prev, c_prev = (ad.reshape(t, (1, -1)) for t in (x_t, h_prev, c_prev))
    z = ad.add(ad.add(ad.matmul(x_t, p.W_ih), ad.matmul(h_prev, p.W_hh)), p.b)
    h_new, c_new = _cell(z, c_prev, h)
    if vector:
        h_new, c_new = ad.reshape(h_new, (h,)), ad.reshape(c_new, (h,))
    return h_new, c_new


def lstm_sequence(xz: Tensor, W_hh: Tensor) -> Tensor:
    """Fused LSTM recurrence from zero state with hand-written backpropagation through time.

    ``xz`` is the precomputed input term x_t W_ih + b, shape (B, T, 4h).
    Returns the hidden states (B, T, h). Numerically equal to unrolling
    :func:`lstm_cell_step`, but records a single graph node.
    """
    B, T, four_h = xz.shape
    h = W_hh.shape[0]
    if four_h != 4 * h or W_hh.shape != (h, 4 * h):
        raise DimensionError(f"lstm_sequence: xz {xz.shape} does not match W_hh {W_hh.shape}")
    Z, W = xz.data, W_hh.data
    H = np.zeros((B, T, h))
    C = np.zeros((B, T, h))
    acts = np.zeros((B, T, 4 * h))
    h_t = np.zeros((B, h))
    c_t = np.zeros((B, h))
    for t in range(T):
        z = Z[:, t] + h_t @ W
        a = acts[:, t]
        a[:, : 2 * h] = _np_sigmoid(z[:, : 2 * h])
        a[:, 2 * h : 3 * h] = np.tanh(z[:, 2 * h : 3 * h])
        a[:, 3 * h :] = _np_sigmoid(z[:, 3 * h :])
        c_t = a[:, h : 2 * h] * c_t + a[:, :h] * a[:, 2 * h : 3 * h]
        h_t = a[:, 3 * h :] * np.tanh(c_t)
        H[:, t], C[:, t] = h_t, c_t

    def grad_fn(gH):
        dZ = np.zeros_like(Z)
        dW = np.zeros_like(W)
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a = acts[:, t]
            i, f, g, o = a[:, :h], a[:, h : 2 * h], a[:, 2 * h : 3 * h], a[:, 3 * h :]
            c_prev = C[:, t - 1] if t > 0 else np.zeros((B, h))
            h_prev = H[:, t - 1] if t > 0 else np.zeros((B, h))
            tc = np.tanh(C[:, t])
            dh = gH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dZ[:, t]
            dz[:, :h] = dc * g * i * (1.0 - i)
            dz[:, h : 2 * h] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
            dz[:, 3 * h :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dW += h_prev.T @ dz
            dh_next = dz @ W.T
        ad._accumulate(xz, dZ)
        ad._accumulate(W_hh, dW)

    return ad._result(H, (xz, W_hh), grad_fn, "lstm_sequence")


def _np_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_forward(X: Tensor, p: LstmParams, fused: bool = True) -> Tensor:
    """Run one direction over X of shape (B, T, d_in) from zero state; returns (B, T, h).

    ``fused=False`` unrolls the recurrence with :func:`lstm_cell_step`-style
    primitive ops; it is slower and kept as a reference path.
    """
    B, T, _ = X.shape
    h = p.hidden
    # input projections for all steps at once; only the recurrent term is sequential
    xz = ad.add(ad.matmul(X, p.W_ih), p.b)
    if fused:
        return lstm_sequence(xz, p.W_hh)
    h_t = Tensor(np.zeros((B, h)))
    c_t = Tensor(np.zeros((B, h)))
    outs = []
    for t in range(T):
        z = ad.add(ad.select(xz, 1, t), ad.matmul(h_t, p.W_hh))
        h_t, c_t = _cell(z, c_t, h)
        outs.append(h_t)
    return ad.stack(outs, axis=1)


def reversal_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Index reversing each row's valid prefix in place; padding positions stay put."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def bilstm_forward(
    X: Tensor,
    p_fwd: LstmParams,
    p_bwd: LstmParams,
    lengths: np.ndarray | None = None,
    fused: bool = True,
) -> Tensor:
    """Bidirectional LSTM; row t of the output is [h_fwd[t], h_bwd[t]].

    ``X`` is (T, d_in) or a padded batch (B, T, d_in) with per-row ``lengths``.
    The backward direction starts at each row's last valid step.
    """
    single = X.data.ndim == 2
    if single:
        X = ad.reshape(X, (1,) + X.shape)
    B, T, d_in = X.shape
    if T == 0:
        raise ValueError("bilstm_forward: empty sequence")
    if d_in != p_fwd.W_ih.shape[0] or d_in != p_bwd.W_ih.shape[0]:
        raise DimensionError(f"bilstm_forward: input width {d_in} does not match LSTM input width")
    if lengths is None:
        lengths = np.full(B, T)
    idx = reversal_index(lengths, T)
    fwd = lstm_forward(X, p_fwd, fused)
    bwd = ad.gather_rows(lstm_forward(ad.gather_rows(X, idx), p_bwd, fused), idx)
    out = ad.concat([fwd, bwd], axis=-1)
    if single:
        out = ad.reshape(out, out.shape[1:])
    return out


def encode_modality(X: Tensor, enc: ModalityEncoder, lengths: np.ndarray | None = None) -> Tensor:
    feats = X if enc.lstm is None else bilstm_forward(X, enc.lstm.fwd, enc.lstm.bwd, lengths)
    return enc.proj(feats)


def encode_all(
    features: dict[str, Tensor],
    encoders: dict[str, ModalityEncoder],
    widths: dict[str, int],
    lengths: dict[str, np.ndarray] | None = None,
) -> dict[str, Tensor]:
    """Project every modality to the shared width d.

    Text goes through its projection only; acoustic and visual go through
    their BiLSTM first.
    """
    out = {}
    for m, enc in encoders.items():
        X = features[m]
        if X.shape[-1] != widths[m]:
            raise DimensionError(f"modality {m!r}: feature width {X.shape[-1]} != configured {widths[m]}")
        out[m] = encode_modality(X, enc, None if lengths is None else lengths[m])
    return out
