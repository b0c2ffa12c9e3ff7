"""Independent reference implementations shared by unit and acceptance tests."""

import math

import numpy as np

EPS = 1e-5


def np_ln(x, gamma, beta, eps=EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def np_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_attend(q, k, v, W_Q, W_K, W_V):
    d = q.shape[-1]
    return np_softmax((q @ W_Q) @ (k @ W_K).T / np.sqrt(d)) @ (v @ W_V)


def np_pff_res(x, ln, pff):
    z = np_ln(x, ln.gamma.data, ln.beta.data)
    hidden = np.maximum(z @ pff.inner.W.data + pff.inner.b.data, 0.0)
    return x + hidden @ pff.outer.W.data + pff.outer.b.data


def att(p):
    return p.W_Q.data, p.W_K.data, p.W_V.data


def np_tcca(Ft, Fb, p):
    t_norm = np_ln(Ft, p.ln_in.gamma.data, p.ln_in.beta.data)
    t_next = np_attend(t_norm, t_norm, t_norm, *att(p.sa))
    out = {}
    for m, F in Fb.items():
        bp = p.branches[m]
        b_norm = np_ln(F, bp.ln_in.gamma.data, bp.ln_in.beta.data)
        crossed = np_attend(t_norm, b_norm, b_norm, *att(bp.ca))
        G = np_sig(t_next @ bp.fusion.W_center.data + crossed @ bp.fusion.W_branch.data + bp.fusion.b.data)
        fused = G * t_next + (1 - G) * crossed
        out[m] = np_pff_res(fused, bp.ln_pff, bp.pff)
    return np_pff_res(t_next, p.ln_pff, p.pff), out


def np_tgsa(Ft, Fm, p):
    g = np_sig(Ft @ p.gate.W.data + p.gate.b.data)
    gF = (1 + g) * Fm
    return np_attend(gF, gF, Fm, *att(p.attn)) + Fm


def brute_force_metrics(pred, label):
    """Per-sample enumeration with plain Python arithmetic."""
    n = len(pred)

    def rnd(x):
        return int(math.copysign(math.floor(abs(x) + 0.5), x))

    def cls(x):
        return max(-3, min(3, rnd(x)))

    mae = sum(abs(p - l) for p, l in zip(pred, label)) / n
    mp, ml = sum(pred) / n, sum(label) / n
    cov = sum((p - mp) * (l - ml) for p, l in zip(pred, label))
    corr = cov / math.sqrt(sum((p - mp) ** 2 for p in pred) * sum((l - ml) ** 2 for l in label))
    acc7 = sum(cls(p) == cls(l) for p, l in zip(pred, label)) / n

    def f1(pairs):
        tp = sum(1 for p, l in pairs if p and l)
        fp = sum(1 for p, l in pairs if p and not l)
        fn = sum(1 for p, l in pairs if not p and l)
        return 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0

    nn = [(p >= 0, l >= 0) for p, l in zip(pred, label)]
    pn = [(p > 0, l > 0) for p, l in zip(pred, label) if l != 0]
    return {
        "mae": mae,
        "corr": corr,
        "acc7": acc7,
        "acc2_nonneg": sum(a == b for a, b in nn) / len(nn),
        "acc2_posneg": sum(a == b for a, b in pn) / len(pn),
        "f1_nonneg": f1(nn),
        "f1_posneg": f1(pn),
    }
