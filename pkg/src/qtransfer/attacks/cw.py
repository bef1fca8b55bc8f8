"""Carlini-Wagner L2 attack (untargeted, logit-margin loss, tanh box change of variables)."""
from __future__ import annotations

import numpy as np

from ..nn import backward_from_logits, forward, logits_of
from .base import assemble, prepare
from .params import AttackConfig, CwParams

CHUNK = 256
UPPER_INIT = 1e10
TANH_SHRINK = 0.999999
# margins are re-checked on other batch compositions, where float32 sums may
# differ in the last bits; demand this much slack beyond kappa
MARGIN_GUARD = 1e-3


def logit_margin(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``max_{t != y} Z_t - Z_y`` per sample, and the arg-max other class."""
    z = logits.astype(np.float64).copy()
    rows = np.arange(len(labels))
    real = z[rows, labels].copy()
    z[rows, labels] = -np.inf
    other = np.argmax(z, axis=1)
    return z[rows, other] - real, other


def is_success(margin: np.ndarray, kappa: float) -> np.ndarray:
    return margin >= kappa + MARGIN_GUARD


def _to_box(w):
    return (np.tanh(w) + 1.0) / 2.0


def _cw_chunk(model, x: np.ndarray, labels: np.ndarray, p: CwParams):
    n = len(x)
    flat = x.reshape(n, -1).astype(np.float64)
    w0 = np.arctanh((2.0 * flat - 1.0) * TANH_SHRINK)
    rows = np.arange(n)

    best = flat.copy()
    best_l2 = np.full(n, np.inf)
    margin0, _ = logit_margin(logits_of(model, x), labels)
    already = is_success(margin0, p.kappa)
    best_l2[already] = 0.0

    c = np.full(n, p.c_init)
    lower = np.zeros(n)
    upper = np.full(n, UPPER_INIT)
    last = flat.copy()
    w = w0.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    for _ in range(p.bsearch):
        if not p.warm_start:
            w = w0.copy()
            m = np.zeros_like(w)
            v = np.zeros_like(w)
            t = 0
        hit = np.zeros(n, dtype=bool)
        for _ in range(p.iters):
            t += 1
            step = t
            xa = _to_box(w).astype(np.float32)
            _, logits, trace = forward(model, xa.reshape(x.shape))
            margin, other = logit_margin(logits, labels)
            l2 = np.sum((xa.astype(np.float64) - flat) ** 2, axis=1)
            ok = is_success(margin, p.kappa)
            better = ok & (l2 < best_l2)
            best[better] = xa[better]
            best_l2[better] = l2[better]
            hit |= ok
            last = xa
            # gradient of l2 + c * max(Z_y - Z_other + kappa, 0) w.r.t. the box image
            active = (-margin + p.kappa) > 0
            seed = np.zeros(logits.shape)
            seed[rows, labels] = c * active
            seed[rows, other] -= c * active
            dz = backward_from_logits(model, trace, seed.astype(model.dtype), param_grads=False)[1]
            g = 2.0 * (xa.astype(np.float64) - flat) + dz.reshape(n, -1)
            g *= (1.0 - np.tanh(w) ** 2) / 2.0
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= p.lr * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
        # binary search on c
        upper = np.where(hit, np.minimum(upper, c), upper)
        lower = np.where(hit, lower, np.maximum(lower, c))
        bounded = upper < UPPER_INIT
        c = np.where(bounded, (lower + upper) / 2.0, c * 10.0)

    found = np.isfinite(best_l2)
    out = np.where(found[:, None], best, last).astype(np.float32)
    return np.clip(out, 0.0, 1.0), found, c


def cw_l2(model, x, labels, p: CwParams = CwParams(), indices=None, seed: int = 0):
    x, labels, indices = prepare(model, x, labels, indices)
    adv = np.empty_like(x)
    found = np.zeros(len(x), dtype=bool)
    consts = np.empty(len(x))
    for i in range(0, len(x), CHUNK):
        sl = slice(i, i + CHUNK)
        a, f, c = _cw_chunk(model, x[sl], labels[sl], p)
        adv[sl] = a.reshape(x[sl].shape)
        found[sl] = f
        consts[sl] = c
    return assemble(model, x, adv, labels, indices, AttackConfig("cw", p), success=found,
                    extras={"final_c": consts})
