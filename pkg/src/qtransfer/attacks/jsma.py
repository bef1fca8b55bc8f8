"""Jacobian saliency map attack (single-feature variant)."""
from __future__ import annotations

import numpy as np

from ..nn import backward_from_logits, forward
from .base import assemble, prepare, sample_rng
from .params import AttackConfig, JsmaParams


def saliency_map(jac: np.ndarray, t: int, excluded=None) -> np.ndarray:
    """Saliency of every input feature for pushing the output towards class ``t``.

    ``jac`` is the (classes, features) Jacobian of the model outputs. A feature
    scores ``d_t * |d_other|`` when raising it increases output ``t``
    (``d_t >= 0``) and decreases the sum of the other outputs (``d_other <= 0``),
    otherwise 0. Excluded features score ``-inf``.
    """
    jac = np.asarray(jac, dtype=np.float64)
    d_t = jac[t]
    d_other = jac.sum(axis=0) - d_t
    scores = np.where((d_t < 0) | (d_other > 0), 0.0, d_t * np.abs(d_other))
    if excluded is not None:
        scores = np.where(excluded, -np.inf, scores)
    return scores


def pixel_budget(gamma: float, features: int) -> int:
    """``floor(gamma / 100 * features)``."""
    return int(np.floor(gamma * features / 100.0 + 1e-9))


def pick_targets(labels, indices, num_classes: int, seed: int) -> np.ndarray:
    """A uniformly random class other than the true one, per sample."""
    out = np.empty(len(labels), dtype=np.int64)
    for i, (y, idx) in enumerate(zip(labels, indices)):
        out[i] = (y + 1 + sample_rng(seed, idx).integers(num_classes - 1)) % num_classes
    return out


def _target_gradient(model, x, targets):
    """d f_t / d x per sample, up to a positive per-sample factor.

    The softmax-Jacobian row ``p_t (e_t - p)`` is seeded as ``e_t - p``: the
    dropped factor ``p_t`` does not change which feature wins and avoids
    underflow when ``p_t`` is tiny.
    """
    probs, logits, trace = forward(model, x)
    z = logits.astype(np.float64)
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    seed = -p
    seed[np.arange(len(x)), targets] += 1.0
    g = backward_from_logits(model, trace, seed.astype(model.dtype), param_grads=False)[1]
    return np.argmax(logits, axis=1), g.reshape(len(x), -1)


def jsma(model, x, labels, p: JsmaParams = JsmaParams(), indices=None, seed: int = 0):
    x, labels, indices = prepare(model, x, labels, indices)
    n, m = len(x), int(np.prod(model.input_shape))
    budget = pixel_budget(p.gamma, m)
    targets = pick_targets(labels, indices, model.num_classes, seed)
    direction = 1.0 if p.theta > 0 else -1.0

    adv = x.reshape(n, m).copy()
    modified = np.zeros((n, m), dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    first = True
    while active.any():
        rows = np.flatnonzero(active)
        pred, g = _target_gradient(model, adv[rows].reshape((-1,) + model.input_shape), targets[rows])
        done = pred == targets[rows]
        if first:
            done |= pred != labels[rows]
            first = False
        done |= modified[rows].sum(axis=1) >= budget
        # raising feature i along `direction` helps iff direction * d f_t / d x_i > 0;
        # the other outputs sum to 1 - f_t, so their derivative is exactly -d f_t / d x_i
        d_t = direction * g.astype(np.float64)
        scores = np.where(d_t > 0, d_t * d_t, 0.0)
        vals = adv[rows]
        saturated = vals >= 1.0 if direction > 0 else vals <= 0.0
        scores[saturated] = -np.inf
        best = np.argmax(scores, axis=1)
        done |= scores[np.arange(len(rows)), best] <= 0
        active[rows[done]] = False
        go = ~done
        r, f = rows[go], best[go]
        adv[r, f] = np.clip(adv[r, f] + np.float32(p.theta), 0.0, 1.0)
        modified[r, f] = True
        iterations[r] += 1

    extras = {"targets": targets, "iterations": iterations, "modified": modified.sum(axis=1),
              "budget": budget}
    return assemble(model, x, adv.reshape(x.shape), labels, indices, AttackConfig("jsma", p),
                    extras=extras)
