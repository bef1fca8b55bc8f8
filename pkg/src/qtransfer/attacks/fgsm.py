"""Fast gradient sign method."""
from __future__ import annotations

import numpy as np

from .base import assemble, ce_input_gradient, prepare, within_linf
from .params import AttackConfig, FgsmParams

CHUNK = 256


def fgsm_step(x: np.ndarray, grad: np.ndarray, eps: float) -> np.ndarray:
    """``clip(x + eps * sign(grad), 0, 1)`` with ``sign(0) = 0``; ``|out - x| <= eps`` holds exactly."""
    out = np.clip(x + np.float32(eps) * np.sign(grad).astype(x.dtype), 0.0, 1.0)
    return within_linf(out, x, eps)


def fgsm_perturb(model, x: np.ndarray, labels: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(0, len(x), CHUNK):
        xb = x[i:i + CHUNK]
        out[i:i + CHUNK] = fgsm_step(xb, ce_input_gradient(model, xb, labels[i:i + CHUNK]), eps)
    return out


def fgsm(model, x, labels, p: FgsmParams = FgsmParams(), indices=None, seed: int = 0):
    x, labels, indices = prepare(model, x, labels, indices)
    adv = fgsm_perturb(model, x, labels, p.eps) if p.eps else x.copy()
    return assemble(model, x, adv, labels, indices, AttackConfig("fgsm", p))
