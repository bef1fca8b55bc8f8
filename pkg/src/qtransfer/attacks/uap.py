"""Universal adversarial perturbation built from FGSM steps."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from ..nn import predict
from .base import assemble, ce_input_gradient, f32_below, prepare
from .fgsm import fgsm_step
from .params import AttackConfig, UapParams


def project_linf(v: np.ndarray, xi: float) -> np.ndarray:
    r = f32_below(xi)
    return np.clip(v, -r, r)


def fooling_rate(model, x: np.ndarray, labels: np.ndarray, v: np.ndarray) -> float:
    return float(np.mean(predict(model, np.clip(x + v, 0.0, 1.0)) != labels))


def universal_perturbation(model, x: np.ndarray, labels: np.ndarray, p: UapParams):
    """Returns ``(v, fooling_rate, epochs_run)``.

    Walks the images in order; whenever ``x + v`` is still classified
    correctly, one FGSM step taken at ``clip(x + v)`` is added to ``v``, which
    is then projected back onto the L-inf ball of radius ``xi``.
    """
    if len(x) == 0:
        raise DomainError("UAP needs at least one image")
    v = np.zeros(x.shape[1:], dtype=np.float32)
    rate, epochs = 0.0, 0
    for epoch in range(p.max_epochs):
        epochs = epoch + 1
        for k in range(len(x)):
            xk = np.clip(x[k:k + 1] + v, 0.0, 1.0)
            if predict(model, xk)[0] != labels[k]:
                continue
            step = fgsm_step(xk, ce_input_gradient(model, xk, labels[k:k + 1]), p.eps) - xk
            v = project_linf(v + step[0], p.xi)
        rate = fooling_rate(model, x, labels, v)
        if rate >= p.delta:
            break
    return v, rate, epochs


def uap(model, x, labels, p: UapParams = UapParams(), indices=None, seed: int = 0):
    x, labels, indices = prepare(model, x, labels, indices)
    v, rate, epochs = universal_perturbation(model, x, labels, p)
    adv = np.clip(x + v, 0.0, 1.0)
    return assemble(model, x, adv, labels, indices, AttackConfig("uap", p),
                    extras={"v": v, "fooling_rate": rate, "epochs": epochs})
