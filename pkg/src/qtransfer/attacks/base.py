"""Shared attack plumbing: the output container, per-sample RNG streams, gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ShapeError
from ..nn import Model, backward_from_logits, forward, predict
from ..nn.functional import check_labels


@dataclass
class AdversarialBatch:
    """Clean/adversarial pairs crafted on one source model.

    ``indices`` identify each sample in its dataset split. ``dropped`` lists
    indices the attack could not process (boundary-attack init failures).
    ``extras`` holds attack-specific diagnostics (UAP vector, BA distance
    histories, JSMA targets, ...).
    """

    clean: np.ndarray
    adversarial: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    source_id: str
    attack: str
    params: dict
    source_success: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    dropped: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clean.shape != self.adversarial.shape:
            raise ShapeError(f"clean {self.clean.shape} vs adversarial {self.adversarial.shape}")
        if self.adversarial.size and (self.adversarial.min() < 0 or self.adversarial.max() > 1):
            raise DomainError("adversarial values must lie in [0, 1]")
        n = len(self.clean)
        for name in ("labels", "indices", "source_success", "l2", "linf"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"{name} has {len(getattr(self, name))} entries, expected {n}")

    def __len__(self):
        return len(self.labels)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.source_success)) if len(self) else float("nan")

    def subset(self, rows) -> "AdversarialBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return AdversarialBatch(self.clean[rows], self.adversarial[rows], self.labels[rows],
                                self.indices[rows], self.source_id, self.attack, self.params,
                                self.source_success[rows], self.l2[rows], self.linf[rows],
                                list(self.dropped), self.extras)

    def by_index(self, indices) -> "AdversarialBatch":
        pos = {int(v): i for i, v in enumerate(self.indices)}
        return self.subset([pos[int(i)] for i in indices if int(i) in pos])


def distortions(clean: np.ndarray, adv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = (adv.astype(np.float64) - clean.astype(np.float64)).reshape(len(clean), -1)
    if d.shape[1] == 0:
        return np.zeros(len(clean)), np.zeros(len(clean))
    return np.sqrt(np.sum(d * d, axis=1)), np.max(np.abs(d), axis=1)


def f32_below(value: float) -> np.float32:
    """Largest float32 not above ``value``; budgets stored in float32 then hold exactly."""
    v = np.float32(value)
    return v if float(v) <= value else np.nextafter(v, np.float32(-np.inf))


def within_linf(adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Clamp float32 ``adv`` so that ``|adv - x| <= eps`` holds exactly in float64.

    The float32 bounds ``x +- eps`` are rounded to nearest; a bound that landed
    outside the ball is moved one ulp inwards.
    """
    x64 = x.astype(np.float64)
    hi = (x64 + eps).astype(adv.dtype)
    hi = np.where(hi.astype(np.float64) - x64 > eps, np.nextafter(hi, x), hi)
    lo = (x64 - eps).astype(adv.dtype)
    lo = np.where(x64 - lo.astype(np.float64) > eps, np.nextafter(lo, x), lo)
    return np.clip(adv, lo, hi)


def assemble(model: Model, clean, adv, labels, indices, cfg, dropped=(), extras=None,
             success=None) -> AdversarialBatch:
    """Fill in distortion norms and, unless given, source-success flags
    (source prediction differs from the label)."""
    clean = np.asarray(clean, dtype=np.float32)
    adv = np.asarray(adv, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if success is None:
        success = (predict(model, adv) != labels) if len(adv) else np.zeros(0, dtype=bool)
    l2, linf = distortions(clean, adv)
    return AdversarialBatch(clean, adv, labels, np.asarray(indices, dtype=np.int64), model.label,
                            cfg.attack, cfg.to_dict(), success, l2, linf, list(dropped), extras or {})


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one sample, so serial and parallel runs agree."""
    return np.random.default_rng([int(seed), int(index)])


def prepare(model: Model, x, labels, indices=None):
    x = np.asarray(x, dtype=np.float32)
    if x.shape == model.input_shape:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match model input {model.input_shape}")
    labels = check_labels(np.atleast_1d(labels), model.num_classes)
    if len(labels) != len(x):
        raise ShapeError("labels and batch disagree on sample count")
    indices = np.arange(len(x)) if indices is None else np.asarray(indices, dtype=np.int64)
    return x, labels, indices


def ce_input_gradient(model: Model, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample gradient of cross-entropy w.r.t. the input (no batch averaging).

    The logits gradient ``softmax - onehot`` is formed in float64 with the
    true-class entry written as minus the sum of the others, so a confidently
    classified sample still gets a non-zero direction.
    """
    _, logits, trace = forward(model, x)
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    p[rows, labels] = 0.0
    p[rows, labels] = -p.sum(axis=1)
    return backward_from_logits(model, trace, p.astype(model.dtype), param_grads=False)[1]
