"""DoReFa-style k-bit quantizers with straight-through gradients.

Bitwidths are plain integers; ``0`` is the full-precision sentinel (the same
encoding checkpoints use).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FP = 0
STUDY_BITWIDTHS = (FP, 1, 2, 4, 8, 12, 16)


def check_bits(n: int) -> int:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise DomainError(f"bitwidth must be an integer, got {n!r}")
    n = int(n)
    if n != FP and not 1 <= n <= 16:
        raise DomainError(f"bitwidth must be 0 (FP) or in [1, 16], got {n}")
    return n


def bits_label(n: int) -> str:
    return "FP" if n == FP else str(n)


def parse_bits(text) -> int:
    """``"fp"``/``"FP"``/``"0"`` -> 0, otherwise the integer bitwidth."""
    if isinstance(text, (int, np.integer)):
        return check_bits(text)
    s = str(text).strip()
    if s.lower() in ("fp", "fp32", "float", "0"):
        return FP
    try:
        return check_bits(int(s))
    except ValueError:
        raise DomainError(f"cannot parse bitwidth {text!r}") from None


@dataclass(frozen=True)
class QuantConfig:
    weight_bits: int = FP
    activation_bits: int = FP
    exempt_first_layer: bool = True
    exempt_last_layer: bool = True

    def __post_init__(self):
        check_bits(self.weight_bits)
        check_bits(self.activation_bits)

    @classmethod
    def uniform(cls, bits: int, **kw) -> "QuantConfig":
        """Same bitwidth for weights and activations."""
        return cls(weight_bits=bits, activation_bits=bits, **kw)

    @property
    def is_fp(self) -> bool:
        return self.weight_bits == FP and self.activation_bits == FP

    @property
    def label(self) -> str:
        if self.weight_bits == self.activation_bits:
            return bits_label(self.weight_bits)
        return f"W{bits_label(self.weight_bits)}A{bits_label(self.activation_bits)}"


def quantize_k(r, n: int):
    """Round ``r`` in [0, 1] onto the lattice ``k / (2**n - 1)``.

    Ties round half away from zero. Accepts scalars or arrays; arrays keep
    their dtype.
    """
    n = check_bits(n)
    if n == FP:
        raise DomainError("quantize_k needs a finite bitwidth")
    arr = np.asarray(r)
    r64 = arr.astype(np.float64)
    if not np.all((r64 >= 0.0) & (r64 <= 1.0)):
        raise DomainError("quantize_k input must lie in [0, 1]; clip first")
    levels = float(2**n - 1)
    out = np.floor(r64 * levels + 0.5) / levels
    if arr.ndim == 0 and not isinstance(r, np.ndarray):
        return float(out)
    dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float32
    return out.astype(dtype)


def ste_backward(upstream_grad):
    # d r_o / d r_i := 1
    return upstream_grad


def quantize_activations(a: np.ndarray, n: int) -> np.ndarray:
    if check_bits(n) == FP:
        return a
    return quantize_k(np.clip(a, 0.0, 1.0), n)


def quantize_weights(w: np.ndarray, n: int) -> np.ndarray:
    """Symmetric per-tensor quantizer.

    Maps ``[-M, M]`` (``M`` = max abs weight) affinely onto [0, 1], rounds with
    :func:`quantize_k` and maps back, so the result sits on a ``2**n`` point
    lattice spanning ``[-M, M]``. All-zero tensors are returned as zeros.
    """
    if check_bits(n) == FP:
        return w
    w64 = np.asarray(w, dtype=np.float64)
    m = float(np.max(np.abs(w64))) if w64.size else 0.0
    if m == 0.0:
        return np.zeros_like(w)
    r = np.clip((w64 / m + 1.0) * 0.5, 0.0, 1.0)
    q = quantize_k(r, n)
    return ((2.0 * q - 1.0) * m).astype(np.asarray(w).dtype)


def attach_quantizers(model, cfg: QuantConfig):
    """Return a copy of ``model`` that runs with quantization config ``cfg``.

    Shadow (full-precision) parameters are copied; the original model is not
    modified.
    """
    return model.with_quant(cfg)
