"""Array kernels used by the layers. Tensors are NHWC float32 arrays."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DomainError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(probs, axis=-1)


def check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DomainError("labels must be a 1-d array of class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"label out of range [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of the true class."""
    probs = np.asarray(probs)
    labels = check_labels(labels, probs.shape[-1])
    if len(labels) != len(probs):
        raise DomainError("probs and labels disagree on batch size")
    if len(labels) == 0:
        raise DomainError("empty batch")
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    p = np.maximum(p, np.finfo(np.float32).tiny)
    return float(-np.mean(np.log(p)))


def one_hot(labels: np.ndarray, n: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), n), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def conv_out_size(size: int, k: int, stride: int, pad_before: int, pad_after: int) -> int:
    return (size + pad_before + pad_after - k) // stride + 1


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """TensorFlow-style SAME padding (extra pixel goes after)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def pad_hw(x: np.ndarray, pads, value=0.0) -> np.ndarray:
    (t, b), (l, r) = pads
    if t == b == l == r == 0:
        return x
    return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)), constant_values=value)


def windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows: (B, Ho, Wo, kh*kw, C), window offsets row-major."""
    b, _, _, c = xp.shape
    v = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B, H', W', C, kh, kw) view
    v = v[:, :(ho - 1) * stride + 1:stride, :(wo - 1) * stride + 1:stride]
    return np.ascontiguousarray(v.transpose(0, 1, 2, 4, 5, 3)).reshape(b, ho, wo, kh * kw, c)


def scatter_windows(dwin: np.ndarray, padded_shape, kh: int, kw: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`windows`."""
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    ho, wo = dwin.shape[1], dwin.shape[2]
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dwin[:, :, :, i * kw + j, :]
    return dxp


def dilate_hw(x: np.ndarray, stride: int) -> np.ndarray:
    """Insert ``stride - 1`` zeros between neighbouring pixels."""
    if stride == 1:
        return x
    b, h, w, c = x.shape
    out = np.zeros((b, (h - 1) * stride + 1, (w - 1) * stride + 1, c), dtype=x.dtype)
    out[:, ::stride, ::stride] = x
    return out


def unpad_hw(x: np.ndarray, pads) -> np.ndarray:
    (t, b), (l, r) = pads
    h, w = x.shape[1], x.shape[2]
    return x[:, t:h - b, l:w - r, :]
