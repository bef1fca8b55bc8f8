"""Layer kinds with explicit forward/backward.

Every layer reads its parameters out of the model-wide ``params`` dict under
``f"{self.name}.{key}"`` and returns gradients keyed the same way.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..errors import ShapeError
from ..quant import FP, quantize_activations, ste_backward
from . import functional as F

KINDS = ("dense", "conv2d", "relu", "maxpool", "avgpool", "flatten", "batchnorm", "residual-block")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None
    channels: int | None = None
    kernel: int = 3
    stride: int = 1
    padding: Any = "same"
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass
class Ctx:
    """Per-call settings threaded through the layers."""

    train: bool = False
    act_bits: int = FP
    param_grads: bool = True
    buffers: dict = field(default_factory=dict)
    bn_momentum: float = 0.9


def _he_normal(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Layer:
    kind = ""

    def __init__(self, spec: LayerSpec, in_shape: tuple, name: str):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.name = name
        self.out_shape = self._infer(self.in_shape)

    def _infer(self, in_shape):
        return in_shape

    def param_shapes(self) -> dict:
        return {}

    def buffer_init(self) -> dict:
        return {}

    def weight_names(self) -> list:
        """Parameters subject to weight quantization, in traversal order."""
        return []

    def init_params(self, rng) -> dict:
        return {}

    def forward(self, x, params, ctx):
        raise NotImplementedError

    def backward(self, dy, cache, params, ctx):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name}: {self.in_shape} -> {self.out_shape})"


class Dense(Layer):
    kind = "dense"

    def _infer(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"{self.name}: dense expects a flat input, got {in_shape}")
        return (self.spec.units,)

    def param_shapes(self):
        shapes = {f"{self.name}.W": (self.in_shape[0], self.spec.units)}
        if self.spec.bias:
            shapes[f"{self.name}.b"] = (self.spec.units,)
        return shapes

    def weight_names(self):
        return [f"{self.name}.W"]

    def init_params(self, rng):
        p = {f"{self.name}.W": _he_normal(rng, (self.in_shape[0], self.spec.units), self.in_shape[0])}
        if self.spec.bias:
            p[f"{self.name}.b"] = np.zeros(self.spec.units, np.float32)
        return p

    def forward(self, x, params, ctx):
        y = x @ params[f"{self.name}.W"]
        if self.spec.bias:
            y = y + params[f"{self.name}.b"]
        return y, x

    def backward(self, dy, x, params, ctx):
        dx = dy @ params[f"{self.name}.W"].T
        grads = {}
        if ctx.param_grads:
            grads[f"{self.name}.W"] = x.T @ dy
            if self.spec.bias:
                grads[f"{self.name}.b"] = dy.sum(axis=0)
        return dx, grads


class Conv2D(Layer):
    kind = "conv2d"

    def _infer(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: conv2d expects (H, W, C), got {in_shape}")
        h, w, _ = in_shape
        k, s, pad = self.spec.kernel, self.spec.stride, self.spec.padding
        if pad == "same":
            self.pads = (F.same_padding(h, k, s), F.same_padding(w, k, s))
        elif pad == "valid":
            self.pads = ((0, 0), (0, 0))
        else:
            p = int(pad)
            self.pads = ((p, p), (p, p))
        ho = F.conv_out_size(h, k, s, *self.pads[0])
        wo = F.conv_out_size(w, k, s, *self.pads[1])
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: kernel {k} does not fit input {in_shape}")
        return (ho, wo, self.spec.channels)

    def param_shapes(self):
        k, c = self.spec.kernel, self.in_shape[2]
        shapes = {f"{self.name}.W": (k, k, c, self.spec.channels)}
        if self.spec.bias:
            shapes[f"{self.name}.b"] = (self.spec.channels,)
        return shapes

    def weight_names(self):
        return [f"{self.name}.W"]

    def init_params(self, rng):
        k, c = self.spec.kernel, self.in_shape[2]
        p = {f"{self.name}.W": _he_normal(rng, (k, k, c, self.spec.channels), k * k * c)}
        if self.spec.bias:
            p[f"{self.name}.b"] = np.zeros(self.spec.channels, np.float32)
        return p

    def forward(self, x, params, ctx):
        k, s = self.spec.kernel, self.spec.stride
        ho, wo, o = self.out_shape
        xp = F.pad_hw(x, self.pads)
        cols = F.windows(xp, k, k, s, ho, wo).reshape(len(x) * ho * wo, -1)
        W = params[f"{self.name}.W"]
        y = cols @ W.reshape(-1, o)
        if self.spec.bias:
            y += params[f"{self.name}.b"]
        return y.reshape(len(x), ho, wo, o), (cols, xp.shape)

    def backward(self, dy, cache, params, ctx):
        cols, padded_shape = cache
        k, s = self.spec.kernel, self.spec.stride
        ho, wo, o = self.out_shape
        W = params[f"{self.name}.W"]
        dy2 = dy.reshape(-1, o)
        grads = {}
        if ctx.param_grads:
            grads[f"{self.name}.W"] = (cols.T @ dy2).reshape(W.shape)
            if self.spec.bias:
                grads[f"{self.name}.b"] = dy2.sum(axis=0)
        c = W.shape[2]
        if c < o:
            # few input channels: scatter the column gradient back (cheaper than
            # gathering windows of the wider output gradient)
            dcols = (dy2 @ W.reshape(-1, o).T).reshape(len(dy), ho, wo, k * k, c)
            dxp = F.scatter_windows(dcols, padded_shape, k, k, s)
            return F.unpad_hw(dxp, self.pads), grads
        # input gradient as a full correlation of the (dilated) output
        # gradient with the spatially flipped, channel-transposed kernel
        dyd = F.pad_hw(F.dilate_hw(dy, s), ((k - 1, k - 1), (k - 1, k - 1)))
        hf, wf = dyd.shape[1] - k + 1, dyd.shape[2] - k + 1
        wt = W[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
        part = (F.windows(dyd, k, k, 1, hf, wf).reshape(-1, k * k * o) @ wt).reshape(len(dy), hf, wf, c)
        if (hf, wf) == tuple(padded_shape[1:3]):
            dxp = part
        else:
            dxp = np.zeros(padded_shape, dtype=dy.dtype)
            dxp[:, :hf, :wf] = part
        return F.unpad_hw(dxp, self.pads), grads


class ReLU(Layer):
    """Rectifier followed by the activation quantizer when one is active."""

    kind = "relu"

    def forward(self, x, params, ctx):
        mask = x > 0
        y = np.maximum(x, 0)
        if ctx.act_bits != FP:
            y = quantize_activations(y, ctx.act_bits)
            # the clip to [0, 1] is an ordinary op: no gradient above the ceiling
            mask &= x <= 1
        return y, mask

    def backward(self, dy, mask, params, ctx):
        if ctx.act_bits != FP:
            dy = ste_backward(dy)
        return dy * mask, {}


class MaxPool(Layer):
    kind = "maxpool"

    def _infer(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: maxpool expects (H, W, C), got {in_shape}")
        h, w, c = in_shape
        k = self.spec.kernel
        s = self.spec.stride
        if self.spec.padding == "same":
            self.pads = (F.same_padding(h, k, s), F.same_padding(w, k, s))
        else:
            self.pads = ((0, 0), (0, 0))
        ho = F.conv_out_size(h, k, s, *self.pads[0])
        wo = F.conv_out_size(w, k, s, *self.pads[1])
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: pool window does not fit input {in_shape}")
        return (ho, wo, c)

    @property
    def _tiled(self) -> bool:
        """Non-overlapping windows that tile the input exactly."""
        h, w, _ = self.in_shape
        k = self.spec.kernel
        return (k == self.spec.stride and self.pads == ((0, 0), (0, 0))
                and h % k == 0 and w % k == 0)

    def forward(self, x, params, ctx):
        k, s = self.spec.kernel, self.spec.stride
        ho, wo, c = self.out_shape
        if self._tiled:
            xr = x.reshape(len(x), ho, k, wo, k, c)
            rows = xr.max(axis=2)
            return rows.max(axis=3), (x, None)
        # running maximum over the k*k window offsets; strict '>' keeps the
        # first maximal position, so ties route the gradient to one input
        xp = F.pad_hw(x, self.pads, value=-np.inf)
        y = xp[:, 0:s * ho:s, 0:s * wo:s, :].copy()
        idx = np.zeros(y.shape, dtype=np.int8)
        for pos in range(1, k * k):
            i, j = divmod(pos, k)
            v = xp[:, i:i + s * ho:s, j:j + s * wo:s, :]
            up = v > y
            np.copyto(y, v, where=up)
            idx[up] = pos
        return y, (idx, xp.shape)

    def backward(self, dy, cache, params, ctx):
        idx, padded_shape = cache
        k, s = self.spec.kernel, self.spec.stride
        ho, wo, c = self.out_shape
        if padded_shape is None:
            # tiled case: the gradient goes to the first maximal input of each window
            x = idx
            xr = x.reshape(len(x), ho, k, wo, k, c)
            y = xr.max(axis=2).max(axis=3)
            dx = np.zeros(xr.shape, dtype=dy.dtype)
            taken = np.zeros(y.shape, dtype=bool)
            for pos in range(k * k):
                i, j = divmod(pos, k)
                hit = (xr[:, :, i, :, j, :] == y) & ~taken
                dx[:, :, i, :, j, :] = np.where(hit, dy, 0)
                taken |= hit
            return dx.reshape(x.shape), {}
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        for pos in range(k * k):
            i, j = divmod(pos, k)
            dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += np.where(idx == pos, dy, 0)
        return F.unpad_hw(dxp, self.pads), {}


class AvgPool(Layer):
    """Global average pooling over the spatial axes."""

    kind = "avgpool"

    def _infer(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: avgpool expects (H, W, C), got {in_shape}")
        return (in_shape[2],)

    def forward(self, x, params, ctx):
        return x.mean(axis=(1, 2)), None

    def backward(self, dy, cache, params, ctx):
        h, w, c = self.in_shape
        dx = np.broadcast_to(dy[:, None, None, :] / (h * w), (len(dy), h, w, c))
        return np.ascontiguousarray(dx), {}


class Flatten(Layer):
    kind = "flatten"

    def _infer(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, ctx):
        return x.reshape(len(x), -1), None

    def backward(self, dy, cache, params, ctx):
        return dy.reshape((len(dy),) + self.in_shape), {}


class BatchNorm(Layer):
    """Batch normalisation over the trailing (channel) axis."""

    kind = "batchnorm"
    eps = 1e-5

    def param_shapes(self):
        c = self.in_shape[-1]
        return {f"{self.name}.gamma": (c,), f"{self.name}.beta": (c,)}

    def buffer_init(self):
        c = self.in_shape[-1]
        return {f"{self.name}.mean": np.zeros(c, np.float32), f"{self.name}.var": np.ones(c, np.float32)}

    def init_params(self, rng):
        c = self.in_shape[-1]
        return {f"{self.name}.gamma": np.ones(c, np.float32), f"{self.name}.beta": np.zeros(c, np.float32)}

    def forward(self, x, params, ctx):
        axes = tuple(range(x.ndim - 1))
        gamma = params[f"{self.name}.gamma"]
        beta = params[f"{self.name}.beta"]
        if ctx.train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = ctx.bn_momentum
            bm, bv = f"{self.name}.mean", f"{self.name}.var"
            ctx.buffers[bm] = (m * ctx.buffers[bm] + (1 - m) * mu).astype(x.dtype)
            ctx.buffers[bv] = (m * ctx.buffers[bv] + (1 - m) * var).astype(x.dtype)
        else:
            mu = ctx.buffers[f"{self.name}.mean"]
            var = ctx.buffers[f"{self.name}.var"]
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mu) * inv
        return gamma * xhat + beta, (xhat, inv, ctx.train)

    def backward(self, dy, cache, params, ctx):
        xhat, inv, train = cache
        axes = tuple(range(dy.ndim - 1))
        gamma = params[f"{self.name}.gamma"]
        grads = {}
        if ctx.param_grads:
            grads[f"{self.name}.gamma"] = (dy * xhat).sum(axis=axes)
            grads[f"{self.name}.beta"] = dy.sum(axis=axes)
        dxhat = dy * gamma
        if not train:
            return dxhat * inv, grads
        n = dy.size // dy.shape[-1]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx.astype(dy.dtype), grads


class ResidualBlock(Layer):
    """conv-bn-relu-conv-bn plus a parameter-free shortcut, then relu.

    Downsampling blocks subsample the shortcut spatially and zero-pad its
    channels.
    """

    kind = "residual-block"

    def _infer(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: residual block expects (H, W, C), got {in_shape}")
        c, s = self.spec.channels, self.spec.stride
        n = self.name
        conv_a = LayerSpec("conv2d", channels=c, kernel=3, stride=s, padding=1, bias=False)
        conv_b = LayerSpec("conv2d", channels=c, kernel=3, stride=1, padding=1, bias=False)
        self.a = Conv2D(conv_a, in_shape, f"{n}.conv_a")
        self.bn_a = BatchNorm(LayerSpec("batchnorm"), self.a.out_shape, f"{n}.bn_a")
        self.relu_a = ReLU(LayerSpec("relu"), self.a.out_shape, f"{n}.relu_a")
        self.b = Conv2D(conv_b, self.a.out_shape, f"{n}.conv_b")
        self.bn_b = BatchNorm(LayerSpec("batchnorm"), self.b.out_shape, f"{n}.bn_b")
        self.main = [self.a, self.bn_a, self.relu_a, self.b, self.bn_b]
        out = self.b.out_shape
        cin = in_shape[2]
        if cin > c:
            raise ShapeError(f"{self.name}: residual block cannot shrink channels {cin} -> {c}")
        self.pad_lo = (c - cin) // 2
        self.projected = s != 1 or cin != c
        if self.projected and -(-in_shape[0] // s) != out[0]:
            raise ShapeError(f"{self.name}: shortcut shape mismatch")
        return out

    def param_shapes(self):
        shapes = {}
        for layer in self.main:
            shapes.update(layer.param_shapes())
        return shapes

    def buffer_init(self):
        bufs = {}
        for layer in self.main:
            bufs.update(layer.buffer_init())
        return bufs

    def weight_names(self):
        return self.a.weight_names() + self.b.weight_names()

    def init_params(self, rng):
        p = {}
        for layer in self.main:
            p.update(layer.init_params(rng))
        return p

    def _shortcut(self, x):
        if not self.projected:
            return x
        s = self.spec.stride
        xs = x[:, ::s, ::s, :]
        c, cin = self.spec.channels, x.shape[3]
        return np.pad(xs, ((0, 0), (0, 0), (0, 0), (self.pad_lo, c - cin - self.pad_lo)))

    def forward(self, x, params, ctx):
        h = x
        caches = []
        for layer in self.main:
            h, c = layer.forward(h, params, ctx)
            caches.append(c)
        pre = h + self._shortcut(x)
        mask = pre > 0
        y = np.where(mask, pre, np.float32(0))
        if ctx.act_bits != FP:
            y = quantize_activations(y, ctx.act_bits)
        return y, (caches, mask)

    def backward(self, dy, cache, params, ctx):
        caches, mask = cache
        if ctx.act_bits != FP:
            dy = ste_backward(dy)
        dpre = dy * mask
        grads = {}
        d = dpre
        for layer, c in zip(reversed(self.main), reversed(caches)):
            d, g = layer.backward(d, c, params, ctx)
            grads.update(g)
        if self.projected:
            s = self.spec.stride
            cin = self.in_shape[2]
            dsc = dpre[:, :, :, self.pad_lo:self.pad_lo + cin]
            dshort = np.zeros((len(dy),) + self.in_shape, dtype=dy.dtype)
            dshort[:, ::s, ::s, :] = dsc
        else:
            dshort = dpre
        return d + dshort, grads


_CLASSES = {
    "dense": Dense,
    "conv2d": Conv2D,
    "relu": ReLU,
    "maxpool": MaxPool,
    "avgpool": AvgPool,
    "flatten": Flatten,
    "batchnorm": BatchNorm,
    "residual-block": ResidualBlock,
}


def build_layers(specs, input_shape) -> list:
    """Instantiate ``specs`` in order, checking shape compatibility."""
    layers = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        layer = _CLASSES[spec.kind](spec, shape, f"{i:02d}_{spec.kind}")
        layers.append(layer)
        shape = layer.out_shape
    return layers
