"""Model container plus forward/backward over the whole layer stack."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TraceError
from ..quant import FP, QuantConfig, quantize_weights, ste_backward
from . import functional as F
from .layers import Ctx, LayerSpec, build_layers

_uid = itertools.count()


class Model:
    """Ordered layers, full-precision (shadow) parameters and a quantization config.

    ``params`` always holds the full-precision values; quantized weights are
    derived from them at forward time and cached until the parameters change
    (see :meth:`touch`).
    """

    def __init__(self, specs, input_shape, quant=None, params=None, buffers=None,
                 model_id="custom", dataset_id="", seed=0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = build_layers(self.specs, self.input_shape)
        out = self.layers[-1].out_shape
        if len(out) != 1:
            raise ShapeError(f"model output must be a flat logits vector, got {out}")
        self.num_classes = out[0]
        self.quant = quant or QuantConfig()
        self.model_id = model_id
        self.dataset_id = dataset_id
        self.seed = seed

        shapes = self.param_shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for layer in self.layers:
                params.update(layer.init_params(rng))
        missing = set(shapes) ^ set(params)
        if missing:
            raise ShapeError(f"parameter names do not match layers: {sorted(missing)}")
        for name, shape in shapes.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = {k: np.asarray(params[k], dtype=self.dtype) for k in shapes}

        self.buffers = {}
        for layer in self.layers:
            self.buffers.update(layer.buffer_init())
        if buffers:
            self.buffers.update({k: np.asarray(v, dtype=self.dtype) for k, v in buffers.items()})

        self.uid = next(_uid)
        self.version = 0
        self._effective = None

    def param_shapes(self) -> dict:
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    @property
    def num_params(self) -> int:
        return int(sum(int(np.prod(s)) for s in self.param_shapes().values()))

    def weight_names(self) -> list:
        names = []
        for layer in self.layers:
            names.extend(layer.weight_names())
        return names

    def quantized_weight_names(self) -> list:
        names = self.weight_names()
        if self.quant.weight_bits == FP:
            return []
        lo = 1 if self.quant.exempt_first_layer else 0
        hi = len(names) - 1 if self.quant.exempt_last_layer else len(names)
        return names[lo:hi]

    def touch(self):
        """Mark parameters as changed; invalidates traces and cached quantized weights."""
        self.version += 1
        self._effective = None

    def effective_params(self) -> dict:
        """Parameters as the forward pass sees them (weights quantized where configured)."""
        if self._effective is None:
            eff = dict(self.params)
            for name in self.quantized_weight_names():
                eff[name] = quantize_weights(self.params[name], self.quant.weight_bits)
            self._effective = eff
        return self._effective

    def with_quant(self, cfg: QuantConfig, dtype=None) -> "Model":
        return Model(self.specs, self.input_shape, quant=cfg,
                     params={k: v.copy() for k, v in self.params.items()},
                     buffers={k: v.copy() for k, v in self.buffers.items()},
                     model_id=self.model_id, dataset_id=self.dataset_id, seed=self.seed,
                     dtype=dtype or self.dtype)

    def copy(self) -> "Model":
        return self.with_quant(self.quant)

    def as_float64(self) -> "Model":
        """Double-precision copy; used for numerical gradient checks."""
        return self.with_quant(self.quant, dtype=np.float64)

    @property
    def label(self) -> str:
        return f"{self.model_id}:{self.quant.label}"

    def __repr__(self):
        return f"Model({self.label}, params={self.num_params})"

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_effective"] = None
        return state


@dataclass
class ForwardTrace:
    caches: list
    probs: np.ndarray
    logits: np.ndarray
    model_uid: int
    version: int
    ctx: Ctx = field(repr=False, default=None)


def _as_batch(model: Model, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=model.dtype)
    if x.shape == model.input_shape:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match model input {model.input_shape}")
    return x


def forward(model: Model, batch, train: bool = False):
    """Run the model; returns ``(probs, logits, trace)``."""
    x = _as_batch(model, batch)
    params = model.effective_params()
    ctx = Ctx(train=train, act_bits=model.quant.activation_bits, buffers=model.buffers)
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(x, params, ctx)
        caches.append(cache)
    logits = x
    probs = F.softmax(logits)
    return probs, logits, ForwardTrace(caches, probs, logits, model.uid, model.version, ctx)


def predict(model: Model, batch, batch_size: int = 512) -> np.ndarray:
    x = _as_batch(model, batch)
    out = [np.argmax(forward(model, x[i:i + batch_size])[1], axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def logits_of(model: Model, batch, batch_size: int = 512) -> np.ndarray:
    x = _as_batch(model, batch)
    return np.concatenate([forward(model, x[i:i + batch_size])[1] for i in range(0, len(x), batch_size)])


def backward_from_logits(model: Model, trace: ForwardTrace, dlogits, param_grads: bool = True):
    """Back-propagate an arbitrary logits gradient. Returns ``(param_grads, input_grad)``."""
    if trace.model_uid != model.uid or trace.version != model.version:
        raise TraceError("trace was produced by a different model or before a parameter update")
    dlogits = np.asarray(dlogits, dtype=model.dtype)
    if dlogits.shape != trace.logits.shape:
        raise ShapeError(f"logits gradient shape {dlogits.shape} != {trace.logits.shape}")
    ctx = trace.ctx
    ctx.param_grads = param_grads
    params = model.effective_params()
    grads = {}
    d = dlogits
    for layer, cache in zip(reversed(model.layers), reversed(trace.caches)):
        d, g = layer.backward(d, cache, params, ctx)
        grads.update(g)
    quantized = set(model.quantized_weight_names())
    for name in quantized & grads.keys():
        grads[name] = ste_backward(grads[name])
    return grads, d


def backward(model: Model, trace: ForwardTrace, labels, param_grads: bool = True):
    """Exact gradients of mean cross-entropy. Returns ``(param_grads, input_grad)``."""
    labels = F.check_labels(labels, model.num_classes)
    if len(labels) != len(trace.probs):
        raise TraceError("labels do not match the traced batch")
    onehot = F.one_hot(labels, model.num_classes, dtype=trace.probs.dtype)
    dlogits = (trace.probs - onehot) / len(labels)
    return backward_from_logits(model, trace, dlogits, param_grads=param_grads)


def input_gradient(model: Model, batch, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the input batch."""
    _, _, trace = forward(model, batch)
    return backward(model, trace, labels, param_grads=False)[1]


def softmax_jacobian_rows(probs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """d probs[rows] / d logits for each sample: ``p_r * (e_r - p)``."""
    p = probs.astype(np.float64)
    b = np.arange(len(p))
    g = -p[b, rows][:, None] * p
    g[b, rows] += p[b, rows]
    return g


def jacobian_wrt_input(model: Model, x) -> np.ndarray:
    """``J[j, i] = d f_j / d x_i`` for softmax outputs ``f`` at a single sample.

    One backward pass per output class.
    """
    xb = _as_batch(model, x)
    if len(xb) != 1:
        raise ShapeError("jacobian_wrt_input takes a single sample")
    probs, _, trace = forward(model, xb)
    n = model.num_classes
    jac = np.empty((n, int(np.prod(model.input_shape))), dtype=model.dtype)
    for j in range(n):
        seed = softmax_jacobian_rows(probs, np.array([j]))
        _, dx = backward_from_logits(model, trace, seed, param_grads=False)
        jac[j] = dx.reshape(-1)
    return jac
