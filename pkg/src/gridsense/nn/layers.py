"""Layers with hand-written forward and backward passes.

All tensors are numpy arrays with the batch on axis 0. Per-sample shapes
(``in_shape``/``out_shape``) exclude the batch axis. A layer caches what its
backward pass needs during ``forward`` and writes parameter gradients into
``self.grads`` during ``backward``.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, StateError, StatisticsError

Shape = Tuple[int, ...]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.in_shape: Optional[Shape] = None
        self.out_shape: Optional[Shape] = None
        self._cache = None

    def build(self, in_shape: Shape, rng: np.random.Generator) -> Shape:
        self.in_shape = tuple(in_shape)
        self.out_shape = self.infer_shape(self.in_shape)
        self.init_params(rng)
        return self.out_shape

    def infer_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def init_params(self, rng: np.random.Generator):
        pass

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a cached forward pass")
        return self._cache

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


def _check_rank(x, rank, kind):
    if x.ndim != rank:
        raise ShapeError(f"{kind} expects a rank-{rank} batch, got shape {x.shape}")


def conv2d_forward(x, w, b, stride=1):
    """Valid 2-D cross-correlation: O[f,i,j] = sum_c,p,q I[c, S*i+p, S*j+q] W[f,c,p,q] + B[f]."""
    _check_rank(x, 4, "conv2d")
    if x.shape[1] != w.shape[1] or x.shape[2] < w.shape[2] or x.shape[3] < w.shape[3]:
        raise ShapeError(f"conv2d input {x.shape[1:]} incompatible with weights {w.shape}")
    win = sliding_window_view(x, w.shape[2:], axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bchwpq,fcpq->bfhw", win, w, optimize=True) + b[None, :, None, None], win


def conv1d_forward(x, w, b, stride=1):
    """Valid 1-D cross-correlation: O[f,l] = sum_c,k I[c, S*l+k] W[f,c,k] + B[f]."""
    _check_rank(x, 3, "conv1d")
    if x.shape[1] != w.shape[1] or x.shape[2] < w.shape[2]:
        raise ShapeError(f"conv1d input {x.shape[1:]} incompatible with weights {w.shape}")
    win = sliding_window_view(x, w.shape[2], axis=2)[:, :, ::stride]
    return np.einsum("bclk,fck->bfl", win, w, optimize=True) + b[None, :, None], win


def transposed_conv1d_forward(x, w, b, stride=1):
    """Adjoint of :func:`conv1d_forward` plus bias; ``w`` is (in, out, K).

    Output length is ``(L - 1) * stride + K``.
    """
    _check_rank(x, 3, "transposed_conv1d")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed_conv1d input channels {x.shape[1]} != weights {w.shape[0]}")
    bsz, _, length = x.shape
    k = w.shape[2]
    out_len = (length - 1) * stride + k
    y = np.zeros((bsz, w.shape[1], out_len))
    contrib = np.einsum("bil,iok->bolk", x, w, optimize=True)
    for j in range(k):
        y[:, :, j:j + stride * (length - 1) + 1:stride] += contrib[..., j]
    return y + b[None, :, None]


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, filters: int, kernel=(2, 2), stride: int = 1):
        super().__init__()
        self.filters = filters
        self.kernel = tuple(kernel)
        self.stride = stride
        if stride < 1:
            raise ShapeError("stride must be >= 1")

    def infer_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        kh, kw = self.kernel
        if h < kh or w < kw:
            raise ShapeError(f"conv2d kernel {self.kernel} larger than input {in_shape}")
        return (self.filters, (h - kh) // self.stride + 1, (w - kw) // self.stride + 1)

    def init_params(self, rng):
        c = self.in_shape[0]
        fan_in = c * self.kernel[0] * self.kernel[1]
        self.params = {"W": he_normal(rng, (self.filters, c, *self.kernel), fan_in),
                       "b": np.zeros(self.filters)}

    def forward(self, x, training=False):
        y, win = conv2d_forward(x, self.params["W"], self.params["b"], self.stride)
        self._cache = (x.shape, win)
        return y

    def backward(self, dy):
        shape, win = self._need_cache()
        w = self.params["W"]
        self.grads = {"W": np.einsum("bfhw,bchwpq->fcpq", dy, win, optimize=True),
                      "b": dy.sum(axis=(0, 2, 3))}
        dcols = np.einsum("bfhw,fcpq->bchwpq", dy, w, optimize=True)
        dx = np.zeros(shape)
        s = self.stride
        ho, wo = dy.shape[2], dy.shape[3]
        for p in range(w.shape[2]):
            for q in range(w.shape[3]):
                dx[:, :, p:p + s * (ho - 1) + 1:s, q:q + s * (wo - 1) + 1:s] += dcols[..., p, q]
        return dx

    def config(self):
        return {"filters": self.filters, "kernel": list(self.kernel), "stride": self.stride}


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, filters: int, kernel: int, stride: int = 1):
        super().__init__()
        self.filters, self.kernel, self.stride = filters, kernel, stride
        if stride < 1:
            raise ShapeError("stride must be >= 1")

    def infer_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"conv1d needs (C, L) input, got {in_shape}")
        c, length = in_shape
        if length < self.kernel:
            raise ShapeError(f"conv1d kernel {self.kernel} longer than input {length}")
        return (self.filters, (length - self.kernel) // self.stride + 1)

    def init_params(self, rng):
        c = self.in_shape[0]
        self.params = {"W": he_normal(rng, (self.filters, c, self.kernel), c * self.kernel),
                       "b": np.zeros(self.filters)}

    def forward(self, x, training=False):
        y, win = conv1d_forward(x, self.params["W"], self.params["b"], self.stride)
        self._cache = (x.shape, win)
        return y

    def backward(self, dy):
        shape, win = self._need_cache()
        w = self.params["W"]
        self.grads = {"W": np.einsum("bfl,bclk->fck", dy, win, optimize=True),
                      "b": dy.sum(axis=(0, 2))}
        # dx is the transposed convolution of dy (no bias); pad to the input length
        dx_core = transposed_conv1d_forward(dy, w, np.zeros(w.shape[1]), self.stride)
        dx = np.zeros(shape)
        dx[:, :, :dx_core.shape[2]] = dx_core
        return dx

    def config(self):
        return {"filters": self.filters, "kernel": self.kernel, "stride": self.stride}


class TransposedConv1D(Layer):
    kind = "transposed_conv1d"

    def __init__(self, filters: int, kernel: int, stride: int = 1):
        super().__init__()
        self.filters, self.kernel, self.stride = filters, kernel, stride
        if stride < 1:
            raise ShapeError("stride must be >= 1")

    def infer_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"transposed_conv1d needs (C, L) input, got {in_shape}")
        c, length = in_shape
        return (self.filters, (length - 1) * self.stride + self.kernel)

    def init_params(self, rng):
        c = self.in_shape[0]
        fan_in = c * max(1, self.kernel // self.stride)
        self.params = {"W": he_normal(rng, (c, self.filters, self.kernel), fan_in),
                       "b": np.zeros(self.filters)}

    def forward(self, x, training=False):
        self._cache = x
        return transposed_conv1d_forward(x, self.params["W"], self.params["b"], self.stride)

    def backward(self, dy):
        x = self._need_cache()
        w = self.params["W"]
        length = x.shape[2]
        win = sliding_window_view(dy, self.kernel, axis=2)[:, :, ::self.stride][:, :, :length]
        self.grads = {"W": np.einsum("bil,bolk->iok", x, win, optimize=True),
                      "b": dy.sum(axis=(0, 2))}
        return np.einsum("bolk,iok->bil", win, w, optimize=True)

    def config(self):
        return {"filters": self.filters, "kernel": self.kernel, "stride": self.stride}


class BatchNorm(Layer):
    """Per-channel batch normalisation over every axis except axis 1."""

    kind = "batchnorm"

    def __init__(self, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.eps, self.momentum = eps, momentum

    def init_params(self, rng):
        c = self.in_shape[0]
        self.params = {"gamma": np.ones(c), "beta": np.zeros(c)}
        self.buffers = {"running_mean": np.zeros(c), "running_var": np.ones(c)}

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _bcast(self, v, x):
        return v.reshape((1, -1) + (1,) * (x.ndim - 2))

    def forward(self, x, training=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        axes = self._axes(x)
        if training:
            if x.shape[0] < 2:
                raise StatisticsError("batchnorm in train mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._cache = (xhat, inv_std, training)
        return self._bcast(gamma, x) * xhat + self._bcast(beta, x)

    def backward(self, dy):
        xhat, inv_std, training = self._need_cache()
        axes = self._axes(dy)
        gamma = self.params["gamma"]
        self.grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self._bcast(gamma, dy)
        if not training:
            return dxhat * self._bcast(inv_std, dy)
        m = dy.size // dy.shape[1]
        s1 = self._bcast(dxhat.sum(axis=axes), dy)
        s2 = self._bcast((dxhat * xhat).sum(axis=axes), dy)
        return self._bcast(inv_std, dy) / m * (m * dxhat - s1 - xhat * s2)

    def config(self):
        return {"eps": self.eps, "momentum": self.momentum}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._need_cache(), dy, 0.0)


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2x2"

    def infer_shape(self, in_shape):
        c, h, w = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool2x2 needs at least 2x2 input, got {in_shape}")
        return (c, h // 2, w // 2)

    def forward(self, x, training=False):
        _check_rank(x, 4, "maxpool2x2")
        b, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        blocks = x[:, :, :2 * ho, :2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(b, c, ho, wo, 4)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        shape, arg = self._need_cache()
        b, c, h, w = shape
        ho, wo = h // 2, w // 2
        blocks = np.zeros((b, c, ho, wo, 4))
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        blocks = blocks.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
        dx = np.zeros(shape)
        dx[:, :, :2 * ho, :2 * wo] = blocks
        return dx


class Flatten(Layer):
    kind = "flatten"

    def infer_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def infer_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._need_cache())

    def config(self):
        return {"shape": list(self.shape)}


class Dense(Layer):
    """y = x @ W.T + b with W of shape (out, in)."""

    kind = "dense"

    def __init__(self, units: int, init: str = "he"):
        super().__init__()
        self.units = units
        self.init = init

    def infer_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense needs flat input, got {in_shape}")
        return (self.units,)

    def init_params(self, rng):
        fan_in = self.in_shape[0]
        if self.init == "glorot":
            w = rng.standard_normal((self.units, fan_in)) * np.sqrt(1.0 / fan_in)
        else:
            w = he_normal(rng, (self.units, fan_in), fan_in)
        self.params = {"W": w, "b": np.zeros(self.units)}

    def forward(self, x, training=False):
        _check_rank(x, 2, "dense")
        if x.shape[1] != self.params["W"].shape[1]:
            raise ShapeError(f"dense expects {self.params['W'].shape[1]} features, got {x.shape[1]}")
        self._cache = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        x = self._need_cache()
        self.grads = {"W": dy.T @ x, "b": dy.sum(axis=0)}
        return dy @ self.params["W"]

    def config(self):
        return {"units": self.units, "init": self.init}


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        y = softmax(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


LAYER_KINDS = {cls.kind: cls for cls in
               (Conv2D, Conv1D, TransposedConv1D, BatchNorm, ReLU, MaxPool2x2, Flatten, Reshape,
                Dense, Softmax)}


def layer_from_config(kind: str, config: dict) -> Layer:
    cls = LAYER_KINDS.get(kind)
    if cls is None:
        raise ShapeError(f"unknown layer kind {kind!r}")
    if kind == "conv2d":
        config = {**config, "kernel": tuple(config["kernel"])}
    return cls(**config)
