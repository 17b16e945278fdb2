"""Layer primitives for the reverse-mode engine.

Layers are stateless descriptors: parameters live in a flat store owned by the
network, and each layer receives its parameter arrays explicitly. ``forward``
returns the output plus whatever cache ``backward`` needs; ``backward`` takes
the upstream gradient and returns the gradient w.r.t. the layer input together
with gradients for each parameter array, in the same order as ``param_shapes``.

All activations are computed batch-first in float64. Convolutions are "valid"
(no padding) with stride 1 and channels-last layout (B, H, W, C); pooling is
non-overlapping with window == stride.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class Layer:
    """Common base. Subclasses fill in shapes, init and the two passes."""

    kind = "layer"

    @property
    def param_shapes(self) -> tuple:
        return ()

    def init_params(self, rng: np.random.Generator) -> list:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, grad_out):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        cfg = {k: v for k, v in self.config().items() if k != "kind"}
        args = ", ".join(f"{k}={v}" for k, v in cfg.items())
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    @property
    def param_shapes(self):
        return ((self.in_dim, self.out_dim), (self.out_dim,))

    def init_params(self, rng):
        w = glorot_uniform((self.in_dim, self.out_dim), self.in_dim, self.out_dim, rng)
        b = np.zeros(self.out_dim, dtype=np.float64)
        return [w, b]

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ConfigError(f"dense layer expects input shape ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def forward(self, params, x):
        w, b = params
        return x @ w + b, x

    def backward(self, params, cache, grad_out):
        w, _ = params
        x = cache
        grad_in = grad_out @ w.T
        return grad_in, [x.T @ grad_out, grad_out.sum(axis=0)]

    def config(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}


class Conv2d(Layer):
    """Valid 2-D convolution, stride 1, channels-last, via im2col + GEMM."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)

    @property
    def param_shapes(self):
        k = self.kernel
        return ((k, k, self.in_channels, self.out_channels), (self.out_channels,))

    def init_params(self, rng):
        k = self.kernel
        fan_in = k * k * self.in_channels
        fan_out = k * k * self.out_channels
        w = glorot_uniform((k, k, self.in_channels, self.out_channels), fan_in, fan_out, rng)
        b = np.zeros(self.out_channels, dtype=np.float64)
        return [w, b]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_channels:
            raise ConfigError(
                f"conv2d expects (H, W, {self.in_channels}) input, got {in_shape}")
        h, w = in_shape[0], in_shape[1]
        k = self.kernel
        if h < k or w < k:
            raise ConfigError(f"conv2d kernel {k} larger than input {in_shape}")
        return (h - k + 1, w - k + 1, self.out_channels)

    def _im2col(self, x):
        k = self.kernel
        # (B, OH, OW, C, k, k) -> (B, OH, OW, k, k, C)
        win = sliding_window_view(x, (k, k), axis=(1, 2))
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))

    def forward(self, params, x):
        w, b = params
        k = self.kernel
        cols = self._im2col(x)
        b_, oh, ow = cols.shape[:3]
        flat = cols.reshape(b_ * oh * ow, k * k * self.in_channels)
        y = flat @ w.reshape(k * k * self.in_channels, self.out_channels)
        y = y.reshape(b_, oh, ow, self.out_channels) + b
        return y, (x.shape, flat)

    def backward(self, params, cache, grad_out):
        w, _ = params
        k, cin, cout = self.kernel, self.in_channels, self.out_channels
        x_shape, flat = cache
        b_, oh, ow = grad_out.shape[:3]
        g = grad_out.reshape(b_ * oh * ow, cout)
        grad_w = (flat.T @ g).reshape(k, k, cin, cout)
        grad_b = g.sum(axis=0)
        # scatter column gradients back to input positions
        dcols = (g @ w.reshape(k * k * cin, cout).T).reshape(b_, oh, ow, k, k, cin)
        grad_in = np.zeros(x_shape, dtype=np.float64)
        for i in range(k):
            for j in range(k):
                grad_in[:, i:i + oh, j:j + ow, :] += dcols[:, :, :, i, j, :]
        return grad_in, [grad_w, grad_b]

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel}


class MaxPool2d(Layer):
    """Non-overlapping max pooling; ties route gradient to the first maximum."""

    kind = "maxpool2d"

    def __init__(self, window: int = 2):
        self.window = int(window)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"maxpool2d expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        k = self.window
        if h % k or w % k:
            raise ConfigError(f"maxpool2d window {k} must divide spatial dims {in_shape[:2]}")
        return (h // k, w // k, c)

    def forward(self, params, x):
        k = self.window
        b, h, w, c = x.shape
        oh, ow = h // k, w // k
        win = x.reshape(b, oh, k, ow, k, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, oh, ow, c, k * k)
        idx = np.argmax(win, axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, params, cache, grad_out):
        k = self.window
        x_shape, idx = cache
        b, h, w, c = x_shape
        oh, ow = h // k, w // k
        dwin = np.zeros((b, oh, ow, c, k * k), dtype=np.float64)
        np.put_along_axis(dwin, idx[..., None], grad_out[..., None], axis=-1)
        grad_in = dwin.reshape(b, oh, ow, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)
        return grad_in, []

    def config(self):
        return {"kind": self.kind, "window": self.window}


class Relu(Layer):
    kind = "relu"

    def forward(self, params, x):
        y = np.maximum(x, 0.0)
        return y, (x > 0.0)

    def backward(self, params, cache, grad_out):
        return grad_out * cache, []


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, params, x):
        # split by sign to stay stable for large |x|
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, params, cache, grad_out):
        y = cache
        return grad_out * y * (1.0 - y), []


class Softmax(Layer):
    """Row-wise softmax over the last axis, with max subtraction."""

    kind = "softmax"

    def forward(self, params, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, params, cache, grad_out):
        y = cache
        inner = np.sum(y * grad_out, axis=-1, keepdims=True)
        return y * (grad_out - inner), []


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, grad_out):
        return grad_out.reshape(cache), []


class Reshape(Layer):
    """Reshape the per-sample feature part, e.g. flat pixels to (H, W, C)."""

    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ConfigError(f"cannot reshape {in_shape} into {self.shape}")
        return self.shape

    def forward(self, params, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, params, cache, grad_out):
        return grad_out.reshape(cache), []

    def config(self):
        return {"kind": self.kind, "shape": list(self.shape)}


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Dense, Conv2d, MaxPool2d, Relu, Sigmoid, Softmax, Flatten, Reshape)
}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in LAYER_KINDS:
        raise ConfigError(f"unknown layer kind: {kind!r}")
    return LAYER_KINDS[kind](**cfg)
