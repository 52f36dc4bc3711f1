"""Network layers: 1-D/2-D convolutions, transposed convolution, fully
connected, batch normalization and the pointwise activations.

Convolutions use the cross-correlation convention (no kernel flip). All
layers run on batched arrays: (N, C, W) for the 1-D stages, (N, C, H, W)
for the 2-D stage.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _result, parameter


class ShapeError(ValueError):
    """Input incompatible with a layer's configured geometry."""


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    k = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(dtype)


class Layer:
    """Base: parameter listing plus named-state access for checkpoints."""

    kind = "layer"

    def params(self) -> list[Tensor]:
        return []

    def state(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (trainable or not), in declaration order."""
        return [(f"w{i}", p.data) for i, p in enumerate(self.params())]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        own = self.state()
        if len(arrays) != len(own):
            raise ValueError(f"{self.kind}: expected {len(own)} arrays, got {len(arrays)}")
        for (_, dst), src in zip(own, arrays):
            if dst.shape != src.shape:
                raise ValueError(f"{self.kind}: shape {src.shape} != {dst.shape}")
            dst[...] = src

    def hyper(self) -> tuple:
        return ()


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.weight = parameter(_uniform(rng, (out_channels, in_channels, kernel_size), fan_in, dtype))
        self.bias = parameter(_uniform(rng, (out_channels,), fan_in, dtype))

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return (self.in_channels, self.out_channels, self.kernel_size, self.stride)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd, w, b = x.data, self.weight.data, self.bias.data
        if xd.ndim != 3 or xd.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv1d expects (N, {self.in_channels}, W), got {xd.shape}")
        if xd.shape[2] < self.kernel_size:
            raise ShapeError(
                f"conv1d input width {xd.shape[2]} < kernel {self.kernel_size}")
        s, k = self.stride, self.kernel_size
        win = sliding_window_view(xd, k, axis=2)[:, :, ::s, :]  # (N, C, Wo, K)
        out = np.einsum("ncwk,fck->nfw", win, w, optimize=True) + b[None, :, None]
        wo = out.shape[2]

        def vjp(g):
            dw = np.einsum("ncwk,nfw->fck", win, g, optimize=True)
            db = g.sum(axis=(0, 2))
            dx = np.zeros_like(xd)
            for kk in range(k):
                dx[:, :, kk:kk + s * wo:s] += np.einsum("nfw,fc->ncw", g, w[:, :, kk])
            return (dx, dw, db)

        return _result(out, (x, self.weight, self.bias), vjp, self.kind)


class ConvTranspose1d(Layer):
    """Adjoint of Conv1d: weight (in_channels, out_channels, K) maps
    (N, in, W) -> (N, out, (W-1)*stride + K)."""

    kind = "convtranspose1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.weight = parameter(_uniform(rng, (in_channels, out_channels, kernel_size), fan_in, dtype))
        self.bias = parameter(_uniform(rng, (out_channels,), fan_in, dtype))

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return (self.in_channels, self.out_channels, self.kernel_size, self.stride)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd, w, b = x.data, self.weight.data, self.bias.data
        if xd.ndim != 3 or xd.shape[1] != self.in_channels:
            raise ShapeError(
                f"convtranspose1d expects (N, {self.in_channels}, W), got {xd.shape}")
        s, k = self.stride, self.kernel_size
        n, _, win = xd.shape
        wo = (win - 1) * s + k
        out = np.zeros((n, self.out_channels, wo), dtype=xd.dtype)
        for kk in range(k):
            out[:, :, kk:kk + s * win:s] += np.einsum("nfw,fc->ncw", xd, w[:, :, kk])
        out += b[None, :, None]

        def vjp(g):
            gwin = sliding_window_view(g, k, axis=2)[:, :, ::s, :]  # (N, C, W, K)
            dx = np.einsum("ncwk,fck->nfw", gwin, w, optimize=True)
            dw = np.einsum("nfw,ncwk->fck", xd, gwin, optimize=True)
            db = g.sum(axis=(0, 2))
            return (dx, dw, db)

        return _result(out, (x, self.weight, self.bias), vjp, self.kind)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=(1, 1),
                 rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = tuple(kernel_size)
        self.stride = tuple(stride)
        rng = rng or np.random.default_rng(0)
        kh, kw = self.kernel_size
        fan_in = in_channels * kh * kw
        self.weight = parameter(_uniform(rng, (out_channels, in_channels, kh, kw), fan_in, dtype))
        self.bias = parameter(_uniform(rng, (out_channels,), fan_in, dtype))

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return (self.in_channels, self.out_channels, self.kernel_size, self.stride)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd, w, b = x.data, self.weight.data, self.bias.data
        kh, kw = self.kernel_size
        sh, sw = self.stride
        if xd.ndim != 4 or xd.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv2d expects (N, {self.in_channels}, H, W), got {xd.shape}")
        if xd.shape[2] < kh or xd.shape[3] < kw:
            raise ShapeError(
                f"conv2d input {xd.shape[2:]} smaller than kernel {(kh, kw)}")
        win = sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        out = np.einsum("nchwij,fcij->nfhw", win, w, optimize=True) + b[None, :, None, None]
        ho, wo = out.shape[2], out.shape[3]

        def vjp(g):
            dw = np.einsum("nchwij,nfhw->fcij", win, g, optimize=True)
            db = g.sum(axis=(0, 2, 3))
            dx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                        np.einsum("nfhw,fc->nchw", g, w[:, :, i, j])
            return (dx, dw, db)

        return _result(out, (x, self.weight, self.bias), vjp, self.kind)


class Linear(Layer):
    kind = "fullyconnected"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.weight = parameter(_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = parameter(_uniform(rng, (out_features,), in_features, dtype))

    def params(self):
        return [self.weight, self.bias]

    def hyper(self):
        return (self.in_features, self.out_features)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd = x.data
        flat = xd.reshape(xd.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ShapeError(
                f"fully connected expects {self.in_features} flattened features, "
                f"got {flat.shape[1]} from input {xd.shape}")
        w, b = self.weight.data, self.bias.data
        out = flat @ w.T + b

        def vjp(g):
            dx = (g @ w).reshape(xd.shape)
            dw = g.T @ flat
            db = g.sum(axis=0)
            return (dx, dw, db)

        return _result(out, (x, self.weight, self.bias), vjp, self.kind)


class BatchNorm(Layer):
    """Per-channel batch normalization over all non-channel axes.

    Train mode normalizes by batch statistics and updates the running
    estimates (momentum 0.1, unbiased variance in the running update);
    eval mode normalizes by the running estimates.
    """

    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = parameter(np.ones(channels, dtype=dtype))
        self.beta = parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return [("gamma", self.gamma.data), ("beta", self.beta.data),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]

    def hyper(self):
        return (self.channels,)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd = x.data
        if xd.ndim < 2 or xd.shape[1] != self.channels:
            raise ShapeError(
                f"batchnorm expects channel axis of size {self.channels}, got {xd.shape}")
        axes = (0,) + tuple(range(2, xd.ndim))
        bshape = (1, self.channels) + (1,) * (xd.ndim - 2)
        gamma, beta = self.gamma.data, self.beta.data

        if train:
            if xd.shape[0] < 2:
                raise ValueError("batchnorm train mode needs batch size >= 2")
            n = xd.size // self.channels
            mu = xd.mean(axis=axes)
            var = xd.var(axis=axes)
            ivar = 1.0 / np.sqrt(var + xd.dtype.type(self.eps))
            xhat = (xd - mu.reshape(bshape)) * ivar.reshape(bshape)
            out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)

            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * (var * n / max(n - 1, 1))

            def vjp(g):
                dgamma = (g * xhat).sum(axis=axes)
                dbeta = g.sum(axis=axes)
                dxhat = g * gamma.reshape(bshape)
                # standard batch-statistics backward
                dx = (ivar.reshape(bshape) / n) * (
                    n * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
                return (dx, dgamma, dbeta)

            return _result(out, (x, self.gamma, self.beta), vjp, self.kind)

        ivar = 1.0 / np.sqrt(self.running_var + xd.dtype.type(self.eps))
        xhat = (xd - self.running_mean.reshape(bshape)) * ivar.reshape(bshape)
        out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)

        def vjp(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dx = g * (gamma * ivar).reshape(bshape)
            return (dx, dgamma, dbeta)

        return _result(out, (x, self.gamma, self.beta), vjp, self.kind)


class LeakyReLU(Layer):
    kind = "leakyrelu"

    def __init__(self, slope=0.01):
        self.slope = slope

    def hyper(self):
        return (self.slope,)

    def state(self):
        return []

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd = x.data
        slope = xd.dtype.type(self.slope)
        mask = xd >= 0
        out = np.where(mask, xd, xd * slope)
        return _result(out, (x,), lambda g: (np.where(mask, g, g * slope),), self.kind)


class Tanh(Layer):
    kind = "tanh"

    def state(self):
        return []

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        out = np.tanh(x.data)
        return _result(out, (x,), lambda g: (g * (1.0 - out * out),), self.kind)


class Sigmoid(Layer):
    kind = "sigmoid"

    def state(self):
        return []

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd = x.data
        out = np.empty_like(xd)
        pos = xd >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        ex = np.exp(xd[~pos])
        out[~pos] = ex / (1.0 + ex)
        return _result(out, (x,), lambda g: (g * out * (1.0 - out),), self.kind)


class Softmax(Layer):
    """Row-wise softmax over the last axis; output sums to 1 and is positive."""

    kind = "softmax"

    def state(self):
        return []

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        xd = x.data
        if xd.ndim != 2:
            raise ShapeError(f"softmax expects (N, classes), got {xd.shape}")
        e = np.exp(xd - xd.max(axis=-1, keepdims=True))
        out = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - dot),)

        return _result(out, (x,), vjp, self.kind)


class Stack(Layer):
    """A plain sequence of layers applied in order."""

    kind = "stack"

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def state(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend((f"{i}.{layer.kind}.{name}", arr) for name, arr in layer.state())
        return out

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer(x, train=train)
        return x
