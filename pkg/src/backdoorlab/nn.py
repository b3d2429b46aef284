"""Minimal NHWC neural-net layers with explicit backward passes.

Everything is plain numpy arrays; the 3x3 convolutions dispatch to the
selected kernel backend.  Backward passes return the input gradient and
(optionally) fill per-parameter gradients, so the same machinery serves
SGD training and input-space attacks.  Layers are dtype-generic; the
float64 path exists for finite-difference gradient checks.
"""

import numpy as np

from . import backend


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None


def pad1(x):
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


class Layer:
    def parameters(self):
        return []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy, need_param_grads=True):
        raise NotImplementedError


class Conv3x3(Layer):
    """3x3 conv, zero padding 1, configurable stride, optional bias."""

    def __init__(self, c_in, c_out, stride=1, bias=True, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        std = np.sqrt(2.0 / (9 * c_in))
        self.w = Param((rng.standard_normal((3, 3, c_in, c_out)) * std).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self._xp = None

    def parameters(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def forward(self, x, train=False):
        self._xp = pad1(x)
        y = backend.conv3x3(self._xp, self.w.value, self.stride)
        if self.b is not None:
            y += self.b.value
        return y

    def backward(self, dy, need_param_grads=True):
        if need_param_grads:
            self.w.grad = backend.conv3x3_weight_grad(self._xp, dy, self.stride)
            if self.b is not None:
                self.b.grad = dy.sum(axis=(0, 1, 2))
        dxp = backend.conv3x3_input_grad(dy, self.w.value, self._xp.shape, self.stride)
        return dxp[:, 1:-1, 1:-1, :]


class BatchNorm(Layer):
    """Per-channel batchnorm over (B,H,W). Running stats use biased variance."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=False):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std.astype(x.dtype), train, axes)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy, need_param_grads=True):
        xhat, inv_std, train, axes = self._cache
        if need_param_grads:
            self.gamma.grad = (dy * xhat).sum(axis=axes)
            self.beta.grad = dy.sum(axis=axes)
        dxhat = dy * self.gamma.value
        if not train:
            return dxhat * inv_std
        n = xhat.size // xhat.shape[-1]
        return (inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=axes)
            - xhat * (dxhat * xhat).sum(axis=axes)
        )


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy, need_param_grads=True):
        return np.where(self._mask, dy, 0)


class GlobalAvgPool(Layer):
    """(B,H,W,C) -> (B,C)."""

    def forward(self, x, train=False):
        self._hw = x.shape[1:3]
        return x.mean(axis=(1, 2))

    def backward(self, dy, need_param_grads=True):
        h, w = self._hw
        return np.broadcast_to(
            dy[:, None, None, :] / (h * w), (dy.shape[0], h, w, dy.shape[1])
        ).copy()


class GlobalAvgMaxPool(Layer):
    """(B,H,W,C) -> (B,2C): per-channel spatial mean next to spatial max.

    The max half keeps small salient patches visible in the pooled
    features; a plain average dilutes them by the pixel count."""

    def forward(self, x, train=False):
        b, h, w, c = x.shape
        self._shape = x.shape
        flat = x.reshape(b, h * w, c)
        self._argmax = flat.argmax(axis=1)
        return np.concatenate([x.mean(axis=(1, 2)), flat.max(axis=1)], axis=1)

    def backward(self, dy, need_param_grads=True):
        b, h, w, c = self._shape
        davg = dy[:, :c] / (h * w)
        dx = np.broadcast_to(davg[:, None, None, :], self._shape).copy()
        flat = dx.reshape(b, h * w, c)
        flat[np.arange(b)[:, None], self._argmax, np.arange(c)[None, :]] += dy[:, c:]
        return dx


class Linear(Layer):
    def __init__(self, c_in, c_out, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        std = np.sqrt(2.0 / c_in)
        self.w = Param((rng.standard_normal((c_in, c_out)) * std).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy, need_param_grads=True):
        if need_param_grads:
            self.w.grad = self._x.T @ dy
            self.b.grad = dy.sum(axis=0)
        return dy @ self.w.value.T


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def forward(self, x, train=False):
        for l in self.layers:
            x = l.forward(x, train=train)
        return x

    def backward(self, dy, need_param_grads=True):
        for l in reversed(self.layers):
            dy = l.backward(dy, need_param_grads=need_param_grads)
        return dy


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean CE over the batch. Returns (loss, dlogits)."""
    p = softmax(logits)
    n = logits.shape[0]
    eps = np.finfo(logits.dtype).tiny
    loss = -np.log(p[np.arange(n), labels] + eps).mean()
    dlogits = p
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class SGD:
    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self._vel = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        for p, v in zip(self.params, self._vel):
            g = p.grad if scale == 1.0 else p.grad * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            v *= self.momentum
            v += g
            p.value -= self.lr * v
