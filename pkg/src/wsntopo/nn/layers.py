"""Layers with explicit forward and backward passes (float64, NCHW)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Base layer. ``params`` and ``grads`` share keys; ``buffers`` are not trained."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, training=False, update_stats=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2d(Layer):
    """Same-padded 2-D convolution with stride 1."""

    def __init__(self, in_channels, out_channels, kernel=3, bias=True, rng=None):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.kernel = kernel
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel, kernel))
        if bias:
            self.params["b"] = np.zeros(out_channels)
        self.zero_grad()

    def forward(self, x, training=False, update_stats=False):
        k = self.kernel
        p = k // 2
        b, c, h, w = x.shape
        if k == 1:
            cols = x.transpose(0, 2, 3, 1).reshape(b * h * w, c)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(xp, (k, k), axis=(2, 3))
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)
        wmat = self.params["W"].reshape(self.params["W"].shape[0], -1)
        out = cols @ wmat.T
        if "b" in self.params:
            out += self.params["b"]
        self._cache = (x.shape, cols)
        return out.reshape(b, h, w, -1).transpose(0, 3, 1, 2)

    def backward(self, dout):
        (b, c, h, w), cols = self._cache
        k = self.kernel
        p = k // 2
        f = dout.shape[1]
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        W = self.params["W"]
        self.grads["W"] += (d2.T @ cols).reshape(W.shape)
        if "b" in self.params:
            self.grads["b"] += d2.sum(axis=0)
        dcols = d2 @ W.reshape(f, -1)
        if k == 1:
            return dcols.reshape(b, h, w, c).transpose(0, 3, 1, 2)
        dcols = dcols.reshape(b, h, w, c, k, k)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w]


class BatchNorm2d(Layer):
    """Per-channel batch normalisation.

    Training uses batch statistics; inference uses running averages updated
    as ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def forward(self, x, training=False, update_stats=False):
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if not training:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            return gamma * (x - mean) / np.sqrt(var + self.eps) + beta
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats:
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std = self._cache
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return inv_std[None, :, None, None] / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, training=False, update_stats=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if zero_init:
            self.params["W"] = np.zeros((in_features, out_features))
        else:
            self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / in_features), (in_features, out_features))
        self.params["b"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x, training=False, update_stats=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += self._x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


class Flatten(Layer):
    def forward(self, x, training=False, update_stats=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False, update_stats=False):
        for layer in self.layers:
            x = layer.forward(x, training, update_stats)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class ResidualBlock(Layer):
    """``relu(bn(conv(x)) + x)``; drops the skip when ``residual`` is False."""

    def __init__(self, channels, kernel=3, batchnorm=True, residual=True, momentum=0.9, rng=None):
        super().__init__()
        layers = [Conv2d(channels, channels, kernel, bias=not batchnorm, rng=rng)]
        if batchnorm:
            layers.append(BatchNorm2d(channels, momentum))
        self.body = Sequential(*layers)
        self.relu = ReLU()
        self.residual = residual

    @property
    def layers(self):
        return self.body.layers + [self.relu]

    def forward(self, x, training=False, update_stats=False):
        y = self.body.forward(x, training, update_stats)
        if self.residual:
            y = y + x
        return self.relu.forward(y)

    def backward(self, dout):
        dy = self.relu.backward(dout)
        dx = self.body.backward(dy)
        if self.residual:
            dx = dx + dy
        return dx


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the entries where ``mask`` is True; exactly 0 elsewhere."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    s = e.sum(axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def policy_cross_entropy(logits, mask, target, eps_log=1e-10):
    """Mean of ``-sum(target * log(p + eps_log))`` and its gradient w.r.t. the logits."""
    p = masked_softmax(logits, mask)
    b = logits.shape[0]
    loss = -np.sum(target * np.log(p + eps_log)) / b
    dp = -target / (p + eps_log)
    dz = p * (dp - np.sum(p * dp, axis=-1, keepdims=True))
    dz = np.where(mask, dz, 0.0) / b
    return loss, dz


def value_mse(value, target):
    b = value.shape[0]
    diff = value - target
    return float(np.sum(diff**2) / b), 2.0 * diff / b
