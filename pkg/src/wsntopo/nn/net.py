"""Policy/value network: a small ResNet trunk with two heads.

The trunk is a stem convolution followed by ``conv_blocks`` residual
blocks. The policy head produces one logit per ``(child, parent)`` pair
(``N * N`` in total) and the value head a single unbounded scalar.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    ReLU,
    ResidualBlock,
    Sequential,
    masked_softmax,
    policy_cross_entropy,
    value_mse,
)

MAGIC = b"WSNTOPO-NET\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    n_nodes: int
    input_channels: int = 4
    conv_blocks: int = 3
    filters: int = 32
    kernel: int = 3
    use_residual: bool = True
    use_batchnorm: bool = True
    value_head_hidden: int = 64
    weight_init_seed: int = 0
    l2: float = 1e-4
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        if self.conv_blocks < 1 or self.filters < 1 or self.value_head_hidden < 1:
            raise ValueError("conv_blocks, filters and value_head_hidden must be positive")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.input_channels, self.n_nodes, self.n_nodes)

    @property
    def policy_head_dim(self) -> int:
        return self.n_nodes * self.n_nodes


@dataclass
class EpisodeSample:
    """One training example: encoded state, visit-count target and outcome."""

    encoded_state: np.ndarray
    target_policy: np.ndarray
    target_value: float
    valid_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid_mask is None:
            self.valid_mask = self.target_policy > 0


def _conv_bn_relu(cin, cout, kernel, cfg, rng):
    layers = [Conv2d(cin, cout, kernel, bias=not cfg.use_batchnorm, rng=rng)]
    if cfg.use_batchnorm:
        layers.append(BatchNorm2d(cout, cfg.bn_momentum))
    layers.append(ReLU())
    return Sequential(*layers)


def _walk(layer: Layer, prefix: str):
    """Yield ``(name, layer)`` for every leaf layer, in a fixed order."""
    if isinstance(layer, Sequential):
        for i, sub in enumerate(layer.layers):
            yield from _walk(sub, f"{prefix}{i}.")
    elif isinstance(layer, ResidualBlock):
        yield from _walk(layer.body, f"{prefix}body.")
    else:
        yield prefix.rstrip("."), layer


class PolicyValueNet:
    """``state -> (policy, value)`` with manual backprop and Adam.

    Parameters
    ----------
    config : NetConfig
        Architecture and regularisation settings.
    """

    beta1 = 0.9
    beta2 = 0.999
    adam_eps = 1e-8

    def __init__(self, config: NetConfig):
        self.config = config
        rng = np.random.default_rng(config.weight_init_seed)
        c, n, f = config.input_channels, config.n_nodes, config.filters
        self.trunk = Sequential(
            _conv_bn_relu(c, f, config.kernel, config, rng),
            *[ResidualBlock(f, config.kernel, config.use_batchnorm, config.use_residual,
                            config.bn_momentum, rng) for _ in range(config.conv_blocks)],
        )
        self.policy_head = Sequential(
            _conv_bn_relu(f, 2, 1, config, rng),
            Flatten(),
            # zero output weights: the untrained policy is uniform over valid actions
            Dense(2 * n * n, n * n, rng, zero_init=True),
        )
        self.value_head = Sequential(
            _conv_bn_relu(f, 1, 1, config, rng),
            Flatten(),
            Dense(n * n, config.value_head_hidden, rng),
            ReLU(),
            Dense(config.value_head_hidden, 1, rng),
        )
        self._leaves = [
            (f"{head}.{name}", layer)
            for head, module in (("trunk", self.trunk), ("policy", self.policy_head), ("value", self.value_head))
            for name, layer in _walk(module, "")
        ]
        self.adam_step = 0
        self.adam_m = {k: np.zeros_like(v) for k, v in self.named_parameters()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.named_parameters()}

    # -- parameter access ---------------------------------------------------

    def named_parameters(self):
        for name, layer in self._leaves:
            for key, value in layer.params.items():
                yield f"{name}.{key}", value

    def named_buffers(self):
        for name, layer in self._leaves:
            for key, value in layer.buffers.items():
                yield f"{name}.{key}", value

    def named_gradients(self):
        for name, layer in self._leaves:
            for key, value in layer.grads.items():
                yield f"{name}.{key}", value

    def _set(self, full_name: str, value: np.ndarray, kind: str):
        layer_name, key = full_name.rsplit(".", 1)
        for name, layer in self._leaves:
            if name == layer_name:
                store = layer.params if kind == "param" else layer.buffers
                if store[key].shape != value.shape:
                    raise CheckpointError(f"shape mismatch for {full_name}")
                store[key] = value
                return
        raise CheckpointError(f"unknown tensor {full_name}")

    def n_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def zero_weights(self) -> "PolicyValueNet":
        """Set every trainable parameter to zero: uniform policy, value 0."""
        for name, value in list(self.named_parameters()):
            self._set(name, np.zeros_like(value), "param")
        return self

    def _zero_grad(self):
        for _, layer in self._leaves:
            layer.zero_grad()

    # -- forward ------------------------------------------------------------

    def _check_input(self, x):
        if x.shape[1:] != self.config.input_shape:
            raise ValueError(f"expected input of shape (B, {self.config.input_shape}), got {x.shape}")

    def _forward(self, x, training, update_stats):
        h = self.trunk.forward(x, training, update_stats)
        logits = self.policy_head.forward(h, training, update_stats)
        value = self.value_head.forward(h, training, update_stats)[:, 0]
        return logits, value

    def predict_batch(self, states: np.ndarray, masks: np.ndarray):
        """Inference on a batch; returns masked policies ``(B, N*N)`` and values ``(B,)``."""
        x = np.asarray(states, dtype=np.float64)
        self._check_input(x)
        logits, value = self._forward(x, training=False, update_stats=False)
        return masked_softmax(logits, np.asarray(masks, dtype=bool)), value

    def forward(self, encoded_state: np.ndarray, valid_mask: np.ndarray):
        """Policy over valid actions and value for a single encoded state."""
        x = np.asarray(encoded_state, dtype=np.float64)
        if x.shape != self.config.input_shape:
            raise ValueError(f"expected input of shape {self.config.input_shape}, got {x.shape}")
        policy, value = self.predict_batch(x[None], np.asarray(valid_mask, dtype=bool)[None])
        return policy[0], float(value[0])

    # -- training -----------------------------------------------------------

    @staticmethod
    def _stack(batch):
        if not batch:
            raise ValueError("batch must not be empty")
        x = np.stack([s.encoded_state for s in batch]).astype(np.float64)
        pi = np.stack([s.target_policy for s in batch]).astype(np.float64)
        z = np.array([s.target_value for s in batch], dtype=np.float64)
        mask = np.stack([s.valid_mask for s in batch]).astype(bool)
        return x, pi, z, mask

    def _loss_and_grads(self, batch, backward: bool, update_stats: bool):
        x, pi, z, mask = self._stack(batch)
        self._check_input(x)
        logits, value = self._forward(x, training=True, update_stats=update_stats)
        ce, dlogits = policy_cross_entropy(logits, mask, pi)
        mse, dvalue = value_mse(value, z)
        l2 = self.config.l2 * sum(float(np.sum(v * v)) for _, v in self.named_parameters())
        total = ce + mse + l2
        if backward:
            self._zero_grad()
            dh = self.policy_head.backward(dlogits)
            dh = dh + self.value_head.backward(dvalue[:, None])
            self.trunk.backward(dh)
            if self.config.l2:
                for (_, v), (_, g) in zip(self.named_parameters(), self.named_gradients()):
                    g += 2.0 * self.config.l2 * v
        return total

    def loss(self, batch) -> float:
        """Batch-statistics loss: value MSE + policy cross-entropy + L2. No side effects."""
        return float(self._loss_and_grads(batch, backward=False, update_stats=False))

    def gradients(self, batch) -> dict[str, np.ndarray]:
        """Analytic loss gradient for every parameter (no update applied)."""
        self._loss_and_grads(batch, backward=True, update_stats=False)
        return {k: g.copy() for k, g in self.named_gradients()}

    def train_step(self, batch, learning_rate: float) -> float:
        """One Adam step on ``batch``; returns the loss before the update."""
        total = self._loss_and_grads(batch, backward=True, update_stats=True)
        for name, g in self.named_gradients():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
        self.adam_step += 1
        t = self.adam_step
        b1, b2 = self.beta1, self.beta2
        for (name, p), (_, g) in zip(list(self.named_parameters()), self.named_gradients()):
            m = self.adam_m[name] = b1 * self.adam_m[name] + (1 - b1) * g
            v = self.adam_v[name] = b2 * self.adam_v[name] + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p -= learning_rate * mhat / (np.sqrt(vhat) + self.adam_eps)
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite parameter after update in {name}")
        return float(total)

    # -- persistence --------------------------------------------------------

    def _segments(self):
        for name, v in self.named_parameters():
            yield "param", name, v
        for name, v in self.named_buffers():
            yield "buffer", name, v
        for name, _ in self.named_parameters():
            yield "adam_m", name, self.adam_m[name]
        for name, _ in self.named_parameters():
            yield "adam_v", name, self.adam_v[name]

    def save(self, path, spec_fingerprint: str = "", provenance: dict | None = None) -> None:
        """Write magic, version, a JSON header and little-endian float64 segments."""
        segments = list(self._segments())
        header = {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "spec_fingerprint": spec_fingerprint,
            "provenance": provenance or {},
            "adam_step": self.adam_step,
            "segments": [{"kind": k, "name": n, "shape": list(v.shape)} for k, n, v in segments],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for _, _, v in segments:
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        tmp.replace(path)

    @staticmethod
    def read_header(path) -> dict:
        with open(path, "rb") as fh:
            return _read_header(fh)

    @classmethod
    def load(cls, path, expect_nodes: int | None = None, expect_fingerprint: str | None = None,
             expect_channels: int | None = None) -> "PolicyValueNet":
        with open(path, "rb") as fh:
            header = _read_header(fh)
            config = NetConfig(**header["config"])
            if expect_nodes is not None and config.n_nodes != expect_nodes:
                raise CheckpointError(
                    f"checkpoint is for {config.n_nodes} nodes, expected {expect_nodes}")
            if expect_channels is not None and config.input_channels != expect_channels:
                raise CheckpointError(
                    f"checkpoint expects {config.input_channels} input channels, got {expect_channels}")
            if expect_fingerprint is not None and header["spec_fingerprint"] != expect_fingerprint:
                raise CheckpointError("checkpoint was written for a different network instance")
            net = cls(config)
            for seg in header["segments"]:
                shape = tuple(seg["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(8 * count)
                if len(raw) != 8 * count:
                    raise CheckpointError("checkpoint is truncated")
                value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
                kind, name = seg["kind"], seg["name"]
                if kind in ("param", "buffer"):
                    net._set(name, value, kind)
                elif kind == "adam_m":
                    net.adam_m[name] = value
                elif kind == "adam_v":
                    net.adam_v[name] = value
                else:
                    raise CheckpointError(f"unknown segment kind {kind!r}")
            if fh.read(1):
                raise CheckpointError("trailing bytes after the last segment")
        net.adam_step = int(header["adam_step"])
        net.provenance = header.get("provenance", {})
        return net

    def copy(self) -> "PolicyValueNet":
        other = PolicyValueNet(self.config)
        for name, v in self.named_parameters():
            other._set(name, v.copy(), "param")
        for name, v in self.named_buffers():
            other._set(name, v.copy(), "buffer")
        other.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        other.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        other.adam_step = self.adam_step
        return other


def _read_header(fh) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    version, length = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    return json.loads(fh.read(length).decode())
