"""Transformer encoder blocks, straight-through argmax, Adam and checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import GraphError, Tensor, affine, gelu, layer_norm, softmax

__all__ = [
    "TransformerEncoderConfig",
    "Module",
    "Linear",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "FeedForward",
    "EncoderLayer",
    "TransformerEncoder",
    "ste_argmax",
    "WarmupSchedule",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


@dataclass(frozen=True)
class TransformerEncoderConfig:
    depth: int = 2
    d_model: int = 32
    num_heads: int = 4
    d_ff: int = 64
    dropout_rate: float = 0.0
    activation: str = "gelu"

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.depth < 0 or self.d_ff < 1:
            raise ValueError("depth must be >= 0 and d_ff >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


_ACTIVATIONS = {"gelu": gelu, "tanh": lambda x: x.tanh()}


class Module:
    """Parameter container; parameters are discovered from attributes in order."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for k, p in params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"shape mismatch for {k}: {value.shape} vs {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        limit = math.sqrt(6.0 / (d_in + d_out))
        w = np.zeros((d_in, d_out)) if zero else rng.uniform(-limit, limit, (d_in, d_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


class MultiHeadSelfAttention(Module):
    """softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated and projected."""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if d_model % num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        self.num_heads = num_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, t, d = x.shape
        h = self.num_heads
        return x.reshape(*lead, t, h, d // h).swapaxes(-2, -3)   # (..., h, t, dh)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2:
            raise GraphError(f"attention input must be (..., tokens, d_model), got {x.shape}")
        d_head = x.shape[-1] // self.num_heads
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_head))
        attn = softmax(scores, axis=-1)
        ctx = (attn @ v).swapaxes(-2, -3)                             # (..., t, h, dh)
        ctx = ctx.reshape(*x.shape[:-1], x.shape[-1])
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, activation: str = "gelu"):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)
        self._act = _ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self._act(self.fc1(x)))


class EncoderLayer(Module):
    """Pre-norm layer: x + MHSA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, cfg: TransformerEncoderConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = MultiHeadSelfAttention(cfg.d_model, cfg.num_heads, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, cfg.activation)
        self._rate = cfg.dropout_rate
        self._rng = np.random.default_rng(rng.integers(2**63)) if cfg.dropout_rate > 0 else None

    def __call__(self, x: Tensor) -> Tensor:
        rng = self._rng if self.training else None
        x = x + _dropout(self.attn(self.ln1(x)), self._rate, rng)
        return x + _dropout(self.ff(self.ln2(x)), self._rate, rng)


class TransformerEncoder(Module):
    def __init__(self, cfg: TransformerEncoderConfig, rng: np.random.Generator):
        self.config = cfg
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.d_model)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


def ste_argmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """One-hot argmax forward (first index on ties), softmax Jacobian backward."""
    z = logits.data / temperature
    idx = np.argmax(z, axis=-1)
    one_hot = np.zeros_like(z)
    np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)) / temperature,)
    return Tensor.from_op(one_hot, (logits,), backward)


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear warm-up to ``peak_lr`` then inverse-square-root decay."""

    peak_lr: float = 1e-3
    warmup_steps: int = 100

    def __post_init__(self):
        if not self.peak_lr > 0 or self.warmup_steps < 1:
            raise ValueError("peak_lr must be > 0 and warmup_steps >= 1")

    def __call__(self, step: int) -> float:
        if step < 1:
            raise ValueError("steps are counted from 1")
        return self.peak_lr * min(step / self.warmup_steps, math.sqrt(self.warmup_steps / step))


class Adam:
    """Adam with bias correction over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], schedule=None, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.schedule = schedule if schedule is not None else (lambda step: 1e-3)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    @property
    def lr(self) -> float:
        return self.schedule(max(self.step_count, 1))

    def step(self) -> float:
        self.step_count += 1
        t = self.step_count
        lr = self.schedule(t)
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return lr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# -- checkpoint container -----------------------------------------------------

CHECKPOINT_MAGIC = b"RPAC"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<4sII")


class CheckpointError(IOError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    """Write named float64 arrays to an RPAC file.

    Layout: magic, version u32, parameter count u32, u32-length-prefixed
    UTF-8 JSON metadata, then per parameter: u32 name length, name, u32 rank,
    u32 dims, little-endian float64 values.
    """
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params)))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for name, value in params.items():
            value = np.asarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes(order="C"))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        try:
            return _read_checkpoint(fh)
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def _read_checkpoint(fh) -> tuple[dict[str, np.ndarray], dict]:
    head = fh.read(_CK_HEADER.size)
    if len(head) != _CK_HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, count = _CK_HEADER.unpack(head)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CheckpointError(f"not an RPAC v{CHECKPOINT_VERSION} file")
    (meta_len,) = struct.unpack("<I", fh.read(4))
    metadata = json.loads(fh.read(meta_len).decode("utf-8"))
    params = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", fh.read(4))
        name = fh.read(n).decode("utf-8")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        buf = fh.read(8 * size)
        if len(buf) != 8 * size:
            raise CheckpointError(f"truncated values for {name}")
        params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return params, metadata
