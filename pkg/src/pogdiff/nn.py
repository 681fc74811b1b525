"""Small MLPs on top of the autodiff core, plus the ε-prediction denoiser."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, concat

__all__ = [
    "ACTIVATIONS",
    "Mlp",
    "MlpDenoiser",
    "timestep_embedding",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_MAGIC = b"POGDIFF-MLP v1\n"
TIME_FEATURES = 3


def _activate(h: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return h.tanh()
    if kind == "relu":
        return h.relu()
    if kind == "identity":
        return h
    raise ValueError(f"unknown activation {kind!r}")


class Mlp:
    """Fully connected net; the activation is applied between layers only.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``(B, fan_in)``
    maps through ``x @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], activation: str = "tanh", rng: np.random.Generator | None = None,
                 zero_last: bool = False):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            if last and zero_last:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            self.layers.append((Tensor(w, requires_grad=True, name=f"W{i}"),
                                Tensor(np.zeros(fan_out), requires_grad=True, name=f"b{i}")))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {}
        for i, (w, b) in enumerate(self.layers):
            params[f"{prefix}W{i}"] = w
            params[f"{prefix}b{i}"] = b
        return params

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected input (B, {self.in_dim}), got {x.shape}")
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < len(self.layers) - 1:
                h = _activate(h, self.activation)
        return h

    def copy(self) -> Mlp:
        return copy.deepcopy(self)


def timestep_embedding(t: np.ndarray, T: int) -> np.ndarray:
    """Per-row features ``[t/T, sin(2πt/T), cos(2πt/T)]``."""
    phase = np.asarray(t, dtype=np.float64).reshape(-1, 1) / T
    return np.concatenate([phase, np.sin(2 * np.pi * phase), np.cos(2 * np.pi * phase)], axis=1)


class MlpDenoiser:
    """ε_θ(x_t, t, y): an Mlp over ``concat(x_t, time features, y)``."""

    def __init__(self, data_dim: int, cond_dim: int, T: int, hidden: Sequence[int] = (64, 64),
                 activation: str = "tanh", rng: np.random.Generator | None = None, zero_last: bool = False):
        self.data_dim = int(data_dim)
        self.cond_dim = int(cond_dim)
        self.T = int(T)
        sizes = [self.data_dim + TIME_FEATURES + self.cond_dim, *hidden, self.data_dim]
        self.net = Mlp(sizes, activation, rng=rng, zero_last=zero_last)

    @property
    def hidden(self) -> list[int]:
        return self.net.sizes[1:-1]

    @property
    def activation(self) -> str:
        return self.net.activation

    def parameters(self) -> dict[str, Tensor]:
        return self.net.parameters()

    def __call__(self, x_t, t, y) -> Tensor:
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(np.atleast_2d(x_t))
        y = y if isinstance(y, Tensor) else Tensor(np.atleast_2d(y))
        t = np.atleast_1d(np.asarray(t))
        n = x_t.shape[0]
        if x_t.shape != (n, self.data_dim):
            raise ShapeError(f"x_t must be (B, {self.data_dim}), got {x_t.shape}")
        if y.shape != (n, self.cond_dim):
            raise ShapeError(f"y must be ({n}, {self.cond_dim}), got {y.shape}")
        if t.size == 1 and n != 1:
            t = np.full(n, t.item())
        if t.shape != (n,):
            raise ShapeError(f"t must have {n} entries, got {t.shape}")
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timesteps must lie in [1, {self.T}]")
        return self.net(concat([x_t, Tensor(timestep_embedding(t, self.T)), y], axis=1))

    def copy(self) -> MlpDenoiser:
        return copy.deepcopy(self)


def save_checkpoint(model: MlpDenoiser, path: str | Path) -> None:
    """Magic line, one JSON header line, then row-major little-endian float64."""
    header = {"data_dim": model.data_dim, "cond_dim": model.cond_dim, "T": model.T,
              "sizes": model.net.sizes, "activation": model.activation}
    payload = [arr for w, b in model.net.layers for arr in (w.data, b.data)]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in payload:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> MlpDenoiser:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        header = json.loads(fh.readline())
        body = fh.read()
    model = MlpDenoiser(header["data_dim"], header["cond_dim"], header["T"], hidden=header["sizes"][1:-1],
                        activation=header["activation"])
    if model.net.sizes != header["sizes"]:
        raise ValueError(f"{path}: layer sizes inconsistent with dims")
    values = np.frombuffer(body, dtype="<f8")
    expected = sum(w.data.size + b.data.size for w, b in model.net.layers)
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {values.size}")
    pos = 0
    for w, b in model.net.layers:
        for t in (w, b):
            t.data = values[pos:pos + t.data.size].reshape(t.data.shape).astype(np.float64)
            pos += t.data.size
    return model
