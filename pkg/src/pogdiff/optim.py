"""SGD and Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")
        self.parameter = name


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class Optimizer:
    config: OptimizerConfig
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
        """Update `params` in place. Nothing is touched if any gradient is non-finite."""
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        cfg = self.config
        self.step_count += 1
        if cfg.method == "sgd":
            for name, p in params.items():
                p.data = p.data - cfg.lr * grads[name]
            return
        k = self.step_count
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - cfg.beta1 ** k)
            v_hat = v / (1.0 - cfg.beta2 ** k)
            p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def optimizer_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], optimizer: Optimizer) -> None:
    optimizer.step(params, grads)
