"""Toy DDPM: noise schedule, forward process, training losses and samplers.

Timesteps are 1-based throughout (``1 <= t <= T``); schedule arrays are
stored 0-based so ``beta[t - 1]`` is β_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .nn import MlpDenoiser

__all__ = [
    "NoiseSchedule",
    "TrainBatch",
    "LossTerms",
    "schedule_new",
    "q_sample",
    "q_step",
    "q_chain",
    "a_coeff",
    "mu_from_eps",
    "vanilla_loss",
    "pogdiff_loss",
    "ddim_timesteps",
    "ddim_sample",
    "ddpm_sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_variance: np.ndarray

    @property
    def posterior_precision(self) -> np.ndarray:
        """λ_t = 1/β̃_t, the precision of q(x_{t-1} | x_t, x_0)."""
        return 1.0 / self.posterior_variance

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")
        return t.astype(int)

    def alpha_bar_at(self, t: int) -> float:
        """ᾱ_t with the convention ᾱ_0 = 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def schedule_new(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear β schedule with cumulative products and posterior variances."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    post_var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    post_var[0] = beta[0]
    return NoiseSchedule(T, beta, alpha, alpha_bar, post_var)


def q_sample(schedule: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Closed-form draw from q(x_t | x_0); `t` may be a scalar or one per row."""
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t - 1]
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_step(schedule: NoiseSchedule, x_prev: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
    """One forward transition q(x_t | x_{t-1})."""
    schedule.check_t(t)
    b = schedule.beta[t - 1]
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * noise


def q_chain(schedule: NoiseSchedule, x0: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
    """Reach x_t by iterating the stepwise chain from x_0."""
    x = np.asarray(x0, dtype=np.float64)
    for s in range(1, t + 1):
        x = q_step(schedule, x, s, rng.standard_normal(x.shape))
    return x


def a_coeff(schedule: NoiseSchedule, t: int, lam: float) -> float:
    """𝒜(λ) = λ(1−α_t)² / (2α_t(1−ᾱ_t))."""
    schedule.check_t(t)
    a = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    return float(lam * (1.0 - a) ** 2 / (2.0 * a * (1.0 - ab)))


def mu_from_eps(schedule: NoiseSchedule, x_t: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Posterior-mean parameterisation μ = (x_t − β_t/√(1−ᾱ_t)·ε)/√α_t."""
    schedule.check_t(t)
    a = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    return (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)


@dataclass
class TrainBatch:
    x0: np.ndarray
    y: np.ndarray
    y_prime: np.ndarray
    psi: np.ndarray
    t: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        n = self.x0.shape[0]
        for name in ("y", "y_prime", "psi", "t", "eps"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"batch field {name!r} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.eps.shape != self.x0.shape:
            raise ValueError("eps must match x0 in shape")
        if np.any(self.psi < 0) or not np.all(np.isfinite(self.psi)):
            raise ValueError("psi must be finite and non-negative")


@dataclass
class LossTerms:
    total: Tensor
    term1: float
    term2: float
    psi_mean: float


def _row_sq_norm(a: Tensor) -> Tensor:
    return a.square().sum(axis=1)


def vanilla_loss(model: MlpDenoiser, schedule: NoiseSchedule, batch: TrainBatch) -> Tensor:
    """Batch mean of ‖ε_θ(x_t, t, y) − ε‖²."""
    x_t = q_sample(schedule, batch.x0, batch.t, batch.eps)
    pred = model(Tensor(x_t), batch.t, Tensor(batch.y))
    return _row_sq_norm(pred - Tensor(batch.eps)).mean()


def pogdiff_loss(model: MlpDenoiser, schedule: NoiseSchedule, batch: TrainBatch,
                 stop_grad_neighbor: bool = False, neighbor_pred: np.ndarray | None = None) -> LossTerms:
    """Batch mean of ‖ε_θ(x_t,t,y) − ε‖² + ψ‖ε_θ(x_t,t,y) − ε_θ(x_t,t,y')‖².

    The two terms are averaged separately and added, so ψ ≡ 0 gives exactly
    the vanilla loss value and gradient. `neighbor_pred`, if given, replaces
    ε_θ(x_t,t,y') by a constant (implies stop-gradient).
    """
    x_t = Tensor(q_sample(schedule, batch.x0, batch.t, batch.eps))
    pred = model(x_t, batch.t, Tensor(batch.y))
    term1 = _row_sq_norm(pred - Tensor(batch.eps)).mean()
    if neighbor_pred is not None:
        pred_n = Tensor(neighbor_pred)
    elif stop_grad_neighbor:
        with no_grad():
            pred_n = model(x_t, batch.t, Tensor(batch.y_prime))
    else:
        pred_n = model(x_t, batch.t, Tensor(batch.y_prime))
    consistency = _row_sq_norm(pred - pred_n)
    term2 = (consistency * Tensor(batch.psi)).mean()
    total = term1 + term2
    return LossTerms(total, term1.item(), term2.item(), float(np.mean(batch.psi)))


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """Evenly spaced descending timesteps from T down to 1."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in [1, {T}], got {n_steps}")
    return np.round(np.linspace(T, 1, n_steps)).astype(int)


def ddim_sample(model: MlpDenoiser, schedule: NoiseSchedule, y: np.ndarray, n_steps: int,
                x_T: np.ndarray, stochastic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Reverse-diffuse `x_T` (rows) under condition `y`.

    Deterministic η=0 DDIM over `ddim_timesteps`. With ``stochastic=True``
    runs the ancestral DDPM sampler over all T steps instead (needs `rng`).
    """
    if stochastic:
        if rng is None:
            raise ValueError("ancestral sampling needs an rng")
        return ddpm_sample(model, schedule, y, x_T, rng)
    x = np.atleast_2d(np.asarray(x_T, dtype=np.float64))
    y = _tile_condition(y, x.shape[0])
    steps = ddim_timesteps(schedule.T, n_steps)
    with no_grad():
        for i, t in enumerate(steps):
            t_prev = int(steps[i + 1]) if i + 1 < len(steps) else 0
            ab = schedule.alpha_bar_at(int(t))
            ab_prev = schedule.alpha_bar_at(t_prev)
            eps = model(Tensor(x), int(t), Tensor(y)).data
            x0_pred = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
            x = np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps
    return x


def ddpm_sample(model: MlpDenoiser, schedule: NoiseSchedule, y: np.ndarray, x_T: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling from p_θ(x_{t-1} | x_t, t, y) with σ_t² = β̃_t."""
    x = np.atleast_2d(np.asarray(x_T, dtype=np.float64))
    y = _tile_condition(y, x.shape[0])
    with no_grad():
        for t in range(schedule.T, 0, -1):
            eps = model(Tensor(x), t, Tensor(y)).data
            x = mu_from_eps(schedule, x, t, eps)
            if t > 1:
                x = x + np.sqrt(schedule.posterior_variance[t - 1]) * rng.standard_normal(x.shape)
    return x


def _tile_condition(y: np.ndarray, n: int) -> np.ndarray:
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] == 1 and n != 1:
        y = np.repeat(y, n, axis=0)
    if y.shape[0] != n:
        raise ValueError(f"condition has {y.shape[0]} rows for {n} samples")
    return y
