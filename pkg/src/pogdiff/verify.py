"""Numerical self-checks behind the ``verify-math`` subcommand.

Each check returns a `Check` with the measured worst-case quantity so callers
(CLI, acceptance tests) can print it alongside the verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import grad_check, no_grad
from .diffusion import TrainBatch, a_coeff, mu_from_eps, pogdiff_loss, q_chain, q_sample, schedule_new
from .gaussian import IsotropicGaussian, kl_isotropic, lemma_residual, pog_product
from .nn import MlpDenoiser

__all__ = ["Check", "check_lemma", "check_pog_grid", "check_kl_mc", "check_gradients", "check_prop_chain",
           "check_forward_marginals", "run_all"]


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


def check_lemma(n: int = 10_000, max_dim: int = 8, seed: int = 0, tol: float = 1e-9) -> Check:
    rng = np.random.default_rng(seed)
    worst, negative = 0.0, 0
    for _ in range(n):
        d = int(rng.integers(1, max_dim + 1))
        a, m, b = (rng.normal(0, 3, d) for _ in range(3))
        lt, ly = np.exp(rng.uniform(-4, 4, 2))
        r = lemma_residual(a, m, b, lt, ly)
        worst = max(worst, r.defect)
        negative += r.residual < 0
    return Check("PoG completing-the-square identity", worst < tol and negative == 0, worst, tol, f"n={n} negative={negative}")


def _grid_product_density(g1: IsotropicGaussian, g2: IsotropicGaussian, grid: np.ndarray) -> np.ndarray:
    prod = np.exp(g1.logpdf(grid[:, None]) + g2.logpdf(grid[:, None]))
    dx = grid[1] - grid[0]
    # trapezoid normalisation
    z = dx * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
    return prod / z


def check_pog_grid(n_pairs: int = 100, seed: int = 0, tol: float = 1e-6, points: int = 100_000) -> Check:
    """Closed-form product vs. a renormalised pointwise product on [-10, 10]."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(-10.0, 10.0, points)
    worst = 0.0
    for _ in range(n_pairs):
        g1 = IsotropicGaussian([rng.uniform(-3, 3)], float(np.exp(rng.uniform(-1, 2))))
        g2 = IsotropicGaussian([rng.uniform(-3, 3)], float(np.exp(rng.uniform(-1, 2))))
        numeric = _grid_product_density(g1, g2, grid)
        closed = np.exp(pog_product(g1, g2).logpdf(grid[:, None]))
        worst = max(worst, float(np.max(np.abs(numeric - closed))))
    return Check("PoG closed form vs grid", worst < tol, worst, tol, f"pairs={n_pairs}")


def check_kl_mc(seed: int = 0, n: int = 1_000_000, dim: int = 3) -> Check:
    """Closed-form KL against E_p[log p − log q] (|z| in standard errors)."""
    rng = np.random.default_rng(seed)
    p = IsotropicGaussian(rng.normal(0, 1, dim), float(np.exp(rng.uniform(-1, 1))))
    q = IsotropicGaussian(rng.normal(0, 1, dim), float(np.exp(rng.uniform(-1, 1))))
    x = p.sample(n, rng)
    diff = p.logpdf(x) - q.logpdf(x)
    se = diff.std(ddof=1) / math.sqrt(n)
    z = abs(diff.mean() - kl_isotropic(p, q)) / se
    return Check("KL closed form vs Monte Carlo", z < 3.0, z, 3.0, "(standard errors)")


def random_instance(rng: np.random.Generator, batch: int = 4, data_dim: int = 2, cond_dim: int = 3, T: int = 20):
    """Small random (model, schedule, batch) triple for gradient checks."""
    hidden = [int(rng.integers(3, 7)) for _ in range(int(rng.integers(1, 3)))]
    model = MlpDenoiser(data_dim, cond_dim, T, hidden, "tanh", rng=rng)
    schedule = schedule_new(T, 1e-3, 0.2)
    b = TrainBatch(rng.normal(size=(batch, data_dim)), rng.normal(size=(batch, cond_dim)),
                   rng.normal(size=(batch, cond_dim)), rng.uniform(0, 2, batch),
                   rng.integers(1, T + 1, batch), rng.normal(size=(batch, data_dim)))
    return model, schedule, b


def pogdiff_grad_error(model, schedule, batch, stop_grad: bool, epsilon: float = 1e-6) -> float:
    params = model.parameters()
    frozen = None
    if stop_grad:
        # the finite-difference side must hold ε_θ(x_t, t, y') fixed at the current parameters
        with no_grad():
            x_t = q_sample(schedule, batch.x0, batch.t, batch.eps)
            frozen = model(x_t, batch.t, batch.y_prime).data.copy()
    return grad_check(lambda: pogdiff_loss(model, schedule, batch, stop_grad, frozen).total, params,
                      epsilon).max_error


def check_gradients(n: int = 100, seed: int = 0, tol: float = 1e-4) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        model, schedule, batch = random_instance(rng)
        for stop in (False, True):
            worst = max(worst, pogdiff_grad_error(model, schedule, batch, stop))
    return Check("pogdiff loss gradients vs finite differences", worst < tol, worst, tol,
                 f"instances={n} x 2 stop-grad settings")


def check_prop_chain(n: int = 1000, seed: int = 0, tol: float = 1e-9) -> Check:
    """½λ‖μ(ε₁) − μ(ε₂)‖² equals 𝒜(λ)‖ε₁ − ε₂‖² under the μ↔ε map, and 𝒜 is linear in λ."""
    rng = np.random.default_rng(seed)
    schedule = schedule_new(100)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, 101))
        d = int(rng.integers(1, 9))
        x_t, e1, e2 = (rng.normal(size=d) for _ in range(3))
        lam, lam2 = np.exp(rng.uniform(-3, 3, 2))
        lhs = 0.5 * lam * np.sum((mu_from_eps(schedule, x_t, t, e1) - mu_from_eps(schedule, x_t, t, e2)) ** 2)
        rhs = a_coeff(schedule, t, lam) * np.sum((e1 - e2) ** 2)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        lin = a_coeff(schedule, t, lam + lam2) - a_coeff(schedule, t, lam) - a_coeff(schedule, t, lam2)
        worst = max(worst, abs(lin) / a_coeff(schedule, t, lam + lam2))
    return Check("mu/eps loss chain and A(lambda) linearity", worst < tol, worst, tol, f"n={n}")


def check_forward_marginals(n: int = 100_000, seed: int = 0, T: int = 100, dim: int = 2) -> Check:
    """Stepwise chain vs. closed-form q(x_t | x_0): mean and variance in standard errors."""
    rng = np.random.default_rng(seed)
    schedule = schedule_new(T)
    x0 = np.linspace(-1.0, 1.5, dim)
    worst = 0.0
    for t in sorted({1, T // 2, T}):
        ab = schedule.alpha_bar[t - 1]
        mean_true = math.sqrt(ab) * x0
        var_true = 1.0 - ab
        chain = q_chain(schedule, np.tile(x0, (n, 1)), t, rng)
        closed = q_sample(schedule, np.tile(x0, (n, 1)), t, rng.standard_normal((n, dim)))
        for xs in (chain, closed):
            se_mean = math.sqrt(var_true / n)
            se_var = var_true * math.sqrt(2.0 / (n - 1))
            worst = max(worst, float(np.max(np.abs(xs.mean(0) - mean_true))) / se_mean,
                        float(np.max(np.abs(xs.var(0, ddof=1) - var_true))) / se_var)
        # chain and closed form against each other
        se_diff = math.sqrt(2 * var_true / n)
        worst = max(worst, float(np.max(np.abs(chain.mean(0) - closed.mean(0)))) / se_diff)
    return Check("forward chain vs closed-form marginals", worst < 3.0, worst, 3.0, "(standard errors)")


def run_all(fast: bool = False) -> list[Check]:
    scale = 10 if fast else 1
    return [
        check_lemma(10_000 // scale),
        check_pog_grid(100 // scale),
        check_kl_mc(n=1_000_000 // scale),
        check_gradients(100 // scale),
        check_prop_chain(1000 // scale),
        check_forward_marginals(100_000 // scale),
    ]
