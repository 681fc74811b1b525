"""VAE density surrogate over condition embeddings and the ψ weight."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .neighbors import img_similarity
from .nn import Mlp
from .optim import Optimizer, OptimizerConfig

__all__ = ["DensityVae", "VaeConfig", "PsiWeight", "fit", "elbo", "elbo_samples", "psi_weight",
           "dump_elbo_table"]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class VaeConfig:
    latent_dim: int = 2
    hidden: int = 32
    epochs: int = 1500
    lr: float = 5e-3
    batch_size: int | None = None


class DensityVae:
    """Encoder y → (μ_z, log σ²_z) and decoder z → ŷ, each a 3-layer MLP.

    The decoder variance is fixed to 1, so the reconstruction log-likelihood
    is ``-½‖y − ŷ‖² − (d/2)·ln 2π``.
    """

    def __init__(self, input_dim: int, latent_dim: int = 2, hidden: int = 32,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = int(input_dim)
        self.latent_dim = int(latent_dim)
        self.encoder = Mlp([self.input_dim, hidden, hidden, 2 * self.latent_dim], "tanh", rng=rng)
        self.decoder = Mlp([self.latent_dim, hidden, hidden, self.input_dim], "tanh", rng=rng)

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters("enc."), **self.decoder.parameters("dec.")}

    def encode(self, y: Tensor) -> tuple[Tensor, Tensor]:
        h = self.encoder(y)
        return h.cols(0, self.latent_dim), h.cols(self.latent_dim, 2 * self.latent_dim)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def negative_elbo(self, y: np.ndarray, noise: np.ndarray) -> Tensor:
        """Batch mean of −ELBO using the reparameterisation z = μ + σ·noise."""
        yt = Tensor(y)
        mu, logvar = self.encode(yt)
        z = mu + (logvar * 0.5).exp() * Tensor(noise)
        recon = self.decode(z)
        nll = (recon - yt).square().sum(axis=1) * 0.5 + 0.5 * self.input_dim * LOG_2PI
        kl = (logvar.exp() + mu.square() - logvar - 1.0).sum(axis=1) * 0.5
        return (nll + kl).mean()


def _kl_to_prior(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.exp(logvar) + mu ** 2 - logvar - 1.0, axis=-1)


def _recon_loglik(y: np.ndarray, recon: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum((y - recon) ** 2, axis=-1) - 0.5 * y.shape[-1] * LOG_2PI


def fit(vae: DensityVae, conditions: np.ndarray, config: VaeConfig, rng: np.random.Generator) -> list[float]:
    """Maximise the ELBO with Adam; returns the mean-ELBO trace (one per epoch)."""
    y = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if y.shape[0] < 2:
        raise ValueError("fitting the density model needs at least 2 embeddings")
    if y.shape[1] != vae.input_dim:
        raise ValueError(f"expected {vae.input_dim}-dim embeddings, got {y.shape[1]}")
    params = vae.parameters()
    opt = Optimizer(OptimizerConfig(lr=config.lr, method="adam"))
    batch = config.batch_size or y.shape[0]
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(y.shape[0])
        epoch_loss = []
        for start in range(0, y.shape[0], batch):
            rows = y[order[start:start + batch]]
            loss = vae.negative_elbo(rows, rng.standard_normal((rows.shape[0], vae.latent_dim)))
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite VAE loss at epoch {epoch}")
            opt.step(params, backward(loss, params))
            epoch_loss.append(value * rows.shape[0])
        trace.append(-sum(epoch_loss) / y.shape[0])
    return trace


def elbo_samples(vae: DensityVae, y: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n single-sample reparameterised ELBO estimates for one embedding."""
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    with no_grad():
        mu, logvar = vae.encode(Tensor(y))
        mu, logvar = mu.data, logvar.data
        z = mu + np.exp(0.5 * logvar) * rng.standard_normal((n, vae.latent_dim))
        recon = vae.decode(Tensor(z)).data
    return _recon_loglik(y, recon) - _kl_to_prior(mu, logvar)[0]


def elbo(vae: DensityVae, y: np.ndarray, mode: str = "deterministic", n: int = 1000,
         rng: np.random.Generator | None = None) -> np.ndarray | float:
    """ELBO of one embedding (float) or of each row of a batch (array).

    ``mode="deterministic"`` decodes the latent mean; ``mode="mc"`` averages
    `n` reparameterised samples (single embedding only).
    """
    y = np.asarray(y, dtype=np.float64)
    if mode == "mc":
        if rng is None:
            raise ValueError("mc mode needs an rng")
        return float(np.mean(elbo_samples(vae, y, n, rng)))
    if mode != "deterministic":
        raise ValueError(f"unknown ELBO mode {mode!r}")
    batch = np.atleast_2d(y)
    with no_grad():
        mu, logvar = vae.encode(Tensor(batch))
        recon = vae.decode(mu).data
    values = _recon_loglik(batch, recon) - _kl_to_prior(mu.data, logvar.data)
    return float(values[0]) if y.ndim == 1 else values


@dataclass(frozen=True)
class PsiWeight:
    psi: float
    img_factor: float
    density_factor: float
    neighbor_id: object = None
    clamped: bool = False


def psi_weight(s: float, same_identity: bool, elbo_y: float, a1: float = 1.0, a2: float = 1.0,
               a3: float = 1.0, psi_max: float = 100.0, neighbor_id=None) -> PsiWeight:
    """ψ = max(0, s)^(a1 + a2·[different id]) · e^(−ELBO(y)) / a3, capped at `psi_max`."""
    if a3 <= 0:
        raise ValueError("a3 must be positive")
    img = img_similarity(s, same_identity, a1, a2)
    clamped = False
    try:
        density = math.exp(-elbo_y) / a3
    except OverflowError:
        density = math.inf
    psi = img * density if img > 0.0 else 0.0
    if psi > psi_max:
        psi, clamped = psi_max, True
    if math.isinf(density):
        clamped = True
    return PsiWeight(psi, img, density, neighbor_id, clamped)


def dump_elbo_table(path: str | Path, ids: Sequence, identities: Sequence, elbos: np.ndarray,
                    a3: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "identity", "elbo", "inv_density"])
        for sid, ident, e in zip(ids, identities, elbos):
            try:
                inv = math.exp(-e) / a3
            except OverflowError:
                inv = math.inf
            w.writerow([sid, ident, f"{e:.17g}", f"{inv:.17g}"])
