"""Training loop for vanilla and PoGDiff objectives."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import backward
from .data import Dataset
from .density import PsiWeight, psi_weight
from .diffusion import NoiseSchedule, TrainBatch, pogdiff_loss, vanilla_loss
from .neighbors import EmbeddingIndex, neighbor_weights, sample_neighbor
from .nn import MlpDenoiser
from .optim import Optimizer, OptimizerConfig

__all__ = ["PsiParams", "NeighborPsiSource", "TrainConfig", "LossRecord", "train", "write_loss_trace"]


@dataclass
class PsiParams:
    k: int = 5
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0
    psi_max: float = 100.0


class NeighborPsiSource:
    """Draws (y', ψ) for a sample from the kNN index and a cached ELBO table.

    With no index (single-sample data) every sample is its own neighbour.
    """

    def __init__(self, dataset: Dataset, index: EmbeddingIndex | None, elbos: np.ndarray, params: PsiParams):
        if len(elbos) != len(dataset):
            raise ValueError("need one cached ELBO per sample")
        self.dataset = dataset
        self.index = index
        self.elbos = np.asarray(elbos, dtype=np.float64)
        self.params = params
        self.n_clamped = 0
        if index is not None:
            weights = np.array([neighbor_weights(row) for row in index.similarities])
            self._cum = np.cumsum(weights, axis=1)
            self._same = index.identities[index.neighbors] == index.identities[:, None]
        with np.errstate(over="ignore"):
            self._density = np.exp(-self.elbos) / params.a3

    def draw(self, pos: int, rng: np.random.Generator) -> tuple[int, PsiWeight]:
        p = self.params
        if self.index is None:
            j, s, same = pos, 1.0, True
        else:
            nd = sample_neighbor(self.index, self.dataset.ids[pos], rng)
            j, s, same = nd.position, nd.s, nd.same_identity
        w = psi_weight(s, same, float(self.elbos[pos]), p.a1, p.a2, p.a3, p.psi_max,
                       neighbor_id=self.dataset.ids[j])
        self.n_clamped += w.clamped
        return j, w

    def draw_batch(self, rows: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised `draw` for a batch: neighbour positions and ψ per row.

        One uniform per row picks the neighbour by inverse CDF over the row's
        weights; ψ follows the same formula and clamp as `psi_weight`.
        """
        p = self.params
        rows = np.asarray(rows)
        if self.index is None:
            j, s, same = rows, np.ones(len(rows)), np.ones(len(rows), dtype=bool)
        else:
            u = rng.random(len(rows))
            col = np.minimum(np.sum(self._cum[rows] < u[:, None], axis=1), self.index.k - 1)
            j = self.index.neighbors[rows, col]
            s = self.index.similarities[rows, col]
            same = self._same[rows, col]
        img = np.clip(s, 0.0, 1.0) ** (p.a1 + np.where(same, 0.0, p.a2))
        with np.errstate(invalid="ignore"):
            psi = np.where(img > 0.0, img * self._density[rows], 0.0)
        clamped = (psi > p.psi_max) | np.isinf(self._density[rows])
        self.n_clamped += int(np.sum(clamped))
        return j, np.minimum(psi, p.psi_max)


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 2e-3
    optimizer: str = "adam"
    stop_grad_neighbor: bool = False
    psi_override: float | None = None


@dataclass
class LossRecord:
    step: int
    term1: float
    term2: float
    psi_mean: float
    total: float


def train(model: MlpDenoiser, schedule: NoiseSchedule, dataset: Dataset, config: TrainConfig,
          batch_rng: np.random.Generator, neighbor_rng: np.random.Generator | None = None,
          psi_source: NeighborPsiSource | None = None, method: str = "pogdiff") -> list[LossRecord]:
    """Run `config.steps` optimiser steps in place on `model`.

    Per step: sample (x0, y) uniformly, t ~ U{1..T}, ε ~ N(0, I) from
    `batch_rng`; for PoGDiff draw (y', ψ) per row from `psi_source` using
    `neighbor_rng`. The streams are separate so the vanilla run consumes
    exactly the same batch randomness.
    """
    if method not in ("vanilla", "pogdiff"):
        raise ValueError(f"unknown method {method!r}")
    if method == "pogdiff" and (psi_source is None or neighbor_rng is None):
        raise ValueError("pogdiff training needs a psi source and a neighbor rng")
    params = model.parameters()
    opt = Optimizer(OptimizerConfig(lr=config.lr, method=config.optimizer))
    n = len(dataset)
    trace: list[LossRecord] = []
    for step in range(config.steps):
        rows = batch_rng.integers(0, n, size=config.batch_size)
        t = batch_rng.integers(1, schedule.T + 1, size=config.batch_size)
        eps = batch_rng.standard_normal((config.batch_size, dataset.data_dim))
        x0, y = dataset.x0[rows], dataset.y[rows]
        if method == "vanilla":
            batch = TrainBatch(x0, y, y, np.zeros(config.batch_size), t, eps)
            loss = vanilla_loss(model, schedule, batch)
            t1 = loss.item()
            record = LossRecord(step, t1, 0.0, 0.0, t1)
        else:
            nbr, psi = psi_source.draw_batch(rows, neighbor_rng)
            y_prime = dataset.y[nbr]
            if config.psi_override is not None:
                psi = np.full(config.batch_size, float(config.psi_override))
            batch = TrainBatch(x0, y, y_prime, psi, t, eps)
            terms = pogdiff_loss(model, schedule, batch, config.stop_grad_neighbor)
            loss = terms.total
            record = LossRecord(step, terms.term1, terms.term2, terms.psi_mean, loss.item())
        if not math.isfinite(record.total):
            raise FloatingPointError(f"non-finite loss at step {step}")
        opt.step(params, backward(loss, params))
        trace.append(record)
    return trace


def write_loss_trace(path: str | Path, trace: list[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "term1", "term2", "psi_mean", "total"])
        for r in trace:
            w.writerow([r.step, f"{r.term1:.17g}", f"{r.term2:.17g}", f"{r.psi_mean:.17g}", f"{r.total:.17g}"])
