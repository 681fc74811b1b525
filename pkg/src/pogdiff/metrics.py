"""Generative recall (coverage of training images) and a Fréchet distance on small embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .neighbors import cosine_matrix

__all__ = ["IdentityCoverage", "CoverageReport", "GaussianFit", "coverage_match", "grecall", "gaussian_fit",
           "toy_fid", "FEW_SHOT_MAX"]

FEW_SHOT_MAX = 5
COV_EPS = 1e-8


@dataclass
class IdentityCoverage:
    training_ids: list
    covered: set
    n_generated: int
    n_correct: int

    @property
    def grecall(self) -> float:
        return len(self.covered) / len(self.training_ids)


@dataclass
class CoverageReport:
    per_identity: dict[str, IdentityCoverage]
    threshold: float

    @property
    def grecall(self) -> float:
        return grecall(self)

    def subset(self, identities: Sequence[str]) -> CoverageReport:
        return CoverageReport({k: self.per_identity[k] for k in identities}, self.threshold)


def coverage_match(generated: Mapping[str, np.ndarray], training: Mapping[str, tuple[Sequence, np.ndarray]],
                   threshold: float = 0.7) -> CoverageReport:
    """Mark generated samples correct and training samples covered.

    `generated[i]` holds embeddings generated for identity ``i``;
    `training[i]` is ``(sample ids, embeddings)`` of that identity's training
    set. A generated row is correct when its cosine similarity to at least one
    training row of its identity exceeds `threshold`; every such training row
    is covered, counted once.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    report = {}
    for identity, (ids, train_emb) in training.items():
        ids = list(ids)
        if len(ids) == 0:
            raise ValueError(f"identity {identity!r} has no training samples")
        gen = np.atleast_2d(np.asarray(generated.get(identity, np.empty((0, np.shape(train_emb)[1])))))
        covered: set = set()
        n_correct = 0
        if gen.shape[0]:
            hit = cosine_matrix(gen, train_emb) > threshold
            n_correct = int(np.sum(hit.any(axis=1)))
            covered = {ids[j] for j in np.flatnonzero(hit.any(axis=0))}
        report[identity] = IdentityCoverage(ids, covered, gen.shape[0], n_correct)
    return CoverageReport(report, threshold)


def grecall(report: CoverageReport) -> float:
    """Mean over identities of unique-covered / training count."""
    if not report.per_identity:
        raise ValueError("report covers no identities")
    return float(np.mean([c.grecall for c in report.per_identity.values()]))


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray


def gaussian_fit(points: np.ndarray) -> GaussianFit:
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} points to fit a {d}-dim covariance, got {n}")
    cov = np.cov(x, rowvar=False).reshape(d, d)
    cov = 0.5 * (cov + cov.T) + COV_EPS * np.eye(d)
    return GaussianFit(x.mean(axis=0), cov)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def toy_fid(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_aΣ_b)^½).

    The trace of (Σ_aΣ_b)^½ is taken from the eigenvalues of the symmetric
    ``Σ_a^½ Σ_b Σ_a^½``, which shares its spectrum with Σ_aΣ_b.
    """
    fa, fb = gaussian_fit(set_a), gaussian_fit(set_b)
    if fa.mean.shape != fb.mean.shape:
        raise ValueError("embedding dimensions differ")
    root_a = _psd_sqrt(fa.cov)
    inner = root_a @ fb.cov @ root_a
    eig = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))
    value = float(np.sum((fa.mean - fb.mean) ** 2) + np.trace(fa.cov) + np.trace(fb.cov) - 2.0 * tr_sqrt)
    return max(value, 0.0)
