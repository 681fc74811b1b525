"""Imbalanced identity datasets with a ground-truth identity oracle."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = ["IdentitySpec", "Dataset", "generate", "identity_of", "read_csv", "draw_centers"]

CONDITION_JITTER = 0.1
MIN_CENTER_SEPARATION = 4.0


@dataclass(frozen=True)
class IdentitySpec:
    identity: str
    count: int
    spread: float = 0.3
    data_center: tuple[float, ...] | None = None
    condition_center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"identity {self.identity!r}: count must be >= 2")
        if self.spread < 0:
            raise ValueError(f"identity {self.identity!r}: spread must be non-negative")


@dataclass(frozen=True)
class Dataset:
    ids: np.ndarray
    identities: np.ndarray
    x0: np.ndarray
    y: np.ndarray
    # generating distribution per identity: (data center, spread); absent when read back from CSV
    sources: dict[str, tuple[np.ndarray, float]] | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def data_dim(self) -> int:
        return self.x0.shape[1]

    @property
    def cond_dim(self) -> int:
        return self.y.shape[1]

    def labels(self) -> list[str]:
        """Identity labels in first-appearance order."""
        return list(dict.fromkeys(self.identities.tolist()))

    def counts(self) -> dict[str, int]:
        return {lab: int(np.sum(self.identities == lab)) for lab in self.labels()}

    def imbalance_ratio(self) -> float:
        c = self.counts().values()
        return max(c) / min(c)

    def members(self, identity: str) -> np.ndarray:
        return np.flatnonzero(self.identities == identity)

    def position(self, sample_id) -> int:
        hits = np.flatnonzero(self.ids == sample_id)
        if hits.size == 0:
            raise KeyError(f"unknown sample id {sample_id!r}")
        return int(hits[0])

    def reference_set(self, identity: str, n: int, rng: np.random.Generator) -> np.ndarray:
        """Fresh draws from an identity's data distribution (training points if unknown)."""
        if self.sources is None:
            return self.x0[self.members(identity)]
        center, spread = self.sources[identity]
        return center + spread * rng.standard_normal((n, self.data_dim))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "identity"] + [f"x_{i}" for i in range(self.data_dim)]
                       + [f"y_{i}" for i in range(self.cond_dim)])
            for sid, ident, x, y in zip(self.ids, self.identities, self.x0, self.y):
                w.writerow([sid, ident] + [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in y])


def read_csv(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    ys = [i for i, h in enumerate(header) if h.startswith("y_")]
    return Dataset(
        np.array([int(r[0]) for r in body]),
        np.array([r[1] for r in body]),
        np.array([[float(r[i]) for i in xs] for r in body]).reshape(len(body), len(xs)),
        np.array([[float(r[i]) for i in ys] for r in body]).reshape(len(body), len(ys)),
    )


def draw_centers(n: int, dim: int, spread: float, scale: float, rng: np.random.Generator,
                 max_tries: int = 10_000) -> np.ndarray:
    """n centers from N(0, scale²I), redrawn until pairwise distance >= 4·spread."""
    for _ in range(max_tries):
        c = rng.normal(0.0, scale, size=(n, dim))
        if n < 2:
            return c
        d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        if np.min(d[np.triu_indices(n, 1)]) >= MIN_CENTER_SEPARATION * spread:
            return c
    raise RuntimeError("could not draw well-separated centers; increase scale")


def generate(specs: Sequence[IdentitySpec], data_dim: int = 2, cond_dim: int = 4, seed: int = 0,
             center_scale: float = 2.0) -> Dataset:
    """Sample every identity's points around its data/condition centers.

    Centers left as ``None`` in a spec are drawn from the seeded stream.
    """
    if not specs:
        raise ValueError("need at least one identity spec")
    if data_dim < 1 or cond_dim < 1:
        raise ValueError("dimensions must be >= 1")
    names = [s.identity for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate identity ids in {names}")
    rng = np.random.default_rng(seed)
    max_spread = max(s.spread for s in specs)
    data_c = draw_centers(len(specs), data_dim, max_spread, center_scale, rng)
    cond_c = draw_centers(len(specs), cond_dim, max_spread, center_scale, rng)
    xs, ys, labels = [], [], []
    sources = {}
    for i, spec in enumerate(specs):
        dc = np.asarray(spec.data_center if spec.data_center is not None else data_c[i], dtype=np.float64)
        cc = np.asarray(spec.condition_center if spec.condition_center is not None else cond_c[i],
                        dtype=np.float64)
        if dc.shape != (data_dim,) or cc.shape != (cond_dim,):
            raise ValueError(f"identity {spec.identity!r}: center dimension mismatch")
        xs.append(dc + spec.spread * rng.standard_normal((spec.count, data_dim)))
        ys.append(cc + CONDITION_JITTER * spec.spread * rng.standard_normal((spec.count, cond_dim)))
        labels += [spec.identity] * spec.count
        sources[spec.identity] = (dc, float(spec.spread))
    n = len(labels)
    return Dataset(np.arange(n), np.array(labels), np.concatenate(xs), np.concatenate(ys), sources)


def identity_of(dataset: Dataset, sample_id) -> str:
    return str(dataset.identities[dataset.position(sample_id)])
