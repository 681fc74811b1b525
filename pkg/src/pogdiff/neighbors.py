"""Cosine-similarity kNN index, categorical neighbor sampling and image similarity."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "EmbeddingIndex",
    "NeighborDraw",
    "build_index",
    "cosine_matrix",
    "neighbor_weights",
    "sample_neighbor",
    "img_similarity",
    "identity_embedder",
]


def identity_embedder(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows of `a` and rows of `b`."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm embedding has no cosine similarity")
    sim = (a / na[:, None]) @ (b / nb[:, None]).T
    return np.clip(sim, -1.0, 1.0)


@dataclass(frozen=True)
class EmbeddingIndex:
    """Frozen kNN table. Row ``i`` of `neighbors` lists sample ``i``'s k best
    matches (self excluded) in descending similarity, ties broken by id."""

    ids: np.ndarray
    identities: np.ndarray
    embeddings: np.ndarray
    conditions: np.ndarray
    k: int
    neighbors: np.ndarray
    similarities: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, sample_id) -> int:
        hits = np.flatnonzero(self.ids == sample_id)
        if hits.size == 0:
            raise KeyError(f"sample {sample_id!r} not in index")
        return int(hits[0])

    def weights(self, sample_id) -> np.ndarray:
        return neighbor_weights(self.similarities[self.position(sample_id)])

    def dump_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["query_id", "neighbor_id", "s", "w"])
            for i, qid in enumerate(self.ids):
                weights = neighbor_weights(self.similarities[i])
                for j, s, wt in zip(self.neighbors[i], self.similarities[i], weights):
                    w.writerow([qid, self.ids[j], f"{s:.17g}", f"{wt:.17g}"])


def build_index(ids: Sequence, identities: Sequence, data: np.ndarray, conditions: np.ndarray,
                k: int = 5, embedder: Callable[[np.ndarray], np.ndarray] = identity_embedder) -> EmbeddingIndex:
    """Embed every sample and cache its k nearest neighbours by cosine similarity."""
    ids = np.asarray(ids)
    n = len(ids)
    if n < 2:
        raise ValueError("an index needs at least 2 samples")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}, got {k}")
    z = np.atleast_2d(np.asarray(embedder(np.asarray(data, dtype=np.float64)), dtype=np.float64))
    if z.shape[0] != n:
        raise ValueError("embedder must return one row per sample")
    sim = cosine_matrix(z, z)
    np.fill_diagonal(sim, -np.inf)
    # stable sort on -sim keeps ascending id order among ties
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(sim, order, axis=1)
    return EmbeddingIndex(ids, np.asarray(identities), z, np.asarray(conditions, dtype=np.float64), k,
                          order, top)


def neighbor_weights(similarities: np.ndarray) -> np.ndarray:
    """w_j = s_j / Σ s_j over positive similarities; uniform if none is positive."""
    s = np.asarray(similarities, dtype=np.float64)
    pos = np.where(s > 0.0, s, 0.0)
    total = pos.sum()
    if total <= 0.0:
        return np.full(s.shape, 1.0 / s.size)
    return pos / total


@dataclass(frozen=True)
class NeighborDraw:
    neighbor_id: object
    position: int
    s: float
    w: float
    same_identity: bool


def sample_neighbor(index: EmbeddingIndex, query_id, rng: np.random.Generator) -> NeighborDraw:
    i = index.position(query_id)
    w = neighbor_weights(index.similarities[i])
    j = int(rng.choice(index.k, p=w))
    pos = int(index.neighbors[i, j])
    return NeighborDraw(index.ids[pos], pos, float(index.similarities[i, j]), float(w[j]),
                        bool(index.identities[pos] == index.identities[i]))


def img_similarity(s: float, same_identity: bool, a1: float = 1.0, a2: float = 1.0) -> float:
    """max(0, s)^(a1 + a2·[different identity])."""
    if a1 <= 0 or a2 <= 0:
        raise ValueError("a1 and a2 must be positive")
    base = min(max(float(s), 0.0), 1.0)
    return base ** (a1 + (0.0 if same_identity else a2))
