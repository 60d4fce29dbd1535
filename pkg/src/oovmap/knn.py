"""k-nearest-neighbor "artificial refinement" baseline.

An unseen word is moved by the shifts its nearest refined neighbors
underwent, each weighted by its cosine similarity to the word in the
original space::

    refined(t) = orig(t) + sum_k cos(t, n_k) * (refined(n_k) - orig(n_k))

The weights are not normalized, so with K neighbors the total weight can
reach K. ``normalize=True`` divides by the sum of absolute weights instead.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .embeddings import EmbeddingTable, cosine_to_rows
from .pipeline import UNK, MappingReport, merge_tables

log = logging.getLogger(__name__)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(u @ v) / (nu * nv)))


@dataclass(frozen=True)
class RefinementConfig:
    k: int = 3
    pool: tuple[str, ...] = ()
    normalize: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "pool", tuple(self.pool))


class KnnRefiner:
    """Precomputed neighbor pool for refining many targets."""

    def __init__(self, original: EmbeddingTable, refined: EmbeddingTable, config: RefinementConfig):
        if original.dim != refined.dim:
            raise ValueError("original and refined spaces must share dimensionality")
        pool = [w for w in config.pool if w in original and w in refined]
        if len(pool) != len(config.pool):
            raise ValueError("neighbor pool must be a subset of both tables")
        if not pool:
            raise ValueError("neighbor pool is empty")
        if len(pool) < config.k:
            log.warning("pool has %d words, fewer than k=%d; using all", len(pool), config.k)
        # sorted pool: a stable sort on -similarity then breaks ties by word
        self.pool = sorted(pool)
        self.k = min(config.k, len(pool))
        self.normalize = config.normalize
        self.original = original
        self._orig = np.stack([original[w] for w in self.pool])
        self._shift = np.stack([refined[w] for w in self.pool]) - self._orig

    def neighbors(self, vec) -> tuple[np.ndarray, np.ndarray]:
        """Indices into ``self.pool`` and cosines of the k nearest words."""
        sims = cosine_to_rows(self._orig, vec)
        order = np.argsort(-sims, kind="stable")[: self.k]
        return order, sims[order]

    def refine_vector(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        idx, weights = self.neighbors(vec)
        if self.normalize:
            total = float(np.sum(np.abs(weights)))
            weights = weights / total if total > 0 else weights
        return vec + weights @ self._shift[idx]

    def refine(self, target: str) -> np.ndarray:
        if target not in self.original:
            raise KeyError(f"target {target!r} has no original embedding")
        return self.refine_vector(self.original[target])

    def refine_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            return np.zeros((0, self._orig.shape[1]))
        return np.stack([self.refine_vector(x) for x in X])


def knn_refine(
    target: str,
    original: EmbeddingTable,
    refined: EmbeddingTable,
    config: RefinementConfig,
) -> np.ndarray:
    """Refined vector for one ``target`` word."""
    return KnnRefiner(original, refined, config).refine(target)


def knn_merge(
    initial: EmbeddingTable,
    trained: EmbeddingTable,
    counts: Mapping[str, int],
    tau_t,
    tau_m,
    k: int = 3,
    eval_vocab: Iterable[str] | None = None,
    normalize: bool = False,
    unk: str = UNK,
) -> tuple[EmbeddingTable, MappingReport]:
    """Merged table like ``apply_mapping`` but with k-NN refinement.

    The neighbor pool is the mapper's training set: words in both tables
    with count at least ``tau_t``.
    """
    pool = [w for w in trained.words
            if w != unk and w in initial and counts.get(w, 0) >= tau_t]
    refiner = KnnRefiner(initial, trained, RefinementConfig(k=k, pool=pool, normalize=normalize))
    merged, report = merge_tables(
        refiner.refine_batch, initial, trained, counts, tau_m, eval_vocab, unk,
        out_dim=trained.dim,
    )
    report.config.update(
        method="knn", k=k, normalize=normalize,
        tau_t="inf" if tau_t == math.inf else tau_t,
        tau_m="inf" if tau_m == math.inf else tau_m,
    )
    return merged, report
