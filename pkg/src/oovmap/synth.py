"""Seeded synthetic (initial, task-trained) pairs from known transforms.

Used as ground truth for mapper recovery and method-comparison checks, and
to drive the CLI end to end without licensed corpora.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable, VocabCounts, save_counts, save_embeddings
from .mapper import TrainingPairs

TRANSFORMS = ("identity", "linear", "affine", "saturating")


@dataclass(frozen=True)
class Transform:
    """Ground-truth map ``x -> A @ f(B @ x) + c``.

    ``f`` is tanh for the saturating family and the identity otherwise
    (with ``B`` = I).
    """

    kind: str
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "identity":
            return X.copy()
        inner = X @ self.B.T
        if self.kind == "saturating":
            inner = np.tanh(inner)
        return inner @ self.A.T + self.c


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_pairs: int = 1000
    dim: int = 10
    transform: str = "saturating"
    noise: float = 0.0
    split: float = 0.9
    A: np.ndarray | None = field(default=None, compare=False)
    hidden: int | None = None  # tanh layer width; defaults to ceil(dim / 2)

    def __post_init__(self):
        if self.n_pairs < 2:
            raise ValueError("n_pairs must be >= 2")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")


def make_transform(spec: SynthSpec, rng: np.random.Generator) -> Transform:
    d = spec.dim
    eye = np.eye(d)
    zeros = np.zeros(d)
    if spec.transform == "identity":
        return Transform("identity", eye, eye, zeros)
    if spec.transform == "saturating":
        # narrower than the input so a few dozen hardtanh units can
        # approximate each tanh unit closely
        k = spec.hidden or (d + 1) // 2
        B = rng.normal(0.0, 1.5 / np.sqrt(d), size=(k, d))
        A = rng.normal(0.0, 1.0 / np.sqrt(k), size=(d, k)) if spec.A is None else np.asarray(spec.A, float)
        c = rng.normal(0.0, 0.1, size=d)
        return Transform("saturating", A, B, c)
    A = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)) if spec.A is None else np.asarray(spec.A, float)
    c = rng.normal(0.0, 0.1, size=d) if spec.transform == "affine" else zeros
    return Transform(spec.transform, A, eye, c)


def _words(n: int) -> list[str]:
    return [f"w{i:06d}" for i in range(1, n + 1)]


def generate(spec: SynthSpec) -> tuple[TrainingPairs, TrainingPairs, Transform]:
    """Draw inputs from U(-1, 1), apply the transform, add N(0, noise^2).

    Returns ``(train, heldout, transform)``; the split is a seeded permutation
    so the two partitions are disjoint.
    """
    rng = np.random.default_rng(spec.seed)
    transform = make_transform(spec, rng)
    X = rng.uniform(-1.0, 1.0, size=(spec.n_pairs, spec.dim))
    Y = transform(X)
    if spec.noise > 0:
        Y = Y + rng.normal(0.0, spec.noise, size=Y.shape)
    words = _words(spec.n_pairs)
    order = rng.permutation(spec.n_pairs)
    n_train = min(max(int(round(spec.split * spec.n_pairs)), 1), spec.n_pairs - 1)
    tr, ho = np.sort(order[:n_train]), np.sort(order[n_train:])
    pairs = TrainingPairs(tuple(words), X, Y)
    return pairs.take(tr), pairs.take(ho), transform


def dump(spec: SynthSpec, prefix: str | Path) -> dict[str, Path]:
    """Write a synthetic workspace for the CLI.

    * ``<prefix>.initial.vec``: initial vectors for every word
    * ``<prefix>.trained.vec``: task-trained vectors for training words only
    * ``<prefix>.counts``: training-corpus counts (held-out words are unseen)
    * ``<prefix>.gold.conll`` / ``<prefix>.pred.conll``: a small treebank over
      the same vocabulary, with a deterministic corruption of the heads

    The held-out words play the role of out-of-training-vocabulary words.
    """
    train, heldout, _ = generate(spec)
    rng = np.random.default_rng([spec.seed, 1])
    prefix = str(prefix)
    paths = {
        "initial": Path(prefix + ".initial.vec"),
        "trained": Path(prefix + ".trained.vec"),
        "counts": Path(prefix + ".counts"),
        "gold": Path(prefix + ".gold.conll"),
        "pred": Path(prefix + ".pred.conll"),
    }
    all_words = sorted(train.words + heldout.words)
    vec = {w: v for w, v in zip(train.words, train.inputs)}
    vec.update(zip(heldout.words, heldout.inputs))
    save_embeddings(EmbeddingTable(all_words, [vec[w] for w in all_words]), paths["initial"])
    save_embeddings(EmbeddingTable(train.words, train.targets), paths["trained"])
    counts = VocabCounts({w: int(c) for w, c in zip(train.words, rng.integers(1, 12, len(train)))})
    save_counts(counts, paths["counts"])
    _write_treebank(rng, train.words, heldout.words, paths["gold"], paths["pred"])
    return paths


_LABELS = ("nsubj", "obj", "amod", "det", "advmod", "punct")


def _write_treebank(rng, seen, unseen, gold_path, pred_path, n_sent: int = 40):
    seen, unseen = list(seen), list(unseen)
    with open(gold_path, "w", encoding="utf-8", newline="\n") as g, \
            open(pred_path, "w", encoding="utf-8", newline="\n") as p:
        for _ in range(n_sent):
            length = int(rng.integers(2, 9))
            pool = seen if (rng.random() < 0.7 or not unseen) else unseen
            forms = [pool[int(rng.integers(len(pool)))] for _ in range(length)]
            root = int(rng.integers(1, length + 1))
            for i, form in enumerate(forms, start=1):
                head = 0 if i == root else root
                label = "root" if head == 0 else _LABELS[int(rng.integers(len(_LABELS)))]
                p_head, p_label = head, label
                if head != 0 and rng.random() < 0.2:
                    p_head = next(j for j in range(1, length + 1) if j not in (i, head)) \
                        if length > 2 else head
                if rng.random() < 0.1:
                    p_label = _LABELS[int(rng.integers(len(_LABELS)))]
                g.write(f"{i}\t{form}\t_\t_\tNN\t_\t{head}\t{label}\t_\t_\n")
                p.write(f"{i}\t{form}\t_\t_\tNN\t_\t{p_head}\t{p_label}\t_\t_\n")
            g.write("\n")
            p.write("\n")
