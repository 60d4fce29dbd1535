"""One-hidden-layer hardtanh mapper, its multi-loss and elastic-net objective.

Parameters are flattened in a fixed order so checkpoints are portable::

    theta = [W1 (h x d, row-major), b1 (h), W2 (n x h, row-major), b2 (n)]
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FLAT_ORDER = "W1:row-major,b1,W2:row-major,b2"
CHECKPOINT_FORMAT = "oovmap-mapper/1"

# Pairs per reduction block; fixed so results do not depend on worker count.
BLOCK_SIZE = 256


class NumericalError(ArithmeticError):
    """A non-finite value appeared during evaluation or training."""


def hardtanh(z):
    """Clip componentwise to [-1, 1]."""
    return np.clip(np.asarray(z, dtype=np.float64), -1.0, 1.0)


@dataclass(frozen=True)
class MapperModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        h, d = self.W1.shape
        n, h2 = self.W2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (n,):
            raise ValueError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"non-finite values in {name}")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.in_dim, self.hidden_dim, self.out_dim

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2]
        ).astype(np.float64)

    @classmethod
    def unpack(cls, theta, d: int, h: int, n: int) -> "MapperModel":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n_params(d, h, n),):
            raise ValueError(
                f"theta has length {theta.size}, expected {n_params(d, h, n)} for dims {(d, h, n)}"
            )
        W1, b1, W2, b2 = _split(theta, d, h, n)
        return cls(W1.copy(), b1.copy(), W2.copy(), b2.copy())

    @classmethod
    def zeros(cls, d: int, h: int, n: int) -> "MapperModel":
        return cls.unpack(np.zeros(n_params(d, h, n)), d, h, n)


def n_params(d: int, h: int, n: int) -> int:
    return h * d + h + n * h + n


def _split(theta: np.ndarray, d: int, h: int, n: int):
    i = 0
    W1 = theta[i:i + h * d].reshape(h, d)
    i += h * d
    b1 = theta[i:i + h]
    i += h
    W2 = theta[i:i + n * h].reshape(n, h)
    i += n * h
    b2 = theta[i:i + n]
    return W1, b1, W2, b2


def forward(model: MapperModel, x) -> np.ndarray:
    """Map one vector (shape ``(d,)``) or a batch (shape ``(N, d)``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (model.in_dim,) or x.ndim > 2:
        raise ValueError(f"input shape {x.shape} does not match in_dim {model.in_dim}")
    hidden = hardtanh(x @ model.W1.T + model.b1)
    return hidden @ model.W2.T + model.b2


def forward_blocked(model: MapperModel, X: np.ndarray, workers: int = 1) -> np.ndarray:
    """Batch forward over fixed-size row blocks; output independent of ``workers``."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros((0, model.out_dim))
    blocks = [X[i:i + BLOCK_SIZE] for i in range(0, len(X), BLOCK_SIZE)]
    fn = lambda B: forward(model, B)  # noqa: E731
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, blocks))
    else:
        parts = [fn(B) for B in blocks]
    return np.concatenate(parts, axis=0)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")


def pair_loss(y, y_hat, alpha: float) -> float:
    """alpha * sum|y - y_hat| + (1 - alpha) * sum (y - y_hat)^2, summed over dimensions."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    r = y - y_hat
    return float(alpha * np.sum(np.abs(r)) + (1.0 - alpha) * np.sum(r * r))


@dataclass(frozen=True)
class TrainingPairs:
    """Parallel (initial, task-trained) vectors with their word identities."""

    words: tuple[str, ...]
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "words", tuple(self.words))
        if inputs.ndim != 2 or targets.ndim != 2:
            raise ValueError("inputs and targets must be 2-D arrays")
        if not (len(self.words) == len(inputs) == len(targets)):
            raise ValueError("words, inputs and targets must have equal length")
        if len(inputs) < 1:
            raise ValueError("training pairs must be non-empty")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("training vectors must be finite")

    def __len__(self) -> int:
        return len(self.words)

    @property
    def in_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def out_dim(self) -> int:
        return self.targets.shape[1]

    def take(self, idx: Sequence[int]) -> "TrainingPairs":
        idx = np.asarray(idx, dtype=np.intp)
        return TrainingPairs(
            tuple(self.words[i] for i in idx), self.inputs[idx], self.targets[idx]
        )


def _block_loss_grad(W1, b1, W2, b2, X, T, alpha):
    Z = X @ W1.T + b1
    H = np.clip(Z, -1.0, 1.0)
    R = H @ W2.T + b2 - T
    loss = alpha * np.sum(np.abs(R)) + (1.0 - alpha) * np.sum(R * R)
    G = alpha * np.sign(R) + (2.0 * (1.0 - alpha)) * R
    gW2 = G.T @ H
    gb2 = G.sum(axis=0)
    # hardtanh' = 1 on the closed interval [-1, 1]
    dZ = (G @ W2) * (np.abs(Z) <= 1.0)
    gW1 = dZ.T @ X
    gb1 = dZ.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def _tree_sum(parts: list):
    """Pairwise reduction in a fixed order."""
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def data_loss_grad(theta, data: TrainingPairs, alpha: float, hidden: int, workers: int = 1):
    """Summed multi-loss over all pairs and its gradient w.r.t. ``theta``."""
    _check_alpha(alpha)
    d, n = data.in_dim, data.out_dim
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (n_params(d, hidden, n),):
        raise ValueError(f"theta length {theta.size} does not match dims {(d, hidden, n)}")
    W1, b1, W2, b2 = _split(theta, d, hidden, n)
    N = len(data)
    spans = [(i, min(i + BLOCK_SIZE, N)) for i in range(0, N, BLOCK_SIZE)]

    def block(span):
        a, b = span
        return _block_loss_grad(W1, b1, W2, b2, data.inputs[a:b], data.targets[a:b], alpha)

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(block, spans))
    else:
        results = [block(s) for s in spans]
    loss = _tree_sum([r[0] for r in results])
    grad = _tree_sum([r[1] for r in results])
    return float(loss), grad


_BLOCK_NAMES = ("W1", "b1", "W2", "b2")


def _name_nonfinite_block(vec: np.ndarray, d: int, h: int, n: int) -> str:
    for name, part in zip(_BLOCK_NAMES, _split(vec, d, h, n)):
        if not np.all(np.isfinite(part)):
            return name
    return "loss"


def objective(
    theta,
    data: TrainingPairs,
    alpha: float,
    l1: float,
    l2: float,
    hidden: int,
    workers: int = 1,
):
    """Elastic-net objective and its (sub)gradient.

    ``F(theta) = sum_i loss(t_i, G(x_i)) + l1 * |theta|_1 + l2 / 2 * |theta|_2^2``

    Subgradient conventions: sign(0) = 0 for every absolute value.
    """
    if l1 < 0 or l2 < 0:
        raise ValueError("regularization weights must be non-negative")
    theta = np.asarray(theta, dtype=np.float64)
    d, n = data.in_dim, data.out_dim
    if not np.all(np.isfinite(theta)):
        raise NumericalError(
            f"non-finite parameters in block {_name_nonfinite_block(theta, d, hidden, n)}"
        )
    loss, grad = data_loss_grad(theta, data, alpha, hidden, workers)
    value = loss + l1 * float(np.sum(np.abs(theta))) + 0.5 * l2 * float(theta @ theta)
    grad = grad + l1 * np.sign(theta) + l2 * theta
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericalError(
            f"non-finite objective in block {_name_nonfinite_block(grad, d, hidden, n)}"
        )
    return value, grad


def _numeric_grad(f, theta: np.ndarray, step: float) -> np.ndarray:
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += step
        tm[j] -= step
        g[j] = (f(tp) - f(tm)) / (2.0 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _safe_theta(rng, data, d, h, n, margin, avoid_zero, max_tries=1000):
    for _ in range(max_tries):
        size = n_params(d, h, n)
        mag = rng.uniform(0.1, 1.0, size) if avoid_zero else rng.uniform(0.0, 1.0, size)
        theta = mag * rng.choice([-1.0, 1.0], size)
        W1, b1, W2, b2 = _split(theta, d, h, n)
        Z = data.inputs @ W1.T + b1
        R = np.clip(Z, -1, 1) @ W2.T + b2 - data.targets
        if np.all(np.abs(np.abs(Z) - 1.0) >= margin) and np.all(np.abs(R) >= margin):
            return theta
    raise RuntimeError("could not draw a differentiable test point")


def gradient_check(
    dims: tuple[int, int, int],
    data: TrainingPairs,
    alpha: float,
    l1: float,
    l2: float,
    seed: int,
    step: float = 1e-5,
    margin: float = 1e-3,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The test point keeps pre-activations ``margin`` away from +-1, residuals
    ``margin`` away from 0 and (when ``l1 > 0``) parameters away from 0, so
    the objective is differentiable in a neighbourhood wider than ``step``.
    """
    d, h, n = dims
    if (d, n) != (data.in_dim, data.out_dim):
        raise ValueError("dims do not match data")
    rng = np.random.default_rng(seed)
    theta = _safe_theta(rng, data, d, h, n, margin, avoid_zero=True)
    _, analytic = objective(theta, data, alpha, l1, l2, h)
    numeric = _numeric_grad(lambda t: objective(t, data, alpha, l1, l2, h)[0], theta, step)
    return float(np.max(relative_error(analytic, numeric)))


def save_checkpoint(model: MapperModel, path: str | Path, meta: dict | None = None) -> None:
    """Write dims, flattening tag and parameters as JSON.

    Floats go through ``repr`` so reading back is bit-exact.
    """
    d, h, n = model.dims
    doc = {
        "format": CHECKPOINT_FORMAT,
        "order": FLAT_ORDER,
        "in_dim": d,
        "hidden_dim": h,
        "out_dim": n,
        "theta": [float(x) for x in model.pack()],
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> MapperModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    if doc.get("order") != FLAT_ORDER:
        raise ValueError(f"{path}: unsupported parameter order {doc.get('order')!r}")
    return MapperModel.unpack(doc["theta"], doc["in_dim"], doc["hidden_dim"], doc["out_dim"])
