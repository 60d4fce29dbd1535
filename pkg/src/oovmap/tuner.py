"""Grid search over (alpha, l1, l2) for the mapper."""
from __future__ import annotations

import dataclasses
import logging
import math
import re
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .mapper import MapperModel, TrainingPairs, forward, pair_loss, save_checkpoint
from .pipeline import MapperHyperParams, train_mapper

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_LAMBDAS = tuple(10.0 ** -i for i in range(1, 10)) + (0.0,)

Metric = Callable[[MapperModel], float]


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    l1s: tuple[float, ...] = DEFAULT_LAMBDAS
    l2s: tuple[float, ...] = DEFAULT_LAMBDAS

    def __post_init__(self):
        for name in ("alphas", "l1s", "l2s"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ValueError("alpha values must lie in [0,1]")
        if any(v < 0 for v in self.l1s + self.l2s):
            raise ValueError("lambda values must be non-negative")

    def points(self) -> list[tuple[float, float, float]]:
        """Alpha outermost, then l1, then l2."""
        return [(a, l1, l2) for a in self.alphas for l1 in self.l1s for l2 in self.l2s]

    def __len__(self) -> int:
        return len(self.alphas) * len(self.l1s) * len(self.l2s)


@dataclass
class TuneResult:
    best: MapperHyperParams
    best_metric: float
    table: list[tuple[float, float, float, float]] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["alpha\tl1\tl2\tmetric"]
        for a, l1, l2, m in self.table:
            lines.append(f"{a!r}\t{l1!r}\t{l2!r}\t{m!r}")
        return "\n".join(lines) + "\n"


def split_pairs(pairs: TrainingPairs, heldout: float = 0.1, seed: int = 0):
    """Seeded (train, dev) split of word pairs."""
    if len(pairs) < 2:
        raise ValueError("need at least two pairs to split")
    perm = np.random.default_rng(seed).permutation(len(pairs))
    n_dev = min(max(int(round(heldout * len(pairs))), 1), len(pairs) - 1)
    return pairs.take(np.sort(perm[n_dev:])), pairs.take(np.sort(perm[:n_dev]))


def heldout_loss(model: MapperModel, dev: TrainingPairs, alpha: float = 0.5) -> float:
    """Mean multi-loss per dev pair."""
    pred = forward(model, dev.inputs)
    return float(np.mean([pair_loss(t, p, alpha) for t, p in zip(dev.targets, pred)]))


def heldout_metric(dev: TrainingPairs, alpha: float = 0.5) -> Metric:
    """Negative held-out multi-loss (higher is better)."""
    return lambda model: -heldout_loss(model, dev, alpha)


def external_metric(command: str, pattern: str = r"UAS\s*[:=]?\s*([0-9.]+)") -> Metric:
    """Metric that runs ``command`` on a checkpoint and parses a score from stdout.

    ``{checkpoint}`` in the command is replaced by the path of a temporary
    checkpoint of the candidate mapper; the first capture group of
    ``pattern`` is the score.
    """
    regex = re.compile(pattern)

    def metric(model: MapperModel) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            ckpt = Path(tmp) / "mapper.json"
            save_checkpoint(model, ckpt)
            argv = [a.replace("{checkpoint}", str(ckpt)) for a in shlex.split(command)]
            proc = subprocess.run(argv, capture_output=True, text=True, check=True)
        m = regex.search(proc.stdout)
        if m is None:
            raise RuntimeError(f"metric command output has no match for {pattern!r}")
        return float(m.group(1))

    return metric


def grid_search(
    train: TrainingPairs,
    metric: Metric,
    grid: GridSpec,
    base: MapperHyperParams,
    subsample: int | None = None,
    workers: int = 1,
) -> TuneResult:
    """Train one mapper per grid point and keep the best by ``metric``.

    Every point uses the same seed and init. A point whose training or
    scoring fails scores -inf. ``subsample`` evaluates a seeded random
    subset of the grid (kept in grid order). Ties go to the earliest point.
    """
    points = grid.points()
    if subsample is not None and subsample < len(points):
        keep = np.sort(np.random.default_rng(base.seed).choice(len(points), subsample, replace=False))
        points = [points[i] for i in keep]

    def run(point):
        a, l1, l2 = point
        hyper = dataclasses.replace(base, alpha=a, l1=l1, l2=l2, workers=1)
        try:
            value = float(metric(train_mapper(train, hyper)))
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the search
            log.warning("grid point alpha=%g l1=%g l2=%g failed: %s", a, l1, l2, exc)
            return -math.inf
        return value if not math.isnan(value) else -math.inf

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(run, points))
    else:
        scores = [run(p) for p in points]
    if all(s == -math.inf for s in scores):
        raise RuntimeError("every grid point failed")
    best_i = max(range(len(points)), key=lambda i: (scores[i], -i))
    a, l1, l2 = points[best_i]
    return TuneResult(
        best=dataclasses.replace(base, alpha=a, l1=l1, l2=l2),
        best_metric=scores[best_i],
        table=[(*p, s) for p, s in zip(points, scores)],
    )

