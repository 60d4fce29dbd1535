"""Threshold-driven train/apply pipeline around the mapper."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, TextIO

import numpy as np

from .embeddings import EmbeddingTable
from .lbfgs import LbfgsConfig, OptimizeResult, minimize
from .mapper import (
    MapperModel,
    NumericalError,
    TrainingPairs,
    forward_blocked,
    n_params,
    objective,
)

UNK = "<UNK>"
INF = math.inf
INIT_MODES = ("fan_in", "uniform", "zero")


def parse_threshold(value) -> float:
    """Positive integer or infinity (``inf``, ``∞``)."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        value = int(value)
    if value == INF:
        return INF
    if int(value) != value or value < 0:
        raise ValueError(f"threshold must be a non-negative integer or inf, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class ThresholdSettings:
    """Frequency thresholds: train the mapper on counts >= tau_t, map words
    with counts < tau_m, and treat counts < tau_p as unknown to the parser."""

    tau_t: float = 1
    tau_m: float = 1
    tau_p: float = 1

    PRESETS = {
        "t1": (1, 1, 1),
        "t3": (3, 3, 3),
        "t5": (5, 5, 5),
        "tinf": (5, INF, 5),
    }

    @classmethod
    def preset(cls, name: str) -> "ThresholdSettings":
        key = name.lower().replace("∞", "inf").replace("_", "")
        try:
            tau_t, tau_m, tau_p = cls.PRESETS[key]
        except KeyError:
            raise ValueError(
                f"unknown threshold preset {name!r}; choose from {sorted(cls.PRESETS)}"
            ) from None
        return cls(tau_t=tau_t, tau_m=tau_m, tau_p=tau_p)

    def as_dict(self) -> dict:
        return {k: ("inf" if v == INF else v) for k, v in
                (("tau_t", self.tau_t), ("tau_m", self.tau_m), ("tau_p", self.tau_p))}



@dataclass(frozen=True)
class MapperHyperParams:
    alpha: float = 0.5
    l1: float = 0.0
    l2: float = 0.0
    hidden: int = 400
    thresholds: ThresholdSettings = field(default_factory=ThresholdSettings)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    init: str = "fan_in"
    init_scale: float = 0.01
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0,1]")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("l1 and l2 must be non-negative")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["thresholds"] = self.thresholds.as_dict()
        out.pop("workers")
        return out


def select_training_pairs(
    initial: EmbeddingTable,
    trained: EmbeddingTable,
    counts: Mapping[str, int],
    tau_t,
    unk: str = UNK,
) -> TrainingPairs:
    """Pairs ``(initial[w], trained[w])`` for words in both tables seen at least ``tau_t`` times."""
    words = [
        w for w in trained.words
        if w != unk and w in initial and counts.get(w, 0) >= tau_t
    ]
    if not words:
        raise ValueError(f"no mapper training data at tau_t={tau_t}")
    return TrainingPairs(
        tuple(words),
        np.stack([initial[w] for w in words]),
        np.stack([trained[w] for w in words]),
    )


def init_params(d: int, h: int, n: int, mode: str, scale: float, seed: int) -> np.ndarray:
    """Initial flat parameters.

    ``fan_in`` draws each layer from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    ``uniform`` draws everything from U(-scale, scale); with a small scale
    every hidden unit starts in the linear part of hardtanh and training
    tends to stop at the best linear map. ``zero`` leaves only b2 trainable
    (hidden activations and all other gradients vanish identically).
    """
    if mode == "zero":
        return np.zeros(n_params(d, h, n))
    rng = np.random.default_rng(seed)
    if mode == "uniform":
        return rng.uniform(-scale, scale, n_params(d, h, n))
    r1, r2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(h)
    return np.concatenate([
        rng.uniform(-r1, r1, h * d),
        rng.uniform(-r1, r1, h),
        rng.uniform(-r2, r2, n * h),
        rng.uniform(-r2, r2, n),
    ])


def train_mapper(
    pairs: TrainingPairs,
    hyper: MapperHyperParams,
    *,
    trace: TextIO | None = None,
    return_result: bool = False,
):
    """Fit the mapper by L-BFGS on the elastic-net objective.

    Returns the model, or ``(model, OptimizeResult)`` with ``return_result``.
    """
    d, n, h = pairs.in_dim, pairs.out_dim, hyper.hidden
    theta0 = init_params(d, h, n, hyper.init, hyper.init_scale, hyper.seed)

    def f(theta):
        return objective(theta, pairs, hyper.alpha, hyper.l1, hyper.l2, h, hyper.workers)

    result: OptimizeResult = minimize(f, theta0, hyper.lbfgs, trace=trace)
    if not math.isfinite(result.value):
        raise NumericalError("training diverged")
    model = MapperModel.unpack(result.theta, d, h, n)
    return (model, result) if return_result else model


@dataclass
class MappingReport:
    mapped: int = 0
    kept: int = 0
    residual: int = 0
    ootv_before: float = 0.0
    ootv_after: float = 0.0
    eval_types: int = 0
    residual_words: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def considered(self) -> int:
        return self.mapped + self.kept + self.residual

    def summary(self) -> dict:
        return {
            "mapped": self.mapped,
            "kept": self.kept,
            "residual": self.residual,
            "considered": self.considered,
            "eval_types": self.eval_types,
            "ootv_before_pct": round(self.ootv_before, 4),
            "ootv_after_pct": round(self.ootv_after, 4),
        }

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.summary().items()]
        lines += [f"config.{k}: {v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = dict(self.summary(), config=self.config, residual_words=self.residual_words)
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def merge_tables(
    transform: Callable[[np.ndarray], np.ndarray],
    initial: EmbeddingTable,
    trained: EmbeddingTable,
    counts: Mapping[str, int],
    tau_m,
    eval_vocab: Iterable[str] | None = None,
    unk: str = UNK,
    out_dim: int | None = None,
) -> tuple[EmbeddingTable, MappingReport]:
    """Shared merge logic for the mapper and the k-NN baseline.

    ``transform`` takes an ``(m, d)`` array of initial vectors and returns
    their replacement vectors. A word keeps its task-trained vector when its
    count reaches ``tau_m``; otherwise it is rebuilt from its initial vector
    if it has one, and is residual (left out) if not.
    """
    out_dim = trained.dim if out_dim is None else out_dim
    eval_vocab = list(dict.fromkeys(eval_vocab or ()))
    vocab = list(dict.fromkeys([*trained.words, *initial.words, *eval_vocab]))
    vocab = [w for w in vocab if w != unk]
    report = MappingReport()
    kept, to_map, residual = [], [], []
    for w in vocab:
        if w in trained and counts.get(w, 0) >= tau_m:
            kept.append(w)
        elif w in initial:
            to_map.append(w)
        else:
            residual.append(w)
    mapped_vecs = {}
    if to_map:
        out = transform(np.stack([initial[w] for w in to_map]))
        if out.shape != (len(to_map), out_dim):
            raise ValueError(f"transform produced shape {out.shape}, expected {(len(to_map), out_dim)}")
        mapped_vecs = dict(zip(to_map, out))
    keep_set = set(kept)
    words, rows = [], []
    if unk in trained:
        words.append(unk)
        rows.append(trained[unk])
    for w in vocab:
        if w in keep_set:
            words.append(w)
            rows.append(trained[w])
        elif w in mapped_vecs:
            words.append(w)
            rows.append(mapped_vecs[w])
    merged = EmbeddingTable(words, rows if rows else np.zeros((0, out_dim)), dim=out_dim)
    report.mapped, report.kept, report.residual = len(to_map), len(kept), len(residual)
    report.residual_words = residual
    if eval_vocab:
        report.eval_types = len(eval_vocab)
        before = sum(1 for w in eval_vocab if w not in trained)
        after = sum(1 for w in eval_vocab if w not in merged)
        report.ootv_before = 100.0 * before / len(eval_vocab)
        report.ootv_after = 100.0 * after / len(eval_vocab)
    return merged, report


def apply_mapping(
    model: MapperModel,
    initial: EmbeddingTable,
    trained: EmbeddingTable,
    counts: Mapping[str, int],
    tau_m,
    eval_vocab: Iterable[str] | None = None,
    unk: str = UNK,
    workers: int = 1,
) -> tuple[EmbeddingTable, MappingReport]:
    """Merge task-trained vectors with mapped initial vectors.

    Words with ``counts[w] < tau_m`` (strict) are mapped from their initial
    embedding; ``tau_m = inf`` maps every word that has one. The parser's
    unknown row ``unk`` is passed through untouched.
    """
    if model.in_dim != initial.dim:
        raise ValueError(f"model input dim {model.in_dim} != initial table dim {initial.dim}")
    if model.out_dim != trained.dim:
        raise ValueError(f"model output dim {model.out_dim} != trained table dim {trained.dim}")
    merged, report = merge_tables(
        lambda X: forward_blocked(model, X, workers),
        initial, trained, counts, tau_m, eval_vocab, unk, out_dim=model.out_dim,
    )
    report.config["tau_m"] = "inf" if tau_m == INF else tau_m
    return merged, report


def filter_parser_vocab(
    trained: EmbeddingTable, counts: Mapping[str, int], tau_p, unk: str = UNK
) -> EmbeddingTable:
    """Drop words the parser would have replaced by its unknown token."""
    keep = [w for w in trained.words if w == unk or counts.get(w, 0) >= tau_p]
    return trained.subset(keep)
