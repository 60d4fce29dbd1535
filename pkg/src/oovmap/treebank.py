"""CoNLL-X reading and dependency-parse evaluation statistics."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

PUNCT_LABEL = "punct"
RNG_NAME = "numpy-PCG64/SeedSequence-v1"
BOOTSTRAP_CHUNK = 1000


class ConllError(ValueError):
    pass


class CorpusMismatch(ValueError):
    pass


class Token(NamedTuple):
    form: str
    pos: str
    head: int
    label: str


@dataclass(frozen=True)
class DepSentence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(Token(*t) for t in self.tokens))
        n = len(self.tokens)
        for i, tok in enumerate(self.tokens, start=1):
            if not 0 <= tok.head <= n:
                raise ConllError(f"token {i} head {tok.head} outside [0, {n}]")
            if tok.head == i:
                raise ConllError(f"token {i} is its own head")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.tokens]


def _finish(rows, start_line, out):
    if not rows:
        return
    n = len(rows)
    for lineno, tok in rows:
        if not 0 <= tok.head <= n:
            raise ConllError(f"line {lineno}: head {tok.head} out of range for sentence of length {n}")
    try:
        out.append(DepSentence(tuple(tok for _, tok in rows)))
    except ConllError as exc:
        raise ConllError(f"sentence starting at line {start_line}: {exc}") from None


def parse_conll(path: str | Path) -> list[DepSentence]:
    """Read a 10-column CoNLL-X file.

    Uses columns ID, FORM, POSTAG (5th), HEAD and DEPREL. Comment lines and
    rows with a non-integer ID (multiword ranges, empty nodes) are skipped.
    """
    sentences: list[DepSentence] = []
    rows: list[tuple[int, Token]] = []
    start = 1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                _finish(rows, start, sentences)
                rows, start = [], lineno + 1
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 8:
                raise ConllError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
            if not cols[0].isdigit():
                continue
            try:
                head = int(cols[6])
            except ValueError:
                raise ConllError(f"line {lineno}: non-integer head {cols[6]!r}") from None
            rows.append((lineno, Token(cols[1], cols[4], head, cols[7])))
    _finish(rows, start, sentences)
    return sentences


def write_conll(sentences: Iterable[DepSentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            for i, t in enumerate(sent.tokens, start=1):
                fh.write(f"{i}\t{t.form}\t_\t_\t{t.pos}\t_\t{t.head}\t{t.label}\t_\t_\n")
            fh.write("\n")


def _check_parallel(gold: Sequence[DepSentence], pred: Sequence[DepSentence]) -> None:
    for i, (g, p) in enumerate(zip(gold, pred), start=1):
        if g.forms != p.forms:
            raise CorpusMismatch(f"sentence {i}: token forms differ between gold and prediction")
    if len(gold) != len(pred):
        raise CorpusMismatch(
            f"sentence {min(len(gold), len(pred)) + 1}: missing from one corpus "
            f"(gold has {len(gold)} sentences, prediction has {len(pred)})"
        )


def sentence_counts(gold, pred, exclude_punct: bool = False) -> np.ndarray:
    """Per-sentence ``[scored, head_correct, head_and_label_correct]`` counts."""
    _check_parallel(gold, pred)
    out = np.zeros((len(gold), 3), dtype=np.int64)
    for i, (g, p) in enumerate(zip(gold, pred)):
        for gt, pt in zip(g.tokens, p.tokens):
            if exclude_punct and gt.label == PUNCT_LABEL:
                continue
            out[i, 0] += 1
            if gt.head == pt.head:
                out[i, 1] += 1
                if gt.label == pt.label:
                    out[i, 2] += 1
    return out


def attachment_scores(gold, pred, exclude_punct: bool = False) -> tuple[float, float]:
    """UAS and LAS as percentages."""
    totals = sentence_counts(gold, pred, exclude_punct).sum(axis=0)
    if totals[0] == 0:
        raise ValueError("no scorable tokens")
    return 100.0 * totals[1] / totals[0], 100.0 * totals[2] / totals[0]


@dataclass(frozen=True)
class OotvStats:
    rate_before: float
    rate_after: float
    sentences: frozenset[int]
    n_types: int


def ootv_stats(
    train_vocab: Collection[str],
    corpus: Sequence[DepSentence],
    initial: Collection[str],
    tau_m,
    counts: Mapping[str, int],
    subset: str = "any",
) -> OotvStats:
    """Type-level out-of-training-vocabulary rates before and after mapping.

    A type still lacks an embedding after mapping unless it is in
    ``train_vocab`` with count at least ``tau_m`` or has an initial
    embedding. ``subset`` picks which sentences are flagged: ``any`` flags
    sentences with an OOTV token, ``mappable`` only those whose OOTV token
    also has an initial embedding.
    """
    if subset not in ("any", "mappable"):
        raise ValueError("subset must be 'any' or 'mappable'")
    types = {f for s in corpus for f in s.forms}
    unseen = {w for w in types if w not in train_vocab}
    lacking = {
        w for w in types
        if not (w in train_vocab and counts.get(w, 0) >= tau_m) and w not in initial
    }
    flag = unseen if subset == "any" else {w for w in unseen if w in initial}
    sents = frozenset(i for i, s in enumerate(corpus) if any(f in flag for f in s.forms))
    if not types:
        return OotvStats(0.0, 0.0, sents, 0)
    return OotvStats(
        100.0 * len(unseen) / len(types),
        100.0 * len(lacking) / len(types),
        sents,
        len(types),
    )


def bootstrap_test(
    gold: Sequence[DepSentence],
    pred_a: Sequence[DepSentence],
    pred_b: Sequence[DepSentence],
    samples: int = 100_000,
    seed: int = 0,
    metric: str = "uas",
    exclude_punct: bool = False,
    workers: int = 1,
) -> float:
    """One-sided paired bootstrap over sentences.

    Returns the fraction of resampled corpora in which system B does not beat
    system A. Resamples are drawn in fixed chunks, each from its own
    ``SeedSequence`` child, so the result does not depend on ``workers``.
    Because both systems are scored on the same tokens, comparing corpus
    scores reduces to comparing summed correct counts, which is exact.
    """
    if metric not in ("uas", "las"):
        raise ValueError("metric must be 'uas' or 'las'")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    col = 1 if metric == "uas" else 2
    ca = sentence_counts(gold, pred_a, exclude_punct)
    cb = sentence_counts(gold, pred_b, exclude_punct)
    if ca[:, 0].sum() == 0:
        raise ValueError("no scorable tokens")
    delta = cb[:, col] - ca[:, col]
    if delta.sum() < 0:
        raise ValueError(
            f"system B scores lower than system A on {metric}; swap the arguments"
        )
    n_sent = len(delta)
    n_chunks = -(-samples // BOOTSTRAP_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def chunk(j: int) -> int:
        size = min(BOOTSTRAP_CHUNK, samples - j * BOOTSTRAP_CHUNK)
        rng = np.random.Generator(np.random.PCG64(children[j]))
        idx = rng.integers(0, n_sent, size=(size, n_sent))
        return int(np.count_nonzero(delta[idx].sum(axis=1) <= 0))

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fails = sum(pool.map(chunk, range(n_chunks)))
    else:
        fails = sum(chunk(j) for j in range(n_chunks))
    return fails / samples


@dataclass
class EvalReport:
    uas: float
    las: float
    tokens: int
    sentences: int
    ootv_rate: float | None = None
    ootv_after_rate: float | None = None
    ootv_sentences: int | None = None
    ootv_uas: float | None = None
    ootv_las: float | None = None

    def rows(self) -> list[tuple[str, str]]:
        def fmt(x):
            return "n/a" if x is None else f"{x:.2f}"

        rows = [("UAS", fmt(self.uas)), ("LAS", fmt(self.las))]
        if self.ootv_rate is not None:
            rows.append(("OOTV %", f"{self.ootv_rate:.2f}->{self.ootv_after_rate:.2f}"))
        rows.append(("OOTV UAS", fmt(self.ootv_uas)))
        rows.append(("#Sents", str(self.ootv_sentences if self.ootv_sentences is not None
                                   else self.sentences)))
        rows.append(("Tokens", str(self.tokens)))
        return rows


def evaluate(
    gold: Sequence[DepSentence],
    pred: Sequence[DepSentence],
    exclude_punct: bool = False,
    train_vocab: Collection[str] | None = None,
    initial: Collection[str] | None = None,
    tau_m=1,
    counts: Mapping[str, int] | None = None,
    subset: str = "any",
) -> EvalReport:
    """Scores in the layout of a results-table row.

    With ``train_vocab`` the OOTV rate and the scores on OOTV sentences are
    filled in as well.
    """
    per_sent = sentence_counts(gold, pred, exclude_punct)
    uas, las = attachment_scores(gold, pred, exclude_punct)
    report = EvalReport(uas, las, int(per_sent[:, 0].sum()), len(gold))
    if train_vocab is not None:
        st = ootv_stats(train_vocab, gold, initial or (), tau_m, counts or {}, subset)
        report.ootv_rate, report.ootv_after_rate = st.rate_before, st.rate_after
        report.ootv_sentences = len(st.sentences)
        rows = per_sent[sorted(st.sentences)].sum(axis=0) if st.sentences else None
        if rows is not None and rows[0] > 0:
            report.ootv_uas = 100.0 * rows[1] / rows[0]
            report.ootv_las = 100.0 * rows[2] / rows[0]
    return report
