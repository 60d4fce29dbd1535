"""Command-line entry point: ``oovmap <command> [flags]``.

Exit status: 0 success, 1 usage/validation/IO error, 2 numerical failure.
Reports go to stdout as ``key: value`` lines; artifacts go only to the
paths given by flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .embeddings import (
    EmbeddingTable,
    count_tokens,
    load_counts,
    load_embeddings,
    nearest_neighbors,
    save_counts,
    save_embeddings,
)
from .knn import knn_merge
from .lbfgs import LbfgsConfig
from .mapper import NumericalError, load_checkpoint, save_checkpoint
from .pipeline import (
    INF,
    INIT_MODES,
    UNK,
    MapperHyperParams,
    ThresholdSettings,
    apply_mapping,
    filter_parser_vocab,
    parse_threshold,
    select_training_pairs,
    train_mapper,
)
from .synth import TRANSFORMS, SynthSpec, dump
from .treebank import RNG_NAME, DepSentence, Token, bootstrap_test, evaluate, ootv_stats, parse_conll
from .tuner import GridSpec, DEFAULT_ALPHAS, DEFAULT_LAMBDAS, external_metric, grid_search, heldout_metric, split_pairs

log = logging.getLogger("oovmap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _alpha(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("alpha must be in [0,1]")
    return v


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("value must be >= 0")
    return v


def _posint(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("value must be >= 1")
    return v


def _threshold(text: str):
    try:
        return parse_threshold(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_counts(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--counts", help="'word count' lines for the annotated training corpus")
    g.add_argument("--train-conll", help="CoNLL-X training corpus to count tokens from")
    p.add_argument("--lowercase", action="store_true", help="lowercase words at ingestion")


def _add_thresholds(p):
    p.add_argument("--thresholds", default="t1", choices=sorted(ThresholdSettings.PRESETS),
                   help="threshold preset (default t1)")
    p.add_argument("--tau-t", type=_threshold, help="override mapper-training threshold")
    p.add_argument("--tau-m", type=_threshold, help="override mapping threshold (int or inf)")
    p.add_argument("--tau-p", type=_threshold, help="override parser threshold")


def _add_common(p, seed=False):
    p.add_argument("--workers", type=_posint, default=1,
                   help="worker threads; outputs do not depend on this")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oovmap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"oovmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a mapper from initial/task-trained embedding pairs")
    p.add_argument("--pairs-initial", required=True, help="initial embedding table")
    p.add_argument("--pairs-trained", required=True, help="task-trained embedding table")
    _add_counts(p)
    _add_thresholds(p)
    p.add_argument("--alpha", type=_alpha, default=0.5)
    p.add_argument("--l1", type=_nonneg, default=0.0)
    p.add_argument("--l2", type=_nonneg, default=0.0)
    p.add_argument("--hidden", type=_posint, default=400)
    p.add_argument("--init", choices=INIT_MODES, default="fan_in")
    p.add_argument("--init-scale", type=_nonneg, default=0.01)
    p.add_argument("--max-iter", type=_posint, default=LbfgsConfig.max_iterations)
    p.add_argument("--memory", type=_posint, default=LbfgsConfig.memory)
    p.add_argument("--grad-tol", type=_nonneg, default=LbfgsConfig.grad_tol)
    p.add_argument("--obj-tol", type=_nonneg, default=LbfgsConfig.obj_rel_tol)
    p.add_argument("--unk", default=UNK)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--trace", help="write per-iteration optimizer trace here")
    _add_common(p, seed=True)

    p = sub.add_parser("map", help="apply a trained mapper to build a merged table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--initial", required=True)
    p.add_argument("--trained", required=True)
    _add_counts(p)
    _add_thresholds(p)
    p.add_argument("--eval-conll", help="evaluation corpus whose types define the OOTV rates")
    p.add_argument("--unk", default=UNK)
    p.add_argument("--out", required=True, help="merged embedding table output")
    p.add_argument("--report", help="JSON report output")
    _add_common(p)

    p = sub.add_parser("knn", help="k-NN artificial refinement baseline")
    p.add_argument("--initial", required=True)
    p.add_argument("--trained", required=True)
    _add_counts(p)
    _add_thresholds(p)
    p.add_argument("--k", type=_posint, default=3)
    p.add_argument("--normalize", action="store_true", help="normalize neighbor weights")
    p.add_argument("--eval-conll")
    p.add_argument("--unk", default=UNK)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("tune", help="grid search over alpha, l1, l2")
    p.add_argument("--pairs-initial", required=True)
    p.add_argument("--pairs-trained", required=True)
    _add_counts(p)
    _add_thresholds(p)
    p.add_argument("--alphas", type=_floats, default=DEFAULT_ALPHAS)
    p.add_argument("--l1s", type=_floats, default=DEFAULT_LAMBDAS)
    p.add_argument("--l2s", type=_floats, default=DEFAULT_LAMBDAS)
    p.add_argument("--hidden", type=_posint, default=400)
    p.add_argument("--init", choices=INIT_MODES, default="fan_in")
    p.add_argument("--max-iter", type=_posint, default=LbfgsConfig.max_iterations)
    p.add_argument("--metric", choices=("heldout", "command"), default="heldout")
    p.add_argument("--metric-command", help="command run per grid point; {checkpoint} is substituted")
    p.add_argument("--metric-pattern", default=r"UAS\s*[:=]?\s*([0-9.]+)")
    p.add_argument("--metric-alpha", type=_alpha, default=0.5,
                   help="loss weight used by the held-out metric")
    p.add_argument("--heldout", type=float, default=0.1, help="dev fraction for the held-out metric")
    p.add_argument("--subsample", type=_posint, help="evaluate a seeded random subset of the grid")
    p.add_argument("--unk", default=UNK)
    p.add_argument("--out", required=True, help="TSV audit table")
    p.add_argument("--best-out", help="checkpoint of the best configuration")
    _add_common(p, seed=True)

    p = sub.add_parser("eval", help="UAS/LAS and OOTV statistics")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--exclude-punct", action="store_true")
    _add_counts(p, required=False)
    p.add_argument("--initial", help="initial table, for the after-mapping OOTV rate")
    p.add_argument("--tau-m", type=_threshold, default=1)
    p.add_argument("--subset", choices=("any", "mappable"), default="any")
    p.add_argument("--compare", help="second prediction file (system B) for a bootstrap test")
    p.add_argument("--samples", type=_posint, default=100_000)
    p.add_argument("--metric", choices=("uas", "las"), default="uas")
    p.add_argument("--report", help="write the report here as well")
    _add_common(p, seed=True)

    p = sub.add_parser("stats", help="OOTV rates of an evaluation corpus")
    _add_counts(p)
    p.add_argument("--eval-conll", required=True)
    p.add_argument("--initial", required=True)
    p.add_argument("--tau-m", type=_threshold, default=1)
    p.add_argument("--subset", choices=("any", "mappable"), default="any")
    _add_common(p)

    p = sub.add_parser("synth", help="write a synthetic workspace")
    p.add_argument("--n", type=_posint, default=1000)
    p.add_argument("--dim", type=_posint, default=10)
    p.add_argument("--transform", choices=TRANSFORMS, default="saturating")
    p.add_argument("--noise", type=_nonneg, default=0.01)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--out-prefix", required=True)
    _add_common(p, seed=True)

    p = sub.add_parser("neighbors", help="nearest neighbors of a word")
    p.add_argument("--table", required=True, help="table searched for neighbors")
    p.add_argument("--word", required=True)
    p.add_argument("--k", type=_posint, default=3)
    p.add_argument("--query-table", help="take the query vector from this table instead")
    p.add_argument("--include-self", action="store_true")
    _add_common(p)

    p = sub.add_parser("counts", help="token counts of a CoNLL-X corpus")
    p.add_argument("--conll", required=True)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _thresholds(args) -> ThresholdSettings:
    base = ThresholdSettings.preset(args.thresholds)
    return ThresholdSettings(
        tau_t=base.tau_t if args.tau_t is None else args.tau_t,
        tau_m=base.tau_m if args.tau_m is None else args.tau_m,
        tau_p=base.tau_p if args.tau_p is None else args.tau_p,
    )


def _counts(args):
    if getattr(args, "counts", None):
        return load_counts(args.counts, lowercase=args.lowercase)
    if getattr(args, "train_conll", None):
        return count_tokens(parse_conll(args.train_conll), lowercase=args.lowercase)
    return None


def _emit(lines: list[tuple[str, object]], out=None) -> str:
    text = "".join(f"{k}: {v}\n" for k, v in lines)
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    return text


def _fmt(v) -> str:
    return "inf" if v == INF else str(v)


def _train_pairs(args, th):
    initial = load_embeddings(args.pairs_initial, lowercase=args.lowercase)
    trained = load_embeddings(args.pairs_trained, lowercase=args.lowercase)
    counts = _counts(args)
    return select_training_pairs(initial, trained, counts, th.tau_t, unk=args.unk)


def cmd_train(args) -> int:
    th = _thresholds(args)
    pairs = _train_pairs(args, th)
    hyper = MapperHyperParams(
        alpha=args.alpha, l1=args.l1, l2=args.l2, hidden=args.hidden, thresholds=th,
        lbfgs=LbfgsConfig(memory=args.memory, max_iterations=args.max_iter,
                          grad_tol=args.grad_tol, obj_rel_tol=args.obj_tol),
        init=args.init, init_scale=args.init_scale, seed=args.seed, workers=args.workers,
    )
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        model, result = train_mapper(pairs, hyper, trace=trace, return_result=True)
    finally:
        if trace:
            trace.close()
    config = hyper.as_dict()
    save_checkpoint(model, args.out, meta={"hyperparameters": config, "pairs": len(pairs)})
    _emit([
        ("command", "train"),
        ("pairs", len(pairs)),
        ("dims", "%d-%d-%d" % model.dims),
        ("termination", result.reason.value),
        ("iterations", result.iterations),
        ("initial_objective", f"{result.initial_value:.10g}"),
        ("final_objective", f"{result.value:.10g}"),
        ("grad_inf_norm", f"{result.grad_norm:.6g}"),
        ("seed", args.seed),
        ("config", json.dumps(config, sort_keys=True)),
        ("checkpoint", args.out),
    ])
    return 0


def _eval_vocab(args):
    if not args.eval_conll:
        return None
    sents = parse_conll(args.eval_conll)
    forms = [f for s in sents for f in s.forms]
    if args.lowercase:
        forms = [f.lower() for f in forms]
    return list(dict.fromkeys(forms))


def _merge_output(args, merged: EmbeddingTable, report, command: str) -> int:
    save_embeddings(merged, args.out)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(f"command: {command}\n" + report.to_text() + f"merged: {args.out}\n")
    return 0


def cmd_map(args) -> int:
    th = _thresholds(args)
    model = load_checkpoint(args.checkpoint)
    initial = load_embeddings(args.initial, lowercase=args.lowercase)
    trained = load_embeddings(args.trained, lowercase=args.lowercase)
    counts = _counts(args)
    trained = filter_parser_vocab(trained, counts, th.tau_p, unk=args.unk)
    merged, report = apply_mapping(
        model, initial, trained, counts, th.tau_m, _eval_vocab(args), unk=args.unk,
        workers=args.workers,
    )
    report.config.update(th.as_dict(), method="mapper", checkpoint=args.checkpoint)
    return _merge_output(args, merged, report, "map")


def cmd_knn(args) -> int:
    th = _thresholds(args)
    initial = load_embeddings(args.initial, lowercase=args.lowercase)
    trained = load_embeddings(args.trained, lowercase=args.lowercase)
    counts = _counts(args)
    trained = filter_parser_vocab(trained, counts, th.tau_p, unk=args.unk)
    merged, report = knn_merge(
        initial, trained, counts, th.tau_t, th.tau_m, k=args.k,
        eval_vocab=_eval_vocab(args), normalize=args.normalize, unk=args.unk,
    )
    report.config.update(th.as_dict())
    return _merge_output(args, merged, report, "knn")


def cmd_tune(args) -> int:
    th = _thresholds(args)
    pairs = _train_pairs(args, th)
    base = MapperHyperParams(
        hidden=args.hidden, thresholds=th, init=args.init, seed=args.seed,
        lbfgs=LbfgsConfig(max_iterations=args.max_iter),
    )
    grid = GridSpec(args.alphas, args.l1s, args.l2s)
    if args.metric == "command":
        if not args.metric_command:
            raise UsageError("--metric command requires --metric-command")
        train, metric = pairs, external_metric(args.metric_command, args.metric_pattern)
    else:
        train, dev = split_pairs(pairs, args.heldout, args.seed)
        metric = heldout_metric(dev, args.metric_alpha)
    result = grid_search(train, metric, grid, base, subsample=args.subsample, workers=args.workers)
    Path(args.out).write_text(result.to_tsv(), encoding="utf-8")
    if args.best_out:
        save_checkpoint(train_mapper(train, result.best), args.best_out,
                        meta={"hyperparameters": result.best.as_dict()})
    b = result.best
    _emit([
        ("command", "tune"),
        ("grid_points", len(result.table)),
        ("best_alpha", repr(b.alpha)),
        ("best_l1", repr(b.l1)),
        ("best_l2", repr(b.l2)),
        ("best_metric", repr(result.best_metric)),
        ("metric", args.metric),
        ("seed", args.seed),
        ("table", args.out),
    ])
    return 0


def _read_corpus(path, lowercase: bool) -> list[DepSentence]:
    sents = parse_conll(path)
    if not lowercase:
        return sents
    return [DepSentence(tuple(Token(t.form.lower(), *t[1:]) for t in s.tokens)) for s in sents]


def cmd_eval(args) -> int:
    gold = _read_corpus(args.gold, args.lowercase)
    pred = _read_corpus(args.pred, args.lowercase)
    counts = _counts(args)
    initial = load_embeddings(args.initial, lowercase=args.lowercase) if args.initial else None
    report = evaluate(
        gold, pred, exclude_punct=args.exclude_punct,
        train_vocab=set(counts) if counts is not None else None,
        initial=set(initial.words) if initial is not None else None,
        tau_m=args.tau_m, counts=counts, subset=args.subset,
    )
    lines: list[tuple[str, object]] = [("command", "eval")]
    lines += report.rows()
    lines.append(("exclude_punct", args.exclude_punct))
    if counts is not None:
        lines += [("tau_m", _fmt(args.tau_m)), ("subset", args.subset)]
    if args.compare:
        pred_b = _read_corpus(args.compare, args.lowercase)
        p = bootstrap_test(gold, pred, pred_b, samples=args.samples, seed=args.seed,
                           metric=args.metric, exclude_punct=args.exclude_punct,
                           workers=args.workers)
        lines += [
            ("bootstrap_metric", args.metric),
            ("bootstrap_samples", args.samples),
            ("bootstrap_p", f"{p:.6f}"),
            ("rng", RNG_NAME),
            ("seed", args.seed),
        ]
    _emit(lines, args.report)
    return 0


def cmd_stats(args) -> int:
    counts = _counts(args)
    corpus = _read_corpus(args.eval_conll, args.lowercase)
    initial = load_embeddings(args.initial, lowercase=args.lowercase)
    st = ootv_stats(set(counts), corpus, set(initial.words), args.tau_m, counts, args.subset)
    _emit([
        ("command", "stats"),
        ("types", st.n_types),
        ("ootv_before_pct", f"{st.rate_before:.2f}"),
        ("ootv_after_pct", f"{st.rate_after:.2f}"),
        ("ootv_sentences", len(st.sentences)),
        ("sentences", len(corpus)),
        ("tau_m", _fmt(args.tau_m)),
        ("subset", args.subset),
    ])
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(seed=args.seed, n_pairs=args.n, dim=args.dim, transform=args.transform,
                     noise=args.noise, split=args.split)
    paths = dump(spec, args.out_prefix)
    _emit([("command", "synth"), ("seed", args.seed), ("transform", args.transform),
           ("n", args.n), ("dim", args.dim), ("noise", args.noise), ("split", args.split)]
          + [(k, str(v)) for k, v in paths.items()])
    return 0


def cmd_neighbors(args) -> int:
    table = load_embeddings(args.table)
    source = load_embeddings(args.query_table) if args.query_table else table
    if args.word not in source:
        raise KeyError(f"word {args.word!r} not in {args.query_table or args.table}")
    exclude = None if args.include_self else {args.word}
    for w, s in nearest_neighbors(table, source[args.word], args.k, exclude=exclude):
        sys.stdout.write(f"{w}\t{s:.6f}\n")
    return 0


def cmd_counts(args) -> int:
    counts = count_tokens(parse_conll(args.conll), lowercase=args.lowercase)
    save_counts(counts, args.out)
    _emit([("command", "counts"), ("types", len(counts)), ("tokens", counts.total_tokens())])
    return 0


COMMANDS = {
    "train": cmd_train,
    "map": cmd_map,
    "knn": cmd_knn,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "synth": cmd_synth,
    "neighbors": cmd_neighbors,
    "counts": cmd_counts,
}


def run(args: argparse.Namespace) -> int:
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, ArithmeticError) as exc:
        print(f"oovmap {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"oovmap {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
