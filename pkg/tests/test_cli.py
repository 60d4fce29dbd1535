import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oovmap.cli import main, parse_args
from oovmap.mapper import MapperModel, save_checkpoint

SYNTH = ["synth", "--seed", "3", "--n", "120", "--dim", "4", "--out-prefix", "s"]
TRAIN = ["train", "--pairs-initial", "s.initial.vec", "--pairs-trained", "s.trained.vec",
         "--counts", "s.counts", "--hidden", "6", "--max-iter", "40", "--seed", "3",
         "--out", "m.json"]
MAP = ["map", "--checkpoint", "m.json", "--initial", "s.initial.vec",
       "--trained", "s.trained.vec", "--counts", "s.counts", "--eval-conll", "s.gold.conll",
       "--out", "merged.vec", "--report", "map.json"]
EVAL = ["eval", "--gold", "s.gold.conll", "--pred", "s.pred.conll", "--counts", "s.counts",
        "--initial", "s.initial.vec", "--compare", "s.gold.conll", "--samples", "2000",
        "--seed", "5", "--report", "eval.txt"]


def cli(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(text):
    return dict(line.split(": ", 1) for line in text.splitlines() if ": " in line)


class TestParseArgs:
    def test_train(self):
        a = parse_args(["train", "--pairs-initial", "a.vec", "--pairs-trained", "b.vec",
                        "--counts", "c.txt", "--alpha", "0.5", "--l1", "1e-4", "--l2", "1e-4",
                        "--out", "m.ckpt"])
        assert a.command == "train" and a.alpha == 0.5 and a.l1 == 1e-4 and a.out == "m.ckpt"
        assert a.seed == 0 and a.thresholds == "t1"

    def test_eval_defaults(self):
        a = parse_args(["eval", "--gold", "g.conll", "--pred", "p.conll"])
        assert a.command == "eval" and not a.exclude_punct and a.compare is None
        assert a.samples == 100_000

    def test_alpha_out_of_range(self, capsys):
        code, _, err = cli(["train", "--pairs-initial", "a", "--pairs-trained", "b",
                            "--counts", "c", "--alpha", "1.5", "--out", "m"], capsys)
        assert code == 1 and "alpha must be in [0,1]" in err

    @pytest.mark.parametrize("argv", [
        ["train", "--pairs-initial", "a"],
        ["eval", "--gold", "g", "--pred", "p", "--bogus"],
        ["map", "--checkpoint", "m", "--initial", "i", "--trained", "t", "--counts", "c",
         "--train-conll", "x", "--out", "o"],
        ["frobnicate"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert cli(argv, capsys)[0] == 1

    def test_threshold_override(self):
        from oovmap.cli import _thresholds
        a = parse_args(MAP + ["--thresholds", "t5", "--tau-m", "inf"])
        th = _thresholds(a)
        assert (th.tau_t, th.tau_p) == (5, 5) and th.tau_m == float("inf")


@pytest.fixture
def workdir(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli(SYNTH, capsys)[0] == 0
    return tmp_path


class TestRun:
    def test_pipeline(self, workdir, capsys):
        code, out, _ = cli(TRAIN, capsys)
        assert code == 0
        r = report(out)
        assert r["seed"] == "3" and r["dims"] == "4-6-4"
        assert "workers" not in out
        assert json.loads(r["config"])["hidden"] == 6

        code, out, _ = cli(MAP, capsys)
        assert code == 0
        r = report(out)
        assert int(r["mapped"]) > 0 and float(r["ootv_after_pct"]) <= float(r["ootv_before_pct"])

        code, out, _ = cli(EVAL, capsys)
        assert code == 0
        r = report(out)
        assert {"UAS", "LAS", "OOTV %", "OOTV UAS", "#Sents", "bootstrap_p", "rng"} <= set(r)
        assert Path("eval.txt").read_text() == out

    def test_other_commands(self, workdir, capsys):
        assert cli(["knn", "--initial", "s.initial.vec", "--trained", "s.trained.vec",
                    "--counts", "s.counts", "--out", "knn.vec"], capsys)[0] == 0
        code, out, _ = cli(["neighbors", "--table", "s.initial.vec", "--word", "w000001",
                            "--k", "2"], capsys)
        assert code == 0 and len(out.splitlines()) == 2 and "w000001" not in out
        code, out, _ = cli(["stats", "--counts", "s.counts", "--eval-conll", "s.gold.conll",
                            "--initial", "s.initial.vec"], capsys)
        assert code == 0 and float(report(out)["ootv_after_pct"]) == 0.0
        assert cli(["counts", "--conll", "s.gold.conll", "--out", "c2.txt"], capsys)[0] == 0
        code, out, _ = cli(["tune", "--pairs-initial", "s.initial.vec",
                            "--pairs-trained", "s.trained.vec", "--counts", "s.counts",
                            "--alphas", "0,1", "--l1s", "0", "--l2s", "0,1e-3",
                            "--hidden", "4", "--max-iter", "20", "--out", "grid.tsv"], capsys)
        assert code == 0 and report(out)["grid_points"] == "4"
        assert len(Path("grid.tsv").read_text().splitlines()) == 5

    def test_eval_mismatch_names_sentence(self, workdir, capsys):
        lines = Path("s.pred.conll").read_text().split("\n\n")
        lines[2] = lines[2].replace("w0", "x0", 1)
        Path("bad.conll").write_text("\n\n".join(lines))
        code, _, err = cli(["eval", "--gold", "s.gold.conll", "--pred", "bad.conll"], capsys)
        assert code == 1 and "sentence 3" in err

    def test_map_dim_mismatch(self, workdir, capsys):
        save_checkpoint(MapperModel.zeros(3, 2, 3), "bad.json")
        argv = [a if a != "m.json" else "bad.json" for a in MAP]
        code, _, err = cli(argv, capsys)
        assert code == 1 and not Path("merged.vec").exists()

    def test_missing_file(self, workdir, capsys):
        code, _, err = cli(["stats", "--counts", "nope.txt", "--eval-conll", "s.gold.conll",
                            "--initial", "s.initial.vec"], capsys)
        assert code == 1 and "nope.txt" in err

    def test_numerical_failure_exit_2(self, workdir, capsys):
        Path("huge.vec").write_text("w000001 1e308 1e308 1e308 1e308\n")
        code, _, err = cli(["train", "--pairs-initial", "huge.vec", "--pairs-trained", "huge.vec",
                            "--counts", "s.counts", "--init", "uniform", "--init-scale", "1e308",
                            "--hidden", "2", "--out", "m.json"], capsys)
        assert code == 2 and "numerical" in err


def run_pipeline(root: Path, workers: int):
    root.mkdir()
    w = ["--workers", str(workers)]
    for argv in (SYNTH, TRAIN + w, MAP + w, EVAL + w):
        proc = subprocess.run([sys.executable, "-m", "oovmap", *argv], cwd=root,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        (root / f"{argv[0]}.stdout").write_text(proc.stdout)
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_byte_identical_reruns(tmp_path):
    a = run_pipeline(tmp_path / "a", 1)
    b = run_pipeline(tmp_path / "b", 4)
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


def test_lowercase_applies_to_eval_corpus(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    row = "{}\t{}\t_\t_\tX\t_\t{}\tdep\t_\t_\n"
    Path("g.conll").write_text(row.format(1, "The", 2) + row.format(2, "Cat", 0))
    Path("c.txt").write_text("the 3\ncat 3\n")
    Path("i.vec").write_text("the 1 0\ncat 0 1\n")
    argv = ["stats", "--counts", "c.txt", "--eval-conll", "g.conll", "--initial", "i.vec"]
    assert float(report(cli(argv, capsys)[1])["ootv_before_pct"]) == 100.0
    assert float(report(cli(argv + ["--lowercase"], capsys)[1])["ootv_before_pct"]) == 0.0
