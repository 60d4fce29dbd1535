import logging
import math

import numpy as np
import pytest

from oovmap.embeddings import EmbeddingTable
from oovmap.knn import KnnRefiner, RefinementConfig, cosine_similarity, knn_merge, knn_refine

SQRT2 = math.sqrt(2.0)


def table(d):
    return EmbeddingTable.from_dict({w: np.asarray(v, float) for w, v in d.items()})


class TestCosine:
    def test_self(self):
        assert cosine_similarity([1, 2], [1, 2]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_antipodal(self):
        assert cosine_similarity([1, 0], [-1, 0]) == -1.0

    def test_zero_vector(self):
        assert cosine_similarity([0, 0], [1, 0]) == 0.0


class TestRefine:
    def test_zero_shift_is_identity(self):
        orig = table({"t": [0.3, 0.4], "n1": [1.0, 0.0], "n2": [0.0, 1.0], "n3": [1.0, 1.0]})
        refined = table({"n1": [1.0, 0.0], "n2": [0.0, 1.0], "n3": [1.0, 1.0]})
        out = knn_refine("t", orig, refined, RefinementConfig(k=3, pool=("n1", "n2", "n3")))
        np.testing.assert_array_equal(out, [0.3, 0.4])

    def test_single_neighbor(self):
        # shift (1, 2), cosine between (1, 0) and (1, 1) is 1/sqrt(2)
        orig = table({"t": [1.0, 0.0], "n": [1.0, 1.0]})
        refined = table({"n": [2.0, 3.0]})
        out = knn_refine("t", orig, refined, RefinementConfig(k=1, pool=("n",)))
        np.testing.assert_allclose(out, [1.0 + 1.0 / SQRT2, SQRT2], rtol=1e-15)

    def test_target_in_pool(self):
        # neighbors of t: t itself (cos 1), v (cos 1/sqrt 2); u (cos 0) is third
        orig = table({"t": [1.0, 0.0], "u": [0.0, 1.0], "v": [1.0, 1.0]})
        refined = table({"t": [1.0, 1.0], "u": [0.0, 3.0], "v": [3.0, 1.0]})
        out = knn_refine("t", orig, refined, RefinementConfig(k=2, pool=("t", "u", "v")))
        np.testing.assert_allclose(out, [1.0 + SQRT2, 1.0], rtol=1e-15)

    def test_weights_not_normalized(self):
        delta = np.array([0.1, -0.2])
        pool = {"p1": [2.0, 4.0], "p2": [0.5, 1.0], "p3": [3.0, 6.0]}
        orig = table({"t": [1.0, 2.0], **pool})
        refined = table({w: np.asarray(v) + delta for w, v in pool.items()})
        cfg = RefinementConfig(k=3, pool=tuple(pool))
        np.testing.assert_allclose(knn_refine("t", orig, refined, cfg), [1.3, 1.4], rtol=1e-12)
        norm = RefinementConfig(k=3, pool=tuple(pool), normalize=True)
        np.testing.assert_allclose(knn_refine("t", orig, refined, norm), [1.1, 1.8], rtol=1e-12)

    def test_negative_cosines_kept(self):
        orig = table({"t": [1.0, 0.0], "n": [-1.0, 0.0]})
        refined = table({"n": [-1.0, 1.0]})
        out = knn_refine("t", orig, refined, RefinementConfig(k=1, pool=("n",)))
        np.testing.assert_allclose(out, [1.0, -1.0])

    def test_ties_lexicographic(self):
        orig = table({"t": [1.0, 0.0], "b": [2.0, 0.0], "a": [3.0, 0.0]})
        refined = table({"b": [2.0, 0.0], "a": [3.0, 0.0]})
        r = KnnRefiner(orig, refined, RefinementConfig(k=1, pool=("b", "a")))
        idx, _ = r.neighbors(orig["t"])
        assert r.pool[idx[0]] == "a"

    def test_small_pool_warns(self, caplog):
        orig = table({"t": [1.0, 0.0], "n": [1.0, 1.0]})
        refined = table({"n": [2.0, 3.0]})
        with caplog.at_level(logging.WARNING):
            out = knn_refine("t", orig, refined, RefinementConfig(k=3, pool=("n",)))
        assert "fewer than k" in caplog.text
        np.testing.assert_allclose(out, [1.0 + 1.0 / SQRT2, SQRT2])

    def test_missing_target(self):
        orig = table({"n": [1.0]})
        with pytest.raises(KeyError):
            knn_refine("t", orig, orig, RefinementConfig(k=1, pool=("n",)))

    def test_pool_must_be_in_both_tables(self):
        orig = table({"t": [1.0], "n": [1.0]})
        with pytest.raises(ValueError):
            knn_refine("t", orig, table({"x": [1.0]}), RefinementConfig(k=1, pool=("n",)))

    def test_output_dim(self):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(10)]
        orig = EmbeddingTable(words, rng.normal(size=(10, 5)))
        ref = EmbeddingTable(words[:6], rng.normal(size=(6, 5)))
        assert knn_refine("w9", orig, ref, RefinementConfig(k=3, pool=words[:6])).shape == (5,)


def test_knn_merge_layout():
    orig = table({"a": [1.0, 0.0], "b": [0.0, 1.0], "u": [1.0, 0.1]})
    trained = table({"a": [2.0, 0.0], "b": [0.0, 2.0]})
    merged, rep = knn_merge(orig, trained, {"a": 4, "b": 4}, tau_t=1, tau_m=1, k=1)
    assert merged.words == ("a", "b", "u")
    np.testing.assert_array_equal(merged["a"], trained["a"])
    cos = 1.0 / math.sqrt(1.01)
    np.testing.assert_allclose(merged["u"], [1.0 + cos, 0.1])
    assert (rep.kept, rep.mapped, rep.residual) == (2, 1, 0)
