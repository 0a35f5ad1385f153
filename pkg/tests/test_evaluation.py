import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charmt.evaluation import bleu, cosine_matrix, nearest_neighbors

words = st.sampled_from(["a", "b", "c", "d", "e", "ção", "ß"])
sentences = st.lists(words, min_size=1, max_size=8).map(" ".join)


class TestBleu:
    def test_identity(self):
        refs = ["the cat is on the mat", "there is a cat", "a b"]
        assert bleu(refs, refs).bleu == 100.0

    def test_disjoint(self):
        assert bleu(["x y z w v"], ["a b c d e"]).bleu == 0.0

    def test_no_four_gram_match(self):
        report = bleu(["a b c d x"], ["a b c y d"])
        assert report.bleu == 0.0
        assert report.precisions[3] == 0.0

    def test_clipped_unigram_precision(self):
        report = bleu(["the the the the the the the"], ["the cat is on the mat"])
        assert report.precisions[0] == 2 / 7

    def test_brevity_penalty(self):
        report = bleu(["a b c d"], ["a b c d e f g h"])
        assert report.brevity_penalty == pytest.approx(math.exp(1 - 8 / 4))
        assert report.bleu == pytest.approx(100 * math.exp(1 - 2), rel=1e-12)

    def test_hand_computed_score(self):
        # 5 candidate words, unigram 4/5, bigram 2/4, trigram 1/3, 4-gram 0/2 -> 0; smoothed is positive
        cand, ref = ["a b c x d"], ["a b c d e"]
        assert bleu(cand, ref).bleu == 0.0
        s = bleu(cand, ref, smooth=True)
        expected = 100 * math.exp(sum(math.log(p) for p in (5 / 6, 3 / 5, 2 / 4, 1 / 3)) / 4)
        assert s.bleu == pytest.approx(expected, rel=1e-12)

    def test_json_report(self):
        data = json.loads(bleu(["a b"], ["a b"]).to_json())
        assert set(data) == {"bleu", "precisions", "brevity_penalty", "candidate_length", "reference_length"}
        assert data["bleu"] == 100.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu(["a"], ["a", "b"])

    @settings(max_examples=60)
    @given(st.lists(sentences, min_size=1, max_size=6))
    def test_identity_property(self, refs):
        assert bleu(refs, refs).bleu == 100.0

    @settings(max_examples=60)
    @given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=6))
    def test_bounded(self, pairs):
        cands, refs = zip(*pairs)
        for smooth in (False, True):
            r = bleu(list(cands), list(refs), smooth=smooth)
            assert 0.0 <= r.bleu <= 100.0
            assert all(0.0 <= p <= 1.0 for p in r.precisions)
            assert 0.0 < r.brevity_penalty <= 1.0


class TestNeighbors:
    def test_exact_match_first(self):
        vecs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        out = nearest_neighbors("q", np.array([0.0, 2.0]), ["x", "y", "z"], vecs, k=2)
        assert out[0] == ("y", 1.0)

    def test_orthogonal(self):
        assert cosine_matrix(np.array([1.0, 0.0]), np.array([[0.0, 3.0]]))[0] == 0.0

    def test_query_excluded_and_zero_vectors(self):
        vecs = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.1]])
        out = nearest_neighbors("a", vecs[0], ["a", "b", "c"], vecs, k=5)
        assert [w for w, _ in out] == ["c", "b"]
        assert out[1][1] == 0.0

    def test_ten_word_fixture_matches_brute_force(self):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(10)]
        vecs = rng.normal(size=(10, 4))
        q = rng.normal(size=4)
        sims = [float(q @ v / np.linalg.norm(q) / np.linalg.norm(v)) for v in vecs]
        expected = sorted(zip(words, sims), key=lambda ws: -ws[1])[:5]
        got = nearest_neighbors("query", q, words, vecs, k=5)
        assert [w for w, _ in got] == [w for w, _ in expected]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in expected], rtol=1e-12)

    def test_ties_by_word(self):
        vecs = np.ones((3, 2))
        assert [w for w, _ in nearest_neighbors("q", np.ones(2), ["c", "a", "b"], vecs, 3)] == ["a", "b", "c"]

    def test_bad_k(self):
        with pytest.raises(ValueError):
            nearest_neighbors("q", np.ones(2), ["a"], np.ones((1, 2)), 0)
