import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charmt.attention import AttentionParams, attend, supervision_penalty, supervision_term
from charmt.numerics import Graph, ParamStore


def _setup(seed=0, d_t=4, d_s=3, d_z=5):
    p = AttentionParams("att", d_t, d_s, d_z)
    store = ParamStore("float64")
    p.init(store, np.random.default_rng(seed), 1.0)
    return p, store


class TestAttend:
    def test_single_source(self):
        p, store = _setup()
        g = Graph(store)
        b = np.array([[0.5, -1.0, 2.0]])
        _, a, ctx = attend(g, p, g.const(np.ones((1, 4))), g.const(b))
        np.testing.assert_array_equal(a.value, [[1.0]])
        np.testing.assert_allclose(ctx.value, b)

    def test_identical_sources_uniform(self):
        p, store = _setup(1)
        g = Graph(store)
        b = np.tile([[0.1, 0.2, 0.3]], (4, 1))
        _, a, ctx = attend(g, p, g.const(np.random.default_rng(2).normal(size=(2, 4))), g.const(b))
        np.testing.assert_allclose(a.value, np.full((2, 4), 0.25), rtol=1e-14)
        np.testing.assert_allclose(ctx.value, b[:2], rtol=1e-14)

    def test_straight_line_reference(self):
        p, store = _setup(3)
        rng = np.random.default_rng(4)
        l, B = rng.normal(size=4), rng.normal(size=(3, 3))
        z = np.array([store[p.v] @ np.tanh(store[p.W_t] @ l + store[p.W_s] @ b) for b in B])
        a = np.exp(z - z.max())
        a /= a.sum()
        g = Graph(store)
        log_a, av, ctx = attend(g, p, g.const(l[None]), g.const(B))
        np.testing.assert_allclose(av.value[0], a, rtol=1e-12)
        np.testing.assert_allclose(np.exp(log_a.value[0]), a, rtol=1e-12)
        np.testing.assert_allclose(ctx.value[0], a @ B, rtol=1e-12)

    @settings(max_examples=30)
    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 10_000))
    def test_coefficients_are_distribution(self, n, m, seed):
        p, store = _setup(seed % 7)
        rng = np.random.default_rng(seed)
        g = Graph(store)
        _, a, ctx = attend(g, p, g.const(rng.normal(size=(m, 4)) * 3), g.const(rng.normal(size=(n, 3)) * 3))
        assert np.all(a.value >= 0)
        np.testing.assert_allclose(a.value.sum(axis=1), 1.0, atol=1e-12)
        assert ctx.value.shape == (m, 3)


class TestSupervision:
    def test_certain_alignment(self):
        assert supervision_penalty([0.0, 1.0, 0.0], 1) == 0.0

    def test_no_alignment(self):
        assert supervision_penalty([0.2, 0.8], None) == 0.0

    def test_one_over_e(self):
        assert supervision_penalty([1 / math.e, 1 - 1 / math.e], 0, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_weight_scales(self):
        assert supervision_penalty([0.5, 0.5], 1, 3.0) == pytest.approx(3 * math.log(2))

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            supervision_penalty([1.0], 2)

    def test_graph_term_matches_penalty(self):
        p, store = _setup(5)
        rng = np.random.default_rng(6)
        g = Graph(store)
        log_a, a, _ = attend(g, p, g.const(rng.normal(size=(2, 4))), g.const(rng.normal(size=(3, 3))))
        term = supervision_term(g, log_a, [(0, 2), (1, 0)], 0.7)
        expected = supervision_penalty(a.value[0], 2, 0.7) + supervision_penalty(a.value[1], 0, 0.7)
        assert float(term.value) == pytest.approx(expected, rel=1e-12)
        assert supervision_term(g, log_a, [], 1.0) is None
        assert supervision_term(g, log_a, [(0, 1)], 0.0) is None
