"""Finite-difference checks of every model component on tiny random instances."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .attention import AttentionParams, attend, supervision_term
from .config import ModelConfig
from .corpus import CHAR_EOS_ID, EOW_ID, SOW_ID, make_corpus
from .encoder import BilstmParams, C2wParams, bilstm_context, c2w_compose
from .generator import V2cBound, V2cParams, WordSoftmaxParams, v2c_condition, v2c_loss, word_scores
from .model import Model, Vocabs
from .numerics import Graph, ParamStore

TINY = ModelConfig(d_lstm=5, d_sw=4, d_tw=4, d_sc=3, d_tc=3, d_z=4, min_count=1, dtype="float64", init_scale=0.5)


def _check(build, store, samples, seed, names=None):
    def f(st):
        g = Graph(st, record=False)
        return float(build(g).value)

    def grad(st):
        g = Graph(st)
        return g.backward(build(g))

    err, _ = nx.finite_difference_check(f, grad, store, sample_count=samples, seed=seed, names=names)
    return err


def _c2w(rng, samples, seed):
    p = C2wParams("c2w", 6, 3, 5, 4)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    seqs = [[SOW_ID, 4, 5, EOW_ID], [SOW_ID, 5, EOW_ID], [SOW_ID, 4, 4, 5, EOW_ID]]
    w = rng.normal(size=(3, 4))

    def build(g):
        out = c2w_compose(g, p, seqs)
        return nx.total(g, nx.mul(g, out, g.const(w)))

    names = [n for n in store.names() if n not in (p.sos, p.eos)]
    return _check(build, store, samples, seed, names)


def _encoder(rng, samples, seed):
    p = BilstmParams("enc", 4, 5, 4)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    X = rng.normal(size=(4, 4))
    w = rng.normal(size=(4, 4))

    def build(g):
        return nx.total(g, nx.mul(g, bilstm_context(g, p, g.const(X)), g.const(w)))

    return _check(build, store, samples, seed)


def _attention(rng, samples, seed):
    p = AttentionParams("att", 5, 4, 4)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    L, B = rng.normal(size=(3, 5)), rng.normal(size=(4, 4))
    w = rng.normal(size=(3, 4))

    def build(g):
        _, a, ctx = attend(g, p, g.const(L), g.const(B))
        return nx.add(g, nx.total(g, nx.mul(g, ctx, g.const(w))), nx.total(g, nx.mul(g, a, a)))

    return _check(build, store, samples, seed)


def _softmax(rng, samples, seed):
    p = WordSoftmaxParams("out", 7, 4, 5)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    A, L = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))

    def build(g):
        return nx.cross_entropy(g, word_scores(g, p, g.const(A), g.const(L)), [1, 6, 3])

    return _check(build, store, samples, seed)


def _v2c(rng, samples, seed):
    p = V2cParams("v2c", "chars", 7, 3, 4, 5, 5)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    A, L = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    seqs = [[SOW_ID, 4, 5, EOW_ID], [CHAR_EOS_ID], [SOW_ID, 6, 4, 4, EOW_ID]]

    def build(g):
        bound = V2cBound(g, p)
        return v2c_loss(g, bound, seqs, v2c_condition(g, bound, g.const(A), g.const(L)), 64)

    return _check(build, store, samples, seed)


def _supervision(rng, samples, seed):
    p = AttentionParams("att", 5, 4, 4)
    store = ParamStore("float64")
    p.init(store, rng, 0.5)
    L, B = rng.normal(size=(3, 5)), rng.normal(size=(4, 4))

    def build(g):
        log_a, _, _ = attend(g, p, g.const(L), g.const(B))
        return supervision_term(g, log_a, [(0, 1), (1, 2), (2, 2)], 1.0)

    return _check(build, store, samples, seed)


def _tiny_corpus():
    return make_corpus(["ab ba a", "b ab"], ["bab a", "a ba"])


def _full(rng, samples, seed, output="v2c"):
    corpus = _tiny_corpus()
    layout = ("c2w", "c2w", "v2c") if output == "v2c" else ("lookup", "lookup", "softmax")
    model = Model(TINY, Vocabs.build(corpus, 1), *layout).init_params(rng)
    src, tgt = corpus.pairs[0]

    def build(g):
        return model.sentence_loss(g, list(src), list(tgt), {0: 1, 1: 0}, 1.0)

    return _check(build, model.store, samples, seed)


COMPONENTS = {
    "c2w": _c2w,
    "encoder": _encoder,
    "attention": _attention,
    "word_softmax": _softmax,
    "v2c": _v2c,
    "supervision": _supervision,
    "char_model": _full,
    "word_model": lambda rng, samples, seed: _full(rng, samples, seed, "softmax"),
}


def run_suite(seed=0, samples=20) -> dict:
    """Maximum relative error per component (64-bit, central differences with eps 1e-5)."""
    out = {}
    for k, (name, fn) in enumerate(COMPONENTS.items()):
        out[name] = fn(np.random.default_rng(seed + k), samples, seed)
    return out
