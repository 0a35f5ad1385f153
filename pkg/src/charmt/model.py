"""The translation model: vocabularies, parameter layout and forward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import AttentionParams, attend, source_keys, supervision_term
from .config import ModelConfig
from .corpus import (EOS, SOS, ParallelCorpus, Vocab, build_char_vocab, build_word_vocab,
                     encode_word_chars)
from .encoder import BilstmParams, C2wParams, WordProjection, bilstm_context, embed_words
from .generator import (NoiseSampler, V2cBound, V2cParams, nce_loss, target_context,
                        v2c_condition, v2c_loss, word_scores, WordSoftmaxParams)
from .numerics import Graph, LstmParams, Node, ParamStore


@dataclass
class Vocabs:
    src_words: Vocab
    tgt_words: Vocab
    src_chars: Vocab
    tgt_chars: Vocab

    @classmethod
    def build(cls, corpus: ParallelCorpus, min_count=2):
        return cls(
            build_word_vocab(corpus.sources, min_count),
            build_word_vocab(corpus.targets, min_count),
            build_char_vocab(corpus.sources),
            build_char_vocab(corpus.targets),
        )

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in ("src_words", "tgt_words", "src_chars", "tgt_chars")}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: Vocab.from_dict(v) for k, v in data.items()})


class Model:
    """Parameter layout plus forward computations for one model variant.

    ``source`` and ``target`` pick the word projection (``"lookup"`` or
    ``"c2w"``); ``output`` picks the generator (``"softmax"`` or ``"v2c"``).
    The word baseline is lookup/lookup/softmax and the character model is
    c2w/c2w/v2c; layer-wise training starts from lookup/lookup/v2c.
    """

    def __init__(self, config: ModelConfig, vocabs: Vocabs, source="c2w", target="c2w",
                 output="v2c", store: ParamStore | None = None):
        if source not in ("lookup", "c2w") or target not in ("lookup", "c2w"):
            raise ValueError("projections must be 'lookup' or 'c2w'")
        if output not in ("softmax", "v2c"):
            raise ValueError("output must be 'softmax' or 'v2c'")
        self.config = config
        self.vocabs = vocabs
        self.source = source
        self.target = target
        self.output = output
        self.store = store if store is not None else ParamStore(config.dtype)
        self.noise: NoiseSampler | None = None
        self._layout()

    @property
    def mode(self):
        return "word" if self.output == "softmax" else "char"

    @property
    def use_nce(self):
        return self.output == "softmax" and len(self.vocabs.tgt_words) > self.config.nce_threshold

    def _layout(self):
        cfg, v = self.config, self.vocabs
        H = cfg.d_lstm
        self.src_c2w = C2wParams("src_c2w", len(v.src_chars), cfg.d_sc, H, cfg.d_sw)
        self.tgt_c2w = C2wParams("tgt_c2w", len(v.tgt_chars), cfg.d_tc, H, cfg.d_tw)
        self.src_proj = WordProjection("src", self.source, len(v.src_words), cfg.d_sw, self.src_c2w)
        self.tgt_proj = WordProjection("tgt", self.target, len(v.tgt_words), cfg.d_tw, self.tgt_c2w)
        self.src_ctx = BilstmParams("src_ctx", cfg.d_sw, H, cfg.d_z)
        self.tgt_lstm = LstmParams("tgt_ctx", cfg.d_tw, H)
        self.att = AttentionParams("att", H, cfg.d_z, cfg.d_z)
        self.softmax = WordSoftmaxParams("out", len(v.tgt_words), cfg.d_z, H)
        self.v2c = V2cParams("v2c", self.tgt_c2w.char_emb, len(v.tgt_chars), cfg.d_tc, cfg.d_z, H, H)

    # -- parameters -----------------------------------------------------------

    def init_params(self, rng=None):
        """Fill the store with fresh uniform parameters (forget-gate bias set)."""
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        s, fb = cfg.init_scale, cfg.forget_bias
        self.store = ParamStore(cfg.dtype)
        self.src_proj.init(self.store, rng, s, fb)
        self.src_ctx.init(self.store, rng, s, fb)
        if self.target == "lookup":
            self.tgt_proj.init(self.store, rng, s, fb)
        else:
            self.tgt_c2w.init(self.store, rng, s, fb)
        self.tgt_lstm.init(self.store, rng, s, fb)
        self.att.init(self.store, rng, s)
        if self.output == "softmax":
            self.softmax.init(self.store, rng, s)
        else:
            self.v2c.init(self.store, rng, s, fb)
        return self

    def expected_shapes(self):
        """Parameter name -> shape for this layout (used to validate checkpoints)."""
        probe = Model(self.config.replace(dtype="float64"), self.vocabs, self.source, self.target, self.output)
        probe.init_params(np.random.default_rng(0))
        return {k: v.shape for k, v in probe.store.values.items()}

    def switch_projections(self, source="c2w", target="c2w", rng=None):
        """Change word projections, adding missing parameters and dropping unused ones."""
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        old = self.store
        self.source, self.target = source, target
        self._layout()
        fresh = Model(cfg, self.vocabs, source, target, self.output)
        fresh.init_params(rng)
        for name in fresh.store.names():
            if name in old:
                fresh.store.set(name, old[name])
        self.store = fresh.store
        return self

    # -- forward pieces -------------------------------------------------------

    def source_contexts(self, graph: Graph, src_words: Sequence[str], cache=None) -> Node:
        tokens = [SOS, *src_words, EOS]
        X = embed_words(graph, self.src_proj, tokens, self.vocabs.src_words,
                        self.vocabs.src_chars, self.config.max_word_len, cache)
        return bilstm_context(graph, self.src_ctx, X)

    def target_inputs(self, graph: Graph, tokens: Sequence[str], cache=None) -> Node:
        return embed_words(graph, self.tgt_proj, tokens, self.vocabs.tgt_words,
                           self.vocabs.tgt_chars, self.config.max_word_len, cache)

    def target_char_ids(self, word: str):
        return encode_word_chars(word, self.vocabs.tgt_chars, self.config.max_word_len)

    def sentence_loss(self, graph: Graph, src: Sequence[str], tgt: Sequence[str],
                      alignment: dict | None = None, supervision_weight: float | None = None,
                      details=False):
        """Teacher-forced negative log-likelihood of ``tgt`` given ``src``.

        One prediction per target word plus the final EOS.  With an alignment
        map ``{target j: source i}`` the attention penalty is added for every
        aligned word (never for EOS).  ``details`` also returns a dict with the
        attention coefficients and the number of scored predictions.
        """
        weight = self.config.supervision_weight if supervision_weight is None else supervision_weight
        B = self.source_contexts(graph, src)
        X = self.target_inputs(graph, [SOS, *tgt])
        L = target_context(graph, self.tgt_lstm, X)
        log_a, a, ctx = attend(graph, self.att, L, B)
        outputs = [*tgt, EOS]
        if self.output == "softmax":
            ids = [self.vocabs.tgt_words.encode(w) for w in outputs]
            if self.use_nce:
                if self.noise is None:
                    raise RuntimeError("NCE needs a noise sampler (call Model.set_noise)")
                nll = nce_loss(graph, self.softmax, ctx, L, ids, self.noise, self.config.nce_negatives)
            else:
                nll = nx.cross_entropy(graph, word_scores(graph, self.softmax, ctx, L), ids)
            n_pred = len(outputs)
        else:
            bound = V2cBound(graph, self.v2c)
            cond = v2c_condition(graph, bound, ctx, L)
            seqs = [self.target_char_ids(w) for w in outputs]
            nll = v2c_loss(graph, bound, seqs, cond, self.config.max_word_len)
            n_pred = sum(min(len(s) - 1, self.config.max_word_len) for s in seqs)
        loss = nll
        if alignment and weight:
            # source word i sits at context row i + 1 (row 0 is SOS)
            links = [(j, i + 1) for j, i in sorted(alignment.items())]
            term = supervision_term(graph, log_a, links, weight)
            if term is not None:
                loss = nx.add(graph, nll, term)
        if details:
            return loss, {"nll": nll, "coefficients": a.value, "log_coefficients": log_a,
                          "predictions": n_pred}
        return loss

    def set_noise(self, corpus: ParallelCorpus, seed=None):
        counts = np.zeros(len(self.vocabs.tgt_words))
        for _, tgt in corpus.pairs:
            for w in [*tgt, EOS]:
                counts[self.vocabs.tgt_words.encode(w)] += 1
        self.noise = NoiseSampler(counts, self.config.seed if seed is None else seed)

    # -- embeddings -------------------------------------------------------------

    def word_vectors(self, words: Sequence[str], side="source", provider=None) -> np.ndarray:
        """Word vectors from the lookup table or the C2W model of one side."""
        proj = self.src_proj if side == "source" else self.tgt_proj
        if provider is not None and provider != proj.mode:
            proj = WordProjection(proj.prefix, provider, proj.vocab_size, proj.d_w, proj.c2w)
        v = self.vocabs
        wv, cv = (v.src_words, v.src_chars) if side == "source" else (v.tgt_words, v.tgt_chars)
        graph = Graph(self.store, record=False)
        return np.array(embed_words(graph, proj, list(words), wv, cv, self.config.max_word_len).value)
