"""Two-level beam search: a character beam proposes words, a word beam builds sentences."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import attend, source_keys
from .corpus import CHAR_EOS_ID, CHAR_UNK_ID, EOS, EOW_ID, PAD_ID, SOS, SOS_ID, SOW_ID, decode_word_chars, lowercase_word
from .generator import V2cBound, v2c_condition, v2c_step, word_scores
from .numerics import Graph


@dataclass
class CharHypothesis:
    chars: tuple
    logprob: float
    state: tuple | None = None
    finished: bool = False


@dataclass
class WordHypothesis:
    words: tuple
    logprob: float
    state: tuple | None = None
    finished: bool = False

    def score(self, length_normalize=False):
        if length_normalize:
            return self.logprob / (len(self.words) + 1)
        return self.logprob


@dataclass
class Translation:
    words: tuple
    logprob: float
    truncated: bool = False
    finals: list = field(default_factory=list)

    @property
    def text(self):
        return " ".join(self.words)


def _top(cands, k):
    """The ``k`` best ``(logprob, key, payload)`` entries, ties broken by ``key``."""
    return heapq.nsmallest(k, cands, key=lambda c: (-c[0], c[1]))


class Decoder:
    """Beam search over one model snapshot; parameters are never modified."""

    def __init__(self, model):
        self.model = model
        self.cfg = model.config
        self.graph = Graph(model.store, record=False)
        self._emb_cache: dict = {}
        if model.output == "v2c":
            self.bound = V2cBound(self.graph, model.v2c)
        W, U, b = model.tgt_lstm.bind(self.graph)
        self._tgt_lstm = (W, U, b)

    # -- model pieces ---------------------------------------------------------

    def encode_source(self, src_words):
        B = self.model.source_contexts(self.graph, list(src_words))
        return B, source_keys(self.graph, self.model.att, B)

    def advance(self, state, word):
        """Feed one target word to the target-context LSTM; returns ``(state, l)``."""
        x = self.model.target_inputs(self.graph, [word], self._emb_cache)
        state = nx.lstm_step(self.graph, x, state, self.model.tgt_lstm, self._tgt_lstm)
        return state, nx.hidden(self.graph, state)

    def start_state(self):
        return self.advance(None, SOS)

    def attend(self, source, l):
        B, keys = source
        _, a, ctx = attend(self.graph, self.model.att, l, B, keys)
        return a, ctx

    # -- candidate generation ---------------------------------------------------

    def char_beam_expand(self, cond, k_c, k_w, max_word_len=None):
        """Words proposed by the character beam for one condition row.

        Runs until at least ``k_w`` finished words exist and no active
        hypothesis can still beat the ``k_w``-th of them, or nothing is left
        to expand.  Returns ``(finals, truncated)`` with ``finals`` a list of
        ``(char_ids, logprob)`` sorted best first.
        """
        max_word_len = self.cfg.max_word_len if max_word_len is None else max_word_len
        active = [CharHypothesis((), 0.0, None)]
        finals: list = []
        step = 0
        while active:
            n = len(active)
            prev = [SOW_ID if step == 0 else hyp.chars[-1] for hyp in active]
            state = active[0].state if step == 0 else states
            logp, state = v2c_step(self.graph, self.bound, prev, cond, state, step, max_word_len)
            lp = logp.value
            base = np.array([hyp.logprob for hyp in active])[:, None]
            total = base + lp
            # terminal extensions
            for b, hyp in enumerate(active):
                if np.isfinite(lp[b, EOW_ID]):
                    finals.append((hyp.chars + (EOW_ID,), float(total[b, EOW_ID])))
                if step == 0 and np.isfinite(lp[b, CHAR_EOS_ID]):
                    finals.append(((CHAR_EOS_ID,), float(total[b, CHAR_EOS_ID])))
            cont = total.copy()
            cont[:, [SOW_ID, EOW_ID, CHAR_EOS_ID, CHAR_UNK_ID]] = -np.inf
            flat = cont.ravel()
            n_ok = int(np.isfinite(flat).sum())
            kk = min(k_c, n_ok)
            if kk == 0:
                active = []
            else:
                thresh = np.partition(flat, flat.size - kk)[flat.size - kk]
                sel = np.flatnonzero(flat >= thresh)
                V = lp.shape[1]
                cands = [(float(flat[i]), active[i // V].chars + (int(i % V),), i) for i in sel]
                chosen = _top(cands, kk)
                rows_ = np.array([i // V for _, _, i in chosen], dtype=np.intp)
                states = nx.rows(self.graph, state, rows_)
                active = [CharHypothesis(chars, score) for score, chars, _ in chosen]
            step += 1
            if len(finals) >= k_w and active:
                kth = sorted((-f[1] for f in finals))[k_w - 1]
                if max(a.logprob for a in active) <= -kth:
                    break
        finals.sort(key=lambda f: (-f[1], f[0]))
        return finals, len(finals) < k_w

    def word_candidates(self, ctx, l, k_w, k_c, eos_only=False):
        """``(word, logprob)`` proposals for the next target word."""
        model = self.model
        if model.output == "softmax":
            scores = word_scores(self.graph, model.softmax, ctx, l).value[0]
            m = scores.max()
            logp = scores - (m + np.log(np.exp(scores - m).sum()))
            vocab = model.vocabs.tgt_words
            if eos_only:
                return [(EOS, float(logp[vocab.eos]))]
            logp = logp.copy()
            logp[[PAD_ID, SOS_ID]] = -np.inf
            kk = min(k_w, len(logp) - 2)
            thresh = np.partition(logp, logp.size - kk)[logp.size - kk]
            cands = [(float(logp[i]), vocab.decode(int(i)), None) for i in np.flatnonzero(logp >= thresh)]
            return [(w, s) for s, w, _ in _top(cands, kk)]
        cond = v2c_condition(self.graph, self.bound, ctx, l)
        chars = model.vocabs.tgt_chars
        if eos_only:
            logp, _ = v2c_step(self.graph, self.bound, [SOW_ID], cond, None, 0, self.cfg.max_word_len)
            return [(EOS, float(logp.value[0, CHAR_EOS_ID]))]
        finals, _ = self.char_beam_expand(cond, k_c, k_w)
        return [(decode_word_chars(ids, chars), s) for ids, s in finals[:k_w]]

    # -- sentence search ------------------------------------------------------

    def translate(self, src_words: Sequence[str], k_w=None, k_c=None, max_sent_len=None,
                  length_normalize=None) -> Translation:
        """Beam search for the best target sentence.

        ``max_sent_len`` caps the number of words before EOS; at the cap only
        EOS is scored, so a finished hypothesis always exists.
        """
        if not src_words:
            raise ValueError("empty source sentence")
        cfg = self.cfg
        k_w = cfg.k_w if k_w is None else k_w
        k_c = cfg.k_c if k_c is None else k_c
        if k_w < 1 or k_c < 1:
            raise ValueError("beam widths must be >= 1")
        max_sent_len = cfg.max_sent_len if max_sent_len is None else max_sent_len
        norm = cfg.length_normalize if length_normalize is None else length_normalize
        source = self.encode_source(src_words)
        beam = [WordHypothesis((), 0.0, self.start_state())]
        finals: list[WordHypothesis] = []
        truncated = False
        for step in range(max_sent_len + 1):
            last = step == max_sent_len
            cands = []
            for hyp in beam:
                l = hyp.state[1]
                _, ctx = self.attend(source, l)
                for word, lp in self.word_candidates(ctx, l, k_w, k_c, eos_only=last):
                    total = hyp.logprob + lp
                    if word == EOS:
                        finals.append(WordHypothesis(hyp.words, total, None, True))
                    else:
                        cands.append((total, hyp.words + (word,), hyp))
            if last and beam:
                truncated = True
            chosen = _top(cands, k_w)
            beam = [WordHypothesis(words, s, self.advance(parent.state[0], words[-1]))
                    for s, words, parent in chosen]
            if not beam:
                break
            if finals and not norm:
                # scores only fall as words are added
                if max(f.logprob for f in finals) >= max(b.logprob for b in beam):
                    break
        finals.sort(key=lambda f: (-f.score(norm), f.words))
        best = finals[0]
        return Translation(best.words, best.logprob, truncated and len(best.words) == max_sent_len,
                           [(f.words, f.logprob) for f in finals])


def char_beam_expand(model, ctx, l, k_c, k_w, max_word_len=None):
    """Character-beam word proposals for attended vector ``ctx`` and target context ``l``."""
    dec = Decoder(model)
    g = dec.graph
    cond = v2c_condition(g, dec.bound, g.const(np.atleast_2d(ctx)), g.const(np.atleast_2d(l)))
    return dec.char_beam_expand(cond, k_c, k_w, max_word_len)


def word_beam_translate(model, src_words, k_w=None, k_c=None, max_sent_len=None, length_normalize=None):
    return Decoder(model).translate(src_words, k_w, k_c, max_sent_len, length_normalize)


def score_translation(model, src_words, tgt_words) -> float:
    """Teacher-forced log-probability of ``tgt_words`` (plus EOS) given the source."""
    g = Graph(model.store, record=False)
    return -float(model.sentence_loss(g, list(src_words), list(tgt_words), None, 0.0).value)


def default_max_len(src_words, cfg):
    """Decoding cap: twice the source length plus five, within ``max_sent_len``."""
    return min(cfg.max_sent_len, 2 * len(src_words) + 5)


def prepare_source(model, words) -> tuple:
    """Source words as the model reads them: lowercased for the word model and
    cut to ``max_word_len`` characters so any input can be composed."""
    if model.mode == "word":
        words = [lowercase_word(w) for w in words]
    return tuple(w[: model.config.max_word_len] for w in words)


def translate_sentences(model, sources, k_w=None, k_c=None) -> list:
    """Beam-search results for already prepared source sentences, in input order."""
    dec = Decoder(model)
    return [dec.translate(list(src), k_w, k_c, default_max_len(src, model.config)) for src in sources]

