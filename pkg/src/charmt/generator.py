"""Target side: context LSTM, word softmax (with NCE) and the character generator (V2C)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import CHAR_EOS_ID, EOW_ID, SOW_ID
from .numerics import Graph, LstmParams, Node, NumericsError, ParamStore


# ---------------------------------------------------------------------------
# Target context
# ---------------------------------------------------------------------------


def target_context(graph: Graph, lstm: LstmParams, X: Node) -> Node:
    """Forward LSTM states ``l_0 .. l_{p-1}`` over projected prefix words ``X``.

    Rows are projected one at a time, matching incremental decoding bit for bit.
    """
    n = X.value.shape[0]
    if n < 1:
        raise NumericsError("target prefix must contain at least SOS")
    return nx.lstm_rows(graph, X, lstm, batched=False)


# ---------------------------------------------------------------------------
# Word softmax
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WordSoftmaxParams:
    """Per-word score rows for the attended vector and the target context."""

    prefix: str
    vocab_size: int
    d_attn: int
    d_ctx: int

    @property
    def S_a(self):
        return f"{self.prefix}.S_a"

    @property
    def S_l(self):
        return f"{self.prefix}.S_l"

    def init(self, store: ParamStore, rng, scale=0.1):
        store.uniform(self.S_a, (self.vocab_size, self.d_attn), rng, scale)
        store.uniform(self.S_l, (self.vocab_size, self.d_ctx), rng, scale)


def word_scores(graph: Graph, p: WordSoftmaxParams, ctx: Node, L: Node) -> Node:
    """Unnormalised scores ``S_a a + S_l l`` for every target word type."""
    return nx.add(
        graph,
        nx.linear(graph, ctx, graph.param(p.S_a)),
        nx.linear(graph, L, graph.param(p.S_l)),
    )


def word_softmax(graph: Graph, p: WordSoftmaxParams, ctx: Node, L: Node) -> np.ndarray:
    """Probabilities over the target vocabulary, one row per (ctx, l) row."""
    scores = word_scores(graph, p, ctx, L).value
    return np.exp(scores - _logsumexp(scores))


def _logsumexp(x):
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


class NoiseSampler:
    """Draws NCE negatives from the empirical unigram distribution of target words."""

    def __init__(self, counts, seed=0):
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 1 or (counts < 0).any() or counts.sum() <= 0:
            raise ValueError("noise counts must be non-negative with a positive total")
        self.probs = counts / counts.sum()
        self.rng = np.random.default_rng(seed)

    def sample(self, k):
        return self.rng.choice(len(self.probs), size=k, p=self.probs)


def nce_loss(graph: Graph, p: WordSoftmaxParams, ctx: Node, L: Node, targets, noise: NoiseSampler, k: int) -> Node:
    """Binary NCE objective summed over rows.

    Row ``r`` contrasts its target word with ``k`` fresh noise words.  The
    model is treated as self-normalised, so ``exp(score)`` stands in for the
    probability and each score is offset by ``log(k * q(w))``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    targets = np.asarray(targets, dtype=np.intp)
    V = p.vocab_size
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise NumericsError("NCE target id out of range")
    S_a, S_l = graph.param(p.S_a), graph.param(p.S_l)
    terms = []
    for r, t in enumerate(targets):
        ids = np.concatenate([[t], noise.sample(k)])
        a_r = nx.rows(graph, ctx, [r])
        l_r = nx.rows(graph, L, [r])
        s = nx.add(
            graph,
            nx.linear(graph, a_r, nx.rows(graph, S_a, ids)),
            nx.linear(graph, l_r, nx.rows(graph, S_l, ids)),
        )
        offset = np.log(k * noise.probs[ids])
        sign = np.full(k + 1, -1.0)
        sign[0] = 1.0
        # data term: log sigma(s - off); noise terms: log sigma(-(s - off))
        margin = nx.mul(graph, nx.sub(graph, s, graph.const(offset[None, :])), graph.const(sign[None, :]))
        terms.append(nx.total(graph, nx.log_sigmoid(graph, margin)))
    return nx.scale(graph, nx.add(graph, *terms), -1.0)


# ---------------------------------------------------------------------------
# V2C: character-level word generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class V2cParams:
    """Character generator conditioned on ``[char embedding ; a ; l]``.

    ``char_emb`` names the target character table shared with the target C2W.
    """

    prefix: str
    char_emb: str
    n_chars: int
    d_char: int
    d_attn: int
    d_ctx: int
    d_hidden: int

    @property
    def lstm(self):
        return LstmParams(f"{self.prefix}.lstm", self.d_char + self.d_attn + self.d_ctx, self.d_hidden)

    @property
    def S_y(self):
        return f"{self.prefix}.S_y"

    def init(self, store: ParamStore, rng, scale=0.1, forget_bias=1.0):
        if self.char_emb not in store:
            store.uniform(self.char_emb, (self.n_chars, self.d_char), rng, scale)
        self.lstm.init(store, rng, scale, forget_bias)
        store.uniform(self.S_y, (self.n_chars, self.d_hidden), rng, scale)


def step_mask(n_chars: int, step: int, max_word_len: int) -> np.ndarray:
    """Admissible outputs after ``step`` emitted characters.

    SOW is never emitted.  The first character may be EOS (the end-of-sentence
    word) but not EOW; later characters may be EOW but not EOS.  Once
    ``max_word_len`` characters are out, only EOW remains.
    """
    mask = np.ones(n_chars, dtype=bool)
    mask[SOW_ID] = False
    if step >= max_word_len:
        mask[:] = False
        mask[EOW_ID] = True
    elif step == 0:
        mask[EOW_ID] = False
    else:
        mask[CHAR_EOS_ID] = False
    return mask


class V2cBound:
    """Parameter nodes of a V2C generator bound to one graph."""

    def __init__(self, graph: Graph, p: V2cParams):
        self.p = p
        W = graph.param(p.lstm.names[0])
        self.emb = graph.param(p.char_emb)
        self.W_char = nx.cols(graph, W, 0, p.d_char)
        self.W_cond = nx.cols(graph, W, p.d_char, W.value.shape[1])
        self.U = graph.param(p.lstm.names[1])
        self.b = graph.param(p.lstm.names[2])
        self.S_y = graph.param(p.S_y)
        self.graph = graph
        self._char_proj = None

    @property
    def char_proj(self) -> Node:
        """Every character embedding projected into gate space, computed once."""
        if self._char_proj is None:
            self._char_proj = nx.linear(self.graph, self.emb, self.W_char)
        return self._char_proj


def v2c_condition(graph: Graph, bound: V2cBound, ctx: Node, L: Node) -> Node:
    """Projection of ``[a ; l]`` into gate space, fixed for every character of a word."""
    cond = nx.concat(graph, [ctx, L], axis=1)
    return nx.add(graph, nx.linear(graph, cond, bound.W_cond), bound.b)


def v2c_step(graph: Graph, bound: V2cBound, prev_ids, cond: Node, state: Node | None, step: int,
             max_word_len=64):
    """One character step for a batch of rows.

    Returns ``(log_probs, state)``; ``log_probs`` is ``(rows, n_chars)`` with
    ``-inf`` at inadmissible outputs.  ``state=None`` starts a word.
    """
    prev_ids = np.asarray(prev_ids, dtype=np.intp)
    if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= bound.p.n_chars):
        raise NumericsError("character id out of range")
    xw = nx.rows(graph, bound.char_proj, prev_ids)
    state = nx.lstm_transition(graph, [xw, cond], state, bound.U)
    logits = nx.linear(graph, nx.hidden(graph, state), bound.S_y)
    mask = step_mask(bound.p.n_chars, step, max_word_len)
    return nx.log_softmax(graph, logits, mask[None, :]), state


def _check_char_seq(seq):
    seq = list(seq)
    if seq == [CHAR_EOS_ID]:
        return
    if len(seq) < 3 or seq[0] != SOW_ID or seq[-1] != EOW_ID:
        raise NumericsError(f"malformed character sequence {seq}")
    if SOW_ID in seq[1:] or EOW_ID in seq[1:-1] or CHAR_EOS_ID in seq:
        raise NumericsError(f"malformed character sequence {seq}")


def _io_pairs(seq):
    """Teacher-forcing inputs and targets for one encoded word."""
    if list(seq) == [CHAR_EOS_ID]:
        return [SOW_ID], [CHAR_EOS_ID]
    return list(seq[:-1]), list(seq[1:])


def v2c_loss(graph: Graph, bound: V2cBound, char_seqs: Sequence[Sequence[int]], cond: Node,
             max_word_len=64, per_word=False):
    """Teacher-forced negative log-likelihood of whole words.

    ``char_seqs[r]`` is the encoded word generated under condition row ``r``
    (``[SOW ... EOW]`` or the single ``[EOS]``).  Words of equal length are
    processed as one batch.  With ``per_word`` the per-word log-probabilities
    are returned as well.
    """
    if len(char_seqs) != cond.value.shape[0]:
        raise NumericsError("one condition row per word required")
    buckets: dict[int, list[int]] = {}
    io = []
    for r, seq in enumerate(char_seqs):
        _check_char_seq(seq)
        inp, tgt = _io_pairs(seq)
        io.append((inp, tgt))
        buckets.setdefault(len(inp), []).append(r)
    terms = []
    word_lp = np.zeros(len(char_seqs))
    for length in sorted(buckets):
        members = buckets[length]
        inp = np.array([io[r][0] for r in members], dtype=np.intp)
        tgt = np.array([io[r][1] for r in members], dtype=np.intp)
        cond_b = nx.rows(graph, cond, members)
        state = None
        for t in range(length):
            if t >= max_word_len:
                # forced end of word: probability one, nothing to learn
                break
            xw = nx.rows(graph, bound.char_proj, inp[:, t])
            state = nx.lstm_transition(graph, [xw, cond_b], state, bound.U)
            logits = nx.linear(graph, nx.hidden(graph, state), bound.S_y)
            mask = step_mask(bound.p.n_chars, t, max_word_len)
            term = nx.cross_entropy(graph, logits, tgt[:, t], mask[None, :])
            terms.append(term)
            if per_word:
                lv = np.where(mask, logits.value, -np.inf)
                lp = lv - _logsumexp(lv)
                word_lp[members] += lp[np.arange(len(members)), tgt[:, t]]
    total = terms[0] if len(terms) == 1 else nx.add(graph, *terms)
    if per_word:
        return total, word_lp
    return total


def v2c_word_logprob(graph: Graph, bound: V2cBound, char_ids, cond: Node, max_word_len=64) -> float:
    """Log-probability of one encoded word under a single condition row."""
    if cond.value.shape[0] != 1:
        raise NumericsError("v2c_word_logprob takes one condition row")
    _, lp = v2c_loss(graph, bound, [list(char_ids)], cond, max_word_len, per_word=True)
    return float(lp[0])
