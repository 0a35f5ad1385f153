"""Word vectors from lookup tables or character composition, and BLSTM context."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import EOS, EOW_ID, SOS, SOW_ID, Vocab, encode_word_chars
from .numerics import Graph, LstmParams, Node, NumericsError, ParamStore


@dataclass(frozen=True)
class C2wParams:
    """Character lookup, forward/backward character LSTMs and the output combination."""

    prefix: str
    n_chars: int
    d_char: int
    d_hidden: int
    d_out: int

    @property
    def char_emb(self):
        return f"{self.prefix}.char_emb"

    @property
    def fwd(self):
        return LstmParams(f"{self.prefix}.fwd", self.d_char, self.d_hidden)

    @property
    def bwd(self):
        return LstmParams(f"{self.prefix}.bwd", self.d_char, self.d_hidden)

    @property
    def D_f(self):
        return f"{self.prefix}.D_f"

    @property
    def D_b(self):
        return f"{self.prefix}.D_b"

    @property
    def b_d(self):
        return f"{self.prefix}.b_d"

    @property
    def sos(self):
        return f"{self.prefix}.sos"

    @property
    def eos(self):
        return f"{self.prefix}.eos"

    def init(self, store: ParamStore, rng, scale=0.1, forget_bias=1.0, char_emb=True):
        if char_emb:
            store.uniform(self.char_emb, (self.n_chars, self.d_char), rng, scale)
        self.fwd.init(store, rng, scale, forget_bias)
        self.bwd.init(store, rng, scale, forget_bias)
        store.uniform(self.D_f, (self.d_out, self.d_hidden), rng, scale)
        store.uniform(self.D_b, (self.d_out, self.d_hidden), rng, scale)
        store.add(self.b_d, np.zeros(self.d_out))
        # sentence markers are control tokens with their own vectors
        store.uniform(self.sos, (self.d_out,), rng, scale)
        store.uniform(self.eos, (self.d_out,), rng, scale)


def _check_word_ids(seq):
    if len(seq) < 2 or seq[0] != SOW_ID or seq[-1] != EOW_ID:
        raise NumericsError(f"character sequence must start with SOW and end with EOW: {seq}")


def c2w_compose(graph: Graph, p: C2wParams, char_seqs: Sequence[Sequence[int]]) -> Node:
    """Compose one vector per character sequence; returns ``(len(char_seqs), d_out)``.

    Sequences are grouped by length and each group runs through the two
    character LSTMs as one batch.  Only the final forward state (after EOW)
    and the final backward state (after SOW) enter the output.
    """
    if not char_seqs:
        raise NumericsError("c2w_compose needs at least one word")
    for seq in char_seqs:
        _check_word_ids(seq)
    emb = graph.param(p.char_emb)
    fwd, bwd = p.fwd, p.bwd
    Wf, Uf, bf = fwd.bind(graph)
    Wb, Ub, bb_ = bwd.bind(graph)
    # project the whole character table once per direction
    pf, pb = nx.linear(graph, emb, Wf), nx.linear(graph, emb, Wb)
    fb, bb = (None, Uf, bf), (None, Ub, bb_)
    buckets: dict[int, list[int]] = {}
    for k, seq in enumerate(char_seqs):
        buckets.setdefault(len(seq), []).append(k)
    hf_parts, hb_parts, order = [], [], []
    for length in sorted(buckets):
        members = buckets[length]
        ids = np.array([char_seqs[k] for k in members], dtype=np.intp)
        state = None
        for t in range(length):
            state = nx.lstm_step(graph, nx.rows(graph, pf, ids[:, t]), state, fwd, fb)
        hf_parts.append(nx.hidden(graph, state))
        state = None
        for t in range(length - 1, -1, -1):
            state = nx.lstm_step(graph, nx.rows(graph, pb, ids[:, t]), state, bwd, bb)
        hb_parts.append(nx.hidden(graph, state))
        order.extend(members)
    hf = hf_parts[0] if len(hf_parts) == 1 else nx.concat(graph, hf_parts, axis=0)
    hb = hb_parts[0] if len(hb_parts) == 1 else nx.concat(graph, hb_parts, axis=0)
    out = nx.add(
        graph,
        nx.linear(graph, hf, graph.param(p.D_f)),
        nx.linear(graph, hb, graph.param(p.D_b)),
        graph.param(p.b_d),
    )
    if order != list(range(len(order))):
        inverse = np.empty(len(order), dtype=np.intp)
        inverse[np.array(order)] = np.arange(len(order))
        out = nx.rows(graph, out, inverse)
    return out


@dataclass(frozen=True)
class WordProjection:
    """Maps sentence tokens to ``d_w`` vectors, by lookup table or by C2W."""

    prefix: str
    mode: str  # "lookup" | "c2w"
    vocab_size: int
    d_w: int
    c2w: C2wParams | None = None

    @property
    def table(self):
        return f"{self.prefix}.emb"

    def init(self, store: ParamStore, rng, scale=0.1, forget_bias=1.0):
        if self.mode == "lookup":
            store.uniform(self.table, (self.vocab_size, self.d_w), rng, scale)
        elif self.mode == "c2w":
            self.c2w.init(store, rng, scale, forget_bias)
        else:
            raise ValueError(f"unknown projection mode {self.mode!r}")


def embed_words(
    graph: Graph,
    proj: WordProjection,
    tokens: Sequence[str],
    words: Vocab,
    chars: Vocab | None = None,
    max_word_len=64,
    cache: dict | None = None,
) -> Node:
    """Vectors for a token sequence that may contain the SOS/EOS markers.

    Lookup mode reads table rows (UNK row for unknown words).  C2W mode
    composes each distinct word once and uses dedicated marker vectors.
    ``cache`` optionally maps word -> composed ``(1, d_w)`` node for reuse
    across calls on the same graph.
    """
    if not tokens:
        raise NumericsError("embed_words needs at least one token")
    if proj.mode == "lookup":
        ids = [words.encode(t) for t in tokens]
        return nx.rows(graph, graph.param(proj.table), ids)
    p = proj.c2w
    if cache is not None and len(tokens) == 1 and tokens[0] in cache:
        return cache[tokens[0]]
    distinct = [t for t in dict.fromkeys(tokens) if t not in (SOS, EOS)]
    pieces = [nx.reshape(graph, graph.param(p.sos), (1, -1)),
              nx.reshape(graph, graph.param(p.eos), (1, -1))]
    slot = {SOS: 0, EOS: 1}
    if distinct:
        seqs = [encode_word_chars(w, chars, max_word_len) for w in distinct]
        pieces.append(c2w_compose(graph, p, seqs))
        for k, w in enumerate(distinct):
            slot[w] = 2 + k
    table = nx.concat(graph, pieces, axis=0)
    out = nx.rows(graph, table, [slot[t] for t in tokens])
    if cache is not None and len(tokens) == 1:
        cache[tokens[0]] = out
    return out


@dataclass(frozen=True)
class BilstmParams:
    """Forward and backward sentence LSTMs with a linear combination into ``d_out``."""

    prefix: str
    d_in: int
    d_hidden: int
    d_out: int

    @property
    def fwd(self):
        return LstmParams(f"{self.prefix}.fwd", self.d_in, self.d_hidden)

    @property
    def bwd(self):
        return LstmParams(f"{self.prefix}.bwd", self.d_in, self.d_hidden)

    @property
    def C_f(self):
        return f"{self.prefix}.C_f"

    @property
    def C_b(self):
        return f"{self.prefix}.C_b"

    @property
    def bias(self):
        return f"{self.prefix}.bias"

    def init(self, store: ParamStore, rng, scale=0.1, forget_bias=1.0):
        self.fwd.init(store, rng, scale, forget_bias)
        self.bwd.init(store, rng, scale, forget_bias)
        store.uniform(self.C_f, (self.d_out, self.d_hidden), rng, scale)
        store.uniform(self.C_b, (self.d_out, self.d_hidden), rng, scale)
        store.add(self.bias, np.zeros(self.d_out))


def bilstm_context(graph: Graph, p: BilstmParams, X: Node, return_states=False):
    """Context vectors ``b_i = C_f g^f_i + C_b g^b_i + bias`` for the rows of ``X``."""
    n = X.value.shape[0]
    if n < 1:
        raise NumericsError("bilstm_context needs at least one vector")
    GF = nx.lstm_rows(graph, X, p.fwd)
    GB = nx.lstm_rows(graph, X, p.bwd, reverse=True)
    B = nx.add(
        graph,
        nx.linear(graph, GF, graph.param(p.C_f)),
        nx.linear(graph, GB, graph.param(p.C_b)),
        graph.param(p.bias),
    )
    if return_states:
        return B, GF, GB
    return B
