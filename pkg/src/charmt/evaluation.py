"""Corpus BLEU against single references and cosine nearest neighbours."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    candidate_length: int
    reference_length: int

    def to_json(self) -> str:
        data = asdict(self)
        data["precisions"] = list(self.precisions)
        return json.dumps(data, sort_keys=True)


def _tokens(sentence):
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_stats(candidates, references, max_order=MAX_ORDER):
    """Summed clipped matches and candidate n-gram totals per order, plus lengths."""
    matches = np.zeros(max_order, dtype=np.int64)
    totals = np.zeros(max_order, dtype=np.int64)
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_order + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    return matches, totals, c_len, r_len


def bleu(candidates: Sequence, references: Sequence, smooth=False, max_order=MAX_ORDER) -> BleuReport:
    """Corpus-level BLEU on a 0-100 scale.

    Sentences are strings (split on whitespace) or token lists.  Without
    ``smooth`` any zero precision gives a score of 0; with it, every order
    gets one added match and one added n-gram.  Orders for which the
    candidates contain no n-grams at all (very short corpora) are left out of
    the geometric mean.
    """
    candidates, references = list(candidates), list(references)
    if not candidates:
        raise ValueError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    matches, totals, c_len, r_len = ngram_stats(candidates, references, max_order)
    if smooth:
        precisions = (matches + 1) / (totals + 1)
    else:
        precisions = np.where(totals > 0, matches / np.maximum(totals, 1), 0.0)
    if c_len == 0:
        bp = 0.0
    elif c_len < r_len:
        bp = math.exp(1.0 - r_len / c_len)
    else:
        bp = 1.0
    used = precisions[totals > 0]
    if bp == 0.0 or used.size == 0 or (used <= 0).any():
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(float(np.mean(np.log(used))))
        # exact matches should read 100, not 99.99999999999999
        if score > 100.0 or math.isclose(score, 100.0, rel_tol=0, abs_tol=1e-9):
            score = 100.0
    return BleuReport(score, tuple(float(p) for p in precisions), bp, c_len, r_len)


def cosine_matrix(query, table):
    """Cosine similarity of ``query`` against each row of ``table``; 0 for zero-norm vectors."""
    q = np.asarray(query, dtype=float)
    T = np.asarray(table, dtype=float)
    qn = np.linalg.norm(q)
    tn = np.linalg.norm(T, axis=1)
    denom = qn * tn
    dots = T @ q
    out = np.zeros(len(T))
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return out


def nearest_neighbors(query: str, query_vector, words: Sequence[str], vectors, k=5):
    """Top-``k`` ``(word, similarity)`` pairs, excluding the query; ties by word order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    vectors = np.asarray(vectors, dtype=float)
    if len(words) != len(vectors):
        raise ValueError("one vector per word required")
    sims = cosine_matrix(query_vector, vectors)
    ranked = sorted(
        ((w, float(s)) for w, s in zip(words, sims) if w != query),
        key=lambda ws: (-ws[1], ws[0]),
    )
    return ranked[:k]
