"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from typing import Iterable

from .corpus import CorpusError, split_sentence


def check_sentence(sentence, name="sentence") -> tuple:
    """A sentence as a tuple of word strings; strings are split on spaces."""
    if isinstance(sentence, str):
        words = split_sentence(sentence)
    elif isinstance(sentence, Iterable):
        words = tuple(sentence)
    else:
        raise TypeError(f"{name} must be a string or a sequence of words, got {type(sentence).__name__}")
    for w in words:
        if not isinstance(w, str) or not w:
            raise TypeError(f"{name} contains a non-string or empty word: {w!r}")
    return words


def check_sentences(sentences, name="X", allow_empty=False) -> list:
    if isinstance(sentences, str):
        raise TypeError(f"{name} must be a list of sentences, not a single string")
    out = [check_sentence(s, f"{name}[{i}]") for i, s in enumerate(sentences)]
    if not out:
        raise ValueError(f"{name} is empty")
    if not allow_empty:
        for i, words in enumerate(out):
            if not words:
                raise CorpusError(f"{name}[{i}] is an empty sentence")
    return out


def check_parallel(X, y):
    """Validated source and target sentence lists of equal length."""
    X = check_sentences(X, "X")
    y = check_sentences(y, "y")
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sentences but y has {len(y)}")
    return X, y


def check_beam(k, name):
    if k is None:
        return None
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"{name} must be a positive integer, got {k!r}")
    return int(k)
