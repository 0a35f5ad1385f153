"""Scikit-learn style front end: ``CharNMT().fit(X, y).predict(X)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .config import ModelConfig
from .corpus import ParallelCorpus, lowercase_word, make_corpus
from .evaluation import bleu, nearest_neighbors
from .model import Model
from .search import prepare_source, translate_sentences
from .training import Trainer, char_perplexity
from .validation import check_beam, check_parallel, check_sentences


class CharNMT(BaseEstimator):
    """Attention-based translation with character-level word composition and generation.

    Parameters
    ----------
    mode : "char" or "word"
        ``"char"`` trains the character model layer by layer; ``"word"``
        trains the word-softmax baseline on lowercased text.
    config : ModelConfig or dict, optional
        Model and optimisation settings; defaults to ``ModelConfig()``.
    checkpoint_dir : str, optional
        Where ``best.ckpt`` and ``final.ckpt`` are written during ``fit``.
    k_w, k_c : int, optional
        Beam widths for :meth:`predict`; ``None`` uses the config values.
    verbose : bool
        Print one line per epoch.
    """

    def __init__(self, mode="char", config=None, checkpoint_dir=None, k_w=None, k_c=None, verbose=False):
        self.mode = mode
        self.config = config
        self.checkpoint_dir = checkpoint_dir
        self.k_w = k_w
        self.k_c = k_c
        self.verbose = verbose

    def _config(self) -> ModelConfig:
        if self.config is None:
            return ModelConfig()
        if isinstance(self.config, ModelConfig):
            return self.config
        if isinstance(self.config, dict):
            return ModelConfig.from_dict(self.config)
        raise TypeError("config must be a ModelConfig, a dict or None")

    def _corpus(self, X, y, alignments=None) -> ParallelCorpus:
        X, y = check_parallel(X, y)
        cfg = self._config()
        corpus = make_corpus(X, y, cfg.max_word_len, cfg.max_sent_len)
        if alignments is not None:
            if len(alignments) != len(corpus):
                raise ValueError("one alignment map per sentence pair required")
            corpus = ParallelCorpus(corpus.pairs, tuple(dict(a or {}) for a in alignments))
        return corpus

    def fit(self, X, y, X_dev=None, y_dev=None, alignments=None):
        """Train on parallel sentences.

        ``X_dev``/``y_dev`` drive early stopping; without them the training
        pairs double as the development set.  ``alignments`` optionally holds
        one ``{target index: source index}`` map per pair.
        """
        if self.mode not in ("char", "word"):
            raise ValueError(f"mode must be 'char' or 'word', got {self.mode!r}")
        check_beam(self.k_w, "k_w")
        check_beam(self.k_c, "k_c")
        train = self._corpus(X, y, alignments)
        dev = self._corpus(X_dev, y_dev) if X_dev is not None else train
        cfg = self._config()
        trainer = Trainer(cfg, self.checkpoint_dir, print if self.verbose else None)
        if self.mode == "word":
            self.model_ = trainer.train_word(train, dev)
        else:
            self.model_ = trainer.train_char(train, dev)
        self.history_ = list(trainer.state.history)
        self.log_ = list(trainer.messages)
        return self

    def _prepare(self, X):
        return [prepare_source(self.model_, s) for s in check_sentences(X, "X")]

    def translate(self, X):
        """Beam-search results (:class:`~charmt.search.Translation`) for each source sentence."""
        check_is_fitted(self, "model_")
        k_w, k_c = check_beam(self.k_w, "k_w"), check_beam(self.k_c, "k_c")
        return translate_sentences(self.model_, self._prepare(X), k_w, k_c)

    def predict(self, X):
        """One translated sentence (space-joined words) per source sentence."""
        return [t.text for t in self.translate(X)]

    def score(self, X, y):
        """Corpus BLEU (0-100) of the predictions against ``y``."""
        refs = check_sentences(y, "y")
        if self.mode == "word":
            refs = [tuple(lowercase_word(w) for w in s) for s in refs]
        return bleu(self.predict(X), refs).bleu

    def perplexity(self, X, y):
        """Teacher-forced per-prediction perplexity (per character for the char model)."""
        check_is_fitted(self, "model_")
        return char_perplexity(self.model_, self._corpus(X, y))

    def word_vectors(self, words, side="source", provider=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.word_vectors(list(words), side, provider)

    def neighbors(self, word, k=5, side="source", provider=None):
        """Most cosine-similar training-vocabulary words to ``word``."""
        check_is_fitted(self, "model_")
        return model_neighbors(self.model_, word, k, side, provider)

    def save(self, path):
        check_is_fitted(self, "model_")
        checkpoint.save(path, self.model_, {"mode": self.mode})

    @classmethod
    def load(cls, path, **params):
        model, extra = checkpoint.load(path)
        est = cls(mode=extra.get("mode", model.mode), config=model.config, **params)
        est.model_ = model
        return est


def model_neighbors(model: Model, word: str, k=5, side="source", provider=None):
    words = model.vocabs.src_words if side == "source" else model.vocabs.tgt_words
    vocab = words.regular_tokens()
    if not vocab:
        return []
    vectors = model.word_vectors(vocab, side, provider)
    query = model.word_vectors([word], side, provider)[0]
    return nearest_neighbors(word, query, vocab, vectors, k)
