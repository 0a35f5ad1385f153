"""Hierarchical character-level neural machine translation in numpy."""

from .checkpoint import CheckpointError
from .config import ConfigError, ModelConfig, RunConfig
from .corpus import CorpusError, ParallelCorpus, Vocab, load_parallel, make_corpus
from .estimator import CharNMT
from .evaluation import BleuReport, bleu, nearest_neighbors
from .model import Model, Vocabs
from .search import Translation, score_translation, word_beam_translate
from .training import Trainer, TrainingError, train_model

__version__ = "0.1.0"

__all__ = [
    "BleuReport", "CharNMT", "CheckpointError", "ConfigError", "CorpusError", "Model", "ModelConfig",
    "ParallelCorpus", "RunConfig", "Trainer", "TrainingError", "Translation", "Vocab", "Vocabs",
    "bleu", "load_parallel", "make_corpus", "nearest_neighbors", "score_translation", "train_model",
    "word_beam_translate",
]
