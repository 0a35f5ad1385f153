"""Objectives, SGD, C2W distillation and the layer-wise training schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from . import numerics as nx
from .config import ModelConfig
from .corpus import EOS, SOS, ParallelCorpus, encode_word_chars, lowercase_transform, word_types
from .encoder import C2wParams, c2w_compose
from .evaluation import bleu
from .model import Model, Vocabs
from .numerics import Graph, NumericsError, ParamStore
from .search import prepare_source, translate_sentences

log = logging.getLogger(__name__)

STAGES = ("A", "B", "C")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def sentence_loss(model: Model, src, tgt, alignment=None, supervision_weight=None) -> float:
    """Teacher-forced loss of one pair (plus the attention penalty when aligned)."""
    g = Graph(model.store, record=False)
    return float(model.sentence_loss(g, list(src), list(tgt), alignment, supervision_weight).value)


def pair_gradients(model: Model, src, tgt, alignment=None, supervision_weight=None):
    """``(loss, {name: gradient})`` for one pair."""
    g = Graph(model.store, check_finite=False)
    loss = model.sentence_loss(g, list(src), list(tgt), alignment, supervision_weight)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} on pair {' '.join(src)!r} -> {' '.join(tgt)!r}")
    return value, g.backward(loss)


def corpus_loss(model: Model, corpus: ParallelCorpus) -> float:
    """Mean per-pair negative log-likelihood without attention supervision."""
    total = 0.0
    for src, tgt in corpus.pairs:
        total += sentence_loss(model, src, tgt, None, 0.0)
    return total / len(corpus)


def char_perplexity(model: Model, corpus: ParallelCorpus) -> float:
    """Per-prediction perplexity: characters for the char model, words for the baseline."""
    nll = 0.0
    count = 0
    for src, tgt in corpus.pairs:
        g = Graph(model.store, record=False)
        _, info = model.sentence_loss(g, list(src), list(tgt), None, 0.0, details=True)
        nll += float(info["nll"].value)
        count += info["predictions"]
    return float(np.exp(nll / count))


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------


def sum_gradients(parts: Sequence[dict]) -> dict:
    """Add gradient maps in list order (the order fixes the rounding)."""
    total = {name: np.array(g, copy=True) for name, g in parts[0].items()}
    for part in parts[1:]:
        for name, g in part.items():
            total[name] += g
    return total


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global norm ``max_norm``; returns the norm before clipping."""
    norm = nx.global_norm(grads.values())
    if not np.isfinite(norm):
        raise TrainingError("non-finite gradient norm")
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def apply_update(store: ParamStore, grads: dict, learning_rate: float):
    for name, g in grads.items():
        value = store.values[name]
        value -= (learning_rate * g).astype(value.dtype, copy=False)


def sgd_epoch(model: Model, corpus: ParallelCorpus, rng: np.random.Generator, batch_size: int,
              learning_rate: float, grad_clip: float | None = None, supervision_weight=None) -> float:
    """One pass over a seeded permutation of ``corpus``; returns the mean per-pair loss.

    Each mini-batch sums the per-pair gradients, clips the sum to the global
    norm ``grad_clip`` and takes one step ``p -= learning_rate * g``.
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    clip = model.config.grad_clip if grad_clip is None else grad_clip
    order = rng.permutation(len(corpus))
    losses = []
    for start in range(0, len(order), batch_size):
        parts = []
        for i in order[start : start + batch_size]:
            src, tgt = corpus.pairs[i]
            loss, grads = pair_gradients(model, src, tgt, corpus.alignment(i), supervision_weight)
            losses.append(loss)
            parts.append(grads)
        total = sum_gradients(parts)
        clip_gradients(total, clip)
        if learning_rate:
            apply_update(model.store, total, learning_rate)
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Decoding helpers
# ---------------------------------------------------------------------------


def translate_corpus(model: Model, sources, k_w=None, k_c=None) -> list[str]:
    sources = [prepare_source(model, s) for s in sources]
    return [t.text for t in translate_sentences(model, sources, k_w, k_c)]


def corpus_bleu(model: Model, corpus: ParallelCorpus, k_w=None, k_c=None) -> float:
    hyps = translate_corpus(model, corpus.sources, k_w, k_c)
    return bleu(hyps, [" ".join(t) for t in corpus.targets], smooth=False).bleu


# ---------------------------------------------------------------------------
# C2W distillation
# ---------------------------------------------------------------------------


def distill_c2w(store: ParamStore, c2w: C2wParams, chars, words: Sequence[str], targets: np.ndarray,
                epochs: int, learning_rate: float, max_word_len=64, chunk=512, frozen=()):
    """Fit C2W vectors to fixed target vectors with full-batch Adam.

    Minimises the mean over ``words`` of ``||targets[k] - c2w(words[k])||^2``
    and only touches the C2W parameters (the marker vectors and any names
    in ``frozen`` excepted).
    Returns ``(initial_mse, final_mse)``.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(words), c2w.d_out):
        raise ValueError(f"targets must have shape ({len(words)}, {c2w.d_out})")
    if not words:
        return 0.0, 0.0
    seqs = [encode_word_chars(w, chars, max_word_len) for w in words]
    trained = [n for n in store.names() if n.startswith(c2w.prefix + ".") and n not in (c2w.sos, c2w.eos, *frozen)]
    n_words = len(words)

    def loss_and_grads(need_grad=True):
        total_loss = 0.0
        grads = None
        for start in range(0, n_words, chunk):
            g = Graph(store, record=need_grad)
            out = c2w_compose(g, c2w, seqs[start : start + chunk])
            diff = nx.sub(g, out, g.const(targets[start : start + chunk]))
            loss = nx.scale(g, nx.total(g, nx.mul(g, diff, diff)), 1.0 / n_words)
            total_loss += float(loss.value)
            if need_grad:
                part = g.backward(loss)
                grads = part if grads is None else sum_gradients([grads, part])
        return total_loss, grads

    # full-batch Adam; a step that makes the loss non-finite is undone and
    # the rate halved
    current, grads = loss_and_grads()
    initial = current
    lr = learning_rate
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {n: np.zeros_like(store.values[n], dtype=float) for n in trained}
    v = {n: np.zeros_like(store.values[n], dtype=float) for n in trained}
    t = 0
    for _ in range(epochs):
        if current == 0.0:
            break
        saved = {n: store.values[n].copy() for n in trained}
        t += 1
        for n in trained:
            g = grads[n]
            m[n] = beta1 * m[n] + (1 - beta1) * g
            v[n] = beta2 * v[n] + (1 - beta2) * g * g
            step = lr * (m[n] / (1 - beta1 ** t)) / (np.sqrt(v[n] / (1 - beta2 ** t)) + eps)
            store.values[n] -= step.astype(store.values[n].dtype, copy=False)
        try:
            candidate, new_grads = loss_and_grads()
        except NumericsError:
            candidate, new_grads = np.inf, None
        if np.isfinite(candidate):
            current, grads = candidate, new_grads
        else:
            for n, val in saved.items():
                store.values[n] = val
            lr *= 0.5
    final, _ = loss_and_grads(need_grad=False)
    return initial, final


# ---------------------------------------------------------------------------
# Early stopping and the layer-wise schedule
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    """Progress of a training run.

    ``best`` is the lexicographic key ``(dev BLEU, -dev loss)`` of the best
    epoch in the current stage; ``rng`` drives the corpus shuffles.
    """

    model: Model
    rng: np.random.Generator
    stage: str = "A"
    epoch: int = 0
    stage_epoch: int = 0
    best: tuple = (-np.inf, -np.inf)
    best_epoch: int = 0
    since_improvement: int = 0
    learning_rate: float = 0.2
    history: list = field(default_factory=list)

    def enter(self, stage: str):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if STAGES.index(stage) < STAGES.index(self.stage) or (stage == self.stage and self.epoch):
            raise TrainingError(f"stage {self.stage} cannot move to {stage}")
        self.stage = stage
        self.stage_epoch = 0
        self.best = (-np.inf, -np.inf)
        self.best_epoch = 0
        self.since_improvement = 0
        self.learning_rate = self.model.config.learning_rate


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    train_loss: float
    dev_bleu: float
    dev_loss: float
    learning_rate: float
    improved: bool

    def line(self):
        return (f"epoch {self.epoch} stage {self.stage} train_loss {self.train_loss:.4f} "
                f"dev_bleu {self.dev_bleu:.2f} dev_loss {self.dev_loss:.4f} lr {self.learning_rate:g}")


class Trainer:
    """Runs stages with patience-based early stopping on dev BLEU.

    ``on_epoch`` receives each :class:`EpochRecord`; ``checkpoint_dir`` (if
    set) gets ``best.ckpt`` at every improvement and ``final.ckpt`` at the end.
    """

    def __init__(self, config: ModelConfig, checkpoint_dir=None, on_epoch: Callable | None = None,
                 evaluate: Callable | None = None):
        self.config = config
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.on_epoch = on_epoch
        self.evaluate = evaluate
        self.messages: list[str] = []

    def _say(self, text):
        self.messages.append(text)
        log.info(text)
        if self.on_epoch is not None:
            self.on_epoch(text)

    def dev_scores(self, model, dev):
        if self.evaluate is not None:
            return self.evaluate(model, dev)
        return corpus_bleu(model, dev), corpus_loss(model, dev)

    def run_stage(self, state: TrainState, train: ParallelCorpus, dev: ParallelCorpus, max_epochs=None):
        cfg = self.config
        max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
        best_values = None
        while state.stage_epoch < max_epochs:
            lr = state.learning_rate
            loss = sgd_epoch(state.model, train, state.rng, cfg.batch_size, lr, cfg.grad_clip)
            state.epoch += 1
            state.stage_epoch += 1
            dev_bleu, dev_loss = self.dev_scores(state.model, dev)
            key = (dev_bleu, -dev_loss)
            improved = key > state.best
            if improved:
                state.best = key
                state.best_epoch = state.stage_epoch
                state.since_improvement = 0
                best_values = state.model.store.copy()
                self._save(state.model, "best.ckpt", state)
            else:
                state.since_improvement += 1
                if state.since_improvement % cfg.lr_decay_patience == 0:
                    state.learning_rate *= 0.5
            rec = EpochRecord(state.epoch, state.stage, loss, dev_bleu, dev_loss, lr, improved)
            state.history.append(rec)
            self._say(rec.line())
            if state.since_improvement >= cfg.patience_epochs:
                break
        if best_values is not None:
            state.model.store = best_values
        self._say(f"stage {state.stage} stopped after {state.stage_epoch} epochs, best epoch {state.best_epoch}")
        return state

    def _save(self, model, name, state):
        if self.checkpoint_dir is None:
            return
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(self.checkpoint_dir / name, model, {"stage": state.stage, "epoch": state.epoch})

    def train_word(self, train: ParallelCorpus, dev: ParallelCorpus, vocabs: Vocabs | None = None) -> Model:
        """Single-stage word baseline on lowercased text."""
        cfg = self.config
        train, dev = lowercase_transform(train), lowercase_transform(dev)
        vocabs = vocabs or Vocabs.build(train, cfg.min_count)
        model = Model(cfg, vocabs, "lookup", "lookup", "softmax").init_params(np.random.default_rng(cfg.seed))
        if model.use_nce:
            model.set_noise(train)
        state = TrainState(model, np.random.default_rng(cfg.seed), learning_rate=cfg.learning_rate)
        self._say("stage A word model")
        self.run_stage(state, train, dev)
        self._save(state.model, "final.ckpt", state)
        self.state = state
        return state.model

    def train_char(self, train: ParallelCorpus, dev: ParallelCorpus, vocabs: Vocabs | None = None) -> Model:
        """Lookup-based stage A, C2W distillation (B), then C2W fine-tuning (C)."""
        cfg = self.config
        # every training type gets a lookup row so that each can be distilled
        vocabs = vocabs or Vocabs.build(train, 1)
        model = Model(cfg, vocabs, "lookup", "lookup", "v2c").init_params(np.random.default_rng(cfg.seed))
        state = TrainState(model, np.random.default_rng(cfg.seed), learning_rate=cfg.learning_rate)
        self._say("stage A lookup projections")
        self.run_stage(state, train, dev)
        self.stage_a_dev_loss = corpus_loss(state.model, dev)

        state.enter("B")
        self._say("stage B distilling C2W")
        self.distill_report = distill_into_c2w(state.model, train, np.random.default_rng(cfg.seed + 1))
        for side, (before, after) in self.distill_report.items():
            self._say(f"stage B {side} mse {before:.6f} -> {after:.6f}")
        self.swap_dev_loss = corpus_loss(state.model, dev)

        state.enter("C")
        self._say("stage C fine-tuning with C2W")
        self.run_stage(state, train, dev)
        self._save(state.model, "final.ckpt", state)
        self.state = state
        return state.model


def distill_into_c2w(model: Model, corpus: ParallelCorpus, rng=None) -> dict:
    """Swap both lookup projections for C2W models trained to reproduce them."""
    cfg = model.config
    if model.source != "lookup" or model.target != "lookup":
        raise TrainingError("distillation starts from lookup projections")
    sides = {
        "source": (model.src_proj, model.vocabs.src_words, model.vocabs.src_chars, corpus.sources),
        "target": (model.tgt_proj, model.vocabs.tgt_words, model.vocabs.tgt_chars, corpus.targets),
    }
    tables = {side: np.array(model.store[proj.table], dtype=float) for side, (proj, *_) in sides.items()}
    model.switch_projections("c2w", "c2w", rng)
    report = {}
    for side, (proj, words, chars, sentences) in sides.items():
        table = tables[side]
        c2w = model.tgt_c2w if side == "target" else model.src_c2w
        model.store.set(c2w.sos, table[words.sos])
        model.store.set(c2w.eos, table[words.eos])
        types = [w for w in word_types(sentences) if w not in (SOS, EOS)]
        targets = table[[words.encode(w) for w in types]]
        # the target character table already feeds V2C; keep it as trained
        frozen = (c2w.char_emb,) if side == "target" and model.output == "v2c" else ()
        report[side] = distill_c2w(model.store, c2w, chars, types, targets, cfg.distill_epochs,
                                   cfg.distill_lr, cfg.max_word_len, frozen=frozen)
    return report


def train_model(train: ParallelCorpus, dev: ParallelCorpus, config: ModelConfig, mode="char",
                checkpoint_dir=None, on_epoch=None, vocabs: Vocabs | None = None) -> Model:
    if len(dev) == 0:
        raise ValueError("dev corpus is empty")
    trainer = Trainer(config, checkpoint_dir, on_epoch)
    if mode == "word":
        return trainer.train_word(train, dev, vocabs)
    if mode == "char":
        return trainer.train_char(train, dev, vocabs)
    raise ValueError(f"mode must be 'word' or 'char', got {mode!r}")
