"""End-to-end acceptance checks.

Each test records one PASS/FAIL line that is printed in the terminal summary
under "acceptance criteria".  The training-based checks are marked slow.
"""

import io
import itertools
import json
import math
import time

import numpy as np
import pytest

from charmt.attention import AttentionParams, attend
from charmt.cli import EXIT_OK, run
from charmt.config import ModelConfig
from charmt.corpus import CHAR_EOS_ID, EOW_ID, SOW_ID, ParallelCorpus, make_corpus
from charmt.evaluation import bleu
from charmt.generator import V2cBound, V2cParams, WordSoftmaxParams, v2c_condition, v2c_step, \
    v2c_word_logprob, word_softmax
from charmt.gradcheck import run_suite
from charmt.model import Model, Vocabs
from charmt.numerics import Graph, ParamStore
from charmt.search import score_translation, word_beam_translate
from charmt.training import Trainer, TrainState, char_perplexity, corpus_bleu, sgd_epoch, translate_corpus

from conftest import record


def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    errors = run_suite(seed=0, samples=20)
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    required = {"c2w", "encoder", "attention", "word_softmax", "v2c", "supervision", "char_model"}
    ok = required <= set(errors) and worst < 1e-4 and elapsed < 60
    record(1, ok, f"max relative error {worst:.2e} over {len(errors)} components in {elapsed:.1f}s")
    assert ok, errors


def test_distributions_sum_to_one():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        d_s, d_t, d_z = (int(v) for v in rng.integers(1, 6, size=3))
        scale = float(rng.uniform(0.1, 5.0))
        store = ParamStore("float64")

        att = AttentionParams("att", d_t, d_s, d_z)
        att.init(store, rng, scale)
        g = Graph(store, record=False)
        _, a, _ = attend(g, att, g.const(rng.normal(size=(m, d_t))), g.const(rng.normal(size=(n, d_s))))
        worst = max(worst, float(np.abs(a.value.sum(axis=1) - 1).max()))

        V = int(rng.integers(1, 30))
        out = WordSoftmaxParams("out", V, d_s, d_t)
        out.init(store, rng, scale)
        probs = word_softmax(g, out, g.const(rng.normal(size=(m, d_s)) * 3), g.const(rng.normal(size=(m, d_t)) * 3))
        worst = max(worst, float(np.abs(probs.sum(axis=1) - 1).max()))

        v2c = V2cParams("v2c", "emb", int(rng.integers(5, 12)), 3, d_s, d_t, 4)
        v2c.init(store, rng, scale)
        bound = V2cBound(g, v2c)
        cond = v2c_condition(g, bound, g.const(rng.normal(size=(m, d_s))), g.const(rng.normal(size=(m, d_t))))
        step = int(rng.integers(0, 5))
        prev = rng.integers(3, v2c.n_chars, size=m) if step else np.full(m, SOW_ID)
        logp, _ = v2c_step(g, bound, prev, cond, None, step, max_word_len=4)
        worst = max(worst, float(np.abs(np.exp(logp.value).sum(axis=1) - 1).max()))
    ok = worst <= 1e-9
    record(2, ok, f"max |sum - 1| = {worst:.1e} over 1000 trials")
    assert ok


def test_v2c_normalizes_over_all_words():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        # ids 0-2 are SOW/EOW/EOS, 3 is the unknown character, 4 and 5 the two letters
        p = V2cParams("v2c", "emb", 6, 3, 2, 2, 4)
        store = ParamStore("float64")
        p.init(store, rng, 2.0)
        g = Graph(store, record=False)
        bound = V2cBound(g, p)
        cond = v2c_condition(g, bound, g.const(rng.normal(size=(1, 2))), g.const(rng.normal(size=(1, 2))))
        total = math.exp(v2c_word_logprob(g, bound, [CHAR_EOS_ID], cond, 3))
        for n in range(1, 4):
            for seq in itertools.product((3, 4, 5), repeat=n):
                total += math.exp(v2c_word_logprob(g, bound, [SOW_ID, *seq, EOW_ID], cond, 3))
        worst = max(worst, abs(total - 1))
    ok = worst <= 1e-9
    record(3, ok, f"max |total - 1| = {worst:.1e} over 20 parameter draws")
    assert ok


def _all_sentences(letters, max_word_len, max_sent_len):
    words = ["".join(w) for n in range(1, max_word_len + 1) for w in itertools.product(letters, repeat=n)]
    for n in range(max_sent_len + 1):
        yield from itertools.product(words, repeat=n)


def test_beam_search_matches_brute_force():
    t0 = time.perf_counter()
    corpus = make_corpus(["ab ba", "b"], ["ab b", "ba"])
    cfg = ModelConfig(d_lstm=4, d_sw=3, d_tw=3, d_sc=3, d_tc=3, d_z=4, min_count=1, dtype="float64",
                      max_word_len=3, max_sent_len=2, init_scale=1.5)
    vocabs = Vocabs.build(corpus, 1)
    assert len(vocabs.tgt_chars.regular_tokens()) <= 4
    space = list(_all_sentences(vocabs.tgt_chars.regular_tokens(), 3, 2))
    agree = 0
    for seed in range(50):
        model = Model(cfg, vocabs, "c2w", "c2w", "v2c").init_params(np.random.default_rng(seed))
        src = ("ab", "b")
        out = word_beam_translate(model, src, k_w=256, k_c=64, max_sent_len=2)
        scores = [score_translation(model, src, s) for s in space]
        best = space[int(np.argmax(scores))]
        agree += out.words == best and math.isclose(out.logprob, max(scores), abs_tol=1e-9)
    elapsed = time.perf_counter() - t0
    ok = agree == 50 and elapsed < 120
    record(4, ok, f"{agree}/50 draws equal the argmax over {len(space)} sentences in {elapsed:.1f}s")
    assert ok


def _copy_corpus():
    rng = np.random.default_rng(0)
    vocab = sorted({"".join(rng.choice(list("abcdefghijklmnop"), rng.integers(2, 6))) for _ in range(40)})[:20]
    sents = [" ".join(rng.choice(vocab, rng.integers(3, 7))) for _ in range(100)]
    return make_corpus(sents, sents), make_corpus(sents[:20], sents[:20])


@pytest.fixture(scope="module")
def copy_run():
    train, dev = _copy_corpus()
    cfg = ModelConfig(min_count=1, batch_size=4, learning_rate=0.3, max_epochs=100, patience_epochs=100,
                      lr_decay_patience=1000).halved()
    t0 = time.perf_counter()
    trainer = Trainer(cfg)
    model = trainer.train_char(train, dev)
    return trainer, model, train, time.perf_counter() - t0


@pytest.mark.slow
def test_copy_task_overfits(copy_run):
    trainer, model, train, elapsed = copy_run
    epochs = trainer.state.epoch
    ppl = char_perplexity(model, train)
    score = corpus_bleu(model, train)
    ok = ppl < 1.05 and score >= 99 and epochs <= 200 and elapsed < 600
    record(5, ok, f"perplexity {ppl:.5f}, BLEU {score:.2f} after {epochs} epochs in {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_layerwise_swap(copy_run):
    trainer = copy_run[0]
    reductions = {side: before / max(after, 1e-300) for side, (before, after) in trainer.distill_report.items()}
    rise = trainer.swap_dev_loss / trainer.stage_a_dev_loss - 1
    ok = min(reductions.values()) >= 100 and rise < 0.25
    detail = ", ".join(f"{s} MSE reduced {r:.0f}x" for s, r in reductions.items())
    record(7, ok, f"{detail}; dev loss after swap {rise:+.1%} vs stage A")
    assert ok


def _plural(w):
    return w[:-2] + "ões" if w.endswith("ão") else w + "s"


@pytest.mark.slow
def test_unseen_word_forms():
    rng = np.random.default_rng(0)
    cons, vowels = list("bcdfglmnprstv"), list("aeiou")

    def noun():
        stem = "".join(rng.choice(cons) + rng.choice(vowels) for _ in range(rng.integers(1, 3)))
        if rng.random() < 0.25:
            return stem + "ção"
        if rng.random() < 0.2:
            return stem + "ão"
        return stem + rng.choice(cons) + rng.choice(vowels)

    nouns = []
    while len(nouns) < 275:
        w = noun()
        if w not in nouns:
            nouns.append(w)
    seen, dev_nouns, held = nouns[:200], nouns[200:225], nouns[225:]
    train = make_corpus([f"sg {w}" for w in nouns] + [f"pl {w}" for w in seen],
                        nouns + [_plural(w) for w in seen])
    dev = make_corpus([f"pl {w}" for w in dev_nouns], [_plural(w) for w in dev_nouns])
    cfg = ModelConfig(min_count=1, batch_size=8, init_scale=0.3, learning_rate=0.3, patience_epochs=20,
                      lr_decay_patience=5, max_epochs=200).halved()
    model = Model(cfg, Vocabs.build(train, 1), "c2w", "c2w", "v2c").init_params()
    Trainer(cfg).run_stage(TrainState(model, np.random.default_rng(cfg.seed), learning_rate=cfg.learning_rate),
                           train, dev)
    hyps = translate_corpus(model, [("pl", w) for w in held])
    accuracy = float(np.mean([h == _plural(w) for h, w in zip(hyps, held)]))
    ok = accuracy >= 0.8
    record(6, ok, f"{accuracy:.0%} of 50 held-out plurals generated exactly")
    assert ok


def _monotone_corpus():
    rng = np.random.default_rng(100)
    src = [f"s{i}" for i in range(12)]
    lexicon = dict(zip(src, (f"t{i}" for i in rng.permutation(12))))
    sources = [list(rng.choice(src, rng.integers(3, 6))) for _ in range(40)]
    corpus = make_corpus(sources, [[lexicon[w] for w in s] for s in sources])
    return ParallelCorpus(corpus.pairs, tuple({j: j for j in range(len(s))} for s, _ in corpus.pairs))


def _mean_aligned_coefficient(model, corpus):
    values = []
    for (src, tgt), links in zip(corpus.pairs, corpus.alignments):
        _, info = model.sentence_loss(Graph(model.store, record=False), src, tgt, None, 0.0, details=True)
        # column 0 of the coefficients is the source SOS
        values += [info["coefficients"][j, i + 1] for j, i in links.items()]
    return float(np.mean(values))


@pytest.mark.slow
def test_attention_supervision_sharpens_alignment():
    corpus = _monotone_corpus()
    cfg = ModelConfig(d_lstm=16, d_sw=8, d_tw=8, d_sc=8, d_tc=8, d_z=16, min_count=1, dtype="float64",
                      learning_rate=0.1, batch_size=4)
    vocabs = Vocabs.build(corpus, 1)
    wins, pairs = 0, []
    for seed in range(5):
        means = {}
        for weight in (1.0, 0.0):
            model = Model(cfg.replace(seed=seed, supervision_weight=weight), vocabs, "c2w", "c2w", "v2c")
            model.init_params(np.random.default_rng(seed))
            rng = np.random.default_rng(seed)
            for _ in range(50):
                sgd_epoch(model, corpus, rng, cfg.batch_size, cfg.learning_rate)
            means[weight] = _mean_aligned_coefficient(model, corpus)
        wins += means[1.0] > means[0.0]
        pairs.append(f"{means[1.0]:.2f}/{means[0.0]:.2f}")
    ok = wins >= 4
    record(8, ok, f"supervised > unsupervised in {wins}/5 seeds (mean a_k {' '.join(pairs)})")
    assert ok


def test_bleu_oracles():
    refs = ["the cat is on the mat", "there is a cat on the mat"]
    identity = bleu(refs, refs).bleu
    disjoint = bleu(["x y z w v", "q r s t u"], refs).bleu
    clipped = bleu(["the the the the the the the"], ["the cat is on the mat"]).precisions[0]
    ok = identity == 100.0 and disjoint == 0.0 and clipped == 2 / 7
    record(9, ok, f"identity {identity}, disjoint {disjoint}, clipped unigram precision {clipped:.6f}")
    assert ok


def _call(argv):
    out, err = io.StringIO(), io.StringIO()
    return run(argv, stdin=io.StringIO(""), stdout=out, stderr=err), out.getvalue()


def test_cli_runs_are_deterministic(tmp_path):
    (tmp_path / "s.txt").write_text("ab ba a\nb ab\na a b\n", encoding="utf-8")
    (tmp_path / "t.txt").write_text("bab a\na ba\nb b\n", encoding="utf-8")
    model = ModelConfig(d_lstm=6, d_sw=4, d_tw=4, d_sc=3, d_tc=3, d_z=4, min_count=1, max_epochs=3,
                        batch_size=2, distill_epochs=20).to_dict()
    codes = []
    for run_dir in ("a", "b"):
        cfg = {"train_src": str(tmp_path / "s.txt"), "train_tgt": str(tmp_path / "t.txt"),
               "dev_src": str(tmp_path / "s.txt"), "dev_tgt": str(tmp_path / "t.txt"),
               "checkpoint_dir": str(tmp_path / run_dir), "mode": "char", "model": model}
        (tmp_path / f"{run_dir}.json").write_text(json.dumps(cfg), encoding="utf-8")
        codes.append(_call(["train", "--config", str(tmp_path / f"{run_dir}.json"), "--quiet"])[0])
    same_ckpt = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                    for n in ("best.ckpt", "final.ckpt"))
    for out in ("o1.txt", "o2.txt"):
        codes.append(_call(["translate", "--checkpoint", str(tmp_path / "a" / "final.ckpt"),
                            "--input", str(tmp_path / "s.txt"), "--output", str(tmp_path / out)])[0])
    same_out = (tmp_path / "o1.txt").read_bytes() == (tmp_path / "o2.txt").read_bytes()
    ok = codes == [EXIT_OK] * 4 and same_ckpt and same_out
    record(10, ok, f"checkpoints identical: {same_ckpt}; translations identical: {same_out}")
    assert ok
