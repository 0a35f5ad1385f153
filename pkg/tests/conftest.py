import numpy as np
import pytest

from charmt.config import ModelConfig
from charmt.corpus import make_corpus
from charmt.model import Model, Vocabs

TINY = ModelConfig(d_lstm=5, d_sw=4, d_tw=4, d_sc=3, d_tc=3, d_z=4, min_count=1, dtype="float64",
                   init_scale=0.5, max_epochs=3, batch_size=2, distill_epochs=20)


def tiny_corpus():
    return make_corpus(["ab ba a", "b ab", "a a b"], ["bab a", "a ba", "b b"])


def tiny_model(layout=("c2w", "c2w", "v2c"), seed=0, config=TINY, corpus=None):
    corpus = corpus if corpus is not None else tiny_corpus()
    model = Model(config, Vocabs.build(corpus, 1), *layout)
    return model.init_params(np.random.default_rng(seed))


@pytest.fixture
def corpus():
    return tiny_corpus()


@pytest.fixture
def char_model():
    return tiny_model()


@pytest.fixture
def word_model():
    return tiny_model(("lookup", "lookup", "softmax"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
