import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from headline_rl.generator import Generator  # noqa: E402
from headline_rl.textcore import ExamplePair, build_vocab, encode_with_pointer  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_vocab():
    pairs = [ExamplePair("a b c d".split(), "a b".split())]
    return build_vocab(pairs, 8)


@pytest.fixture
def tiny_example(tiny_vocab):
    # "zz" is an article OOV that the headline copies
    return encode_with_pointer(ExamplePair("a zz c".split(), "zz c b".split()), tiny_vocab)


@pytest.fixture
def tiny_model(tiny_vocab):
    # large enough weights that no gradient entry sits at finite-difference roundoff
    return Generator(len(tiny_vocab), emb_size=3, hidden_size=4, seed=7, init_scale=1.5)
