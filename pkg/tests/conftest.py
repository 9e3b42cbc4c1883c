import numpy as np
import pytest
import torch

from lrl_adapt.corpus import build_vocab
from lrl_adapt.synthlang import FamilyConfig, gen_family

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_bundle():
    return gen_family(FamilyConfig(seed=11, vocab_size=40, n_parallel=300, n_mono_lrl=300, n_test=60, n_dev=20))


@pytest.fixture(scope="session")
def small_vocab(small_bundle):
    b = small_bundle
    return build_vocab([b.en_hrl] + [b.mono[k] for k in ("en", "hrl", "lrl")], ["en", "hrl", "lrl"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
