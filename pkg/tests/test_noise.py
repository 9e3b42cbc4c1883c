from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrl_adapt.noise import NoiseParams, apply_noise, local_shuffle

MASK = 3


def test_zero_params_identity(rng):
    t = list(range(10, 30))
    assert apply_noise(t, NoiseParams(0, 0.0), rng, MASK) == t


def test_defaults_on_five_tokens(rng):
    t = [10, 11, 12, 13, 14]
    for _ in range(200):
        out = apply_noise(t, NoiseParams(), rng, MASK)
        kept = [x for x in out if x != MASK]
        assert len(set(kept)) == len(kept)
        for pos, x in enumerate(out):
            if x != MASK:
                assert abs(t.index(x) - pos) <= 3


def test_masked_fraction_concentrates():
    # 10^5 positions, p = 0.1: the binomial sd is ~0.00095, so +-0.005 is > 5 sd
    rng = np.random.default_rng(5)
    out = apply_noise(list(range(10, 10 + 100_000)), NoiseParams(), rng, MASK)
    frac = sum(x == MASK for x in out) / len(out)
    assert 0.095 <= frac <= 0.105


def test_displacement_bound_over_many_sequences():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 30))
        perm = local_shuffle(n, 3, rng)
        assert sorted(perm.tolist()) == list(range(n))
        assert np.abs(perm - np.arange(n)).max(initial=0) <= 3


@given(st.lists(st.integers(10, 50), max_size=40), st.integers(0, 6), st.floats(0, 1), st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_noise_properties(tokens, k, p, seed):
    out = apply_noise(tokens, NoiseParams(k, p), np.random.default_rng(seed), MASK)
    assert len(out) == len(tokens)
    assert not Counter(x for x in out if x != MASK) - Counter(tokens)
    again = apply_noise(tokens, NoiseParams(k, p), np.random.default_rng(seed), MASK)
    assert out == again


def test_shuffle_actually_moves_tokens():
    rng = np.random.default_rng(3)
    moved = sum((local_shuffle(20, 3, rng) != np.arange(20)).any() for _ in range(50))
    assert moved > 40


@pytest.mark.parametrize("bad", [dict(max_shift=-1), dict(p_mask=1.5), dict(p_mask=-0.1)])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        NoiseParams(**bad)
