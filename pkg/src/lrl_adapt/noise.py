"""Word shuffling and masking used by the denoising task."""

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseParams:
    max_shift: int = 3
    p_mask: float = 0.1

    def __post_init__(self):
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        if not 0.0 <= self.p_mask <= 1.0:
            raise ValueError("p_mask must be in [0, 1]")


def local_shuffle(n: int, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation ``perm`` of ``range(n)`` with ``|perm[i] - i| <= max_shift``.

    Index ``i`` gets key ``i + U[0, max_shift + 1)``; a stable argsort of the
    keys can only swap two indices whose distance is at most ``max_shift``.
    """
    if max_shift == 0 or n < 2:
        return np.arange(n)
    keys = np.arange(n) + rng.uniform(0.0, max_shift + 1, size=n)
    return np.argsort(keys, kind="stable")


def apply_noise(tokens, params: NoiseParams, rng: np.random.Generator, mask_id: int):
    """Shuffle then mask a list of token ids; returns a new list of equal length."""
    tokens = list(tokens)
    perm = local_shuffle(len(tokens), params.max_shift, rng)
    out = [tokens[j] for j in perm]
    if params.p_mask > 0:
        hit = rng.random(len(out)) < params.p_mask
        out = [mask_id if h else t for t, h in zip(out, hit)]
    return out
