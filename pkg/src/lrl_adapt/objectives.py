"""Training losses and their composition into generator / critic objectives.

Critic sign convention: critics descend ``+L_adv``; the encoder descends
``adv_generator * L_adv`` (default ``-60``), i.e. it climbs the critic loss.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch.func import functional_call

from .model import Latents, Seq2SeqTransformer, decode_logits, encode

TASK_KINDS = ("translation", "denoising", "backtranslation", "adversarial")
REAL, SYNTHETIC = "real", "synthetic"


class EmptyBatchError(ValueError):
    pass


@dataclass
class TaskBatch:
    """One task's share of a micro-step.

    ``src``/``tgt`` are lists of id lists without language tokens; ``src_lang``
    and ``tgt_lang`` are language-token ids. ``tgt`` is None for adversarial
    batches.
    """

    kind: str
    src: list
    src_lang: int
    tgt: list | None = None
    tgt_lang: int | None = None
    provenance: str = REAL

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if (self.tgt is None) != (self.kind == "adversarial"):
            raise ValueError(f"{self.kind} batches {'must not' if self.kind == 'adversarial' else 'must'} carry targets")

    def __len__(self):
        return len(self.src)


def sequence_cross_entropy(logits, targets, pad_id=0, eos_id=2):
    """Mean token cross entropy of ``logits`` (B, T+1, V) against ``target + [EOS]``; PAD ignored."""
    B, T1, V = logits.shape
    gold = torch.full((B, T1), pad_id, dtype=torch.long)
    for i, t in enumerate(targets):
        gold[i, : len(t)] = torch.tensor(t, dtype=torch.long)
        gold[i, len(t)] = eos_id
    return F.cross_entropy(logits.reshape(-1, V), gold.reshape(-1), ignore_index=pad_id)


def _ce(model, z: Latents, batch: TaskBatch, eos_id):
    logits = decode_logits(model, z, batch.tgt_lang, batch.tgt)
    return sequence_cross_entropy(logits, batch.tgt, model.pad_id, eos_id)


def loss_translation(model: Seq2SeqTransformer, batch: TaskBatch, eos_id: int = 2, return_latents=False):
    """Cross entropy of ``D(E(src, src_lang), tgt_lang)`` against ``tgt``.

    The batch's language tokens select the direction: ``[En] -> [HRL]`` when
    translating into the related language, ``[HRL] -> [En]`` out of it.
    """
    if len(batch) == 0:
        raise EmptyBatchError("empty translation batch")
    z = encode(model, batch.src, batch.src_lang)
    loss = _ce(model, z, batch, eos_id)
    return (loss, z) if return_latents else loss


def loss_denoising(model, hrl_batch: TaskBatch | None, lrl_batch: TaskBatch | None, eos_id: int = 2,
                   return_latents=False):
    """Sum over both languages of the reconstruction cross entropy.

    Each batch's ``src`` is the noised sentence and ``tgt`` the original; the
    caller sets ``src_lang`` to the HRL token for both.
    """
    if hrl_batch is None or lrl_batch is None or not len(hrl_batch) or not len(lrl_batch):
        raise EmptyBatchError("denoising needs both an HRL and an LRL sub-batch")
    parts = [loss_translation(model, b, eos_id, return_latents=True) for b in (hrl_batch, lrl_batch)]
    loss = parts[0][0] + parts[1][0]
    return (loss, parts[0][1], parts[1][1]) if return_latents else loss


def loss_backtranslation(model, batch: TaskBatch, eos_id: int = 2, return_latents=False):
    """Same cross entropy as translation, on a (synthetic source, genuine target) pair.

    Generated sources are plain id lists, so no gradient can reach the model
    that produced them.
    """
    if batch.provenance != SYNTHETIC:
        raise ValueError("backtranslation batches must have synthetic provenance")
    return loss_translation(model, batch, eos_id, return_latents)


def _mean_scores(critic, latents, frozen):
    if frozen:
        params = {k: v.detach() for k, v in critic.named_parameters()}
        scores = [functional_call(critic, params, (z.vectors, z.lengths)) for z in latents]
    else:
        scores = [critic(z.vectors.detach(), z.lengths) for z in latents]
    return torch.cat(scores).mean()


def _check_sides(a, b):
    if not a or not b or any(len(z) == 0 for z in list(a) + list(b)):
        raise EmptyBatchError("adversarial loss needs non-empty latents on both sides")


def loss_adv_pair(critic, z_hrl, z_lrl, frozen_critic: bool = False):
    """``mean D(Z_hrl) - mean D(Z_lrl)``.

    With ``frozen_critic=False`` latents are detached (the critic's view);
    with ``True`` critic parameters are detached (the encoder's view).
    Either argument may be a Latents or a list of them (pooled).
    """
    a = z_hrl if isinstance(z_hrl, (list, tuple)) else [z_hrl]
    b = z_lrl if isinstance(z_lrl, (list, tuple)) else [z_lrl]
    _check_sides(a, b)
    return _mean_scores(critic, a, frozen_critic) - _mean_scores(critic, b, frozen_critic)


def loss_adv_english(critic, non_english, english, frozen_critic: bool = False):
    """``mean D(Z_hrl U Z_lrl) - mean D(Z_en U Z'_en)`` over pooled latents."""
    return loss_adv_pair(critic, list(non_english), list(english), frozen_critic)


@dataclass
class TaskWeights:
    translation: float = 1.0
    denoising: float = 1.0
    backtranslation: float = 1.0
    adv_critic: float = 1.0
    adv_generator: float = -60.0


@dataclass
class LossReport:
    """Per-task losses of one micro-step.

    ``adv*`` hold the critic view; ``gen_adv*`` the same values computed with
    frozen critics, which is what the encoder sees.
    """

    translation: object = None
    denoising: object = None
    backtranslation: object = None
    adv1: object = None
    adv2: object = None
    adv: object = None
    gen_adv1: object = None
    gen_adv2: object = None
    gen_adv: object = None

    def adversarial_terms(self, generator=False):
        names = ("gen_adv1", "gen_adv2", "gen_adv") if generator else ("adv1", "adv2", "adv")
        return [getattr(self, n) for n in names if getattr(self, n) is not None]

    def scalars(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not f.name.startswith("gen_"):
                out[f"L_{f.name}"] = float(v.detach()) if hasattr(v, "detach") else float(v)
        return out


def compose_losses(report: LossReport, weights: TaskWeights = TaskWeights(), generator_adv: bool = True):
    """Return ``(generator objective, critic objective)``.

    Generator: weighted CE terms plus ``adv_generator * sum(adversarial)`` when
    ``generator_adv`` is set. Critic: ``adv_critic * sum(adversarial)``.
    Falls back to the critic-view adversarial values when no frozen-critic
    values are present (e.g. when composing plain floats).
    """
    gen = 0.0
    for name in ("translation", "denoising", "backtranslation"):
        v = getattr(report, name)
        if v is not None:
            gen = gen + getattr(weights, name) * v
    crit_terms = report.adversarial_terms()
    gen_terms = report.adversarial_terms(generator=True) or crit_terms
    if generator_adv and gen_terms and weights.adv_generator != 0:
        gen = gen + weights.adv_generator * sum(gen_terms)
    crit = weights.adv_critic * sum(crit_terms) if crit_terms else 0.0
    return gen, crit


def gradient_penalty(critic, z_a: Latents, z_b: Latents, gen=None):
    """WGAN-GP penalty on interpolates of two latent batches (truncated to a common shape)."""
    n = min(len(z_a), len(z_b))
    T = min(z_a.vectors.shape[1], z_b.vectors.shape[1])
    a, b = z_a.vectors[:n, :T].detach(), z_b.vectors[:n, :T].detach()
    lengths = torch.minimum(z_a.lengths[:n], z_b.lengths[:n]).clamp(max=T)
    eps = torch.rand(n, 1, 1, generator=gen, dtype=a.dtype)
    x = (eps * a + (1 - eps) * b).requires_grad_(True)
    (g,) = torch.autograd.grad(critic(x, lengths).sum(), x, create_graph=True)
    return ((g.flatten(1).norm(dim=1) - 1) ** 2).mean()
