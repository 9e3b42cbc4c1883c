"""Multi-task training loops for both translation directions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import Vocabulary
from .metrics import MetricsRecord
from .model import Seq2SeqTransformer, encode
from .noise import NoiseParams, apply_noise
from .objectives import (
    SYNTHETIC,
    LossReport,
    TaskBatch,
    TaskWeights,
    compose_losses,
    gradient_penalty,
    loss_adv_english,
    loss_adv_pair,
    loss_backtranslation,
    loss_denoising,
    loss_translation,
)

log = logging.getLogger(__name__)

EN2LRL, LRL2EN = "en2lrl", "lrl2en"


class MissingStreamError(ValueError):
    pass


@dataclass
class TrainConfig:
    direction: str = EN2LRL
    epochs: int = 20
    accum: int = 8
    critic_every: int = 1
    gen_adv_every: int = 3
    lr: float = 3e-4
    warmup: int = 200
    critic_lr: float = 0.01
    critic_optimizer: str = "rmsprop"
    lipschitz: str = "clip"  # clip | gp | none
    clip_value: float = 0.05
    gp_weight: float = 10.0
    batch_tokens: int = 1024
    weights: TaskWeights = field(default_factory=TaskWeights)
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0
    max_updates: int | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = TaskWeights(**self.weights)
        if isinstance(self.noise, dict):
            self.noise = NoiseParams(**self.noise)
        if self.direction not in (EN2LRL, LRL2EN):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.epochs < 0 or self.accum < 1 or self.critic_every < 1 or self.gen_adv_every < 1:
            raise ValueError("epochs must be >= 0 and accum/cadences >= 1")
        if self.lipschitz not in ("clip", "gp", "none"):
            raise ValueError(f"unknown lipschitz mode {self.lipschitz!r}")


@dataclass
class LangIds:
    en: int
    hrl: int
    lrl: int

    @classmethod
    def from_vocab(cls, vocab: Vocabulary, en="en", hrl="hrl", lrl="lrl"):
        return cls(vocab.lang_id(en), vocab.lang_id(hrl), vocab.lang_id(lrl))


@dataclass
class TrainData:
    """Id-list streams. ``parallel`` holds (source, target) in the trained direction:
    (En, HRL) for en2lrl, (HRL, En) for lrl2en. ``bt`` holds (synthetic source,
    genuine target). ``None`` means the stream was not supplied."""

    parallel: list | None = None
    mono_hrl: list | None = None
    mono_lrl: list | None = None
    bt: list | None = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    audit: list = field(default_factory=list)  # one dict per update
    events: list = field(default_factory=list)

    @property
    def updates(self):
        return len(self.audit)

    def generator_adv_steps(self):
        return [a["update"] for a in self.audit if a["generator_adv"]]

    def critic_steps(self):
        return [a["update"] for a in self.audit if a["critic"]]


class Stream:
    """Endless, seeded, reshuffled-per-pass iterator over a list."""

    def __init__(self, items, rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self.order, self.pos = [], 0

    def take(self, n):
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.items)).tolist()
                self.pos = 0
            k = min(n - len(out), len(self.order) - self.pos)
            out.extend(self.items[i] for i in self.order[self.pos : self.pos + k])
            self.pos += k
        return out

    def __len__(self):
        return len(self.items)


class Accumulator:
    """Sums ``loss / accum`` gradients; ``add`` returns True when a step is due."""

    def __init__(self, accum: int):
        self.accum = accum
        self.count = 0

    def add(self, loss) -> bool:
        if torch.is_tensor(loss) and loss.requires_grad:
            (loss / self.accum).backward()
        self.count += 1
        if self.count == self.accum:
            self.count = 0
            return True
        return False


def batch_size_for(examples, batch_tokens: int) -> int:
    """Sentences per batch so one batch holds about ``batch_tokens`` target tokens."""
    if not examples:
        return 1
    first = examples[0]
    if isinstance(first, tuple):
        mean = np.mean([len(t) + 1 for _, t in examples])
    else:
        mean = np.mean([len(t) + 1 for t in examples])
    return max(1, int(batch_tokens // mean))


def make_model_optimizer(model, cfg: TrainConfig):
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.98), eps=1e-9)
    warm = max(1, cfg.warmup)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda u: min(1.0, (u + 1) / warm))
    return opt, sched


def make_critic_optimizer(critics, cfg: TrainConfig):
    params = [p for c in critics for p in c.parameters()]
    if not params:
        return None
    if cfg.critic_optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=cfg.critic_lr)
    if cfg.critic_optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.critic_lr, betas=(0.5, 0.9))
    raise ValueError(f"unknown critic optimizer {cfg.critic_optimizer!r}")


def _noised(seqs, cfg: TrainConfig, rng, mask_id):
    return [apply_noise(s, cfg.noise, rng, mask_id) for s in seqs]


def _finite_or_raise(report: LossReport, update: int):
    for k, v in report.scalars().items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {k} at update {update}")


def _scalar(v) -> float:
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def _run(model, critics, cfg: TrainConfig, streams: dict, step_fn, anchor: str, run_name: str,
         mask_id: int):
    """Shared optimisation loop.

    ``step_fn(batches, gen_adv_on, rng)`` returns a LossReport for one micro-step.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 7])
    stream_objs = {k: Stream(v, np.random.default_rng([cfg.seed, i])) for i, (k, v) in enumerate(sorted(streams.items()))}
    bs = batch_size_for(streams[anchor], cfg.batch_tokens)
    steps_per_epoch = math.ceil(len(streams[anchor]) / bs)
    total = cfg.epochs * steps_per_epoch
    opt, sched = make_model_optimizer(model, cfg)
    copt = make_critic_optimizer(critics, cfg)
    acc = Accumulator(cfg.accum)
    trainlog = TrainLog()
    sums, n_micro = {}, 0
    update = 0
    model.train()
    for step in range(total):
        if cfg.max_updates is not None and update >= cfg.max_updates:
            break
        gen_adv_on = (update + 1) % cfg.gen_adv_every == 0
        critic_on = (update + 1) % cfg.critic_every == 0
        batches = {k: s.take(bs) for k, s in stream_objs.items()}
        report = step_fn(batches, gen_adv_on, rng)
        gen_obj, crit_obj = compose_losses(report, cfg.weights, gen_adv_on)
        gp = getattr(report, "_gp", None)
        if gp is not None and torch.is_tensor(crit_obj):
            crit_obj = crit_obj + cfg.gp_weight * gp
        if critic_on and torch.is_tensor(crit_obj) and crit_obj.requires_grad:
            (crit_obj / cfg.accum).backward()
        for k, v in report.scalars().items():
            sums[k] = sums.get(k, 0.0) + v
        sums["L_generator"] = sums.get("L_generator", 0.0) + _scalar(gen_obj)
        sums["L_critic"] = sums.get("L_critic", 0.0) + _scalar(crit_obj)
        n_micro += 1
        if acc.add(gen_obj) or step == total - 1:
            update += 1
            opt.step()
            sched.step()
            opt.zero_grad(set_to_none=True)
            stepped_critic = False
            if copt is not None and critic_on and report.adversarial_terms():
                copt.step()
                stepped_critic = True
                if cfg.lipschitz == "clip":
                    for c in critics:
                        c.clip_(cfg.clip_value)
            if copt is not None:
                copt.zero_grad(set_to_none=True)
            metrics = {k: v / n_micro for k, v in sums.items()}
            metrics["lr"] = sched.get_last_lr()[0]
            rec = MetricsRecord(run_name, update, metrics,
                                extra={"epoch": step // steps_per_epoch})
            if not rec.finite():
                raise FloatingPointError(f"non-finite metrics at update {update}: {metrics}")
            trainlog.records.append(rec)
            trainlog.audit.append({"update": update, "critic": stepped_critic,
                                   "generator_adv": bool(gen_adv_on and report.adversarial_terms(True))})
            sums, n_micro = {}, 0
    model.eval()
    return trainlog


def _adv_active(cfg, critics):
    return critics is not None and len(critics) > 0 and cfg.weights.adv_generator != 0


def train_en2lrl(model: Seq2SeqTransformer, critics, data: TrainData, vocab: Vocabulary, cfg: TrainConfig,
                 langs: LangIds | None = None, run_name="en2lrl"):
    """Four-task training into the low-resource language.

    Tasks: En->HRL translation, HRL+LRL denoising (both encoded with the HRL
    token), En->LRL backtranslation, and two critics (HRL vs LRL;
    HRL+LRL vs English). ``critics`` is ``(critic1, critic2)`` or None.
    A task whose weight is 0 is skipped; a needed stream that is None raises.
    """
    langs = langs or LangIds.from_vocab(vocab)
    w = cfg.weights
    use_t = w.translation != 0 and bool(data.parallel)
    use_da = w.denoising != 0
    use_bt = w.backtranslation != 0 and bool(data.bt)
    use_adv = _adv_active(cfg, critics)
    if w.translation != 0 and data.parallel is None:
        raise MissingStreamError("translation stream (En-HRL parallel) missing")
    if (use_da or use_adv) and (data.mono_hrl is None or data.mono_lrl is None):
        raise MissingStreamError("HRL and LRL monolingual streams are required")
    if w.backtranslation != 0 and data.bt is None:
        raise MissingStreamError("backtranslation stream missing")
    if use_adv and len(critics) != 2:
        raise ValueError("En->LRL training needs two critics")
    streams = {}
    if use_t:
        streams["t"] = data.parallel
    if use_da or use_adv:
        streams["hrl"], streams["lrl"] = data.mono_hrl, data.mono_lrl
    if use_bt:
        streams["bt"] = data.bt
    if not streams:
        raise MissingStreamError("no active task")
    anchor = "t" if use_t else ("bt" if use_bt else "hrl")

    def step(batches, gen_adv_on, rng):
        r = LossReport()
        en_side = []
        if use_t:
            b = TaskBatch("translation", [s for s, _ in batches["t"]], langs.en, [t for _, t in batches["t"]], langs.hrl)
            r.translation, z = loss_translation(model, b, vocab.eos, return_latents=True)
            en_side.append(z)
        if use_bt:
            b = TaskBatch("backtranslation", [s for s, _ in batches["bt"]], langs.en, [t for _, t in batches["bt"]],
                          langs.lrl, SYNTHETIC)
            r.backtranslation, z = loss_backtranslation(model, b, vocab.eos, return_latents=True)
            en_side.append(z)
        if use_da or use_adv:
            hb = TaskBatch("denoising", _noised(batches["hrl"], cfg, rng, vocab.mask), langs.hrl, batches["hrl"], langs.hrl)
            lb = TaskBatch("denoising", _noised(batches["lrl"], cfg, rng, vocab.mask), langs.hrl, batches["lrl"], langs.lrl)
            if use_da:
                r.denoising, z_h, z_l = loss_denoising(model, hb, lb, vocab.eos, return_latents=True)
            else:
                z_h, z_l = encode(model, hb.src, hb.src_lang), encode(model, lb.src, lb.src_lang)
        if use_adv:
            c1, c2 = critics
            r.adv1 = loss_adv_pair(c1, z_h, z_l)
            if en_side:
                r.adv2 = loss_adv_english(c2, [z_h, z_l], en_side)
            if gen_adv_on:
                r.gen_adv1 = loss_adv_pair(c1, z_h, z_l, frozen_critic=True)
                if en_side:
                    r.gen_adv2 = loss_adv_english(c2, [z_h, z_l], en_side, frozen_critic=True)
            if cfg.lipschitz == "gp":
                gp = gradient_penalty(c1, z_h, z_l)
                if en_side:
                    gp = gp + gradient_penalty(c2, z_h, en_side[0])
                r._gp = gp
        return r

    return _run(model, list(critics) if use_adv else [], cfg, streams, step, anchor, run_name, vocab.mask)


def train_lrl2en(model: Seq2SeqTransformer, critic, data: TrainData, vocab: Vocabulary, cfg: TrainConfig,
                 langs: LangIds | None = None, run_name="lrl2en", denoising=None):
    """Three-task training out of the low-resource language.

    Tasks: HRL->En translation, LRL->En backtranslation (synthetic LRL encoded
    with the HRL token) and one critic on un-noised HRL vs LRL latents.
    """
    langs = langs or LangIds.from_vocab(vocab)
    if denoising is not None:
        log.warning("denoising stream ignored for LRL->En training")
    w = cfg.weights
    use_t = w.translation != 0 and bool(data.parallel)
    use_bt = w.backtranslation != 0 and bool(data.bt)
    use_adv = critic is not None and w.adv_generator != 0
    if w.translation != 0 and data.parallel is None:
        raise MissingStreamError("translation stream (HRL-En parallel) missing")
    if w.backtranslation != 0 and data.bt is None:
        raise MissingStreamError("backtranslation stream missing")
    if use_adv and (not data.mono_hrl or not data.mono_lrl):
        raise MissingStreamError("HRL and LRL monolingual streams are required for the critic")
    streams = {}
    if use_t:
        streams["t"] = data.parallel
    if use_bt:
        streams["bt"] = data.bt
    if use_adv:
        streams["hrl"], streams["lrl"] = data.mono_hrl, data.mono_lrl
    if not streams:
        raise MissingStreamError("no active task")
    anchor = "t" if use_t else ("bt" if use_bt else "hrl")

    def step(batches, gen_adv_on, rng):
        r = LossReport()
        if use_t:
            b = TaskBatch("translation", [s for s, _ in batches["t"]], langs.hrl, [t for _, t in batches["t"]], langs.en)
            r.translation = loss_translation(model, b, vocab.eos)
        if use_bt:
            b = TaskBatch("backtranslation", [s for s, _ in batches["bt"]], langs.hrl, [t for _, t in batches["bt"]],
                          langs.en, SYNTHETIC)
            r.backtranslation = loss_backtranslation(model, b, vocab.eos)
        if use_adv:
            z_h = encode(model, batches["hrl"], langs.hrl)
            z_l = encode(model, batches["lrl"], langs.hrl)
            r.adv = loss_adv_pair(critic, z_h, z_l)
            if gen_adv_on:
                r.gen_adv = loss_adv_pair(critic, z_h, z_l, frozen_critic=True)
            if cfg.lipschitz == "gp":
                r._gp = gradient_penalty(critic, z_h, z_l)
        return r

    return _run(model, [critic] if use_adv else [], cfg, streams, step, anchor, run_name, vocab.mask)


def pretrain_denoising(model: Seq2SeqTransformer, mono: dict, vocab: Vocabulary, cfg: TrainConfig, run_name="pretrain"):
    """Toy stand-in for large-scale denoising pretraining.

    ``mono`` maps language -> list of id lists; each language is noised, encoded
    and decoded with its own language token. One epoch is a pass over the
    largest corpus; smaller ones cycle.
    """
    mono = {k: v for k, v in mono.items() if v}
    if not mono:
        raise MissingStreamError("pretraining needs at least one non-empty corpus")
    langs = sorted(mono)
    anchor = max(langs, key=lambda k: len(mono[k]))

    def step(batches, gen_adv_on, rng):
        total = 0.0
        for lang in langs:
            lid = vocab.lang_id(lang)
            b = TaskBatch("denoising", _noised(batches[lang], cfg, rng, vocab.mask), lid, batches[lang], lid)
            total = total + loss_translation(model, b, vocab.eos)
        return LossReport(denoising=total)

    return _run(model, [], cfg, mono, step, anchor, run_name, vocab.mask)


def finetune_bt(model: Seq2SeqTransformer, bt_pairs, vocab: Vocabulary, cfg: TrainConfig,
                langs: LangIds | None = None, script_ban: bool = False, run_name="finetune_bt"):
    """One pass over backtranslation pairs with only the BT cross entropy.

    Skipped (model returned untouched) when decoding is script-restricted.
    """
    if not bt_pairs:
        raise MissingStreamError("finetune_bt needs backtranslation pairs")
    if script_ban:
        tl = TrainLog()
        tl.events.append("skipped: script-ban decoding active")
        return tl
    ft = TrainConfig(**{**cfg.__dict__, "epochs": 1, "warmup": 0,
                        "weights": TaskWeights(translation=0.0, denoising=0.0, backtranslation=1.0,
                                               adv_generator=0.0)})
    data = TrainData(bt=bt_pairs)
    if cfg.direction == EN2LRL:
        return train_en2lrl(model, None, data, vocab, ft, langs, run_name)
    return train_lrl2en(model, None, data, vocab, ft, langs, run_name)


def denoising_loss_eval(model, mono: dict, vocab: Vocabulary, noise: NoiseParams, seed: int = 0, batch: int = 256):
    """Mean reconstruction loss on noised held-out text (no gradient)."""
    rng = np.random.default_rng([seed, 99])
    was = model.training
    model.eval()
    losses = []
    with torch.no_grad():
        for lang, seqs in sorted(mono.items()):
            lid = vocab.lang_id(lang)
            for i in range(0, len(seqs), batch):
                chunk = seqs[i : i + batch]
                noised = [apply_noise(s, noise, rng, vocab.mask) for s in chunk]
                b = TaskBatch("denoising", noised, lid, chunk, lid)
                losses.append(float(loss_translation(model, b, vocab.eos)) * len(chunk))
    model.train(was)
    n = sum(len(v) for v in mono.values())
    return sum(losses) / n
