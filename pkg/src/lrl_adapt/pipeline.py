"""Backtranslation synthesis, script bans and the iterative training loop."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import (
    FilterConfig,
    ParallelCorpus,
    Vocabulary,
    atomic_write_text,
    build_vocab,
    char_script,
    detokenize,
    filter_corpus,
    file_sha256,
    load_corpus,
    save_tsv,
    tokenize,
)
from .evaluation import BleuConfig, bleu
from .model import (
    DecodeConfig,
    ModelDims,
    init_critic,
    init_model,
    save_checkpoint,
    state_digest,
    translate,
)
from .objectives import TaskWeights
from .synthlang import EN, HRL, LRL, DatasetBundle
from .trainer import (
    EN2LRL,
    LRL2EN,
    LangIds,
    TrainConfig,
    TrainData,
    finetune_bt,
    pretrain_denoising,
    train_en2lrl,
    train_lrl2en,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Backtranslation data
# --------------------------------------------------------------------------


@dataclass
class BTDataset:
    """(synthetic source, genuine target) sentence pairs for one direction."""

    pairs: list
    direction: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def save(self, path):
        path = Path(path)
        save_tsv(ParallelCorpus(self.pairs, "synthetic", "genuine"), path)
        sidecar = {"direction": self.direction, **self.meta, "sha256": file_sha256(path)}
        atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        if file_sha256(path) != meta.pop("sha256"):
            raise ValueError(f"hash mismatch for {path}")
        pairs = load_corpus(path, "tsv", ("synthetic", "genuine")).pairs
        return cls(pairs, meta.pop("direction"), meta)


def _synthesize(model, vocab, genuine, src_lang_token, tgt_lang_token, decode_cfg, ban_mask, direction, meta):
    ids = [tokenize(s, vocab, "x").tokens for s in genuine]
    outs = translate(model, vocab, ids, src_lang_token, tgt_lang_token, decode_cfg, ban_mask) if ids else []
    pairs, dropped = [], 0
    for gen_ids, real in zip(outs, genuine):
        if not gen_ids:
            dropped += 1
            continue
        pairs.append((detokenize(gen_ids, vocab), real))
    meta = {**meta, "decode": asdict(decode_cfg), "dropped": dropped, "kept": len(pairs)}
    return BTDataset(pairs, direction, meta)


def synthesize_bt_for_en2lrl(model_lrl2en, vocab: Vocabulary, mono_lrl, decode_cfg: DecodeConfig = DecodeConfig(),
                             iteration: int = 1, model_id: str = "", hrl=HRL, en=EN):
    """Translate LRL monolingual text to English, reading it as HRL.

    Returns pairs (Y_En, X_LRL); sentences whose translation is empty are
    dropped and counted in ``meta["dropped"]``.
    """
    return _synthesize(model_lrl2en, vocab, list(mono_lrl), hrl, en, decode_cfg, None, EN2LRL,
                       {"iteration": iteration, "model_id": model_id})


def synthesize_bt_for_lrl2en(model_en2lrl, vocab: Vocabulary, en_sentences, decode_cfg: DecodeConfig = DecodeConfig(),
                             ban_mask=None, iteration: int = 1, model_id: str = "", lrl=LRL, en=EN):
    """Translate the English side of the parallel corpus into the LRL: pairs (Y_LRL, X_En)."""
    return _synthesize(model_en2lrl, vocab, list(en_sentences), en, lrl, decode_cfg, ban_mask, LRL2EN,
                       {"iteration": iteration, "model_id": model_id})


def build_ban_mask(vocab: Vocabulary, banned_scripts) -> np.ndarray:
    """Boolean mask over ids: True where the token has a character of a banned script.

    Specials are never banned.
    """
    banned = set(banned_scripts)
    known = {char_script(c) for t in vocab.itos[vocab.n_specials:] for c in t}
    unknown = banned - known
    if unknown:
        raise ValueError(f"unknown script classes {sorted(unknown)}; vocabulary has {sorted(known)}")
    mask = np.zeros(len(vocab), dtype=bool)
    if not banned:
        return mask
    for i in range(vocab.n_specials, len(vocab)):
        mask[i] = any(char_script(c) in banned for c in vocab.itos[i])
    return mask


def check_no_test_leak(bt: BTDataset, bundle: DatasetBundle):
    """Raise if a genuine BT target is a test sentence."""
    test = {h for pair in bundle.test_en_lrl.pairs for h in map(_sha, pair)}
    for _, b in bt.pairs:
        if _sha(b) in test:
            raise AssertionError(f"test sentence found in backtranslation data: {b!r}")


def _sha(s: str) -> str:
    return hashlib.sha256(s.encode()).hexdigest()


# --------------------------------------------------------------------------
# Prepared workspace
# --------------------------------------------------------------------------


@dataclass
class Workspace:
    """A filtered bundle, its vocabulary and id-list views of every corpus."""

    bundle: DatasetBundle
    vocab: Vocabulary
    filter_report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.langs = LangIds.from_vocab(self.vocab)
        self._cache = {}

    def ids(self, sentences):
        return [tokenize(s, self.vocab, "x").tokens for s in sentences]

    def mono_ids(self, lang, limit=None):
        key = ("mono", lang, limit)
        if key not in self._cache:
            sents = self.bundle.mono[lang].sentences
            self._cache[key] = self.ids(sents if limit is None else sents[:limit])
        return self._cache[key]

    def parallel_ids(self, reverse=False):
        key = ("par", reverse)
        if key not in self._cache:
            src, tgt = self.ids(self.bundle.en_hrl.sources), self.ids(self.bundle.en_hrl.targets)
            self._cache[key] = list(zip(tgt, src)) if reverse else list(zip(src, tgt))
        return self._cache[key]

    def bt_ids(self, bt: BTDataset):
        return list(zip(self.ids([a for a, _ in bt.pairs]), self.ids([b for _, b in bt.pairs])))

    @property
    def script_ban_needed(self):
        langs = self.bundle.languages
        return langs[HRL].script_class != langs[LRL].script_class

    def banned_scripts(self):
        langs = self.bundle.languages
        lrl = langs[LRL].script_class
        return sorted({langs[HRL].script_class, langs[EN].script_class} - {lrl})


def prepare(bundle: DatasetBundle, filter_cfg: FilterConfig = FilterConfig(), mode: str = "word") -> Workspace:
    """Filter monolingual corpora and build the vocabulary over training text only."""
    mono, report = {}, {}
    for lang, corpus in bundle.mono.items():
        mono[lang], report[lang] = filter_corpus(corpus, bundle.languages[lang], filter_cfg)
    filtered = DatasetBundle(bundle.en_hrl, mono, bundle.test_en_lrl, bundle.dev_en_lrl, bundle.languages, bundle.config)
    vocab = build_vocab([filtered.en_hrl] + [mono[k] for k in (EN, HRL, LRL)], [EN, HRL, LRL], mode)
    return Workspace(filtered, vocab, report)


def evaluate_direction(model, ws: Workspace, direction: str, split: str = "test", ban_mask=None,
                       decode_cfg: DecodeConfig = DecodeConfig(), bleu_cfg: BleuConfig = BleuConfig(),
                       target_lang: str | None = None):
    """BLEU of ``model`` on the En-LRL ``split`` in the given direction.

    ``target_lang`` overrides the decoder language token (e.g. ``"hrl"`` to
    score an un-adapted En->HRL model against LRL references).
    """
    corpus = ws.bundle.test_en_lrl if split == "test" else ws.bundle.dev_en_lrl
    if direction == EN2LRL:
        src, refs, s_lang, t_lang = corpus.sources, corpus.targets, EN, target_lang or LRL
    else:
        src, refs, s_lang, t_lang = corpus.targets, corpus.sources, HRL, target_lang or EN
    outs = translate(model, ws.vocab, ws.ids(src), s_lang, t_lang, decode_cfg, ban_mask)
    hyps = [detokenize(o, ws.vocab) for o in outs]
    return bleu(hyps, refs, bleu_cfg), outs


# --------------------------------------------------------------------------
# Iterative training
# --------------------------------------------------------------------------


def _supervised_weights():
    return TaskWeights(translation=1.0, denoising=0.0, backtranslation=0.0, adv_generator=0.0)


@dataclass
class PipelineConfig:
    dims: ModelDims = field(default_factory=ModelDims)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1))
    supervised: TrainConfig = field(default_factory=lambda: TrainConfig(direction=LRL2EN, epochs=10))
    en2lrl: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    lrl2en: TrainConfig = field(default_factory=lambda: TrainConfig(direction=LRL2EN, epochs=10))
    later_epochs: int = 10
    k_max: int = 3
    eps_bleu: float = 0.2
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    script_ban: object = "auto"  # auto | True | False
    finetune: bool = True
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        self.en2lrl = TrainConfig(**{**self.en2lrl.__dict__, "direction": EN2LRL})
        self.lrl2en = TrainConfig(**{**self.lrl2en.__dict__, "direction": LRL2EN})
        self.supervised = TrainConfig(**{**self.supervised.__dict__, "direction": LRL2EN,
                                         "weights": _supervised_weights()})
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.script_ban not in ("auto", True, False):
            raise ValueError("script_ban must be 'auto', true or false")


@dataclass
class IterationState:
    k: int = 0
    checkpoints: dict = field(default_factory=dict)  # name -> {"digest", "path", "sha256"}
    datasets: dict = field(default_factory=dict)  # name -> {"producer", "pairs", "path", "sha256"}
    bleu: dict = field(default_factory=lambda: {EN2LRL: {}, LRL2EN: {}})  # direction -> {k: test BLEU}
    dev_bleu: dict = field(default_factory=lambda: {EN2LRL: {}, LRL2EN: {}})
    trainings: list = field(default_factory=list)  # data-flow audit
    metrics: list = field(default_factory=list)  # MetricsRecord stream
    converged: bool = False

    def manifest(self):
        return {
            "kind": "iteration-manifest",
            "version": 1,
            "k": self.k,
            "converged": self.converged,
            "checkpoints": self.checkpoints,
            "datasets": self.datasets,
            "bleu": self.bleu,
            "dev_bleu": self.dev_bleu,
            "trainings": self.trainings,
            "metrics_sha256": metrics_digest(self.metrics),
        }

    @classmethod
    def from_manifest(cls, manifest: dict, metrics=()):
        def keyed(d):
            return {direction: {int(k): v for k, v in per.items()} for direction, per in d.items()}

        return cls(manifest["k"], manifest["checkpoints"], manifest["datasets"], keyed(manifest["bleu"]),
                   keyed(manifest["dev_bleu"]), manifest["trainings"], list(metrics), manifest["converged"])


class PrerequisiteError(RuntimeError):
    """A stage was asked for before the artifacts it depends on exist."""


def _with_seed(cfg: TrainConfig, seed: int, epochs=None):
    kw = {**cfg.__dict__, "seed": seed}
    if epochs is not None:
        kw["epochs"] = epochs
    return TrainConfig(**kw)


class IterationRunner:
    """Runs the iterative procedure one stage at a time.

    Stage order: ``pretrain`` -> ``train_lrl2en(0)`` (supervised HRL->En) and,
    for k = 1, 2, ...: ``backtranslate_en2lrl(k)`` with LRL->En_{k-1},
    ``train_en2lrl(k)``, ``backtranslate_lrl2en(k)`` with En->LRL_k,
    ``train_lrl2en(k)``. With ``out_dir`` set, every model and dataset is
    persisted and listed in ``manifest.json``; a runner built on an existing
    directory resumes from its manifest.

    ``before_finetune``, if set, is called as ``f(name, model)`` after the
    four-task training of an En->LRL model and before its fine-tune pass.
    """

    def __init__(self, ws: Workspace, cfg: PipelineConfig, out_dir=None):
        self.ws, self.cfg = ws, cfg
        self.before_finetune = None
        self.out = Path(out_dir) if out_dir is not None else None
        self.models, self.critics, self.bt = {}, {}, {}
        self.state = IterationState()
        if self.out is not None and (self.out / "manifest.json").exists():
            from .metrics import read_jsonl

            manifest = json.loads((self.out / "manifest.json").read_text(encoding="utf-8"))
            metrics_path = self.out / "metrics.jsonl"
            self.state = IterationState.from_manifest(manifest, read_jsonl(metrics_path) if metrics_path.exists() else ())
        self.ban = build_ban_mask(ws.vocab, ws.banned_scripts()) if self.ban_active else None

    @property
    def ban_active(self) -> bool:
        if self.cfg.script_ban == "auto":
            return self.ws.script_ban_needed
        return bool(self.cfg.script_ban)

    # ---- artifact bookkeeping -------------------------------------------

    def has(self, name) -> bool:
        return name in self.models or name in self.state.checkpoints

    def model(self, name):
        if name not in self.models:
            entry = self.state.checkpoints.get(name)
            if entry is None or self.out is None or "path" not in entry:
                raise PrerequisiteError(f"model {name!r} has not been trained")
            from .model import load_checkpoint

            self.models[name], self.critics[name], _ = load_checkpoint(self.out / entry["path"], self.ws.vocab)
        return self.models[name]

    def dataset(self, name) -> BTDataset:
        if name not in self.bt:
            entry = self.state.datasets.get(name)
            if entry is None or self.out is None or "path" not in entry:
                raise PrerequisiteError(f"backtranslation data {name!r} has not been generated")
            self.bt[name] = BTDataset.load(self.out / entry["path"])
        return self.bt[name]

    def _persist_model(self, name, model, critics=()):
        entry = {"digest": state_digest(model)}
        if self.out is not None:
            path = self.out / "checkpoints" / f"{name}.pt"
            save_checkpoint(path, model, self.ws.vocab, critics, meta={"name": name})
            entry.update(path=str(path.relative_to(self.out)), sha256=file_sha256(path))
        self.state.checkpoints[name] = entry
        self.models[name], self.critics[name] = model, list(critics)

    def _persist_bt(self, name, bt: BTDataset, producer):
        check_no_test_leak(bt, self.ws.bundle)
        entry = {"producer": producer, "pairs": len(bt), "dropped": bt.meta.get("dropped", 0)}
        if self.out is not None:
            path = self.out / "bt" / f"{name}.tsv"
            bt.save(path)
            entry.update(path=str(path.relative_to(self.out)), sha256=file_sha256(path))
        self.state.datasets[name] = entry
        self.bt[name] = bt

    def _record(self, trainlog):
        self.state.metrics.extend(trainlog.records)

    def save_manifest(self):
        if self.out is None:
            return
        from .metrics import write_jsonl

        write_jsonl(self.state.metrics, self.out / "metrics.jsonl")
        atomic_write_text(self.out / "manifest.json",
                          json.dumps(self.state.manifest(), indent=2, sort_keys=True) + "\n")

    def _init_from(self, name):
        if name == "pretrained":
            m = copy.deepcopy(self.model("pretrained"))
            with torch.no_grad():
                m.embed.weight[self.ws.langs.lrl] = m.embed.weight[self.ws.langs.hrl]
            return m
        return copy.deepcopy(self.model(name))

    def _seed(self, k, offset):
        return self.cfg.seed + 1000 * k + offset

    # ---- stages -----------------------------------------------------------

    def pretrain(self):
        ws, cfg = self.ws, self.cfg
        model = init_model(ws.vocab, cfg.dims, cfg.seed, lang_init={LRL: HRL})
        mono = {lang: ws.mono_ids(lang) for lang in (EN, HRL, LRL)}
        self._record(pretrain_denoising(model, mono, ws.vocab, _with_seed(cfg.pretrain, cfg.seed), "pretrain"))
        self._persist_model("pretrained", model)
        self.save_manifest()
        return model

    def train_en2hrl_baseline(self):
        """The un-adapted En->HRL model: translation only, from the pretrained model.

        Trained with the supervised-stage settings; not persisted.
        """
        ws, cfg = self.ws, self.cfg
        model = self._init_from("pretrained")
        tcfg = TrainConfig(**{**cfg.supervised.__dict__, "direction": EN2LRL, "seed": cfg.seed,
                              "weights": _supervised_weights()})
        self._record(train_en2lrl(model, None, TrainData(parallel=ws.parallel_ids()), ws.vocab, tcfg, ws.langs,
                                  "en2hrl_baseline"))
        return model

    def train_en2lrl(self, k: int, weights: TaskWeights | None = None, finetune: bool | None = None,
                     mono_limit: int | None = None, bt: BTDataset | None = None, persist: bool = True,
                     name: str | None = None):
        """Train En->LRL_k on the four tasks; returns the model.

        ``weights``, ``finetune``, ``mono_limit`` and ``bt`` override the
        configured values for baselines and ablations; such runs pass
        ``persist=False``.
        """
        if k < 1:
            raise ValueError("En->LRL models exist from iteration 1")
        ws, cfg = self.ws, self.cfg
        bt = bt if bt is not None else self.dataset(f"bt_en2lrl_{k}")
        init = f"en2lrl_{k - 1}" if (cfg.warm_start and k > 1) else "pretrained"
        model = self._init_from(init)
        tcfg = _with_seed(cfg.en2lrl, self._seed(k, 0), cfg.en2lrl.epochs if k == 1 else cfg.later_epochs)
        if weights is not None:
            tcfg = TrainConfig(**{**tcfg.__dict__, "weights": weights})
        critics = (init_critic(cfg.dims.d_model, cfg.dims.critic_hidden, self._seed(k, 1)),
                   init_critic(cfg.dims.d_model, cfg.dims.critic_hidden, self._seed(k, 2)))
        pairs = ws.bt_ids(bt)
        data = TrainData(parallel=ws.parallel_ids(), mono_hrl=ws.mono_ids(HRL),
                         mono_lrl=ws.mono_ids(LRL, mono_limit),
                         bt=pairs if mono_limit is None else pairs[:mono_limit])
        run = name or f"en2lrl_{k}"
        log.info("training %s from %s", run, init)
        self._record(train_en2lrl(model, critics, data, ws.vocab, tcfg, ws.langs, run))
        do_ft = cfg.finetune if finetune is None else finetune
        if do_ft and tcfg.weights.backtranslation != 0:
            if self.before_finetune is not None:
                self.before_finetune(run, model)
            tl = finetune_bt(model, data.bt, ws.vocab, _with_seed(tcfg, self._seed(k, 3)), ws.langs,
                             script_ban=self.ban is not None, run_name=f"{run}_ft")
            self._record(tl)
            for event in tl.events:
                log.info("%s: %s", run, event)
        if persist:
            self._persist_model(f"en2lrl_{k}", model, critics)
            self.state.trainings.append({"model": f"en2lrl_{k}", "init": init, "bt": f"bt_en2lrl_{k}"})
            self.save_manifest()
        return model

    def train_lrl2en(self, k: int):
        """Train LRL->En_k; k = 0 is the supervised HRL->En model."""
        ws, cfg = self.ws, self.cfg
        if k == 0:
            model = self._init_from("pretrained")
            data = TrainData(parallel=ws.parallel_ids(reverse=True))
            self._record(train_lrl2en(model, None, data, ws.vocab, _with_seed(cfg.supervised, cfg.seed), ws.langs,
                                      "lrl2en_0"))
            self._persist_model("lrl2en_0", model)
            self.state.trainings.append({"model": "lrl2en_0", "init": "pretrained", "bt": None})
        else:
            bt = self.dataset(f"bt_lrl2en_{k}")
            init = f"lrl2en_{k - 1}" if (cfg.warm_start and k > 1) else "pretrained"
            model = self._init_from(init)
            critic = init_critic(cfg.dims.d_model, cfg.dims.critic_hidden, self._seed(k, 4))
            data = TrainData(parallel=ws.parallel_ids(reverse=True), mono_hrl=ws.mono_ids(HRL),
                             mono_lrl=ws.mono_ids(LRL), bt=ws.bt_ids(bt))
            tcfg = _with_seed(cfg.lrl2en, self._seed(k, 5), cfg.lrl2en.epochs if k == 1 else cfg.later_epochs)
            self._record(train_lrl2en(model, critic, data, ws.vocab, tcfg, ws.langs, f"lrl2en_{k}"))
            self._persist_model(f"lrl2en_{k}", model, (critic,))
            self.state.trainings.append({"model": f"lrl2en_{k}", "init": init, "bt": f"bt_lrl2en_{k}"})
        self.save_manifest()
        return model

    def backtranslate_en2lrl(self, k: int):
        """BT pairs (Y_En, X_LRL) for En->LRL_k, produced by LRL->En_{k-1}."""
        producer = f"lrl2en_{k - 1}"
        bt = synthesize_bt_for_en2lrl(self.model(producer), self.ws.vocab, self.ws.bundle.mono[LRL].sentences,
                                      self.cfg.decode, k, producer)
        self._persist_bt(f"bt_en2lrl_{k}", bt, producer)
        self.save_manifest()
        return bt

    def backtranslate_lrl2en(self, k: int):
        """BT pairs (Y_LRL, X_En) for LRL->En_k, produced by En->LRL_k."""
        producer = f"en2lrl_{k}"
        bt = synthesize_bt_for_lrl2en(self.model(producer), self.ws.vocab, self.ws.bundle.en_hrl.sources,
                                      self.cfg.decode, self.ban, k, producer)
        self._persist_bt(f"bt_lrl2en_{k}", bt, producer)
        self.save_manifest()
        return bt

    def evaluate(self, k: int):
        """Record test and dev BLEU for both iteration-k models and update convergence."""
        for direction in (EN2LRL, LRL2EN):
            name = f"{direction}_{k}"
            if not self.has(name):
                continue
            ban = self.ban if direction == EN2LRL else None
            model = self.model(name)
            self.state.bleu[direction][k] = evaluate_direction(model, self.ws, direction, "test", ban,
                                                               self.cfg.decode)[0]
            if len(self.ws.bundle.dev_en_lrl):
                self.state.dev_bleu[direction][k] = evaluate_direction(model, self.ws, direction, "dev", ban,
                                                                       self.cfg.decode)[0]
        dev = self.state.dev_bleu
        if k >= 2 and all(k in dev[d] and k - 1 in dev[d] for d in (EN2LRL, LRL2EN)):
            self.state.converged = all(dev[d][k] - dev[d][k - 1] < self.cfg.eps_bleu for d in (EN2LRL, LRL2EN))
        self.save_manifest()

    # ---- full procedure ---------------------------------------------------

    def next_stage(self):
        """Name and argument of the first stage not yet completed, or None when done."""
        if not self.has("pretrained"):
            return "pretrain", None
        if not self.has("lrl2en_0"):
            return "train_lrl2en", 0
        if 0 not in self.state.bleu[LRL2EN]:
            return "evaluate", 0
        k = self.state.k + 1
        if self.state.converged or k > self.cfg.k_max:
            return None
        for stage, name in (("backtranslate_en2lrl", f"bt_en2lrl_{k}"), ("train_en2lrl", f"en2lrl_{k}"),
                            ("backtranslate_lrl2en", f"bt_lrl2en_{k}"), ("train_lrl2en", f"lrl2en_{k}")):
            if name not in self.state.datasets and not self.has(name):
                return stage, k
        return "evaluate", k

    def step(self):
        stage = self.next_stage()
        if stage is None:
            return None
        name, k = stage
        if name == "pretrain":
            self.pretrain()
        elif name == "evaluate":
            self.evaluate(k)
            self.state.k = k
            self.save_manifest()
        else:
            getattr(self, name)(k)
        return stage

    def run(self):
        """Run every remaining stage; returns the final IterationState."""
        while self.step() is not None:
            pass
        return self.state


def run_iterations(ws: Workspace, cfg: PipelineConfig, out_dir=None) -> IterationState:
    """Iterative backtranslation up to ``cfg.k_max`` or until dev BLEU stops moving."""
    return IterationRunner(ws, cfg, out_dir).run()


def metrics_digest(records) -> str:
    """Hash of a metric stream ignoring wall-clock timestamps."""
    h = hashlib.sha256()
    for r in records:
        h.update(r.to_json(with_time=False).encode())
        h.update(b"\n")
    return h.hexdigest()


def verify_manifest(out_dir) -> dict:
    """Check every checkpoint and dataset listed in ``manifest.json`` exists and hash-verifies."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    for section in ("checkpoints", "datasets"):
        for name, entry in manifest[section].items():
            if "path" not in entry:
                continue
            path = out / entry["path"]
            if not path.exists():
                raise FileNotFoundError(f"{section} entry {name} missing: {path}")
            if file_sha256(path) != entry["sha256"]:
                raise ValueError(f"{section} entry {name} fails hash check")
    return manifest
