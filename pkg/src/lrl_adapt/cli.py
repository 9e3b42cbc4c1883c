"""Command-line entry point: ``lrl-adapt <command> [--config F] [--seed N] [--out DIR] [--quiet]``.

Output layout under the run directory::

    config.effective.yaml   fully resolved configuration
    data/                   synthetic bundle (synth-data)
    prepared/               filtered bundle and vocabulary (prepare)
    checkpoints/ bt/        models and backtranslation data
    manifest.json           artifact hashes, BLEU history, data-flow audit
    metrics.jsonl           one record per optimiser update
    eval.json ablation.csv report/
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import FilterConfig, Vocabulary, atomic_write_text
from .evaluation import BleuConfig
from .model import DecodeConfig, ModelDims
from .synthlang import FamilyConfig
from .trainer import EN2LRL, LRL2EN, TrainConfig

log = logging.getLogger("lrl_adapt")

OUT_ENV = "LRL_ADAPT_OUT"
COMMANDS = ("synth-data", "prepare", "pretrain", "train-en2lrl", "train-lrl2en", "backtranslate", "iterate",
            "evaluate", "ablate", "report")
EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class PipelineSettings:
    k_max: int = 3
    eps_bleu: float = 0.2
    later_epochs: int = 10
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    script_ban: object = "auto"
    finetune: bool = True
    warm_start: bool = True


@dataclass
class EvalSettings:
    bleu: BleuConfig = field(default_factory=BleuConfig)
    ablation_sizes: list = field(default_factory=lambda: [1000, 10000, 100000])
    probe_samples: int = 1000
    probe_seed: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    family: FamilyConfig = field(default_factory=FamilyConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    vocab_mode: str = "word"
    model: ModelDims = field(default_factory=ModelDims)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1))
    supervised: TrainConfig = field(default_factory=lambda: TrainConfig(direction=LRL2EN, epochs=10))
    en2lrl: TrainConfig = field(default_factory=lambda: TrainConfig(direction=EN2LRL, epochs=20))
    lrl2en: TrainConfig = field(default_factory=lambda: TrainConfig(direction=LRL2EN, epochs=10))
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with ``seed`` applied to the global, family and every training seed."""
        new = from_dict(to_dict(self))
        new.seed = seed
        new.family.seed = seed
        for name in ("pretrain", "supervised", "en2lrl", "lrl2en"):
            getattr(new, name).seed = seed
        return new

    def pipeline_config(self):
        from .pipeline import PipelineConfig

        p = self.pipeline
        return PipelineConfig(dims=self.model, pretrain=self.pretrain, supervised=self.supervised,
                              en2lrl=self.en2lrl, lrl2en=self.lrl2en, later_epochs=p.later_epochs, k_max=p.k_max,
                              eps_bleu=p.eps_bleu, decode=p.decode, script_ban=p.script_ban, finetune=p.finetune,
                              warm_start=p.warm_start, seed=self.seed)


# --------------------------------------------------------------------------
# Strict (de)serialisation
# --------------------------------------------------------------------------


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    default = cls()
    kw = {}
    for f in dataclasses.fields(cls):
        key = f"{path}.{f.name}" if path else f.name
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            if not isinstance(value, (dict, type(None))):
                raise ConfigError(f"{key}: expected a mapping")
            unknown = sorted(set(value or {}) - {g.name for g in dataclasses.fields(hint)})
            if unknown:
                raise ConfigError(f"unknown key {key}.{unknown[0]}")
            # start from the parent's default so e.g. a direction set by a factory survives
            kw[f.name] = _build(hint, _merge(to_dict(getattr(default, f.name)), value or {}), key)
        elif isinstance(getattr(default, f.name), tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key}: expected a list")
            kw[f.name] = tuple(value)
        else:
            kw[f.name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from e


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        out[k] = _merge(out[k], v) if isinstance(out.get(k), dict) and isinstance(v, dict) else v
    return out


def from_dict(data) -> RunConfig:
    return _build(RunConfig, data, "")


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def parse_config(path=None) -> RunConfig:
    """Load a YAML run configuration; missing keys take their defaults, unknown keys are errors."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: invalid YAML: {e}") from e
    return from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


class Run:
    """Paths and lazily loaded state for one output directory."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg, self.out = cfg, out
        self._ws = self._runner = None

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            from .pipeline import PrerequisiteError

            raise PrerequisiteError(f"{path} missing; run `{hint}` first")
        return path

    @property
    def workspace(self):
        if self._ws is None:
            from .pipeline import Workspace
            from .synthlang import read_bundle

            prepared = self.require(self.out / "prepared", "prepare")
            bundle = read_bundle(prepared)
            vocab = Vocabulary.load(prepared / "vocab.txt")
            report = json.loads((prepared / "filter.json").read_text(encoding="utf-8"))
            self._ws = Workspace(bundle, vocab, report)
        return self._ws

    @property
    def runner(self):
        if self._runner is None:
            from .pipeline import IterationRunner

            self._runner = IterationRunner(self.workspace, self.cfg.pipeline_config(), self.out)
        return self._runner


def cmd_synth_data(run: Run):
    from .synthlang import gen_family, write_bundle

    bundle = gen_family(run.cfg.family)
    write_bundle(bundle, run.out / "data")
    log.info("wrote %d parallel pairs and %d LRL sentences to %s", len(bundle.en_hrl),
             len(bundle.mono["lrl"]), run.out / "data")


def cmd_prepare(run: Run):
    from .pipeline import prepare
    from .synthlang import read_bundle, write_bundle

    bundle = read_bundle(run.require(run.out / "data" / "manifest.json", "synth-data").parent)
    ws = prepare(bundle, run.cfg.filter, run.cfg.vocab_mode)
    write_bundle(ws.bundle, run.out / "prepared")
    ws.vocab.save(run.out / "prepared" / "vocab.txt")
    atomic_write_text(run.out / "prepared" / "filter.json", json.dumps(ws.filter_report, indent=2) + "\n")
    log.info("vocabulary of %d tokens; rejected %s", len(ws.vocab), ws.filter_report)


def _advance_to(runner, wanted: str):
    from .pipeline import PrerequisiteError

    stage = runner.next_stage()
    while stage is not None and stage[0] == "evaluate":
        runner.step()
        stage = runner.next_stage()
    if stage is None:
        raise PrerequisiteError("all iterations are complete; nothing left to run")
    if stage[0] != wanted:
        raise PrerequisiteError(f"next pending stage is {stage[0]} (iteration {stage[1]}), not {wanted}")
    runner.step()
    log.info("completed %s (iteration %s)", *stage)


def cmd_pretrain(run: Run):
    if run.runner.has("pretrained"):
        log.info("pretrained model already present")
        return
    run.runner.pretrain()


def cmd_train_en2lrl(run: Run):
    _advance_to(run.runner, "train_en2lrl")


def cmd_train_lrl2en(run: Run):
    _advance_to(run.runner, "train_lrl2en")


def cmd_backtranslate(run: Run):
    stage = run.runner.next_stage()
    wanted = stage[0] if stage and stage[0].startswith("backtranslate") else "backtranslate_en2lrl"
    _advance_to(run.runner, wanted)


def cmd_iterate(run: Run):
    state = run.runner.run()
    log.info("finished after %d iterations (converged=%s); test BLEU %s", state.k, state.converged, state.bleu)


def cmd_evaluate(run: Run):
    from .evaluation import encoder_probe, script_purity
    from .pipeline import PrerequisiteError, evaluate_direction

    runner, ws, cfg = run.runner, run.workspace, run.cfg
    names = [n for n in runner.state.checkpoints if n != "pretrained"]
    if not names:
        raise PrerequisiteError("no trained checkpoint to evaluate; run `iterate` or a train command first")
    results = {}
    lrl_script = ws.bundle.languages["lrl"].script_class
    for name in sorted(names, key=lambda n: (n.split("_")[0], int(n.split("_")[1]))):
        direction = name.split("_")[0]
        ban = runner.ban if direction == EN2LRL else None
        model = runner.model(name)
        score, outs = evaluate_direction(model, ws, direction, "test", ban, cfg.pipeline.decode, cfg.eval.bleu)
        entry = {"bleu_test": score}
        if direction == EN2LRL:
            entry["purity"] = script_purity(outs, ws.vocab, lrl_script)
            n = cfg.eval.probe_samples
            entry.update(encoder_probe(model, ws.mono_ids("hrl")[:n], ws.mono_ids("lrl")[:n], ws.langs.hrl,
                                       cfg.eval.probe_seed))
        results[name] = entry
        log.info("%s: %s", name, entry)
    atomic_write_text(run.out / "eval.json", json.dumps(results, indent=2, sort_keys=True) + "\n")


def cmd_ablate(run: Run):
    from .evaluation import run_mono_ablation

    rows = run_mono_ablation(run.workspace, run.cfg.eval.ablation_sizes, run.cfg.pipeline_config(),
                             run.out / "ablation.csv", run.runner)
    for size, score in rows:
        log.info("mono size %d: BLEU %.2f", size, score)


def cmd_report(run: Run):
    from .evaluation import write_report

    run.require(run.out / "manifest.json", "iterate")
    run.require(run.out / "metrics.jsonl", "iterate")
    for path in write_report(run.out):
        log.info("wrote %s", path)


HANDLERS = {
    "synth-data": cmd_synth_data,
    "prepare": cmd_prepare,
    "pretrain": cmd_pretrain,
    "train-en2lrl": cmd_train_en2lrl,
    "train-lrl2en": cmd_train_lrl2en,
    "backtranslate": cmd_backtranslate,
    "iterate": cmd_iterate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def resolve_out(cfg: RunConfig, flag: str | None) -> Path:
    """``--out`` beats the environment variable, which beats the config file."""
    return Path(flag or os.environ.get(OUT_ENV) or cfg.out)


def execute(command: str, cfg: RunConfig, out: Path | None = None) -> int:
    """Run one command against ``cfg``; returns the process exit status."""
    from filelock import FileLock, Timeout

    from .pipeline import PrerequisiteError

    if command not in HANDLERS:
        log.error("unknown command %r", command)
        return EXIT_CONFIG
    out = Path(out) if out is not None else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        log.error("another command is running in %s", out)
        return EXIT_RUNTIME
    try:
        import torch

        torch.manual_seed(cfg.seed)
        atomic_write_text(out / "config.effective.yaml", dump_config(cfg))
        HANDLERS[command](Run(cfg, out))
    except PrerequisiteError as e:
        log.error("%s", e)
        return EXIT_PREREQ
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any other failure maps to the runtime exit code
        log.exception("%s failed: %s", command, e)
        return EXIT_RUNTIME
    finally:
        lock.release()
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lrl-adapt", description="Adapt an HRL<->En translator to a related LRL.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override every seed in the configuration")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the config's `out`)")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    out = resolve_out(cfg, args.out)
    cfg.out = str(out)
    return execute(args.command, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
