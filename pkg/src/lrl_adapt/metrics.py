"""Per-step metric records and their JSONL serialisation."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

# Every metric name a record may carry. Names ending in ``*`` are prefixes.
METRIC_REGISTRY = {
    "L_translation": "translation cross entropy",
    "L_denoising": "denoising cross entropy (HRL + LRL)",
    "L_backtranslation": "backtranslation cross entropy",
    "L_adv1": "critic 1 Wasserstein estimate, HRL vs LRL",
    "L_adv2": "critic 2 Wasserstein estimate, non-English vs English",
    "L_adv": "single-critic Wasserstein estimate, HRL vs LRL",
    "L_generator": "generator objective",
    "L_critic": "critic objective",
    "L_pretrain": "pretraining reconstruction cross entropy",
    "lr": "model learning rate",
    "bleu*": "corpus BLEU, suffixed by the evaluation set",
    "purity*": "output script purity",
    "probe_accuracy": "held-out accuracy of a linear language probe",
    "wasserstein_gap": "probe-critic score gap",
    "bt_pairs": "backtranslation pairs kept",
    "bt_dropped": "backtranslation pairs dropped (empty generation)",
}


def known_metric(name: str) -> bool:
    if name in METRIC_REGISTRY:
        return True
    return any(k.endswith("*") and name.startswith(k[:-1]) for k in METRIC_REGISTRY)


@dataclass
class MetricsRecord:
    run: str
    step: int
    metrics: dict
    timestamp: float = field(default_factory=time.time)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = [k for k in self.metrics if not known_metric(k)]
        if unknown:
            raise KeyError(f"unregistered metric names: {unknown}")

    def to_json(self, with_time=True) -> str:
        d = {"run": self.run, "step": self.step, "metrics": self.metrics, **self.extra}
        if with_time:
            d["timestamp"] = self.timestamp
        return json.dumps(d, sort_keys=True)

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.metrics.values())


def write_jsonl(records, path, with_time=True):
    from .corpus import atomic_write_text

    atomic_write_text(path, "".join(r.to_json(with_time) + "\n" for r in records))


def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                ts = d.pop("timestamp", 0.0)
                run, step, metrics = d.pop("run"), d.pop("step"), d.pop("metrics")
                out.append(MetricsRecord(run, step, metrics, ts, d))
    return out
