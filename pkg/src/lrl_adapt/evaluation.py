"""BLEU, latent-alignment probes, script purity and the monolingual-size ablation."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import COMMON, SPECIAL, Vocabulary, char_script

log = logging.getLogger(__name__)


@dataclass
class BleuConfig:
    max_order: int = 4
    smoothing: str = "add-one"  # add-one (orders >= 2) | none
    tokenize: str = "whitespace"  # whitespace | none (inputs are token lists)

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.smoothing not in ("add-one", "none"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")
        if self.tokenize not in ("whitespace", "none"):
            raise ValueError(f"unknown tokenization {self.tokenize!r}")


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, cfg: BleuConfig = BleuConfig()):
    """Corpus sufficient statistics: (matches per order, totals per order, hyp_len, ref_len)."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    split = str.split if cfg.tokenize == "whitespace" else list
    matches = [0] * cfg.max_order
    totals = [0] * cfg.max_order
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = split(h), split(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, cfg.max_order + 1):
            hc, rc = _ngram_counts(h, n), _ngram_counts(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses, references, cfg: BleuConfig = BleuConfig()) -> float:
    """Corpus BLEU in [0, 100] with a single reference per hypothesis."""
    matches, totals, c, r = bleu_stats(hypotheses, references, cfg)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if cfg.smoothing == "add-one" and n >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / cfg.max_order)


# --------------------------------------------------------------------------
# Script purity
# --------------------------------------------------------------------------


def script_purity(outputs, vocab: Vocabulary, allowed_script: str) -> float:
    """Fraction of non-special output tokens written entirely in ``allowed_script``.

    Characters of the ``common`` class (digits, punctuation) are neutral.
    """
    good = total = 0
    for seq in outputs:
        ids = seq.tokens if hasattr(seq, "tokens") else seq
        for i in ids:
            if vocab.script_of[i] == SPECIAL:
                continue
            total += 1
            good += all(char_script(ch) in (allowed_script, COMMON) for ch in vocab.itos[i])
    if total == 0:
        log.warning("script_purity on an empty output set; returning 1.0")
        return 1.0
    return good / total


# --------------------------------------------------------------------------
# Latent alignment probes
# --------------------------------------------------------------------------


def mean_pooled(latents) -> np.ndarray:
    """Mean over non-pad positions of a Latents batch -> (B, d) float64 array."""
    keep = (~latents.pad).unsqueeze(-1).to(latents.vectors.dtype)
    pooled = (latents.vectors * keep).sum(1) / keep.sum(1)
    return pooled.detach().double().numpy()


def probe_alignment(feats_a, feats_b, seed: int = 0, min_samples: int = 100, critic_steps: int = 300):
    """Train fresh probes to tell two sets of pooled latents apart.

    Returns ``{"probe_accuracy", "wasserstein_gap"}``. Both sides are split
    80/20 with the same permutation, so paired inputs stay paired. The
    accuracy comes from a logistic-regression probe; the gap from a small
    weight-clipped critic, measured on the held-out part.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    a, b = np.asarray(feats_a, dtype=np.float64), np.asarray(feats_b, dtype=np.float64)
    if len(a) < min_samples or len(b) < min_samples:
        raise ValueError(f"probe needs >= {min_samples} latents per side, got {len(a)} and {len(b)}")
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(0.8 * n))
    tr, te = perm[:cut], perm[cut:]
    X_tr = np.concatenate([a[tr], b[tr]])
    y_tr = np.concatenate([np.zeros(len(tr)), np.ones(len(tr))])
    X_te = np.concatenate([a[te], b[te]])
    y_te = np.concatenate([np.zeros(len(te)), np.ones(len(te))])
    scaler = StandardScaler().fit(X_tr)
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(scaler.transform(X_tr), y_tr)
    acc = float((clf.predict(scaler.transform(X_te)) == y_te).mean())
    gap = _probe_critic_gap(a[tr], b[tr], a[te], b[te], seed, critic_steps)
    return {"probe_accuracy": acc, "wasserstein_gap": gap}


def _probe_critic_gap(a_tr, b_tr, a_te, b_te, seed, steps, clip=0.05):
    gen = torch.Generator().manual_seed(seed)
    d = a_tr.shape[1]
    net = torch.nn.Sequential(torch.nn.Linear(d, 64), torch.nn.SELU(), torch.nn.Linear(64, 1)).double()
    with torch.no_grad():
        for p in net.parameters():
            p.copy_((torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * clip)
    opt = torch.optim.RMSprop(net.parameters(), lr=5e-3)
    A, B = torch.from_numpy(a_tr), torch.from_numpy(b_tr)
    for _ in range(steps):
        loss = net(B).mean() - net(A).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            for p in net.parameters():
                p.clamp_(-clip, clip)
    with torch.no_grad():
        return float(abs(net(torch.from_numpy(a_te)).mean() - net(torch.from_numpy(b_te)).mean()))


# --------------------------------------------------------------------------
# Monolingual-size ablation
# --------------------------------------------------------------------------


def run_mono_ablation(ws, sizes, cfg, out_csv=None, runner=None):
    """BLEU of an iteration-1 En->LRL run for each LRL monolingual corpus size.

    Every run shares the seed, parallel data, pretrained model and HRL->En
    backtranslator; only the first ``size`` LRL sentences (and their BT
    pairs) differ. Returns a list of ``(size, bleu)`` and writes a
    ``size,bleu`` CSV when ``out_csv`` is given.
    """
    from .pipeline import BTDataset, IterationRunner, evaluate_direction, synthesize_bt_for_en2lrl

    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("no ablation sizes given")
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"ablation sizes must be ascending, got {sizes}")
    available = len(ws.bundle.mono["lrl"])
    if sizes[-1] > available:
        raise ValueError(f"ablation size {sizes[-1]} exceeds the {available} LRL monolingual sentences")
    runner = runner or IterationRunner(ws, cfg)
    while not runner.has("lrl2en_0"):
        runner.step()
    full = synthesize_bt_for_en2lrl(runner.model("lrl2en_0"), ws.vocab, ws.bundle.mono["lrl"].sentences[: sizes[-1]],
                                    cfg.decode, 1, "lrl2en_0")
    genuine_rank = {s: i for i, s in enumerate(ws.bundle.mono["lrl"].sentences[: sizes[-1]])}
    rows = []
    for size in sizes:
        pairs = [p for p in full.pairs if genuine_rank[p[1]] < size]
        bt = BTDataset(pairs, full.direction, {**full.meta, "mono_size": size})
        model = runner.train_en2lrl(1, mono_limit=size, bt=bt, persist=False, name=f"ablate_{size}")
        score, _ = evaluate_direction(model, ws, "en2lrl", "test", runner.ban, cfg.decode)
        log.info("mono ablation: size %d -> BLEU %.2f", size, score)
        rows.append((size, score))
    if out_csv is not None:
        from .corpus import atomic_write_text

        atomic_write_text(out_csv, "size,bleu\n" + "".join(f"{n},{b:.4f}\n" for n, b in rows))
    return rows


# --------------------------------------------------------------------------
# Charts
# --------------------------------------------------------------------------


def write_report(out_dir) -> list:
    """Render loss curves, BLEU per iteration and (if present) BLEU vs mono size as PNGs."""
    import json
    from pathlib import Path

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import read_jsonl

    out = Path(out_dir)
    written = []
    charts = out / "report"
    charts.mkdir(parents=True, exist_ok=True)

    records = read_jsonl(out / "metrics.jsonl")
    runs = {}
    for r in records:
        runs.setdefault(r.run, []).append(r)
    names = sorted({k for r in records for k in r.metrics if k.startswith("L_") and k not in ("L_generator", "L_critic")})
    fig, axes = plt.subplots(len(runs) or 1, 1, figsize=(7, 2.6 * max(len(runs), 1)), squeeze=False)
    for ax, (run, recs) in zip(axes[:, 0], runs.items()):
        for name in names:
            pts = [(r.step, r.metrics[name]) for r in recs if name in r.metrics]
            if pts:
                ax.plot(*zip(*pts), label=name, linewidth=0.8)
        ax.set_title(run, fontsize=9)
        ax.set_xlabel("update")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(charts / "losses.png", dpi=100)
    plt.close(fig)
    written.append(charts / "losses.png")

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for direction, per in manifest["bleu"].items():
        pts = sorted((int(k), v) for k, v in per.items())
        if pts:
            ax.plot(*zip(*pts), marker="o", label=direction)
    ax.set_xlabel("iteration")
    ax.set_ylabel("test BLEU")
    ax.legend()
    fig.tight_layout()
    fig.savefig(charts / "bleu_by_iteration.png", dpi=100)
    plt.close(fig)
    written.append(charts / "bleu_by_iteration.png")

    ablation = out / "ablation.csv"
    if ablation.exists():
        rows = [line.split(",") for line in ablation.read_text().splitlines()[1:] if line]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([int(a) for a, _ in rows], [float(b) for _, b in rows], marker="o")
        ax.set_xscale("log")
        ax.set_xlabel("LRL monolingual sentences")
        ax.set_ylabel("En->LRL test BLEU")
        fig.tight_layout()
        fig.savefig(charts / "bleu_by_mono_size.png", dpi=100)
        plt.close(fig)
        written.append(charts / "bleu_by_mono_size.png")
    return written


def encoder_probe(model, hrl_seqs, lrl_seqs, lang_id: int, seed: int = 0, batch: int = 256):
    """Probe how separable the encoder makes HRL and LRL sentences.

    Both sides are encoded un-noised with the same ``lang_id`` token, mean
    pooled, and handed to ``probe_alignment``. The model is left untouched.
    """
    from .model import encode

    was = model.training
    model.eval()
    feats = []
    with torch.no_grad():
        for seqs in (hrl_seqs, lrl_seqs):
            parts = [mean_pooled(encode(model, seqs[i : i + batch], lang_id)) for i in range(0, len(seqs), batch)]
            feats.append(np.concatenate(parts) if parts else np.zeros((0, model.dims.d_model)))
    model.train(was)
    return probe_alignment(feats[0], feats[1], seed=seed)
