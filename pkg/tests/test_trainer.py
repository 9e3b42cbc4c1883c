import logging

import numpy as np
import pytest
import torch

from lrl_adapt.corpus import tokenize
from lrl_adapt.model import ModelDims, init_critic, init_model, state_digest
from lrl_adapt.objectives import TaskWeights
from lrl_adapt.trainer import (
    Accumulator,
    LangIds,
    MissingStreamError,
    Stream,
    TrainConfig,
    TrainData,
    finetune_bt,
    pretrain_denoising,
    train_en2lrl,
    train_lrl2en,
)

TINY = ModelDims(d_model=8, n_heads=2, enc_layers=1, dec_layers=1, d_ff=16, dropout=0.0, max_len=32,
                 critic_hidden=(8, 8, 4))


@pytest.fixture(scope="module")
def data(small_bundle, small_vocab):
    ids = lambda ss: [tokenize(s, small_vocab, "x").tokens for s in ss]  # noqa: E731
    par = list(zip(ids(small_bundle.en_hrl.sources), ids(small_bundle.en_hrl.targets)))
    mono_h, mono_l = ids(small_bundle.mono["hrl"].sentences), ids(small_bundle.mono["lrl"].sentences)
    bt = [(en, lrl) for (en, _), lrl in zip(par, mono_l)]
    return par, mono_h, mono_l, bt


def _cfg(**kw):
    base = dict(epochs=1, accum=2, batch_tokens=200, warmup=5, lr=1e-3, max_updates=12)
    base.update(kw)
    return TrainConfig(**base)


def _critics(n=2):
    return tuple(init_critic(8, (8, 8, 4), seed=i) for i in range(n))


def test_cadence_audit(small_vocab, data):
    par, mh, ml, bt = data
    model = init_model(small_vocab, TINY, seed=0)
    log = train_en2lrl(model, _critics(), TrainData(par, mh, ml, bt), small_vocab, _cfg(epochs=5))
    assert log.updates == 12
    assert log.generator_adv_steps() == [3, 6, 9, 12]
    assert log.critic_steps() == list(range(1, 13))
    assert all(r.finite() for r in log.records)
    short = train_en2lrl(model, _critics(), TrainData(par, mh, ml, bt), small_vocab, _cfg(max_updates=None))
    assert len(short.generator_adv_steps()) == short.updates // 3


def test_critic_weights_stay_clipped(small_vocab, data):
    par, mh, ml, bt = data
    critics = _critics()
    train_en2lrl(init_model(small_vocab, TINY), critics, TrainData(par, mh, ml, bt), small_vocab,
                 _cfg(max_updates=4, critic_lr=0.5))
    for c in critics:
        assert max(p.abs().max().item() for p in c.parameters()) <= 0.05 + 1e-7


def test_same_seed_same_result(small_vocab, data):
    par, mh, ml, bt = data
    runs = []
    for _ in range(2):
        model, critics = init_model(small_vocab, TINY, seed=3), _critics()
        log = train_en2lrl(model, critics, TrainData(par, mh, ml, bt), small_vocab, _cfg(max_updates=5, seed=9))
        runs.append((state_digest(model, *critics), [r.to_json(with_time=False) for r in log.records]))
    assert runs[0] == runs[1]


def test_missing_streams_raise(small_vocab, data):
    par, mh, ml, bt = data
    model = init_model(small_vocab, TINY)
    with pytest.raises(MissingStreamError):
        train_en2lrl(model, _critics(), TrainData(par, mh, None, bt), small_vocab, _cfg())
    with pytest.raises(MissingStreamError):
        train_en2lrl(model, _critics(), TrainData(par, mh, ml, None), small_vocab, _cfg())
    with pytest.raises(MissingStreamError):
        train_lrl2en(model, None, TrainData(None, None, None, bt), small_vocab, _cfg(direction="lrl2en"))


def test_adversarial_only_touches_encoder(small_vocab, data):
    par, mh, ml, _ = data
    model = init_model(small_vocab, TINY, seed=1)
    enc0 = [p.detach().clone() for p in model.encoder_parameters()]
    dec0 = [p.detach().clone() for p in model.decoder_parameters()]
    w = TaskWeights(translation=0.0, denoising=0.0, backtranslation=0.0, adv_generator=-60.0)
    cfg = _cfg(direction="lrl2en", weights=w, max_updates=6)
    train_lrl2en(model, _critics(1)[0], TrainData(None, mh, ml, None), small_vocab, cfg)
    assert any(not torch.equal(a, b) for a, b in zip(enc0, model.encoder_parameters()))
    assert all(torch.equal(a, b) for a, b in zip(dec0, model.decoder_parameters()))


def test_denoising_stream_ignored_with_warning(small_vocab, data, caplog):
    par, mh, ml, bt = data
    rev = [(t, s) for s, t in par]
    model = init_model(small_vocab, TINY)
    with caplog.at_level(logging.WARNING):
        train_lrl2en(model, _critics(1)[0], TrainData(rev, mh, ml, bt), small_vocab,
                     _cfg(direction="lrl2en", max_updates=2), denoising=mh)
    assert "ignored" in caplog.text


def test_finetune_bt(small_vocab, data):
    par, mh, ml, bt = data
    model = init_model(small_vocab, TINY)
    before = state_digest(model)
    log = finetune_bt(model, bt, small_vocab, _cfg(), script_ban=True)
    assert state_digest(model) == before
    assert any("skipped" in e for e in log.events)
    with pytest.raises(MissingStreamError):
        finetune_bt(model, [], small_vocab, _cfg())
    log = finetune_bt(model, bt[:40], small_vocab, _cfg(max_updates=None, accum=1))
    assert state_digest(model) != before
    assert {r.run for r in log.records} == {"finetune_bt"}
    assert all(set(r.metrics) >= {"L_backtranslation"} and "L_translation" not in r.metrics for r in log.records)


def test_pretrain_runs_every_language(small_vocab, data):
    _, mh, ml, _ = data
    model = init_model(small_vocab, TINY)
    log = pretrain_denoising(model, {"hrl": mh, "lrl": ml}, small_vocab, _cfg(max_updates=3))
    assert log.updates == 3 and all(r.metrics["L_denoising"] > 0 for r in log.records)


def test_accumulation_matches_large_batch_for_linear_model():
    torch.manual_seed(0)
    X, y = torch.randn(64, 5, dtype=torch.float64), torch.randn(64, dtype=torch.float64)
    big = torch.nn.Linear(5, 1).double()
    small = torch.nn.Linear(5, 1).double()
    small.load_state_dict(big.state_dict())
    ((big(X).squeeze(-1) - y) ** 2).mean().backward()
    acc = Accumulator(8)
    due = [acc.add(((small(X[i : i + 8]).squeeze(-1) - y[i : i + 8]) ** 2).mean()) for i in range(0, 64, 8)]
    assert due == [False] * 7 + [True]
    for a, b in zip(big.parameters(), small.parameters()):
        torch.testing.assert_close(a.grad, b.grad, rtol=0, atol=1e-12)


def test_stream_cycles_with_reshuffle():
    s = Stream(list(range(5)), np.random.default_rng(0))
    first, second = s.take(5), s.take(5)
    assert sorted(first) == sorted(second) == list(range(5))
    assert len(s.take(12)) == 12


def test_lang_ids(small_vocab):
    ids = LangIds.from_vocab(small_vocab)
    assert len({ids.en, ids.hrl, ids.lrl}) == 3


def test_bad_config():
    with pytest.raises(ValueError):
        TrainConfig(direction="sideways")
    with pytest.raises(ValueError):
        TrainConfig(lipschitz="magic")
    assert TrainConfig(weights={"adv_generator": -1}).weights.adv_generator == -1
