import numpy as np
import pytest
import torch

from lrl_adapt.corpus import build_vocab
from lrl_adapt.model import (
    Critic,
    DecodeConfig,
    Latents,
    ModelDims,
    beam_search,
    decode_logits,
    encode,
    generate,
    init_critic,
    init_model,
    load_checkpoint,
    save_checkpoint,
    state_digest,
    structural_ban,
    translate,
)

from oracles import critic_score, exhaustive_best, transformer_logits

TINY = ModelDims(d_model=4, n_heads=2, enc_layers=1, dec_layers=1, d_ff=6, dropout=0.0, max_len=16,
                 critic_hidden=(5, 4, 3))


@pytest.fixture
def vocab7():
    # 5 base specials + 2 language tokens = 7 ids, ordinary tokens on top
    return build_vocab([["a b"]], ["en", "hrl"])


def _randomise(module, seed):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)
    return module


def test_transformer_matches_numpy_oracle(vocab7):
    model = _randomise(init_model(vocab7, TINY, seed=0).double(), 1).eval()
    src, tgt = [vocab7.lang_id("en"), 7, 8, 7], [vocab7.lang_id("hrl"), 8, 7]
    z_ref, logits_ref = transformer_logits(model, src, tgt)
    z = model.encode(torch.tensor([src]))
    logits = model.decode(z, torch.zeros(1, len(src), dtype=torch.bool), torch.tensor([tgt]))
    np.testing.assert_allclose(z[0].detach().numpy(), z_ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(logits[0].detach().numpy(), logits_ref, rtol=0, atol=1e-10)


def test_padding_does_not_change_outputs(vocab7):
    model = _randomise(init_model(vocab7, TINY, seed=0).double(), 2).eval()
    short, long = [7], [8, 7, 8, 8]
    z = encode(model, [short, long], vocab7.lang_id("en"))
    z_alone = encode(model, [short], vocab7.lang_id("en"))
    torch.testing.assert_close(z.vectors[0, :2], z_alone.vectors[0], rtol=0, atol=1e-12)
    lg = decode_logits(model, z, vocab7.lang_id("hrl"), [[8], [7, 7, 7]])
    lg_alone = decode_logits(model, z_alone, vocab7.lang_id("hrl"), [[8]])
    torch.testing.assert_close(lg[0, :2], lg_alone[0], rtol=0, atol=1e-12)


def test_critic_matches_numpy_oracle():
    critic = _randomise(Critic(4, (5, 4, 3)).double(), 3)
    z = torch.randn(3, 6, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    lengths = torch.tensor([6, 2, 4])
    got = critic(z, lengths).detach().numpy()
    want = [critic_score(critic, z[i, : lengths[i]].numpy()) for i in range(3)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


def test_init_is_seeded_and_copies_language_rows(small_vocab):
    a = init_model(small_vocab, TINY, seed=5, lang_init={"lrl": "hrl"})
    b = init_model(small_vocab, TINY, seed=5, lang_init={"lrl": "hrl"})
    assert state_digest(a) == state_digest(b)
    assert state_digest(a) != state_digest(init_model(small_vocab, TINY, seed=6))
    w = a.embed.weight
    assert torch.equal(w[small_vocab.lang_id("lrl")], w[small_vocab.lang_id("hrl")])
    assert not torch.equal(w[small_vocab.lang_id("en")], w[small_vocab.lang_id("hrl")])
    c1, c2 = init_critic(4, (5, 4, 3), 1), init_critic(4, (5, 4, 3), 1)
    assert state_digest(c1) == state_digest(c2)


def test_encoder_parameter_split(vocab7):
    model = init_model(vocab7, TINY)
    enc = {id(p) for p in model.encoder_parameters()}
    dec = {id(p) for p in model.decoder_parameters()}
    assert not enc & dec
    assert enc | dec == {id(p) for p in model.parameters()}


def test_checkpoint_round_trip(tmp_path, small_vocab):
    model = init_model(small_vocab, TINY, seed=1)
    critics = [init_critic(4, (5, 4, 3), 2)]
    save_checkpoint(tmp_path / "m.pt", model, small_vocab, critics, {"k": 1})
    m2, c2, meta = load_checkpoint(tmp_path / "m.pt", small_vocab)
    assert state_digest(m2) == state_digest(model)
    assert state_digest(*c2) == state_digest(*critics)
    assert meta == {"k": 1}
    other = build_vocab([["zzz"]], ["en", "hrl", "lrl"])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "m.pt", other)


def test_max_len_enforced(vocab7):
    model = init_model(vocab7, TINY)
    with pytest.raises(ValueError):
        encode(model, [[7] * 20], vocab7.lang_id("en"))


# ---- decoding -------------------------------------------------------------


def _toy_lm(V, seed):
    """Deterministic prefix-dependent log-prob table."""
    def fn(prefix):
        r = np.random.default_rng([seed, *prefix, 99])
        logits = r.normal(size=V) * 2
        return logits - np.log(np.exp(logits).sum())
    return fn


@pytest.mark.parametrize("seed", range(8))
def test_wide_beam_equals_exhaustive_search(seed):
    V, eos, L = 4, 0, 3
    fn = _toy_lm(V, seed)
    tokens, score = beam_search(lambda ps: np.stack([fn(p) for p in ps]), eos, k=V**L, max_len=L)
    best_tokens, best_score = exhaustive_best(fn, V, eos, L)
    assert tokens == best_tokens
    assert score == pytest.approx(best_score, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_banned_tokens_never_emitted(seed):
    V, eos, L = 5, 0, 4
    fn = _toy_lm(V, seed)
    ban = np.array([False, True, False, True, False])
    tokens, score = beam_search(lambda ps: np.stack([fn(p) for p in ps]), eos, k=V**L, max_len=L, ban=ban)
    assert not any(ban[t] for t in tokens)
    best_tokens, best_score = exhaustive_best(fn, V, eos, L, ban)
    assert tokens == best_tokens
    assert score == pytest.approx(best_score, abs=1e-12)


def test_beam_one_is_greedy():
    V, eos = 4, 0
    fn = _toy_lm(V, 7)
    tokens, _ = beam_search(lambda ps: np.stack([fn(p) for p in ps]), eos, k=1, max_len=6)
    greedy = []
    for _ in range(6):
        t = int(np.argmax(fn(greedy)))
        if t == eos:
            break
        greedy.append(t)
    assert tokens == greedy


def test_batched_greedy_matches_single_sentence_beam_one(small_vocab):
    model = _randomise(init_model(small_vocab, TINY, seed=0).double(), 4).eval()
    seqs = [[10, 11, 12], [13], [14, 15]]
    lang = small_vocab.lang_id("hrl")
    base = structural_ban(small_vocab)
    z = encode(model, seqs, small_vocab.lang_id("en"))
    greedy = generate(model, z, lang, DecodeConfig(beam=1, max_len=5), base_ban=base)
    for i, s in enumerate(seqs):
        zi = encode(model, [s], small_vocab.lang_id("en"))

        def step(prefixes):
            zz = Latents(zi.vectors.expand(len(prefixes), -1, -1), zi.pad.expand(len(prefixes), -1))
            lg = decode_logits(model, zz, lang, prefixes)
            rows = lg[torch.arange(len(prefixes)), torch.tensor([len(p) for p in prefixes])]
            return torch.log_softmax(rows, -1).detach().numpy()

        assert beam_search(step, small_vocab.eos, 1, 5, base)[0] == greedy[i]
    wide = generate(model, z, lang, DecodeConfig(beam=3, max_len=5), base_ban=base)
    assert not any(base[t] for s in greedy + wide for t in s)


def test_translate_respects_ban_and_structural_specials(small_vocab):
    model = init_model(small_vocab, TINY, seed=0)
    ban = np.zeros(len(small_vocab), dtype=bool)
    ban[small_vocab.n_specials : small_vocab.n_specials + 10] = True
    outs = translate(model, small_vocab, [[10, 11], [12]], "en", "hrl", DecodeConfig(max_len=6), ban)
    for s in outs:
        assert all(not ban[t] and t >= small_vocab.n_specials for t in s)


def test_everything_banned_raises(small_vocab):
    model = init_model(small_vocab, TINY, seed=0)
    ban = np.ones(len(small_vocab), dtype=bool)
    ban[small_vocab.eos] = False
    z = encode(model, [[10]], small_vocab.lang_id("en"))
    out = generate(model, z, small_vocab.lang_id("hrl"), DecodeConfig(max_len=4), ban_mask=ban)
    assert out == [[]]
    ban[small_vocab.eos] = True
    with pytest.raises(ValueError):
        generate(model, z, small_vocab.lang_id("hrl"), DecodeConfig(max_len=4), ban_mask=ban)
