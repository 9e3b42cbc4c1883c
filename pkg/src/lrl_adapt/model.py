"""Encoder-decoder transformer with language-token control, and sequence critics."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Vocabulary

CHECKPOINT_VERSION = 1


@dataclass
class ModelDims:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    max_len: int = 64
    critic_hidden: tuple = (512, 512, 128)

    def __post_init__(self):
        self.critic_hidden = tuple(self.critic_hidden)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if len(self.critic_hidden) != 3:
            raise ValueError("critic_hidden needs three widths (fc, fc, recurrent)")


def sinusoidal_positions(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, n_heads, dropout=0.0):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem, key_pad=None, causal=False):
        B, T, D = x.shape
        S = mem.shape[1]
        h = self.n_heads
        q = self.q(x).view(B, T, h, D // h).transpose(1, 2)
        k = self.k(mem).view(B, S, h, D // h).transpose(1, 2)
        v = self.v(mem).view(B, S, h, D // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(T, S, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        att = self.drop(torch.softmax(scores, dim=-1))
        out = (att @ v).transpose(1, 2).reshape(B, T, D)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, dropout=0.0):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(F.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, d_ff, dropout):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.att = MultiHeadAttention(d_model, n_heads, dropout)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad):
        y = self.ln1(x)
        x = x + self.drop(self.att(y, y, key_pad=pad))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, d_ff, dropout):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.self_att = MultiHeadAttention(d_model, n_heads, dropout)
        self.ln2 = nn.LayerNorm(d_model)
        self.cross_att = MultiHeadAttention(d_model, n_heads, dropout)
        self.ln3 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem, mem_pad, tgt_pad=None):
        y = self.ln1(x)
        x = x + self.drop(self.self_att(y, y, key_pad=tgt_pad, causal=True))
        x = x + self.drop(self.cross_att(self.ln2(x), mem, key_pad=mem_pad))
        return x + self.drop(self.ff(self.ln3(x)))


class Seq2SeqTransformer(nn.Module):
    """Pre-LN transformer; one embedding table shared by encoder and decoder inputs.

    The encoder and decoder inputs are expected to start with a language token.
    The output projection is a separate (untied) linear layer.
    """

    def __init__(self, vocab_size: int, dims: ModelDims, pad_id: int = 0):
        super().__init__()
        self.dims = dims
        self.pad_id = pad_id
        d = dims.d_model
        self.embed = nn.Embedding(vocab_size, d)
        self.register_buffer("pos", sinusoidal_positions(dims.max_len, d).float(), persistent=False)
        self.enc = nn.ModuleList(EncoderLayer(d, dims.n_heads, dims.d_ff, dims.dropout) for _ in range(dims.enc_layers))
        self.enc_ln = nn.LayerNorm(d)
        self.dec = nn.ModuleList(DecoderLayer(d, dims.n_heads, dims.d_ff, dims.dropout) for _ in range(dims.dec_layers))
        self.dec_ln = nn.LayerNorm(d)
        self.out = nn.Linear(d, vocab_size)
        self.drop = nn.Dropout(dims.dropout)

    @property
    def vocab_size(self):
        return self.embed.num_embeddings

    def _embed(self, ids):
        T = ids.shape[1]
        if T > self.dims.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.dims.max_len}")
        x = self.embed(ids) * math.sqrt(self.dims.d_model) + self.pos[:T].to(self.embed.weight.dtype)
        return self.drop(x)

    def encoder_parameters(self):
        """Parameters that receive adversarial gradients (embeddings and encoder stack)."""
        yield self.embed.weight
        for m in (self.enc, self.enc_ln):
            yield from m.parameters()

    def decoder_parameters(self):
        for m in (self.dec, self.dec_ln, self.out):
            yield from m.parameters()

    def encode(self, src, src_pad=None):
        """``src`` (B, S) ids including the language-token prefix -> latents (B, S, d)."""
        if src.shape[1] == 0:
            raise ValueError("cannot encode an empty sequence")
        if src_pad is None:
            src_pad = src.eq(self.pad_id)
        x = self._embed(src)
        for layer in self.enc:
            x = layer(x, src_pad)
        return self.enc_ln(x)

    def decode(self, z, src_pad, tgt_in, tgt_pad=None):
        """Teacher-forced logits (B, T, V); ``tgt_in`` starts with the target language token."""
        y = self._embed(tgt_in)
        for layer in self.dec:
            y = layer(y, z, src_pad, tgt_pad)
        return self.out(self.dec_ln(y))


class Critic(nn.Module):
    """FC -> FC -> bidirectional GRU -> FC scorer over a latent sequence.

    SELU sits between consecutive layers. The sequence is reduced to a
    scalar through the final hidden states of both GRU directions.
    """

    def __init__(self, d_in: int, hidden=(512, 512, 128)):
        super().__init__()
        h1, h2, h3 = hidden
        self.fc1 = nn.Linear(d_in, h1)
        self.fc2 = nn.Linear(h1, h2)
        self.gru = nn.GRU(h2, h3, batch_first=True, bidirectional=True)
        self.fc3 = nn.Linear(2 * h3, 1)

    def forward(self, z, lengths=None):
        B, T, _ = z.shape
        x = F.selu(self.fc2(F.selu(self.fc1(z))))
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        packed = nn.utils.rnn.pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, h = self.gru(packed)  # (2, B, h3)
        h = torch.cat([h[0], h[1]], dim=-1)
        return self.fc3(F.selu(h)).squeeze(-1)

    def clip_(self, c: float):
        with torch.no_grad():
            for p in self.parameters():
                p.clamp_(-c, c)


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------


def init_model(vocab: Vocabulary, dims: ModelDims = ModelDims(), seed: int = 0, lang_init=None):
    """Seeded model: xavier-uniform matrices, N(0, 1/d) embeddings, zero biases.

    ``lang_init`` maps a language to the language whose token embedding it copies,
    e.g. ``{"lrl": "hrl"}``.
    """
    gen = torch.Generator().manual_seed(seed)
    model = Seq2SeqTransformer(len(vocab), dims, pad_id=vocab.pad)
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)
            if name == "embed.weight":
                p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(dims.d_model))
            elif ".ln" in "." + name or name.startswith(("enc_ln", "dec_ln")):
                p.fill_(1.0 if leaf[-1] == "weight" else 0.0)
            elif p.dim() >= 2:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.copy_(torch.empty(p.shape).uniform_(-bound, bound, generator=gen))
            else:
                p.zero_()
        for dst, src in (lang_init or {}).items():
            model.embed.weight[vocab.lang_id(dst)] = model.embed.weight[vocab.lang_id(src)]
    return model


def init_critic(d_in: int, hidden=(512, 512, 128), seed: int = 0):
    """Seeded critic with LeCun-normal weights (the SELU convention) and zero biases."""
    gen = torch.Generator().manual_seed(seed)
    critic = Critic(d_in, hidden)
    with torch.no_grad():
        for name, p in critic.named_parameters():
            if p.dim() >= 2:
                p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(p.shape[1]))
            else:
                p.zero_()
    return critic


# --------------------------------------------------------------------------
# Batching helpers
# --------------------------------------------------------------------------


def pad_batch(seqs, pad_id=0, prefix=None, suffix=None):
    """Right-pad lists of ids into a LongTensor, optionally adding a prefix/suffix id."""
    rows = [([prefix] if prefix is not None else []) + list(s) + ([suffix] if suffix is not None else []) for s in seqs]
    T = max(len(r) for r in rows)
    out = torch.full((len(rows), T), pad_id, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


@dataclass
class Latents:
    """Encoder output for a batch: ``vectors`` (B, S, d), ``pad`` (B, S) and ``lengths``."""

    vectors: torch.Tensor
    pad: torch.Tensor

    @property
    def lengths(self):
        return (~self.pad).sum(1)

    def __len__(self):
        return self.vectors.shape[0]


def encode(model: Seq2SeqTransformer, seqs, lang_id: int) -> Latents:
    """Encode a list of id lists, each prefixed with ``lang_id``."""
    if not seqs:
        raise ValueError("cannot encode an empty batch")
    src = pad_batch(seqs, model.pad_id, prefix=lang_id)
    pad = src.eq(model.pad_id)
    return Latents(model.encode(src, pad), pad)


def decode_logits(model: Seq2SeqTransformer, z: Latents, lang_id: int, targets):
    """Teacher-forced logits for ``[lang_id] + target`` prefixes; shape (B, T+1, V)."""
    tgt_in = pad_batch(targets, model.pad_id, prefix=lang_id)
    return model.decode(z.vectors, z.pad, tgt_in, tgt_in.eq(model.pad_id))


def critic_score(critic: Critic, z: Latents) -> torch.Tensor:
    return critic(z.vectors, z.lengths)


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------


@dataclass
class DecodeConfig:
    beam: int = 1
    max_len: int = 40


def structural_ban(vocab: Vocabulary) -> np.ndarray:
    """Ids a decoder may never emit: every special except EOS."""
    ban = np.zeros(len(vocab), dtype=bool)
    ban[: vocab.n_specials] = True
    ban[vocab.eos] = False
    return ban


def _effective_ban(vocab_size, eos, ban_mask, base_ban):
    ban = np.zeros(vocab_size, dtype=bool) if base_ban is None else base_ban.copy()
    if ban_mask is not None:
        ban_mask = np.asarray(ban_mask, dtype=bool)
        if ban_mask.shape != (vocab_size,):
            raise ValueError("ban_mask must be a boolean vector over the vocabulary")
        ban |= ban_mask
    if ban.all():
        raise ValueError("every token is banned; nothing can be generated")
    return ban


def beam_search(step_fn, eos: int, k: int, max_len: int, ban=None):
    """Beam search over a next-token log-probability function.

    ``step_fn(prefixes)`` returns an array (len(prefixes), V) of log-probs.
    Scores are summed log-probs without length normalisation. A hypothesis
    ends when it emits ``eos`` or reaches ``max_len`` tokens. Returns
    ``(tokens, score)`` of the best finished hypothesis.
    """
    alive = [([], 0.0)]
    finished = []
    for t in range(max_len):
        logp = np.asarray(step_fn([p for p, _ in alive]), dtype=np.float64)
        if ban is not None:
            logp = np.where(ban[None, :], -np.inf, logp)
        cand = []
        for (prefix, score), row in zip(alive, logp):
            top = np.argsort(-row, kind="stable")[: k + 1]
            for tok in top:
                if np.isfinite(row[tok]):
                    cand.append((score + row[tok], prefix, int(tok)))
        cand.sort(key=lambda c: -c[0])
        alive = []
        for score, prefix, tok in cand:
            if tok == eos:
                finished.append((prefix, score))
            elif len(alive) < k:
                alive.append((prefix + [tok], score))
        best_done = max((s for _, s in finished), default=-np.inf)
        if not alive or best_done >= alive[0][1]:
            break
    else:
        finished.extend(alive)
    return max(finished, key=lambda f: f[1]) if finished else ([], -np.inf)


@torch.no_grad()
def generate(model: Seq2SeqTransformer, z: Latents, lang_id: int, cfg: DecodeConfig = DecodeConfig(),
             ban_mask=None, eos: int = 2, base_ban=None):
    """Decode every sequence of a latent batch; returns a list of id lists (EOS stripped)."""
    was_training = model.training
    model.eval()
    ban = _effective_ban(model.vocab_size, eos, ban_mask, base_ban)
    try:
        if cfg.beam <= 1:
            return _greedy(model, z, lang_id, cfg.max_len, ban, eos)
        out = []
        for i in range(len(z)):
            n = int(z.lengths[i])
            zi = Latents(z.vectors[i : i + 1, :n], z.pad[i : i + 1, :n])

            def step(prefixes, zi=zi):
                zz = Latents(zi.vectors.expand(len(prefixes), -1, -1), zi.pad.expand(len(prefixes), -1))
                logits = decode_logits(model, zz, lang_id, prefixes)
                lengths = [len(p) for p in prefixes]
                rows = logits[torch.arange(len(prefixes)), torch.tensor(lengths)]
                return torch.log_softmax(rows.double(), -1).numpy()

            tokens, _ = beam_search(step, eos, cfg.beam, cfg.max_len, ban)
            out.append(tokens)
        return out
    finally:
        model.train(was_training)


def _greedy(model, z, lang_id, max_len, ban, eos):
    B = len(z)
    ban_t = torch.as_tensor(ban)
    ys = torch.full((B, 1), lang_id, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    out = [[] for _ in range(B)]
    for _ in range(max_len):
        logits = model.decode(z.vectors, z.pad, ys)[:, -1]
        logits = logits.masked_fill(ban_t, float("-inf"))
        nxt = logits.argmax(-1)
        for i in torch.nonzero(~done).flatten().tolist():
            tok = int(nxt[i])
            if tok == eos:
                done[i] = True
            else:
                out[i].append(tok)
        if done.all():
            break
        ys = torch.cat([ys, nxt[:, None]], dim=1)
    return out


def translate(model, vocab: Vocabulary, seqs, src_lang: str, tgt_lang: str, cfg: DecodeConfig = DecodeConfig(),
              ban_mask=None, batch_size: int = 256):
    """Encode with ``src_lang``'s token and decode with ``tgt_lang``'s token, in batches."""
    base = structural_ban(vocab)
    out = []
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i : i + batch_size]
        with torch.no_grad():
            was = model.training
            model.eval()
            z = encode(model, chunk, vocab.lang_id(src_lang))
            model.train(was)
        out.extend(generate(model, z, vocab.lang_id(tgt_lang), cfg, ban_mask, eos=vocab.eos, base_ban=base))
    return out


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def state_digest(*modules) -> str:
    """SHA-256 over parameter names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for m in modules:
        if m is None:
            continue
        for name, t in m.state_dict().items():
            t = t.detach().contiguous().cpu()
            h.update(f"{name}|{t.dtype}|{tuple(t.shape)}".encode())
            h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: Seq2SeqTransformer, vocab: Vocabulary, critics=(), meta=None):
    from .corpus import atomic_write_bytes

    payload = {
        "version": CHECKPOINT_VERSION,
        "dims": asdict(model.dims),
        "vocab_size": model.vocab_size,
        "vocab_digest": vocab.digest(),
        "model": model.state_dict(),
        "critics": [(c.fc1.in_features, [c.fc1.out_features, c.fc2.out_features, c.gru.hidden_size], c.state_dict())
                    for c in critics],
        "meta": meta or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(path, buf.getvalue())
    return state_digest(model, *critics)


def load_checkpoint(path, vocab: Vocabulary | None = None):
    """Return ``(model, critics, meta)``; raises if ``vocab`` does not match the stored digest."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    if vocab is not None and vocab.digest() != payload["vocab_digest"]:
        raise ValueError("checkpoint was trained with a different vocabulary")
    dims = ModelDims(**payload["dims"])
    model = Seq2SeqTransformer(payload["vocab_size"], dims)
    model.load_state_dict(payload["model"])
    first = next(iter(payload["model"].values()))
    model.to(first.dtype)
    critics = []
    for d_in, hidden, sd in payload["critics"]:
        c = Critic(d_in, tuple(hidden))
        c.load_state_dict(sd)
        critics.append(c.to(first.dtype))
    return model, critics, payload["meta"]
