"""Corpus ingestion, filtering, vocabulary and tokenization."""

from __future__ import annotations

import hashlib
import os
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, MASK, UNK = "<pad>", "<bos>", "<eos>", "<mask>", "<unk>"
BASE_SPECIALS = (PAD, BOS, EOS, MASK, UNK)
UNK_SURFACE = "⟨unk⟩"  # ⟨unk⟩
VOCAB_FILE_VERSION = "lrl-adapt-vocab v1"

COMMON = "common"
MIXED = "mixed"
SPECIAL = "special"


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)


def char_script(ch: str) -> str:
    """Script class of one character, e.g. ``latin``, ``greek``, ``cyrillic``.

    Digits, punctuation and whitespace are ``common``.
    """
    if not ch.isalpha():
        return COMMON
    name = unicodedata.name(ch, "")
    if not name:
        return "unknown"
    return name.split(" ")[0].lower()


def token_script(token: str) -> str:
    scripts = {char_script(c) for c in token} - {COMMON}
    if not scripts:
        return COMMON
    if len(scripts) > 1:
        return MIXED
    return scripts.pop()


@dataclass(frozen=True)
class LanguageTag:
    id: str
    alphabet: frozenset = field(default_factory=frozenset)
    script_class: str = "latin"

    def __post_init__(self):
        if not self.id:
            raise ValueError("language id must be non-empty")
        if not self.alphabet:
            raise ValueError(f"alphabet of language {self.id!r} is empty")
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))

    @property
    def token(self) -> str:
        return lang_token(self.id)


def lang_token(lang_id: str) -> str:
    return f"<lang:{lang_id}>"


@dataclass
class ParallelCorpus:
    pairs: list
    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        self.pairs = [(str(a), str(b)) for a, b in self.pairs]

    def __len__(self):
        return len(self.pairs)

    @property
    def sources(self):
        return [a for a, _ in self.pairs]

    @property
    def targets(self):
        return [b for _, b in self.pairs]


@dataclass
class MonolingualCorpus:
    sentences: list
    lang: str

    def __len__(self):
        return len(self.sentences)


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------


@dataclass
class FilterConfig:
    max_foreign_ratio: float = 0.40
    min_chars: int = 30
    max_chars: int = 200


def foreign_ratio(text: str, alphabet) -> float:
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return 0.0
    return sum(c not in alphabet for c in chars) / len(chars)


def filter_sentence(s: str, lang: LanguageTag, cfg: FilterConfig = FilterConfig()):
    """Return ``(True, None)`` to keep ``s`` or ``(False, reason)``.

    Length bounds apply to the raw text; the foreign-character ratio is taken
    over non-whitespace characters. ``reason`` is ``"length"`` or ``"alphabet"``
    (length is checked first).
    """
    n = len(s)
    if n < cfg.min_chars or n > cfg.max_chars:
        return False, "length"
    if foreign_ratio(s, lang.alphabet) > cfg.max_foreign_ratio:
        return False, "alphabet"
    return True, None


def filter_corpus(corpus: MonolingualCorpus, lang: LanguageTag, cfg: FilterConfig = FilterConfig()):
    """Filter a monolingual corpus, preserving order. Returns (corpus, reject counts)."""
    kept, rejected = [], {"length": 0, "alphabet": 0}
    for s in corpus.sentences:
        ok, reason = filter_sentence(s, lang, cfg)
        if ok:
            kept.append(s)
        else:
            rejected[reason] += 1
    return MonolingualCorpus(kept, corpus.lang), rejected


# --------------------------------------------------------------------------
# Vocabulary
# --------------------------------------------------------------------------


def split_words(text: str, mode: str = "word"):
    if mode == "word":
        return text.split()
    if mode == "char":
        # spaces become an explicit token so the round trip is exact
        return ["▁" if c == " " else c for c in text]
    raise ValueError(f"unknown tokenization mode {mode!r}")


class Vocabulary:
    """Bijective token/id map with specials listed first.

    Ids ``0..4`` are PAD, BOS, EOS, MASK, UNK; language tokens follow in the
    order the languages were declared, then ordinary tokens.
    """

    def __init__(self, tokens: Sequence[str], languages: Sequence[str], mode: str = "word"):
        self.languages = list(languages)
        self.mode = mode
        specials = list(BASE_SPECIALS) + [lang_token(l) for l in self.languages]
        self.itos = specials + [t for t in tokens if t not in specials]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.n_specials = len(specials)
        self.script_of = [SPECIAL] * self.n_specials + [
            token_script(t) for t in self.itos[self.n_specials:]
        ]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos and \
            self.languages == other.languages and self.mode == other.mode

    pad = property(lambda self: 0)
    bos = property(lambda self: 1)
    eos = property(lambda self: 2)
    mask = property(lambda self: 3)
    unk = property(lambda self: 4)

    def lang_id(self, lang: str) -> int:
        return self.stoi[lang_token(lang)]

    def is_special(self, idx: int) -> bool:
        return idx < self.n_specials

    def __getitem__(self, token):
        return self.stoi.get(token, self.unk)

    def script_classes(self):
        return sorted(set(self.script_of[self.n_specials:]))

    def to_lines(self):
        lines = [f"#{VOCAB_FILE_VERSION}\tmode={self.mode}\tlanguages={','.join(self.languages)}"]
        lines += [f"{t}\t{i}\t{self.script_of[i]}" for i, t in enumerate(self.itos)]
        return lines

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.to_lines()).encode()).hexdigest()

    def save(self, path):
        atomic_write_text(path, "\n".join(self.to_lines()) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        header = lines[0]
        if not header.startswith("#" + VOCAB_FILE_VERSION):
            raise CorpusFormatError("missing or unsupported vocabulary header", path, 1)
        meta = dict(kv.split("=", 1) for kv in header.split("\t")[1:])
        languages = [l for l in meta.get("languages", "").split(",") if l]
        tokens = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[1].isdigit():
                raise CorpusFormatError("expected token<TAB>id<TAB>script_class", path, lineno)
            if int(parts[1]) != len(tokens):
                raise CorpusFormatError("ids must be contiguous", path, lineno)
            tokens.append(parts[0])
        vocab = cls(tokens, languages, meta.get("mode", "word"))
        if vocab.itos != tokens:
            raise CorpusFormatError("specials out of order", path)
        return vocab


def build_vocab(corpora: Iterable, languages: Sequence[str], mode: str = "word", min_count: int = 1):
    """Build a vocabulary over monolingual and/or parallel corpora.

    Tokens are ordered by descending frequency, ties broken by the token string,
    so the result only depends on the multiset of tokens.
    """
    corpora = list(corpora)
    if not corpora:
        raise ValueError("build_vocab needs at least one corpus")
    counts = {}
    for corpus in corpora:
        if isinstance(corpus, ParallelCorpus):
            texts = [s for pair in corpus.pairs for s in pair]
        elif isinstance(corpus, MonolingualCorpus):
            texts = corpus.sentences
        else:
            texts = list(corpus)
        for text in texts:
            for tok in split_words(text, mode):
                counts[tok] = counts.get(tok, 0) + 1
    tokens = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(tokens, languages, mode)


# --------------------------------------------------------------------------
# Tokenization
# --------------------------------------------------------------------------


@dataclass
class TokenSequence:
    tokens: list
    lang: str

    def __len__(self):
        return len(self.tokens)


def tokenize(s: str, vocab: Vocabulary, lang: str) -> TokenSequence:
    return TokenSequence([vocab[t] for t in split_words(s, vocab.mode)], lang)


def detokenize(t, vocab: Vocabulary) -> str:
    ids = t.tokens if isinstance(t, TokenSequence) else t
    words = [UNK_SURFACE if i == vocab.unk else vocab.itos[i] for i in ids]
    if vocab.mode == "char":
        return "".join(" " if w == "▁" else w for w in words)
    return " ".join(words)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def _read_lines(path):
    with open(path, encoding="utf-8", newline="") as f:
        data = f.read()
    if "\r" in data:
        lineno = data[: data.index("\r")].count("\n") + 1
        raise CorpusFormatError("expected LF line terminators", path, lineno)
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_corpus(path, format: str = "mono", langs=("src",)):
    """Load a corpus file without filtering.

    ``format`` is ``"mono"`` (one sentence per line), ``"tsv"`` (two
    tab-separated columns) or ``"pair"`` (``path`` is a pair of aligned files).
    """
    if format == "mono":
        return MonolingualCorpus(_read_lines(path), langs[0])
    if format == "tsv":
        pairs = []
        for lineno, line in enumerate(_read_lines(path), start=1):
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusFormatError(f"expected 2 tab-separated columns, got {len(cols)}", path, lineno)
            pairs.append((cols[0], cols[1]))
        return ParallelCorpus(pairs, langs[0], langs[1])
    if format == "pair":
        src_path, tgt_path = path
        src, tgt = _read_lines(src_path), _read_lines(tgt_path)
        if len(src) != len(tgt):
            raise CorpusFormatError(f"side length mismatch: {len(src)} vs {len(tgt)} lines", src_path)
        return ParallelCorpus(list(zip(src, tgt)), langs[0], langs[1])
    raise ValueError(f"unknown corpus format {format!r}")


def save_mono(corpus: MonolingualCorpus, path):
    atomic_write_text(path, "".join(s + "\n" for s in corpus.sentences))


def save_tsv(corpus: ParallelCorpus, path):
    for a, b in corpus.pairs:
        if "\t" in a or "\t" in b or "\n" in a or "\n" in b:
            raise CorpusFormatError("sentence contains a tab or newline")
    atomic_write_text(path, "".join(f"{a}\t{b}\n" for a, b in corpus.pairs))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
