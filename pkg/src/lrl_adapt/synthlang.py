"""Synthetic English / high-resource / low-resource language family.

English comes from a small probabilistic template grammar with selectional
preferences (verbs constrain their arguments, nouns their adjectives), so word
identity is recoverable from context. The high-resource language (HRL) is a
word-for-word relabelling of English. The low-resource language (LRL) is the
HRL passed through a dialect: a fixed set of word *types*, chosen so they
cover a given share of running text, is replaced by dialect forms; individual
tokens get random single-letter misspellings; and an optional character remap
moves the dialect into another script.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    LanguageTag,
    MonolingualCorpus,
    ParallelCorpus,
    atomic_write_text,
    file_sha256,
    save_mono,
    save_tsv,
)

LATIN = string.ascii_lowercase
SCRIPT_PRESETS = {
    # а..я without ё/й-like ambiguity: 26 distinct Cyrillic letters
    "cyrillic": "абвгдежзиклмнопрстуфхцчшщ" + "ы",
    "greek": "αβγδεζηθικλμνξοπρστυφχψωϊϋ",
}

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

# English content words are split over categories in these proportions
_CATEGORY_SHARE = {"noun": 0.4, "verb": 0.25, "adj": 0.2, "adv": 0.15}
_N_DET = 4
_N_PREP = 4

EN, HRL, LRL = "en", "hrl", "lrl"


class FamilyConfigError(ValueError):
    pass


@dataclass
class FamilyConfig:
    seed: int = 0
    vocab_size: int = 120
    n_parallel: int = 20000
    n_mono_lrl: int = 20000
    lex_sub_rate: float = 0.3
    spell_noise_rate: float = 0.1
    script_remap: object = None
    n_test: int = 500
    n_dev: int = 200
    n_mono_hrl: int | None = None
    n_mono_en: int | None = None

    def __post_init__(self):
        for name in ("lex_sub_rate", "spell_noise_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise FamilyConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("vocab_size", "n_parallel", "n_mono_lrl", "n_test"):
            if getattr(self, name) <= 0:
                raise FamilyConfigError(f"{name} must be positive")
        if self.n_dev < 0:
            raise FamilyConfigError("n_dev must be >= 0")
        if self.vocab_size < 20:
            raise FamilyConfigError("vocab_size must be at least 20")
        remap_table(self.script_remap)  # validates

    @property
    def mono_hrl_count(self):
        return self.n_mono_lrl if self.n_mono_hrl is None else self.n_mono_hrl

    @property
    def mono_en_count(self):
        return self.n_mono_lrl if self.n_mono_en is None else self.n_mono_en


def remap_table(spec):
    """Normalise a script remap: ``None``, a preset name, or a char->char dict."""
    if spec is None:
        return None
    if isinstance(spec, str):
        if spec not in SCRIPT_PRESETS:
            raise FamilyConfigError(f"unknown script_remap preset {spec!r}")
        table = dict(zip(LATIN, SCRIPT_PRESETS[spec]))
    else:
        table = dict(spec)
    if len(set(table.values())) != len(table):
        raise FamilyConfigError("script_remap must be a bijection")
    if any(len(k) != 1 or len(v) != 1 for k, v in table.items()):
        raise FamilyConfigError("script_remap maps single characters")
    return table


# --------------------------------------------------------------------------
# Lexicon and grammar
# --------------------------------------------------------------------------


def _pseudo_words(rng, n, taken, min_syl=2, max_syl=3):
    words = []
    while len(words) < n:
        k = rng.integers(min_syl, max_syl + 1)
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(k))
        if rng.random() < 0.3:
            w += rng.choice(list(_CONSONANTS))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf(n, s=1.0):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


@dataclass
class Grammar:
    """Subject-verb-object templates with modifiers and selectional preferences."""

    words: dict  # category -> list of English words
    verb_subjects: list  # per verb: allowed noun indices
    verb_objects: list
    noun_adjs: list  # per noun: allowed adjective indices
    _cdf_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, vocab_size, rng):
        taken = set()
        n_content = vocab_size - _N_DET - _N_PREP
        counts = {c: max(3, int(round(share * n_content))) for c, share in _CATEGORY_SHARE.items()}
        words = {c: _pseudo_words(rng, k, taken) for c, k in counts.items()}
        words["det"] = _pseudo_words(rng, _N_DET, taken, 1, 2)
        words["prep"] = _pseudo_words(rng, _N_PREP, taken, 1, 2)
        n_noun, n_adj = len(words["noun"]), len(words["adj"])

        def subset(n, frac):
            k = max(2, int(round(frac * n)))
            return sorted(rng.choice(n, size=k, replace=False).tolist())

        return cls(
            words=words,
            verb_subjects=[subset(n_noun, 0.25) for _ in words["verb"]],
            verb_objects=[subset(n_noun, 0.25) for _ in words["verb"]],
            noun_adjs=[subset(n_adj, 0.3) for _ in words["noun"]],
        )

    def all_words(self):
        return [w for c in ("det", "prep", "noun", "verb", "adj", "adv") for w in self.words[c]]

    def _pick(self, rng, category, allowed=None):
        key = (category, None if allowed is None else tuple(allowed))
        cached = self._cdf_cache.get(key)
        if cached is None:
            n = len(self.words[category])
            idx = np.arange(n) if allowed is None else np.asarray(allowed)
            p = _zipf(n)[idx]
            cached = self._cdf_cache[key] = (idx, np.cumsum(p / p.sum()))
        idx, cdf = cached
        return int(idx[min(np.searchsorted(cdf, rng.random(), side="right"), len(idx) - 1)])

    def _np(self, rng, noun):
        out = [self.words["det"][self._pick(rng, "det")]]
        if rng.random() < 0.6:
            out.append(self.words["adj"][self._pick(rng, "adj", self.noun_adjs[noun])])
        out.append(self.words["noun"][noun])
        return out

    def sentence(self, rng) -> str:
        v = self._pick(rng, "verb")
        subj = self._pick(rng, "noun", self.verb_subjects[v])
        obj = self._pick(rng, "noun", self.verb_objects[v])
        words = self._np(rng, subj) + [self.words["verb"][v]] + self._np(rng, obj)
        r = rng.random()
        if r < 0.35:
            words.append(self.words["adv"][self._pick(rng, "adv")])
        elif r < 0.6:
            words.append(self.words["prep"][self._pick(rng, "prep")])
            words += self._np(rng, self._pick(rng, "noun", self.verb_objects[v]))
        return " ".join(words)


# --------------------------------------------------------------------------
# Dialect
# --------------------------------------------------------------------------


def _unit_hash(seed, text) -> float:
    digest = hashlib.sha256(f"{seed}\x00{text}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


@dataclass
class Dialect:
    """HRL -> LRL transfer rules.

    A word type in ``substituted`` is always replaced by ``lexicon[w]``. When
    ``substituted`` is None, each lexicon type is drawn independently with
    probability ``lex_sub_rate`` from a hash of ``(seed, w)``. Spelling noise
    is per token and driven by the caller's rng.
    """

    lexicon: dict
    lex_sub_rate: float = 0.3
    spell_noise_rate: float = 0.1
    confusion: dict = field(default_factory=dict)
    remap: dict | None = None
    seed: int = 0
    substituted: frozenset | None = None

    def substitutes(self, word: str) -> bool:
        if word not in self.lexicon:
            return False
        if self.substituted is not None:
            return word in self.substituted
        return _unit_hash(self.seed, word) < self.lex_sub_rate

    def substituted_types(self):
        return {w for w in self.lexicon if self.substitutes(w)}


def calibrated_types(freqs: dict, rate: float, seed: int, tol: float = 0.005) -> frozenset:
    """Types whose summed token frequency is as close to ``rate`` as a greedy fill gets.

    Types are visited in a seeded hash order and taken unless they would
    overshoot ``rate + tol``, so the choice is random but the covered share of
    running text is controlled.
    """
    total = sum(freqs.values())
    chosen, mass = [], 0.0
    for w in sorted(freqs, key=lambda w: (_unit_hash(seed, w), w)):
        if mass >= rate - tol:
            break
        f = freqs[w] / total
        if mass + f <= rate + tol:
            chosen.append(w)
            mass += f
    return frozenset(chosen)


def make_confusion(rng) -> dict:
    """Letter confusion map: vowels rotate among vowels, consonants among consonants."""
    table = {}
    for group in (_VOWELS, _CONSONANTS):
        letters = list(group)
        shuffled = list(rng.permutation(letters))
        for a, b in zip(letters, shuffled):
            table[a] = b if b != a else letters[(letters.index(a) + 1) % len(letters)]
    return table


def hrl_to_lrl(s: str, dialect: Dialect, rng: np.random.Generator) -> str:
    out = []
    for w in s.split():
        if dialect.substitutes(w):
            w = dialect.lexicon[w]
        elif dialect.spell_noise_rate > 0 and rng.random() < dialect.spell_noise_rate:
            positions = [i for i, c in enumerate(w) if c in dialect.confusion]
            if positions:
                i = positions[int(rng.integers(len(positions)))]
                w = w[:i] + dialect.confusion[w[i]] + w[i + 1 :]
        if dialect.remap:
            w = "".join(dialect.remap.get(c, c) for c in w)
        out.append(w)
    return " ".join(out)


# --------------------------------------------------------------------------
# Family generation
# --------------------------------------------------------------------------


@dataclass
class DatasetBundle:
    en_hrl: ParallelCorpus
    mono: dict  # lang -> MonolingualCorpus
    test_en_lrl: ParallelCorpus
    dev_en_lrl: ParallelCorpus
    languages: dict  # lang -> LanguageTag
    config: FamilyConfig | None = None

    def training_strings(self):
        out = set()
        for a, b in self.en_hrl.pairs:
            out.update((a, b))
        for c in self.mono.values():
            out.update(c.sentences)
        return out

    def check_disjoint(self):
        train = self.training_strings()
        for a, b in self.test_en_lrl.pairs:
            if a in train or b in train:
                raise AssertionError(f"test pair leaks into training data: {a!r} / {b!r}")


@dataclass
class Family:
    """Everything derived from a FamilyConfig except sampled sentences."""

    grammar: Grammar
    en_to_hrl: dict
    dialect: Dialect

    def to_hrl(self, en: str) -> str:
        return " ".join(self.en_to_hrl[w] for w in en.split())


_STREAMS = {"en": 1, "lrl": 2, "lex": 3, "freq": 4}
_FREQ_SENTENCES = 5000


def _stream(seed, name, index=0):
    return np.random.default_rng([seed, _STREAMS[name], index])


def build_family(cfg: FamilyConfig) -> Family:
    rng = _stream(cfg.seed, "lex")
    grammar = Grammar.build(cfg.vocab_size, rng)
    en_words = grammar.all_words()
    taken = set(en_words)
    hrl_words = _pseudo_words(rng, len(en_words), taken)
    en_to_hrl = dict(zip(en_words, hrl_words))
    dialect_words = _pseudo_words(rng, len(hrl_words), taken)
    freq_rng = _stream(cfg.seed, "freq")
    freqs = dict.fromkeys(hrl_words, 0)
    for _ in range(_FREQ_SENTENCES):
        for w in grammar.sentence(freq_rng).split():
            freqs[en_to_hrl[w]] += 1
    dialect = Dialect(
        lexicon=dict(zip(hrl_words, dialect_words)),
        lex_sub_rate=cfg.lex_sub_rate,
        spell_noise_rate=cfg.spell_noise_rate,
        confusion=make_confusion(rng),
        remap=remap_table(cfg.script_remap),
        seed=cfg.seed,
        substituted=calibrated_types(freqs, cfg.lex_sub_rate, cfg.seed),
    )
    return Family(grammar, en_to_hrl, dialect)


def language_tags(cfg: FamilyConfig) -> dict:
    remap = remap_table(cfg.script_remap)
    lrl_alpha = frozenset(remap.get(c, c) for c in LATIN) if remap else frozenset(LATIN)
    lrl_script = "latin"
    if remap:
        from .corpus import char_script

        lrl_script = char_script(next(iter(remap.values())))
    return {
        EN: LanguageTag(EN, frozenset(LATIN), "latin"),
        HRL: LanguageTag(HRL, frozenset(LATIN), "latin"),
        LRL: LanguageTag(LRL, lrl_alpha, lrl_script),
    }


def gen_family(cfg: FamilyConfig) -> DatasetBundle:
    """Sample a full bundle. Deterministic in ``cfg``; test pairs are disjoint from training text."""
    fam = build_family(cfg)
    need = cfg.n_test + cfg.n_dev + cfg.n_parallel + cfg.n_mono_lrl + cfg.mono_hrl_count + cfg.mono_en_count
    seen, pool = set(), []
    i = 0
    # cap guards against configs whose grammar cannot produce enough distinct sentences
    while len(pool) < need:
        if i > 50 * need + 1000:
            raise FamilyConfigError("grammar cannot produce enough distinct sentences; raise vocab_size")
        s = fam.grammar.sentence(_stream(cfg.seed, "en", i))
        i += 1
        if s not in seen:
            seen.add(s)
            pool.append(s)

    def take(n):
        nonlocal pool
        out, pool = pool[:n], pool[n:]
        return out

    test_en, dev_en = take(cfg.n_test), take(cfg.n_dev)
    par_en = take(cfg.n_parallel)
    lrl_src, hrl_src, en_mono = take(cfg.n_mono_lrl), take(cfg.mono_hrl_count), take(cfg.mono_en_count)

    def lrl(sentences, offset):
        return [hrl_to_lrl(fam.to_hrl(s), fam.dialect, _stream(cfg.seed, "lrl", offset + j))
                for j, s in enumerate(sentences)]

    mono = {
        EN: MonolingualCorpus(en_mono, EN),
        HRL: MonolingualCorpus([fam.to_hrl(s) for s in hrl_src], HRL),
        LRL: MonolingualCorpus(lrl(lrl_src, 0), LRL),
    }
    en_hrl = ParallelCorpus([(s, fam.to_hrl(s)) for s in par_en], EN, HRL)
    train = {s for p in en_hrl.pairs for s in p}
    for c in mono.values():
        train.update(c.sentences)

    def held_out(sentences, offset):
        pairs = zip(sentences, lrl(sentences, offset))
        return ParallelCorpus([(a, b) for a, b in pairs if a not in train and b not in train], EN, LRL)

    bundle = DatasetBundle(
        en_hrl=en_hrl,
        mono=mono,
        test_en_lrl=held_out(test_en, 10_000_000),
        dev_en_lrl=held_out(dev_en, 20_000_000),
        languages=language_tags(cfg),
        config=cfg,
    )
    bundle.check_disjoint()
    return bundle


# --------------------------------------------------------------------------
# On-disk layout
# --------------------------------------------------------------------------

BUNDLE_FILES = {
    "en_hrl": "en_hrl.tsv",
    "test_en_lrl": "test_en_lrl.tsv",
    "dev_en_lrl": "dev_en_lrl.tsv",
    "mono.en": "mono.en.txt",
    "mono.hrl": "mono.hrl.txt",
    "mono.lrl": "mono.lrl.txt",
}


def _config_to_json(cfg: FamilyConfig):
    d = asdict(cfg)
    if isinstance(d["script_remap"], dict):
        d["script_remap"] = dict(sorted(d["script_remap"].items()))
    return d


def write_bundle(bundle: DatasetBundle, directory) -> dict:
    """Write corpora plus ``manifest.json`` (config and SHA-256 of every file)."""
    directory = Path(directory)
    save_tsv(bundle.en_hrl, directory / BUNDLE_FILES["en_hrl"])
    save_tsv(bundle.test_en_lrl, directory / BUNDLE_FILES["test_en_lrl"])
    save_tsv(bundle.dev_en_lrl, directory / BUNDLE_FILES["dev_en_lrl"])
    for lang, corpus in bundle.mono.items():
        save_mono(corpus, directory / BUNDLE_FILES[f"mono.{lang}"])
    manifest = {
        "kind": "dataset-bundle",
        "version": 1,
        "family_config": _config_to_json(bundle.config) if bundle.config else None,
        "languages": {k: {"script_class": t.script_class, "alphabet": "".join(sorted(t.alphabet))}
                      for k, t in bundle.languages.items()},
        "files": {k: {"path": v, "sha256": file_sha256(directory / v)} for k, v in BUNDLE_FILES.items()},
    }
    atomic_write_text(directory / "manifest.json", json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return manifest


def read_bundle(directory) -> DatasetBundle:
    from .corpus import load_corpus

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    for key, entry in manifest["files"].items():
        if file_sha256(directory / entry["path"]) != entry["sha256"]:
            raise ValueError(f"hash mismatch for {entry['path']}")
    languages = {k: LanguageTag(k, frozenset(v["alphabet"]), v["script_class"])
                 for k, v in manifest["languages"].items()}
    cfg = FamilyConfig(**manifest["family_config"]) if manifest.get("family_config") else None
    f = manifest["files"]
    return DatasetBundle(
        en_hrl=load_corpus(directory / f["en_hrl"]["path"], "tsv", (EN, HRL)),
        mono={lang: load_corpus(directory / f[f"mono.{lang}"]["path"], "mono", (lang,)) for lang in (EN, HRL, LRL)},
        test_en_lrl=load_corpus(directory / f["test_en_lrl"]["path"], "tsv", (EN, LRL)),
        dev_en_lrl=load_corpus(directory / f["dev_en_lrl"]["path"], "tsv", (EN, LRL)),
        languages=languages,
        config=cfg,
    )
