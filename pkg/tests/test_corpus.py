import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrl_adapt.corpus import (
    UNK_SURFACE,
    CorpusFormatError,
    LanguageTag,
    MonolingualCorpus,
    ParallelCorpus,
    Vocabulary,
    build_vocab,
    char_script,
    detokenize,
    filter_corpus,
    filter_sentence,
    load_corpus,
    save_mono,
    save_tsv,
    tokenize,
)

LATIN = LanguageTag("hrl", frozenset("abcdefghijklmnopqrstuvwxyz"), "latin")


def test_short_sentence_rejected_for_length():
    assert filter_sentence("a" * 25, LATIN) == (False, "length")


def test_foreign_half_rejected_for_alphabet():
    s = "a" * 50 + "ж" * 50
    assert filter_sentence(s, LATIN) == (False, "alphabet")


def test_in_alphabet_hundred_chars_kept():
    assert filter_sentence("a" * 100, LATIN) == (True, None)


def test_length_bounds_inclusive():
    assert filter_sentence("a" * 30, LATIN)[0]
    assert filter_sentence("a" * 200, LATIN)[0]
    assert filter_sentence("a" * 201, LATIN) == (False, "length")


def test_foreign_ratio_ignores_whitespace():
    # 60 latin letters, 40 foreign, plus lots of spaces: ratio is 0.40 exactly -> kept
    s = " ".join(["a" * 6] * 10) + " " + "ж" * 40
    assert filter_sentence(s, LATIN)[0]
    s2 = s + "ж"
    assert filter_sentence(s2, LATIN) == (False, "alphabet")


def test_length_checked_before_alphabet():
    assert filter_sentence("ж" * 10, LATIN) == (False, "length")


@given(st.lists(st.text(alphabet="abж ", min_size=0, max_size=60), max_size=20))
@settings(max_examples=60, deadline=None)
def test_filter_idempotent_and_order_independent(sents):
    corpus = MonolingualCorpus(sents, "hrl")
    once, _ = filter_corpus(corpus, LATIN)
    twice, rej = filter_corpus(once, LATIN)
    assert once.sentences == twice.sentences
    assert rej == {"length": 0, "alphabet": 0}
    rev, _ = filter_corpus(MonolingualCorpus(sents[::-1], "hrl"), LATIN)
    assert rev.sentences == once.sentences[::-1]


def test_build_vocab_enumerates_words_and_specials():
    v = build_vocab([["a b", "b c"]], ["en"])
    assert set(v.itos[v.n_specials:]) == {"a", "b", "c"}
    assert v.n_specials == 6
    assert len(set(v.itos[: v.n_specials])) == v.n_specials
    assert (v.pad, v.bos, v.eos, v.mask, v.unk) == (0, 1, 2, 3, 4)
    assert v.lang_id("en") == 5


def test_build_vocab_deterministic(tmp_path):
    corpora = [["z y x", "y x", "x"]]
    a, b = build_vocab(corpora, ["en", "hrl"]), build_vocab(corpora, ["en", "hrl"])
    assert a.itos == b.itos
    a.save(tmp_path / "a.txt")
    b.save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert a.itos[a.n_specials:] == ["x", "y", "z"]


def test_build_vocab_empty_raises():
    with pytest.raises(ValueError):
        build_vocab([], ["en"])


def _oracle_script(token):
    classes = set()
    for ch in token:
        if not ch.isalpha():
            continue
        classes.add(unicodedata.name(ch).split()[0].lower())
    if not classes:
        return "common"
    return classes.pop() if len(classes) == 1 else "mixed"


def test_script_of_matches_character_class_oracle():
    v = build_vocab([["abc где αβ aж 12 x-y"]], ["en"])
    for i in range(v.n_specials, len(v)):
        assert v.script_of[i] == _oracle_script(v.itos[i]), v.itos[i]
    assert all(v.script_of[i] == "special" for i in range(v.n_specials))


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab([["abc где αβ"]], ["en", "hrl", "lrl"], mode="word")
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split("\t")[1:] == ["0", "special"]


def test_vocab_load_rejects_gaps(tmp_path):
    p = tmp_path / "bad.txt"
    v = build_vocab([["a b"]], ["en"])
    lines = v.to_lines()
    lines[3] = lines[3].replace("\t2\t", "\t9\t")
    p.write_text("\n".join(lines))
    with pytest.raises(CorpusFormatError):
        Vocabulary.load(p)


def test_tokenize_round_trip_and_empty():
    v = build_vocab([["a b", "b c"]], ["en"])
    t = tokenize("a b", v, "en")
    assert t.tokens == [v["a"], v["b"]]
    assert detokenize(t, v) == "a b"
    assert tokenize("", v, "en").tokens == []


def test_oov_maps_to_unk_surface():
    v = build_vocab([["a b"]], ["en"])
    t = tokenize("a q b", v, "en")
    assert t.tokens[1] == v.unk
    assert detokenize(t, v) == f"a {UNK_SURFACE} b"


@given(st.lists(st.sampled_from(["ab", "cd", "e", "fgh"]), max_size=12))
def test_round_trip_property(words):
    v = build_vocab([["ab cd e fgh"]], ["en"])
    s = " ".join(words)
    assert detokenize(tokenize(s, v, "en"), v) == s


def test_char_mode_round_trip():
    v = build_vocab([["ab ba"]], ["en"], mode="char")
    assert detokenize(tokenize("ab ba", v, "en"), v) == "ab ba"


def test_load_pair_files(tmp_path):
    (tmp_path / "s").write_text("a\nb\nc\n")
    (tmp_path / "t").write_text("x\ny\nz\n")
    c = load_corpus((tmp_path / "s", tmp_path / "t"), "pair", ("en", "hrl"))
    assert len(c) == 3 and c.pairs[2] == ("c", "z")


def test_load_pair_mismatch(tmp_path):
    (tmp_path / "s").write_text("a\nb\nc\n")
    (tmp_path / "t").write_text("x\ny\nz\nw\n")
    with pytest.raises(CorpusFormatError, match="mismatch"):
        load_corpus((tmp_path / "s", tmp_path / "t"), "pair", ("en", "hrl"))


def test_tsv_embedded_tab_reports_line(tmp_path):
    p = tmp_path / "p.tsv"
    p.write_text("a\tb\nc\td\te\nf\tg\n")
    with pytest.raises(CorpusFormatError) as e:
        load_corpus(p, "tsv", ("en", "hrl"))
    assert e.value.line == 2


def test_crlf_rejected(tmp_path):
    p = tmp_path / "m.txt"
    p.write_bytes(b"a\r\nb\n")
    with pytest.raises(CorpusFormatError):
        load_corpus(p, "mono")


def test_save_and_load_round_trip(tmp_path):
    save_mono(MonolingualCorpus(["a b", "c"], "en"), tmp_path / "m.txt")
    assert load_corpus(tmp_path / "m.txt").sentences == ["a b", "c"]
    save_tsv(ParallelCorpus([("a", "b"), ("c d", "e")], "en", "hrl"), tmp_path / "p.tsv")
    assert load_corpus(tmp_path / "p.tsv", "tsv", ("en", "hrl")).pairs == [("a", "b"), ("c d", "e")]


def test_char_script_classes():
    assert char_script("a") == "latin"
    assert char_script("ж") == "cyrillic"
    assert char_script("3") == "common"
