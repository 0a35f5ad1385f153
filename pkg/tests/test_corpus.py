import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from charmt.corpus import (
    CHAR_EOS_ID, CHAR_UNK_ID, EOS, EOS_ID, EOW_ID, SOS_ID, SOW_ID, UNK_ID, CorpusError, ParallelCorpus, Vocab,
    build_char_vocab, build_word_vocab, decode_word_chars, encode_sentence, encode_word_chars,
    load_alignments, load_parallel, lowercase_transform, lowercase_word, make_corpus, parse_alignment_line,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadParallel:
    def test_single_pair(self, tmp_path):
        c = load_parallel(write(tmp_path, "s", "a b\n"), write(tmp_path, "t", "x\n"))
        assert len(c) == 1
        assert c.pairs[0] == (("a", "b"), ("x",))

    def test_empty_files(self, tmp_path):
        with pytest.raises(CorpusError, match="empty corpus"):
            load_parallel(write(tmp_path, "s", ""), write(tmp_path, "t", ""))

    def test_multibyte_characters(self, tmp_path):
        c = load_parallel(write(tmp_path, "s", "a\nreconstrução b\nc\n"),
                          write(tmp_path, "t", "ção\nx\ny\n"))
        assert c.pairs[0][1] == ("ção",)
        assert len(c.pairs[0][1][0]) == 3
        chars = build_char_vocab(c.targets)
        assert encode_word_chars("ção", chars)[1:-1] == [chars.encode(ch) for ch in "ção"]

    def test_line_count_mismatch(self, tmp_path):
        with pytest.raises(CorpusError, match="mismatch"):
            load_parallel(write(tmp_path, "s", "a\nb\n"), write(tmp_path, "t", "x\n"))

    def test_empty_line_rejected(self, tmp_path):
        with pytest.raises(CorpusError, match="empty sentence"):
            load_parallel(write(tmp_path, "s", "a\n\n"), write(tmp_path, "t", "x\ny\n"))

    def test_invalid_utf8(self, tmp_path):
        (tmp_path / "s").write_bytes(b"\xff\xfe\n")
        with pytest.raises(CorpusError, match="UTF-8"):
            load_parallel(tmp_path / "s", write(tmp_path, "t", "x\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError):
            load_parallel(tmp_path / "nope", tmp_path / "nope2")

    def test_length_limits(self):
        with pytest.raises(CorpusError):
            make_corpus(["a" * 65], ["b"])
        with pytest.raises(CorpusError):
            make_corpus(["a " * 129], ["b"])


class TestVocab:
    def test_word_counts_order(self):
        v = build_word_vocab([("a", "a", "b")], min_count=1)
        assert "a" in v and "b" in v
        assert v.encode("a") < v.encode("b")

    def test_min_count(self):
        v = build_word_vocab([("a", "a", "b")], min_count=2)
        assert "b" not in v
        assert v.encode("b") == UNK_ID

    def test_frequency_filter_oracle(self):
        rng = random.Random(0)
        words = [f"w{i}" for i in range(40)]
        sents = [tuple(rng.choice(words) for _ in range(rng.randint(1, 8))) for _ in range(100)]
        counts = Counter(w for s in sents for w in s)
        for m in (1, 2, 3, 5):
            v = build_word_vocab(sents, m)
            assert set(v.regular_tokens()) == {w for w, c in counts.items() if c >= m}

    def test_char_vocab(self):
        v = build_char_vocab([("ab", "ba")])
        assert set(v.regular_tokens()) == {"a", "b"}
        assert v.encode("z") == CHAR_UNK_ID

    @given(st.lists(st.lists(st.text(min_size=1, max_size=6).filter(lambda w: " " not in w), min_size=1), min_size=1))
    def test_char_inventory_is_set_union(self, sents):
        sents = [tuple(s) for s in sents]
        v = build_char_vocab(sents)
        expected = {c for s in sents for w in s for c in w} - {"<w>", "</w>", "</s>", "<unk>"}
        assert set(v.regular_tokens()) == expected

    def test_save_load_roundtrip(self, tmp_path):
        v = Vocab("char", ["a", "ç", "ß"])
        v.save(tmp_path / "v")
        assert Vocab.load(tmp_path / "v", "char") == v

    def test_duplicates_rejected(self):
        with pytest.raises(CorpusError):
            Vocab("word", ["a", "a"])


class TestEncoding:
    def test_sentence(self):
        v = build_word_vocab([("cat",)], 1)
        assert encode_sentence(["cat"], v) == [SOS_ID, v.encode("cat"), EOS_ID]
        assert encode_sentence([], v) == [SOS_ID, EOS_ID]
        assert encode_sentence(["dog"], v) == [SOS_ID, UNK_ID, EOS_ID]

    def test_word_chars(self):
        v = build_char_vocab([("cat",)])
        ids = encode_word_chars("cat", v)
        assert ids == [SOW_ID, v.encode("c"), v.encode("a"), v.encode("t"), EOW_ID]
        assert encode_word_chars("", v) == [SOW_ID, EOW_ID]
        assert encode_word_chars(EOS, v) == [CHAR_EOS_ID]

    @given(st.text(alphabet="abcç", max_size=10))
    def test_decode_inverts_encode(self, word):
        v = build_char_vocab([("abcç",)])
        assert decode_word_chars(encode_word_chars(word, v), v) == word


class TestAlignments:
    def test_one_to_one(self):
        assert parse_alignment_line("0-0 1-1", 2, 2) == {0: 0, 1: 1}

    def test_multiply_aligned_target_dropped(self):
        assert parse_alignment_line("0-0 1-0", 2, 2) == {}

    def test_empty_line(self):
        assert parse_alignment_line("", 2, 2) == {}

    def test_errors(self):
        with pytest.raises(CorpusError):
            parse_alignment_line("0-5", 2, 2)
        with pytest.raises(CorpusError):
            parse_alignment_line("a-b", 2, 2)

    def test_load(self, tmp_path):
        c = make_corpus(["a b", "c"], ["x y", "z"])
        out = load_alignments(write(tmp_path, "al", "0-1 1-0\n\n"), c)
        assert out.alignments == ({1: 0, 0: 1}, {})
        with pytest.raises(CorpusError):
            load_alignments(write(tmp_path, "al2", "0-0\n"), c)


class TestLowercase:
    def test_examples(self):
        assert lowercase_word("Play") == "play"
        assert lowercase_word("123") == "123"

    @given(st.text(max_size=20))
    def test_per_character_oracle(self, word):
        out = lowercase_word(word)
        assert len(out) == len(word)
        for a, b in zip(word, out):
            assert b == (a.lower()[0] if a.lower() else a)

    def test_transform_keeps_alignments(self):
        c = ParallelCorpus(((("Ab",), ("Cd",)),), ({0: 0},))
        out = lowercase_transform(c)
        assert out.pairs == ((("ab",), ("cd",)),)
        assert out.alignments == ({0: 0},)
