"""Parallel text, alignments and vocabularies.

Sentences are tuples of words and words are plain ``str``; a character is a
Unicode scalar value, i.e. one element of the Python string.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

# reserved token strings; they occupy ids 0..3 in this order
WORD_RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
CHAR_RESERVED = ("<w>", "</w>", "</s>", "<unk>")

SOS = "<s>"
EOS = "</s>"
SOW = "<w>"
EOW = "</w>"
UNK = "<unk>"

N_RESERVED = 4

# fixed ids of the reserved tokens
PAD_ID, SOS_ID, EOS_ID, UNK_ID = range(4)
SOW_ID, EOW_ID, CHAR_EOS_ID, CHAR_UNK_ID = range(4)


class CorpusError(ValueError):
    """Malformed or inconsistent corpus, alignment or vocabulary data."""


class Vocab:
    """Bidirectional token/id map with four reserved low ids."""

    def __init__(self, kind: str, tokens: Iterable[str] = ()):
        if kind not in ("word", "char"):
            raise ValueError(f"vocab kind must be 'word' or 'char', got {kind!r}")
        self.kind = kind
        reserved = WORD_RESERVED if kind == "word" else CHAR_RESERVED
        self.tokens: list[str] = list(reserved)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            if tok in self.index:
                if tok in reserved:
                    continue
                raise CorpusError(f"duplicate token {tok!r}")
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.kind == other.kind and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocab(kind={self.kind!r}, size={len(self)})"

    @property
    def unk(self):
        return self.index[UNK]

    @property
    def sos(self):
        return self.index[SOS]

    @property
    def eos(self):
        return self.index[EOS]

    @property
    def sow(self):
        return self.index[SOW]

    @property
    def eow(self):
        return self.index[EOW]

    def encode(self, token):
        return self.index.get(token, self.index[UNK])

    def decode(self, idx):
        if not 0 <= idx < len(self.tokens):
            raise CorpusError(f"id {idx} out of range for vocab of size {len(self.tokens)}")
        return self.tokens[idx]

    def regular_tokens(self):
        return self.tokens[N_RESERVED:]

    def save(self, path):
        text = "".join(t + "\n" for t in self.regular_tokens())
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path, kind):
        text = _read_utf8(path)
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(kind, lines)

    def to_dict(self):
        return {"kind": self.kind, "tokens": self.regular_tokens()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], data["tokens"])


Sentence = tuple  # tuple[str, ...]


@dataclass(frozen=True)
class ParallelCorpus:
    """Sentence pairs in file order plus optional target->source alignment maps."""

    pairs: tuple
    alignments: tuple | None = None

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sources(self):
        return [s for s, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]

    def alignment(self, i):
        if self.alignments is None:
            return None
        return self.alignments[i]

    def subset(self, indices):
        pairs = tuple(self.pairs[i] for i in indices)
        al = None if self.alignments is None else tuple(self.alignments[i] for i in indices)
        return ParallelCorpus(pairs, al)


def _read_utf8(path) -> str:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 at byte {exc.start}") from None


def read_lines(path) -> list[str]:
    text = _read_utf8(path)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def split_sentence(line: str) -> tuple:
    return tuple(line.split())


def check_sentence(words, max_word_len=64, max_sent_len=128, where=""):
    if not words:
        raise CorpusError(f"{where}empty sentence")
    if len(words) > max_sent_len:
        raise CorpusError(f"{where}sentence has {len(words)} words (max {max_sent_len})")
    for w in words:
        if len(w) > max_word_len:
            raise CorpusError(f"{where}word of {len(w)} characters exceeds max_word_len={max_word_len}")


def make_corpus(sources: Sequence, targets: Sequence, max_word_len=64, max_sent_len=128):
    """Build a corpus from in-memory sentences (strings or word sequences)."""
    if len(sources) != len(targets):
        raise CorpusError(f"{len(sources)} source sentences but {len(targets)} target sentences")
    if not sources:
        raise CorpusError("empty corpus")
    pairs = []
    for n, (s, t) in enumerate(zip(sources, targets), 1):
        s = split_sentence(s) if isinstance(s, str) else tuple(s)
        t = split_sentence(t) if isinstance(t, str) else tuple(t)
        check_sentence(s, max_word_len, max_sent_len, f"pair {n} source: ")
        check_sentence(t, max_word_len, max_sent_len, f"pair {n} target: ")
        pairs.append((s, t))
    return ParallelCorpus(tuple(pairs))


def load_parallel(src_path, tgt_path, max_word_len=64, max_sent_len=128) -> ParallelCorpus:
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise CorpusError(f"line count mismatch: {src_path} has {len(src)}, {tgt_path} has {len(tgt)}")
    if not src:
        raise CorpusError("empty corpus")
    pairs = []
    for n, (s, t) in enumerate(zip(src, tgt), 1):
        sw, tw = split_sentence(s), split_sentence(t)
        check_sentence(sw, max_word_len, max_sent_len, f"{src_path}:{n}: ")
        check_sentence(tw, max_word_len, max_sent_len, f"{tgt_path}:{n}: ")
        pairs.append((sw, tw))
    return ParallelCorpus(tuple(pairs))


def build_word_vocab(sentences: Iterable[Sequence[str]], min_count=2) -> Vocab:
    """Words seen at least ``min_count`` times, most frequent first."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(w for sent in sentences for w in sent)
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in WORD_RESERVED),
                  key=lambda w: (-counts[w], w))
    return Vocab("word", kept)


def build_char_vocab(sentences: Iterable[Sequence[str]]) -> Vocab:
    counts = Counter(ch for sent in sentences for w in sent for ch in w)
    if not counts:
        raise CorpusError("cannot build a character vocabulary from an empty corpus")
    kept = sorted((c for c in counts if c not in CHAR_RESERVED), key=lambda c: (-counts[c], c))
    return Vocab("char", kept)


def encode_sentence(words: Sequence[str], vocab: Vocab) -> list[int]:
    if vocab.kind != "word":
        raise ValueError("encode_sentence needs a word vocabulary")
    return [vocab.sos] + [vocab.encode(w) for w in words] + [vocab.eos]


def encode_word_chars(word: str, vocab: Vocab, max_word_len=64) -> list[int]:
    """``[SOW] + chars + [EOW]``; the end-of-sentence word is the single ``[EOS]``."""
    if vocab.kind != "char":
        raise ValueError("encode_word_chars needs a character vocabulary")
    if word == EOS:
        return [vocab.eos]
    if len(word) > max_word_len:
        raise CorpusError(f"word {word[:20]!r}... longer than max_word_len={max_word_len}")
    return [vocab.sow] + [vocab.encode(c) for c in word] + [vocab.eow]


def decode_word_chars(ids: Sequence[int], vocab: Vocab) -> str:
    """Inverse of :func:`encode_word_chars` for generated character ids."""
    ids = list(ids)
    if ids == [vocab.eos]:
        return EOS
    if ids and ids[0] == vocab.sow:
        ids = ids[1:]
    if ids and ids[-1] == vocab.eow:
        ids = ids[:-1]
    return "".join(vocab.decode(i) for i in ids)


def parse_alignment_line(line: str, n_src: int, n_tgt: int, where="") -> dict[int, int]:
    """Pharaoh ``i-j`` pairs -> ``{target j: source i}`` for one-to-one target words."""
    links: dict[int, list[int]] = {}
    for tok in line.split():
        parts = tok.split("-")
        if len(parts) != 2 or not parts[0].isdigit() or not parts[1].isdigit():
            raise CorpusError(f"{where}malformed alignment token {tok!r}")
        i, j = int(parts[0]), int(parts[1])
        if i >= n_src or j >= n_tgt:
            raise CorpusError(f"{where}alignment {tok} out of range for {n_src}x{n_tgt} pair")
        links.setdefault(j, []).append(i)
    # targets with several links carry no supervision
    return {j: srcs[0] for j, srcs in sorted(links.items()) if len(srcs) == 1}


def load_alignments(path, corpus: ParallelCorpus) -> ParallelCorpus:
    lines = read_lines(path)
    if len(lines) != len(corpus):
        raise CorpusError(f"{path} has {len(lines)} lines for {len(corpus)} sentence pairs")
    maps = []
    for n, (line, (src, tgt)) in enumerate(zip(lines, corpus.pairs), 1):
        maps.append(parse_alignment_line(line, len(src), len(tgt), f"{path}:{n}: "))
    return replace(corpus, alignments=tuple(maps))


def lowercase_word(word: str) -> str:
    out = []
    for ch in word:
        low = ch.lower()
        # keep the one-character (simple) mapping, e.g. U+0130 -> "i"
        out.append(low[0] if low else ch)
    return "".join(out)


def lowercase_transform(corpus: ParallelCorpus) -> ParallelCorpus:
    pairs = tuple(
        (tuple(lowercase_word(w) for w in s), tuple(lowercase_word(w) for w in t))
        for s, t in corpus.pairs
    )
    return replace(corpus, pairs=pairs)


def word_types(sentences: Iterable[Sequence[str]]) -> list[str]:
    """Distinct words in first-seen order."""
    seen = {}
    for sent in sentences:
        for w in sent:
            seen.setdefault(w, None)
    return list(seen)
