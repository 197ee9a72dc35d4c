"""Corpus-built WordPiece vocabulary, encoding, and decoding.

Pre-tokenization lowercases, splits on whitespace, and treats every
punctuation character as its own pre-token.  The de-identification
sentinel ``<phi>`` is kept atomic so it survives round trips into model
input.  WordPiece matching is greedy longest-first; continuation pieces
carry the usual ``##`` prefix.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, InputError
from .preprocess import PHI_TOKEN

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)


def pretokenize(text: str) -> list[str]:
    """Lowercase and split into words, punctuation chars, and ``<phi>``."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        buf = []
        i = 0
        while i < len(chunk):
            if chunk.startswith(PHI_TOKEN, i):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(PHI_TOKEN)
                i += len(PHI_TOKEN)
                continue
            ch = chunk[i]
            if ch.isalnum():
                buf.append(ch)
            else:
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            i += 1
        if buf:
            tokens.append("".join(buf))
    return tokens


@dataclass
class Vocab:
    """Token list plus its inverse index; id 0..4 are the reserved tokens."""

    tokens: list[str]
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        if tuple(self.tokens[:5]) != RESERVED:
            raise ConfigError(
                "vocabulary must start with the reserved tokens %s" % (RESERVED,)
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="ascii") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(
    sections: Iterable[str], max_size: int = 2048, min_freq: int = 1
) -> Vocab:
    """Build a WordPiece vocabulary from an iterable of section texts.

    Layout: the 5 reserved tokens, then every character seen in the corpus
    (bare and ``##``-prefixed, so any in-alphabet word stays encodable),
    then whole pre-tokens with corpus frequency >= ``min_freq`` ordered by
    descending frequency with lexicographic tie-break, until ``max_size``
    entries.  The character block is always kept even if ``max_size`` is
    smaller than reserved + alphabet.
    """
    if max_size < len(RESERVED):
        raise ConfigError(f"max_size must be at least {len(RESERVED)}")
    if min_freq < 1:
        raise ConfigError("min_freq must be at least 1")
    counts: Counter[str] = Counter()
    for text in sections:
        counts.update(pretokenize(text))
    alphabet = sorted({ch for tok in counts for ch in tok})
    tokens = list(RESERVED)
    seen = set(tokens)
    for ch in alphabet:
        for piece in (ch, "##" + ch):
            if piece not in seen:
                tokens.append(piece)
                seen.add(piece)
    candidates = sorted(
        ((tok, n) for tok, n in counts.items() if n >= min_freq),
        key=lambda item: (-item[1], item[0]),
    )
    for tok, _n in candidates:
        if len(tokens) >= max_size:
            break
        if tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    return Vocab(tokens)


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first split of one pre-token into pieces.

    Falls back to a single ``[UNK]`` when any position cannot be matched
    (an out-of-alphabet character).
    """
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab.index:
                found = candidate
                break
            end -= 1
        if found is None:
            return [UNK]
        pieces.append(found)
        start = end
    return pieces


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Fixed-length model input: token ids, segment ids, attention mask."""

    ids: np.ndarray
    segment_ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not (len(self.ids) == len(self.segment_ids) == len(self.mask)):
            raise InputError("token sequence fields must share one length")


def _finish(ids: list[int], segs: list[int], max_len: int) -> TokenSequence:
    mask = [1] * len(ids)
    pad_seg = segs[-1] if segs else 0
    while len(ids) < max_len:
        ids.append(PAD_ID)
        segs.append(pad_seg)
        mask.append(0)
    return TokenSequence(
        ids=np.asarray(ids, dtype=np.int64),
        segment_ids=np.asarray(segs, dtype=np.int64),
        mask=np.asarray(mask, dtype=np.int64),
    )


def encode_section(text: str, vocab: Vocab, max_len: int = 32) -> TokenSequence:
    """Encode one section as ``[CLS] pieces [SEP]`` padded to ``max_len``."""
    if max_len < 2:
        raise ConfigError("max_len must be at least 2")
    pieces = [p for w in pretokenize(text) for p in wordpiece(w, vocab)]
    pieces = pieces[: max_len - 2]
    ids = [CLS_ID] + [vocab.id_of(p) for p in pieces] + [SEP_ID]
    segs = [0] * len(ids)
    return _finish(ids, segs, max_len)


def encode_pair(
    text_a: str, text_b: str, vocab: Vocab, max_len: int = 32
) -> TokenSequence:
    """Encode ``[CLS] A [SEP] B [SEP]``, trimming the longer side first.

    Trimming pops pieces from the end of whichever segment is currently
    longer (ties go to A), so two equally long inputs lose material evenly.
    Segment ids are 0 through the first ``[SEP]`` and 1 afterwards,
    including padding.
    """
    if max_len < 3:
        raise ConfigError("max_len must be at least 3 for a pair")
    pieces_a = [p for w in pretokenize(text_a) for p in wordpiece(w, vocab)]
    pieces_b = [p for w in pretokenize(text_b) for p in wordpiece(w, vocab)]
    budget = max_len - 3
    while len(pieces_a) + len(pieces_b) > budget:
        if len(pieces_a) >= len(pieces_b):
            pieces_a.pop()
        else:
            pieces_b.pop()
    ids = (
        [CLS_ID]
        + [vocab.id_of(p) for p in pieces_a]
        + [SEP_ID]
        + [vocab.id_of(p) for p in pieces_b]
        + [SEP_ID]
    )
    segs = [0] * (len(pieces_a) + 2) + [1] * (len(pieces_b) + 1)
    return _finish(ids, segs, max_len)


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    """Map ids back to text, merging ``##`` pieces and dropping structure.

    ``[PAD]``, ``[CLS]``, ``[SEP]`` and ``[MASK]`` are dropped; ``[UNK]``
    is kept visible.  Raises on out-of-range ids.
    """
    words: list[str] = []
    for raw in ids:
        i = int(raw)
        if i < 0 or i >= len(vocab):
            raise InputError(f"token id {i} outside vocabulary of {len(vocab)}")
        tok = vocab.tokens[i]
        if tok in (PAD, CLS, SEP, MASK):
            continue
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)
