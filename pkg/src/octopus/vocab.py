"""Vocabulary construction and reversible text<->id coding.

Ids are laid out as: pad=0, eos=1, unk=2, content tokens from 3 upward in
descending frequency, and a block of S sentinel ids at the very top of the
id space (sentinel i = vocab_size - 1 - i). Sentinels mark masked spans
during denoising and render as "<extra_id_i>".
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Iterator

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
_NUM_RESERVED = 3

# unk renders as a single char so decode stays idempotent under re-encode
UNK_GLYPH = "⁇"  # ⁇


def _escape(token: str) -> str:
    return (
        token.replace("\\", "\\\\")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("\t", "\\t")
    )


def _unescape(line: str) -> str:
    out = []
    i = 0
    while i < len(line):
        c = line[i]
        if c == "\\" and i + 1 < len(line):
            nxt = line[i + 1]
            out.append({"\\": "\\", "n": "\n", "r": "\r", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


class Vocabulary:
    """Bijective token<->id map with reserved specials and sentinels."""

    def __init__(self, content_tokens: list[str], sentinels: int = 100, unit: str = "char"):
        if unit not in ("char", "word"):
            raise ValueError(f"unknown tokenization unit {unit!r}")
        if len(set(content_tokens)) != len(content_tokens):
            raise ValueError("duplicate content tokens")
        self.unit = unit
        self.num_sentinels = sentinels
        self._tokens = list(content_tokens)
        self._token_to_id = {
            tok: i + _NUM_RESERVED for i, tok in enumerate(self._tokens)
        }
        self.vocab_size = _NUM_RESERVED + len(self._tokens) + sentinels

    def __len__(self) -> int:
        return self.vocab_size

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def content_tokens(self) -> list[str]:
        return list(self._tokens)

    def sentinel(self, i: int) -> int:
        """Id of the i-th sentinel; sentinel ids decrease as i grows."""
        if not 0 <= i < self.num_sentinels:
            raise ValueError(f"sentinel index {i} outside [0, {self.num_sentinels})")
        return self.vocab_size - 1 - i

    def is_sentinel(self, token_id: int) -> bool:
        return self.vocab_size - self.num_sentinels <= token_id < self.vocab_size

    def sentinel_index(self, token_id: int) -> int:
        if not self.is_sentinel(token_id):
            raise ValueError(f"id {token_id} is not a sentinel")
        return self.vocab_size - 1 - token_id

    def _split(self, text: str) -> list[str]:
        return list(text) if self.unit == "char" else text.split()

    def encode(self, text: str) -> list[int]:
        """Token ids for `text`; unknown units map to unk. No eos appended."""
        return [self._token_to_id.get(tok, UNK_ID) for tok in self._split(text)]

    def decode(self, ids: Iterable[int]) -> str:
        """Inverse of encode; pad/eos dropped, sentinels render as <extra_id_i>."""
        pieces = []
        for i in ids:
            i = int(i)
            if i in (PAD_ID, EOS_ID):
                continue
            if i == UNK_ID:
                pieces.append(UNK_GLYPH)
            elif self.is_sentinel(i):
                pieces.append(f"<extra_id_{self.sentinel_index(i)}>")
            elif _NUM_RESERVED <= i < _NUM_RESERVED + len(self._tokens):
                pieces.append(self._tokens[i - _NUM_RESERVED])
            else:
                raise ValueError(f"id {i} out of range for vocab of size {self.vocab_size}")
        sep = "" if self.unit == "char" else " "
        return sep.join(pieces)

    def save(self, path):
        """One content token per line; header records size, sentinels, unit."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(
                f"vocab_size={self.vocab_size}\tsentinels={self.num_sentinels}\tunit={self.unit}\n"
            )
            for tok in self._tokens:
                f.write(_escape(tok) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            fields = dict(part.split("=", 1) for part in header.split("\t"))
            tokens = [_unescape(line.rstrip("\n")) for line in f]
        vocab = cls(tokens, sentinels=int(fields["sentinels"]), unit=fields["unit"])
        if vocab.vocab_size != int(fields["vocab_size"]):
            raise ValueError(f"corrupt vocabulary file {path}: size mismatch")
        return vocab


def build_vocab(
    corpus: Iterable[str] | Iterator[str],
    max_size: int = 4096,
    sentinels: int = 100,
    unit: str = "char",
) -> Vocabulary:
    """Build a vocabulary from the most frequent units in `corpus`.

    Ties break lexicographically. max_size caps the total id space
    including specials and the sentinel block.
    """
    if max_size <= _NUM_RESERVED + sentinels:
        raise ValueError(
            f"max_size must exceed {_NUM_RESERVED + sentinels} (specials + sentinels)"
        )
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        if unit == "char":
            counts.update(text)
        else:
            counts.update(text.split())
    if n_texts == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    budget = max_size - _NUM_RESERVED - sentinels
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    content = [tok for tok, _ in ordered[:budget]]
    return Vocabulary(content, sentinels=sentinels, unit=unit)
