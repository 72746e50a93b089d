"""Byte-level BPE tokenizer with reserved special tokens.

Text is taken verbatim: it is split into units of "optional single leading
space + run of non-spaces" (lone spaces form their own unit), each unit is
UTF-8 encoded, and merges are learned over bytes within units. Specials
occupy ids 0-4 in the order PAD, UNK, MASK, BOS, EOS.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID, UNK_ID, MASK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<unk>", "<mask>", "<bos>", "<eos>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

_UNIT_RE = re.compile(r" ?[^ ]+| ")

VOCAB_FORMAT_VERSION = 1


@dataclass
class Vocabulary:
    """Trained BPE vocabulary.

    merges: ordered list of byte-pair merges, training order.
    token_to_id: byte-string token -> id (non-special tokens only).
    id_to_token: id -> byte-string token; entries 0-4 are None (specials).
    """

    merges: list[tuple[bytes, bytes]]
    token_to_id: dict[bytes, int]
    id_to_token: list[bytes | None]
    _ranks: dict[tuple[bytes, bytes], int] = field(default_factory=dict, repr=False)
    _cache: dict[bytes, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def mask_id(self) -> int:
        return MASK_ID

    @property
    def bos_id(self) -> int:
        return BOS_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID


def _units(text: str) -> list[bytes]:
    return [u.encode("utf-8") for u in _UNIT_RE.findall(text)]


def _count_pairs(words: Counter[tuple[bytes, ...]]) -> Counter[tuple[bytes, bytes]]:
    pairs: Counter[tuple[bytes, bytes]] = Counter()
    for word, n in words.items():
        for a, b in zip(word, word[1:]):
            pairs[(a, b)] += n
    return pairs


def _merge_word(word: tuple[bytes, ...], pair: tuple[bytes, bytes]) -> tuple[bytes, ...]:
    """Replace occurrences of pair left-to-right, non-overlapping."""
    merged = pair[0] + pair[1]
    out: list[bytes] = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def train_bpe(corpus: Sequence[str] | Iterable[str], vocab_size: int) -> Vocabulary:
    """Train a byte-level BPE vocabulary of at most vocab_size entries.

    The merge at each step is the most frequent adjacent symbol pair
    (overlapping occurrences counted), ties broken by lexicographically
    smallest pair, which makes training deterministic. Training stops early
    if no pair remains to merge, so the result can be smaller than
    vocab_size on tiny corpora.
    """
    words: Counter[tuple[bytes, ...]] = Counter()
    for sentence in corpus:
        for unit in _units(sentence):
            words[tuple(bytes([b]) for b in unit)] += 1
    if not words:
        raise ValueError("corpus is empty: no text to train on")

    alphabet = sorted({sym for word in words for sym in word})
    minimum = NUM_SPECIALS + len(alphabet)
    if vocab_size < minimum:
        raise ValueError(
            f"vocab_size={vocab_size} is below the minimum {minimum} "
            f"({NUM_SPECIALS} specials + {len(alphabet)} byte symbols)"
        )

    id_to_token: list[bytes | None] = [None] * NUM_SPECIALS + list(alphabet)
    merges: list[tuple[bytes, bytes]] = []
    num_merges = vocab_size - minimum
    for _ in range(num_merges):
        pairs = _count_pairs(words)
        if not pairs:
            break
        best_count = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == best_count)
        merges.append(best)
        id_to_token.append(best[0] + best[1])
        words = Counter({_merge_word(w, best): n for w, n in words.items()})

    token_to_id = {tok: i for i, tok in enumerate(id_to_token) if tok is not None}
    return Vocabulary(merges=merges, token_to_id=token_to_id, id_to_token=id_to_token)


def _encode_unit(vocab: Vocabulary, unit: bytes) -> list[int]:
    cached = vocab._cache.get(unit)
    if cached is not None:
        return cached
    symbols = [bytes([b]) for b in unit]
    while len(symbols) >= 2:
        ranked = [
            (vocab._ranks[p], i)
            for i, p in enumerate(zip(symbols, symbols[1:]))
            if p in vocab._ranks
        ]
        if not ranked:
            break
        rank = min(r for r, _ in ranked)
        symbols = list(_merge_word(tuple(symbols), vocab.merges[rank]))
    ids = [vocab.token_to_id.get(s, UNK_ID) for s in symbols]
    vocab._cache[unit] = ids
    return ids


def encode(vocab: Vocabulary, text: str) -> list[int]:
    """Encode text to token ids; bytes outside the training alphabet map to UNK."""
    ids: list[int] = []
    for unit in _units(text):
        ids.extend(_encode_unit(vocab, unit))
    return ids


def decode(vocab: Vocabulary, ids: Sequence[int]) -> str:
    """Concatenate token byte strings, omitting specials, and decode as UTF-8."""
    chunks: list[bytes] = []
    for i in ids:
        if not 0 <= i < vocab.size:
            raise ValueError(f"token id {i} out of range for vocabulary of size {vocab.size}")
        tok = vocab.id_to_token[i]
        if tok is not None:
            chunks.append(tok)
    return b"".join(chunks).decode("utf-8", errors="replace")


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Serialize to JSON: version, specials, merges (2-arrays), tokens by id.

    Byte strings are rendered via latin-1 so every byte value 0-255 maps to
    one character; the first five token slots hold the special strings.
    """
    tokens = [
        SPECIAL_TOKENS[i] if i < NUM_SPECIALS else vocab.id_to_token[i].decode("latin-1")
        for i in range(vocab.size)
    ]
    payload = {
        "version": VOCAB_FORMAT_VERSION,
        "specials": list(SPECIAL_TOKENS),
        "merges": [[a.decode("latin-1"), b.decode("latin-1")] for a, b in vocab.merges],
        "tokens": tokens,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, ensure_ascii=True, separators=(",", ": "), indent=1)
        f.write("\n")


def load_vocab(path: str | Path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != VOCAB_FORMAT_VERSION:
        raise ValueError(f"unsupported vocabulary format version: {payload.get('version')!r}")
    merges = [(a.encode("latin-1"), b.encode("latin-1")) for a, b in payload["merges"]]
    id_to_token: list[bytes | None] = [None] * NUM_SPECIALS
    for tok in payload["tokens"][NUM_SPECIALS:]:
        id_to_token.append(tok.encode("latin-1"))
    token_to_id = {tok: i for i, tok in enumerate(id_to_token) if tok is not None}
    return Vocabulary(merges=merges, token_to_id=token_to_id, id_to_token=id_to_token)
