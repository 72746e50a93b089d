"""Mask-pattern data augmentation.

Each sentence is replicated under a fixed set of mask patterns; a pattern
is a set of token positions that are replaced by MASK and become the
prediction targets. Patterns are a property of the dataset: epochs revisit
the same augmented set in a different seeded order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .corpus import Sentence
from .tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID, Vocabulary
from .util import subseed

IGNORE_LABEL = -100
DEFAULT_MASK_PROB = 0.15
_DISTINCT_RETRIES = 20


@dataclass(frozen=True)
class MaskPattern:
    """Strictly increasing token positions to mask (BOS/EOS excluded)."""

    positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.positions:
            raise ValueError("mask pattern must contain at least one position")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("mask pattern positions must be strictly increasing")


@dataclass
class MaskedExample:
    input_ids: list[int]
    labels: list[int]


def generate_patterns(
    sentence_len: int, num_patterns: int, mask_prob: float, seed: int
) -> list[MaskPattern]:
    """Sample num_patterns patterns for a sentence of sentence_len tokens.

    Each position is masked independently with probability mask_prob; an
    empty draw is repaired by masking one uniform position. Patterns are
    kept pairwise distinct by resampling up to a bounded retry count, after
    which duplicates are accepted (tiny sentences cannot avoid them).
    """
    if sentence_len < 1:
        raise ValueError("sentence_len must be >= 1")
    if num_patterns < 1:
        raise ValueError("num_patterns must be >= 1")
    if not 0.0 < mask_prob < 1.0:
        raise ValueError("mask_prob must be strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    patterns: list[MaskPattern] = []
    seen: set[tuple[int, ...]] = set()
    for _ in range(num_patterns):
        positions: tuple[int, ...] = ()
        for _ in range(_DISTINCT_RETRIES):
            draw = np.flatnonzero(rng.random(sentence_len) < mask_prob)
            if draw.size == 0:
                draw = np.array([rng.integers(sentence_len)])
            positions = tuple(int(p) for p in draw)
            if positions not in seen:
                break
        seen.add(positions)
        patterns.append(MaskPattern(positions))
    return patterns


def apply_pattern(
    sentence: Sentence, pattern: MaskPattern, vocab: Vocabulary, pad_to: int
) -> MaskedExample:
    """Build one training example: BOS + tokens + EOS, padded to pad_to.

    Masked positions carry MASK in the input and the original id in the
    labels; everywhere else the label is IGNORE_LABEL.
    """
    tokens = sentence.tokens
    n = len(tokens)
    if pad_to < n + 2:
        raise ValueError(f"pad_to={pad_to} too small for sentence of {n} tokens plus BOS/EOS")
    if pattern.positions[-1] >= n:
        raise ValueError(f"pattern position {pattern.positions[-1]} out of range for {n} tokens")
    input_ids = [BOS_ID] + list(tokens) + [EOS_ID] + [PAD_ID] * (pad_to - n - 2)
    labels = [IGNORE_LABEL] * pad_to
    for p in pattern.positions:
        input_ids[p + 1] = MASK_ID
        labels[p + 1] = tokens[p]
    return MaskedExample(input_ids=input_ids, labels=labels)


def sentence_patterns(
    sentence: Sentence, index: int, num_patterns: int, mask_prob: float, seed: int
) -> list[MaskPattern]:
    """Patterns for one sentence, derived from (seed, sentence index) only."""
    return generate_patterns(
        len(sentence.tokens), num_patterns, mask_prob, subseed(seed, f"patterns/{index}")
    )


def build_epoch(
    sentences: Sequence[Sentence],
    num_patterns: int,
    mask_prob: float,
    seed: int,
    epoch_index: int,
    vocab: Vocabulary,
) -> Iterator[MaskedExample]:
    """Stream the augmented set (len(sentences) * num_patterns examples).

    Example order is a seeded shuffle keyed by (seed, epoch_index); the
    pattern set per sentence depends on seed only, so every epoch revisits
    the same augmented examples.
    """
    patterns = [
        sentence_patterns(s, i, num_patterns, mask_prob, seed) for i, s in enumerate(sentences)
    ]
    total = len(sentences) * num_patterns
    order = np.random.default_rng(subseed(seed, f"epoch/{epoch_index}")).permutation(total)
    for k in order:
        i, j = divmod(int(k), num_patterns)
        sent = sentences[i]
        yield apply_pattern(sent, patterns[i][j], vocab, pad_to=len(sent.tokens) + 2)
