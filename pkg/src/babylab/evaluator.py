"""Minimal-pair scoring via pseudo-log-likelihood.

A sentence's PLL is the sum over token positions of the log-probability of
the true token when that position alone is masked; a pair is correct when
the acceptable sentence scores strictly higher. Dropout is always disabled
here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Parameters, forward
from .tokenizer import BOS_ID, EOS_ID, MASK_ID, Vocabulary, encode

_PLL_CHUNK = 128


@dataclass(frozen=True)
class MinimalPair:
    good: str
    bad: str
    task: str

    def __post_init__(self) -> None:
        if self.good == self.bad:
            raise ValueError("minimal pair must have distinct sentences")
        if not self.task:
            raise ValueError("minimal pair must carry a non-empty task label")


@dataclass
class TaskScore:
    task: str
    num_pairs: int
    num_correct: int

    @property
    def accuracy(self) -> float:
        return self.num_correct / self.num_pairs


def load_suite(path: str | Path) -> list[MinimalPair]:
    """Read a JSON-lines suite with fields good, bad, task."""
    pairs: list[MinimalPair] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                pairs.append(MinimalPair(good=obj["good"], bad=obj["bad"], task=obj["task"]))
            except KeyError as e:
                raise ValueError(f"{path}:{lineno}: missing field {e}") from None
    if not pairs:
        raise ValueError(f"suite file {path} contains no pairs")
    return pairs


def pseudo_log_likelihood(params: Parameters, vocab: Vocabulary, sentence: str) -> float:
    """Sum of masked log-probabilities, one forward batch over all positions.

    Specials are excluded from the sum; each row of the batch masks exactly
    one position of the BOS + tokens + EOS sequence.
    """
    ids = encode(vocab, sentence)
    if not ids:
        raise ValueError(f"sentence encodes to no tokens: {sentence!r}")
    n = len(ids)
    if n > params.config.max_context - 2:
        raise ValueError(f"sentence of {n} tokens exceeds max_context {params.config.max_context}")
    base = np.array([BOS_ID] + ids + [EOS_ID], dtype=np.int64)
    total = 0.0
    for start in range(0, n, _PLL_CHUNK):
        stop = min(start + _PLL_CHUNK, n)
        rows = np.tile(base, (stop - start, 1))
        cols = np.arange(start, stop) + 1
        rows[np.arange(stop - start), cols] = MASK_ID
        logits = forward(params, rows, train=False)
        sel = logits[np.arange(stop - start), cols]
        m = sel.max(axis=-1, keepdims=True)
        logz = m + np.log(np.exp(sel - m).sum(axis=-1, keepdims=True))
        logp = sel - logz
        total += float(logp[np.arange(stop - start), np.array(ids[start:stop])].sum())
    return total


def score_pair(params: Parameters, vocab: Vocabulary, pair: MinimalPair) -> bool:
    """True iff the acceptable sentence scores strictly higher (ties are wrong)."""
    return pseudo_log_likelihood(params, vocab, pair.good) > pseudo_log_likelihood(
        params, vocab, pair.bad
    )


def evaluate_suite(
    params: Parameters, vocab: Vocabulary, pairs: list[MinimalPair]
) -> tuple[list[TaskScore], float]:
    """Per-task accuracies plus their unweighted mean."""
    if not pairs:
        raise ValueError("suite is empty")
    by_task: dict[str, list[MinimalPair]] = {}
    for pair in pairs:
        by_task.setdefault(pair.task, []).append(pair)
    scores: list[TaskScore] = []
    for task in sorted(by_task):
        task_pairs = by_task[task]
        if not task_pairs:
            raise ValueError(f"task {task!r} has zero pairs")
        correct = sum(score_pair(params, vocab, p) for p in task_pairs)
        scores.append(TaskScore(task=task, num_pairs=len(task_pairs), num_correct=correct))
    overall = float(np.mean([s.accuracy for s in scores]))
    return scores, overall


def write_report(
    path: str | Path,
    scores: list[TaskScore],
    overall: float,
    checkpoint_hash: str,
    suite_hash: str,
) -> None:
    payload = {
        "tasks": {
            s.task: {"accuracy": s.accuracy, "num_pairs": s.num_pairs, "num_correct": s.num_correct}
            for s in scores
        },
        "overall": overall,
        "checkpoint_sha256": checkpoint_hash,
        "suite_sha256": suite_hash,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
