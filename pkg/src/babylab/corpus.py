"""Corpus ingestion (one sentence per line) and a synthetic toy grammar.

The toy grammar produces English-like sentences with two controlled
phenomena, subject-verb agreement and determiner-noun agreement, plus a
minimal-pair suite built from lexical combinations that are withheld from
the training corpus. Every word uses regular "+s" morphology so number is
marked the same way across the lexicon.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .tokenizer import Vocabulary, encode
from .util import subseed

TASK_SV = "subject_verb_agreement"
TASK_DN = "determiner_noun_agreement"

NOUNS = [
    "bear", "bird", "camel", "cat", "cow", "crab", "dog", "duck", "eagle",
    "falcon", "ferret", "frog", "goat", "hawk", "horse", "lion", "lizard",
    "monkey", "otter", "owl", "panda", "pig", "rabbit", "raven", "seal",
    "snake", "tiger", "turtle", "whale", "zebra",
]
INTRANS_VERBS = [
    "sleep", "jump", "run", "walk", "swim", "sing", "play", "smile",
    "wait", "dance", "hide", "climb", "shout", "laugh", "dream", "yawn",
]
TRANS_VERBS = ["see", "chase", "find", "like", "pull", "follow", "help", "hug", "call", "greet"]
DET_SG = ["a", "this", "one", "every", "each"]
DET_PL = ["these", "two", "three", "many", "several"]
DET_NEUTRAL = "the"
ADVERBS = ["quietly", "quickly", "slowly", "happily", "gently", "loudly", "calmly", "bravely"]
PREPS = ["near", "behind", "beside", "above", "below"]

HOLDOUT_FRACTION = 0.15


@dataclass
class Sentence:
    text: str
    tokens: list[int]
    source_line: int


@dataclass
class CorpusStats:
    num_sentences: int
    num_tokens: int
    truncated: int


def load_corpus(
    path: str | Path, vocab: Vocabulary, max_context: int
) -> tuple[list[Sentence], CorpusStats]:
    """Read one sentence per line, encode, and truncate to max_context - 2.

    The two reserved slots leave room for BOS/EOS. Empty and whitespace-only
    lines are skipped; a file without any non-empty line is an error.
    """
    if max_context < 3:
        raise ValueError(f"max_context={max_context} leaves no room for tokens besides BOS/EOS")
    limit = max_context - 2
    sentences: list[Sentence] = []
    truncated = 0
    num_tokens = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            tokens = encode(vocab, line)
            if len(tokens) > limit:
                tokens = tokens[:limit]
                truncated += 1
            num_tokens += len(tokens)
            sentences.append(Sentence(text=line, tokens=tokens, source_line=lineno))
    if not sentences:
        raise ValueError(f"corpus file {path} contains no non-empty lines")
    return sentences, CorpusStats(len(sentences), num_tokens, truncated)


def _noun_form(lemma: str, plural: bool) -> str:
    return lemma + "s" if plural else lemma


def _verb_form(lemma: str, plural_subject: bool) -> str:
    return lemma if plural_subject else lemma + "s"


def _det_choices(plural: bool) -> list[str]:
    return (DET_PL if plural else DET_SG) + [DET_NEUTRAL]


class _ToyGrammar:
    """Sampler for grammatical sentences with held-out suite combinations.

    The held-out sets are lexical pairings, (subject noun, verb) and
    (determiner, noun): every word occurs in training, but suite pairs are
    built only from pairings the training sampler rejects.
    """

    def __init__(self, seed: int):
        split = random.Random(subseed(seed, "toy-holdout"))
        sv_all = [(n, v) for n in NOUNS for v in INTRANS_VERBS + TRANS_VERBS]
        dn_all = [(d, n) for d in DET_SG + DET_PL for n in NOUNS]
        split.shuffle(sv_all)
        split.shuffle(dn_all)
        self.held_sv_list = sorted(sv_all[: int(len(sv_all) * HOLDOUT_FRACTION)])
        self.held_dn_list = sorted(dn_all[: int(len(dn_all) * HOLDOUT_FRACTION)])
        self.held_sv = set(self.held_sv_list)
        self.held_dn = set(self.held_dn_list)

    def _np(self, rng: random.Random, plural: bool) -> tuple[str, str, str]:
        """Sample a non-held-out (det, noun form, noun lemma)."""
        while True:
            noun = rng.choice(NOUNS)
            det = rng.choice(_det_choices(plural))
            if det == DET_NEUTRAL or (det, noun) not in self.held_dn:
                return det, _noun_form(noun, plural), noun

    def sample_training_sentence(self, rng: random.Random) -> str:
        while True:
            template = rng.randrange(4)
            plural = rng.random() < 0.5
            det, noun_form, noun = self._np(rng, plural)
            if template == 2:
                verb = rng.choice(TRANS_VERBS)
            else:
                verb = rng.choice(INTRANS_VERBS)
            if (noun, verb) in self.held_sv:
                continue
            vf = _verb_form(verb, plural)
            if template == 0:
                words = [det, noun_form, vf, "."]
            elif template == 1:
                words = [det, noun_form, vf, rng.choice(ADVERBS), "."]
            else:
                obj_plural = rng.random() < 0.5
                det2, noun2_form, _ = self._np(rng, obj_plural)
                if template == 2:
                    words = [det, noun_form, vf, det2, noun2_form, "."]
                else:
                    words = [det, noun_form, vf, rng.choice(PREPS), det2, noun2_form, "."]
            return " ".join(words)

    def sample_sv_pair(self, rng: random.Random) -> dict[str, str]:
        noun, verb = rng.choice(self.held_sv_list)
        plural = rng.random() < 0.5
        while True:
            det = rng.choice(_det_choices(plural))
            if det == DET_NEUTRAL or (det, noun) not in self.held_dn:
                break
        noun_form = _noun_form(noun, plural)
        good_verb = _verb_form(verb, plural)
        bad_verb = _verb_form(verb, not plural)
        if verb in TRANS_VERBS:
            obj_plural = rng.random() < 0.5
            det2, noun2_form, _ = self._np(rng, obj_plural)
            tail = [det2, noun2_form, "."]
        elif rng.random() < 0.5:
            tail = [rng.choice(ADVERBS), "."]
        else:
            tail = ["."]
        good = " ".join([det, noun_form, good_verb] + tail)
        bad = " ".join([det, noun_form, bad_verb] + tail)
        return {"good": good, "bad": bad, "task": TASK_SV}

    def sample_dn_pair(self, rng: random.Random) -> dict[str, str]:
        det, noun = rng.choice(self.held_dn_list)
        plural = det in DET_PL
        noun_form = _noun_form(noun, plural)
        bad_det = rng.choice(DET_SG if plural else DET_PL)
        as_object = rng.random() < 0.5
        if as_object:
            subj_plural = rng.random() < 0.5
            while True:
                sdet, snoun_form, snoun = self._np(rng, subj_plural)
                verb = rng.choice(TRANS_VERBS)
                if (snoun, verb) not in self.held_sv:
                    break
            vf = _verb_form(verb, subj_plural)
            good = " ".join([sdet, snoun_form, vf, det, noun_form, "."])
            bad = " ".join([sdet, snoun_form, vf, bad_det, noun_form, "."])
        else:
            while True:
                verb = rng.choice(INTRANS_VERBS)
                if (noun, verb) not in self.held_sv:
                    break
            vf = _verb_form(verb, plural)
            good = " ".join([det, noun_form, vf, "."])
            bad = " ".join([bad_det, noun_form, vf, "."])
        return {"good": good, "bad": bad, "task": TASK_DN}


def generate_toy_grammar(
    num_sentences: int,
    seed: int,
    corpus_path: str | Path,
    suite_path: str | Path,
    num_pairs: int = 1000,
) -> None:
    """Write a toy training corpus and its held-out minimal-pair suite.

    Deterministic in seed: identical arguments produce byte-identical files.
    The suite alternates between the two agreement tasks, num_pairs total.
    """
    if num_sentences < 1:
        raise ValueError("num_sentences must be >= 1")
    grammar = _ToyGrammar(seed)
    rng = random.Random(subseed(seed, "toy-corpus"))
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as f:
        for _ in range(num_sentences):
            f.write(grammar.sample_training_sentence(rng) + "\n")
    pair_rng = random.Random(subseed(seed, "toy-suite"))
    with open(suite_path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(num_pairs):
            if i % 2 == 0:
                pair = grammar.sample_sv_pair(pair_rng)
            else:
                pair = grammar.sample_dn_pair(pair_rng)
            f.write(json.dumps(pair, sort_keys=True) + "\n")


def _parse_noun(word: str) -> tuple[str, bool] | None:
    if word in NOUNS:
        return word, False
    if word.endswith("s") and word[:-1] in NOUNS:
        return word[:-1], True
    return None


def _parse_verb(word: str, lexicon: list[str]) -> tuple[str, bool] | None:
    """Return (lemma, plural_subject) if word is a form of a lexicon verb."""
    if word in lexicon:
        return word, True
    if word.endswith("s") and word[:-1] in lexicon:
        return word[:-1], False
    return None


def _check_np(det: str, noun_word: str) -> bool | None:
    """Return the NP's plurality if det and noun agree, else None."""
    parsed = _parse_noun(noun_word)
    if parsed is None:
        return None
    _, plural = parsed
    if det == DET_NEUTRAL or det in (DET_PL if plural else DET_SG):
        return plural
    return None


def is_toy_grammatical(line: str) -> bool:
    """Check a sentence against the generator's templates and agreement rules."""
    words = line.split()
    if len(words) < 4 or words[-1] != ".":
        return False
    subj_plural = _check_np(words[0], words[1])
    if subj_plural is None:
        return False
    body = words[2:-1]
    intrans = _parse_verb(body[0], INTRANS_VERBS) if body else None
    trans = _parse_verb(body[0], TRANS_VERBS) if body else None
    if intrans is not None:
        _, vplural = intrans
        if vplural != subj_plural:
            return False
        rest = body[1:]
        if not rest:
            return True
        if len(rest) == 1:
            return rest[0] in ADVERBS
        if len(rest) == 3 and rest[0] in PREPS:
            return _check_np(rest[1], rest[2]) is not None
        return False
    if trans is not None:
        _, vplural = trans
        if vplural != subj_plural:
            return False
        rest = body[1:]
        if len(rest) == 2:
            return _check_np(rest[0], rest[1]) is not None
        return False
    return False
