import json

import pytest

from babylab.corpus import (
    _ToyGrammar,
    generate_toy_grammar,
    is_toy_grammatical,
    load_corpus,
)
from babylab.tokenizer import MASK_ID, PAD_ID


def test_empty_lines_skipped(tmp_path, toy_vocab):
    p = tmp_path / "c.txt"
    p.write_text("a cat .\n\n   \na dog .\n", encoding="utf-8")
    sentences, stats = load_corpus(p, toy_vocab, 64)
    assert [s.text for s in sentences] == ["a cat .", "a dog ."]
    assert [s.source_line for s in sentences] == [1, 4]
    assert stats.num_sentences == 2
    assert stats.truncated == 0


def test_truncation_arithmetic(tmp_path, toy_vocab):
    long_line = " ".join(["cat"] * 500)
    p = tmp_path / "c.txt"
    p.write_text(long_line + "\n", encoding="utf-8")
    sentences, stats = load_corpus(p, toy_vocab, 128)
    assert len(sentences[0].tokens) == 126
    assert stats.truncated == 1


def test_missing_and_empty_files(tmp_path, toy_vocab):
    with pytest.raises(OSError):
        load_corpus(tmp_path / "nope.txt", toy_vocab, 64)
    p = tmp_path / "blank.txt"
    p.write_text("\n\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no non-empty lines"):
        load_corpus(p, toy_vocab, 64)


def test_sentences_never_contain_mask_or_pad(toy_sentences):
    for s in toy_sentences:
        assert MASK_ID not in s.tokens
        assert PAD_ID not in s.tokens


def test_line_count_and_order(tmp_path, toy_vocab):
    p = tmp_path / "c.txt"
    generate_toy_grammar(1000, 3, p, tmp_path / "s.jsonl", num_pairs=4)
    sentences, stats = load_corpus(p, toy_vocab, 64)
    assert stats.num_sentences == 1000
    with open(p, encoding="utf-8") as f:
        lines = [l.rstrip("\n") for l in f]
    assert [s.text for s in sentences] == lines


def test_generator_output_is_grammatical(tmp_path):
    generate_toy_grammar(200, 5, tmp_path / "c.txt", tmp_path / "s.jsonl", num_pairs=40)
    for line in (tmp_path / "c.txt").read_text().splitlines():
        assert is_toy_grammatical(line), line


def test_generator_deterministic(tmp_path):
    for name in ("a", "b"):
        generate_toy_grammar(150, 9, tmp_path / f"c{name}.txt", tmp_path / f"s{name}.jsonl")
    assert (tmp_path / "ca.txt").read_bytes() == (tmp_path / "cb.txt").read_bytes()
    assert (tmp_path / "sa.jsonl").read_bytes() == (tmp_path / "sb.jsonl").read_bytes()


def test_pairs_differ_in_exactly_one_token(tmp_path):
    generate_toy_grammar(50, 13, tmp_path / "c.txt", tmp_path / "s.jsonl", num_pairs=120)
    for line in (tmp_path / "s.jsonl").read_text().splitlines():
        pair = json.loads(line)
        good, bad = pair["good"].split(), pair["bad"].split()
        assert len(good) == len(bad)
        assert sum(g != b for g, b in zip(good, bad)) == 1
        assert is_toy_grammatical(pair["good"])
        assert not is_toy_grammatical(pair["bad"])
        assert pair["task"] in ("subject_verb_agreement", "determiner_noun_agreement")


def test_suite_combinations_held_out_of_corpus(tmp_path):
    generate_toy_grammar(2000, 21, tmp_path / "c.txt", tmp_path / "s.jsonl", num_pairs=200)
    blob = (tmp_path / "c.txt").read_text()
    corpus_lines = set(blob.splitlines())
    for line in (tmp_path / "s.jsonl").read_text().splitlines():
        assert json.loads(line)["good"] not in corpus_lines
    # the training sampler never realizes a held-out pairing
    grammar = _ToyGrammar(21)
    assert grammar.held_sv and grammar.held_dn
    for det, noun in grammar.held_dn_list:
        for form in (noun, noun + "s"):
            assert f"{det} {form} " not in blob
    for noun, verb in grammar.held_sv_list:
        for nf in (noun, noun + "s"):
            for vf in (verb, verb + "s"):
                assert f"{nf} {vf} " not in blob


def test_generator_rejects_zero_sentences(tmp_path):
    with pytest.raises(ValueError):
        generate_toy_grammar(0, 1, tmp_path / "c.txt", tmp_path / "s.jsonl")
