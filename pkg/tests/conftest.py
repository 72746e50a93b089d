import numpy as np
import pytest

from babylab.corpus import generate_toy_grammar, load_corpus
from babylab.model import ModelConfig, init
from babylab.tokenizer import train_bpe


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    """Small generated corpus + suite shared by the fast tests."""
    root = tmp_path_factory.mktemp("toy")
    corpus_path = root / "corpus.txt"
    suite_path = root / "suite.jsonl"
    generate_toy_grammar(400, 11, corpus_path, suite_path, num_pairs=60)
    return corpus_path, suite_path


@pytest.fixture(scope="session")
def toy_vocab(toy_files):
    corpus_path, _ = toy_files
    with open(corpus_path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    return train_bpe(lines, 512)


@pytest.fixture(scope="session")
def toy_sentences(toy_files, toy_vocab):
    sentences, _ = load_corpus(toy_files[0], toy_vocab, 64)
    return sentences


@pytest.fixture()
def micro_config(toy_vocab):
    return ModelConfig(16, 32, 2, 2, toy_vocab.size, max_context=32, preset_name="custom")


@pytest.fixture()
def micro_params(micro_config):
    return init(micro_config, seed=0)


def make_batch(vocab_size, seed=1, batch=3, length=9, pad_tail=2, label_rate=0.3):
    """Random ids/mask/labels with at least one labeled position."""
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, vocab_size, size=(batch, length))
    if pad_tail:
        ids[0, -pad_tail:] = 0
    labels = np.full((batch, length), -100)
    for b in range(batch):
        for t in range(1, length - 1):
            if rng.random() < label_rate and ids[b, t] != 0:
                labels[b, t] = ids[b, t]
    labels[0, 1] = ids[0, 1]
    return ids, ids != 0, labels
