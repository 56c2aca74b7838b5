import numpy as np
import pytest

from oodgen.classifier import CnnClassifier, TrainConfig
from oodgen.corpus import LabeledExample, Vocab
from oodgen.embeddings import EmbeddingTable
from oodgen.synthetic import make_synthetic_task

SEED = 20260808


@pytest.fixture(scope="session")
def planted_task():
    """The 4-intent planted-keyword corpus used across generation tests."""
    return make_synthetic_task(4, 30, seed=SEED)


def small_vocab(num_words: int) -> Vocab:
    return Vocab([f"word{i:03d}" for i in range(num_words)])


def random_table(num_words: int, dim: int, seed: int, all_pretrained: bool = True) -> EmbeddingTable:
    """Random embedding table over a synthetic vocabulary (unit-ish rows)."""
    vocab = small_vocab(num_words)
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(len(vocab), dim))
    vectors[0] = 0.0  # PAD
    vectors[2] = 0.0  # MASK
    pretrained = np.ones(len(vocab), dtype=bool)
    pretrained[:3] = False
    if not all_pretrained:
        pretrained[3 :: 5] = False
    return EmbeddingTable(vectors, pretrained, vocab)


def tiny_model(
    num_words: int = 12,
    dim: int = 4,
    num_classes: int = 3,
    seed: int = SEED,
    dtype: str = "float64",
    **cfg_overrides,
) -> tuple[CnnClassifier, EmbeddingTable]:
    table = random_table(num_words, dim, seed)
    config = TrainConfig(
        seed=seed,
        dtype=dtype,
        kernel_widths=cfg_overrides.pop("kernel_widths", (2, 3)),
        num_filters=cfg_overrides.pop("num_filters", 4),
        **cfg_overrides,
    )
    model = CnnClassifier(table.matrix_for_model(np.dtype(dtype)), num_classes, config)
    return model, table


def random_sentence(rng: np.random.Generator, num_words: int, length: int) -> list[int]:
    return [int(rng.integers(3, num_words)) for _ in range(length)]


def make_examples(sentences, labels, vocab=None, start_id=0):
    out = []
    for i, (tokens, label) in enumerate(zip(sentences, labels)):
        words = [f"word{t:03d}" for t in tokens]
        out.append(LabeledExample(start_id + i, words, label, tokens=list(tokens)))
    return out
