"""Self-contained synthetic intent task with planted keywords.

Each intent owns one keyword that appears in every one of its sentences;
the remaining slots are fillers shared across intents.  Word vectors are
clustered so that a keyword is highly similar to its two companion words
and nearly orthogonal to everything else, which gives the similarity
constraint of the flip search real work to do.  Used by the test suite
and as the CLI's built-in demo corpus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import MASK_ID, PAD_ID, UNK_ID, Dataset, LabeledExample, Vocab, build_vocab
from .embeddings import EmbeddingTable


@dataclass
class SyntheticTask:
    dataset: Dataset          # encoded
    vocab: Vocab
    table: EmbeddingTable
    keywords: dict[str, str]  # label -> planted keyword


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(v @ v)


def make_synthetic_task(
    num_intents: int = 4,
    train_per_intent: int = 30,
    seed: int = 0,
    num_fillers: int | None = None,
    dim: int = 50,
    dev_per_intent: int | None = None,
    test_per_intent: int | None = None,
    min_len: int = 5,
    max_len: int = 9,
) -> SyntheticTask:
    if num_intents < 2:
        raise ValueError("need at least two intents")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5117)))
    if num_fillers is None:
        num_fillers = max(60, 20 * num_intents)
    if dev_per_intent is None:
        dev_per_intent = max(4, train_per_intent // 5)
    if test_per_intent is None:
        test_per_intent = max(10, train_per_intent // 2)

    labels = [f"intent_{i:02d}" for i in range(num_intents)]
    keywords = {label: f"kw{i:02d}" for i, label in enumerate(labels)}
    companions = {label: [f"kw{i:02d}syn{j}" for j in range(2)] for i, label in enumerate(labels)}
    fillers = [f"w{j:03d}" for j in range(num_fillers)]

    def sentence(label: str) -> list[str]:
        length = int(rng.integers(min_len, max_len + 1))
        words = [fillers[int(rng.integers(num_fillers))] for _ in range(length)]
        # Companions are rare so the keyword stays the dominant cue.
        for comp in companions[label]:
            if rng.random() < 0.08:
                words[int(rng.integers(length))] = comp
        words[int(rng.integers(length))] = keywords[label]
        return words

    next_id = 0

    def batch(label: str, n: int) -> list[LabeledExample]:
        nonlocal next_id
        out = []
        for _ in range(n):
            out.append(LabeledExample(next_id, sentence(label), label))
            next_id += 1
        return out

    train, dev, test = [], [], []
    for label in labels:
        train.extend(batch(label, train_per_intent))
    for label in labels:
        dev.extend(batch(label, dev_per_intent))
    for label in labels:
        test.extend(batch(label, test_per_intent))

    vocab = build_vocab(train + dev + test)
    dataset = Dataset(train, dev, test, labels).encoded(vocab)

    # Cluster geometry: one center per intent, several filler topics.
    num_topics = max(4, num_fillers // 16)
    centers = rng.normal(size=(num_intents + num_topics, dim))
    centers /= np.sqrt((centers * centers).sum(axis=1, keepdims=True))

    vectors = np.zeros((len(vocab), dim))
    pretrained = np.zeros(len(vocab), dtype=bool)
    for word_id, word in enumerate(vocab.id2word):
        if word_id in (PAD_ID, MASK_ID):
            continue
        if word_id == UNK_ID:  # small random row, not pretrained
            vectors[word_id] = rng.uniform(-0.1, 0.1, size=dim)
            continue
        if word.startswith("kw"):
            intent_idx = int(word[2:4])
            center = centers[intent_idx]
            noise = 0.05 if "syn" not in word else 0.12
        else:
            topic = int(word[1:]) % num_topics
            center = centers[num_intents + topic]
            noise = 0.35
        vectors[word_id] = _unit(center + noise * rng.normal(size=dim))
        pretrained[word_id] = True

    table = EmbeddingTable(vectors, pretrained, vocab)
    return SyntheticTask(dataset, vocab, table, keywords)
