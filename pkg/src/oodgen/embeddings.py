"""Pretrained word vectors: loading, cosine queries, analogy scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import MASK_ID, NUM_RESERVED, PAD_ID, Vocab

logger = logging.getLogger(__name__)


class EmbeddingTable:
    """A |V| x d matrix of word vectors plus coverage metadata.

    The stored matrix is frozen after construction and serves as the
    reference geometry for similarity queries; models that want to train
    embeddings take their own writable copy via ``matrix_for_model``.
    """

    def __init__(self, vectors: np.ndarray, pretrained: np.ndarray, vocab: Vocab):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(vocab):
            raise ValueError(
                f"vector matrix shape {vectors.shape} does not match vocab of size {len(vocab)}"
            )
        if vectors.shape[1] <= 0:
            raise ValueError("embedding dimension must be positive")
        self._vectors = vectors.copy()
        self._vectors.setflags(write=False)
        self.pretrained = np.asarray(pretrained, dtype=bool).copy()
        if self.pretrained.shape != (len(vocab),):
            raise ValueError("pretrained flags must have one entry per vocab word")
        self.vocab = vocab
        self._norms = np.sqrt((self._vectors * self._vectors).sum(axis=1))

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def reference(self) -> np.ndarray:
        """The frozen matrix used for every similarity decision."""
        return self._vectors

    @property
    def coverage(self) -> float:
        n_words = len(self.vocab) - NUM_RESERVED
        if n_words <= 0:
            return 0.0
        return float(self.pretrained[NUM_RESERVED:].sum()) / n_words

    def matrix_for_model(self, dtype=np.float32) -> np.ndarray:
        return self._vectors.astype(dtype)

    def cosine(self, a: int, b: int) -> float:
        """Cosine similarity between the frozen rows of two word ids."""
        for word_id in (a, b):
            if self._norms[word_id] == 0.0:
                raise ValueError(
                    f"word {self.vocab.id2word[word_id]!r} has a zero vector; cosine undefined"
                )
        num = float(self._vectors[a] @ self._vectors[b])
        return num / float(self._norms[a] * self._norms[b])

    def cosine_to_row(self, word_id: int) -> np.ndarray:
        """Cosine of every vocab row against one word (zero rows give nan)."""
        if self._norms[word_id] == 0.0:
            raise ValueError(
                f"word {self.vocab.id2word[word_id]!r} has a zero vector; cosine undefined"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = (self._vectors @ self._vectors[word_id]) / (self._norms * self._norms[word_id])
        return sims


def load_pretrained(path, vocab: Vocab, seed: int) -> EmbeddingTable:
    """Read a plain-text "word v1 ... vd" file into a table over ``vocab``.

    Words absent from the file get a small seeded random vector (flagged
    as not pretrained); PAD and MASK stay all-zero.  An optional leading
    "count dim" header line is skipped.
    """
    path = Path(path)
    wanted = set(vocab.word2id)
    found: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'word v1 ... vd'")
            word = parts[0]
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise ValueError(
                    f"{path}:{lineno}: vector has {len(parts) - 1} components, expected {dim}"
                )
            if word in wanted and word not in found:
                found[word] = np.asarray(parts[1:], dtype=np.float64)
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    if not found:
        raise ValueError(f"{path}: no vocabulary word is covered by the embedding file")

    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xE5B)))
    vectors = np.zeros((len(vocab), dim), dtype=np.float64)
    pretrained = np.zeros(len(vocab), dtype=bool)
    for word_id, word in enumerate(vocab.id2word):
        if word_id in (PAD_ID, MASK_ID):
            continue
        vec = found.get(word)
        if vec is not None:
            vectors[word_id] = vec
            pretrained[word_id] = True
        else:
            vectors[word_id] = rng.uniform(-0.1, 0.1, size=dim)
    table = EmbeddingTable(vectors, pretrained, vocab)
    logger.info(
        "embeddings: %d dims, coverage %.3f (%d/%d words)",
        dim, table.coverage, int(pretrained[NUM_RESERVED:].sum()), len(vocab) - NUM_RESERVED,
    )
    return table


def load_embedding_vocab(path) -> Vocab:
    """Vocabulary over every word in an embedding file, in file order."""
    words = []
    seen = set()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'word v1 ... vd'")
            if parts[0] not in seen:
                seen.add(parts[0])
                words.append(parts[0])
    if not words:
        raise ValueError(f"{path}: empty embedding file")
    return Vocab(words)


# ---------------------------------------------------------------------------
# analogy evaluation


@dataclass
class AnalogyResult:
    accuracy: float
    correct: int
    attempted: int
    skipped: int


def load_analogy_file(path) -> list[tuple[str, str, str, str]]:
    """Four-words-per-line analogy questions; ':' section headers skipped."""
    questions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith(":"):
                continue
            words = line.lower().split()
            if len(words) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 words, got {len(words)}")
            questions.append(tuple(words))
    if not questions:
        raise ValueError(f"{path}: no analogy questions found")
    return questions


def evaluate_analogies(table: EmbeddingTable, questions) -> AnalogyResult:
    """3CosAdd accuracy: answer = nearest vocab word to b - a + c.

    The three cue words, reserved tokens and zero-norm rows are excluded
    from the candidate set.  Questions with any out-of-vocabulary word are
    skipped and counted.
    """
    if not questions:
        raise ValueError("no analogy questions supplied")
    vecs = table.reference
    norms = np.sqrt((vecs * vecs).sum(axis=1))
    base_mask = norms > 0
    base_mask[:NUM_RESERVED] = False
    word2id = table.vocab.word2id

    correct = attempted = skipped = 0
    for a, b, c, d in questions:
        ids = [word2id.get(w) for w in (a, b, c, d)]
        if any(i is None for i in ids):
            skipped += 1
            continue
        ia, ib, ic, id_ = ids
        target = vecs[ib] - vecs[ia] + vecs[ic]
        t_norm = np.sqrt(target @ target)
        if t_norm == 0.0:
            skipped += 1
            continue
        mask = base_mask.copy()
        mask[[ia, ib, ic]] = False
        sims = np.where(mask, (vecs @ target) / (norms * t_norm + (~mask)), -np.inf)
        attempted += 1
        correct += int(sims.argmax()) == id_
    accuracy = correct / attempted if attempted else 0.0
    return AnalogyResult(accuracy, correct, attempted, skipped)
