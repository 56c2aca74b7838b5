"""Gradient-guided word flipping.

Two search directions over the same machinery:

* ``generate_ood_samples`` flips the most influential word of a training
  sentence to a dissimilar word while minimizing the first-order loss
  change, harvesting sentences the model still assigns to the original
  intent even though their key content word is gone.
* ``hotflip_attack`` is the classic adversarial direction: pick the flip
  that maximizes the loss increase subject to a minimum similarity.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .classifier import CnnClassifier
from .corpus import MASK_ID, NUM_RESERVED, LabeledExample, Vocab
from .embeddings import EmbeddingTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationConfig:
    similarity_threshold: float = 0.3
    candidate_fraction: float = 0.01
    core_token_count: int = 5
    iterations: int = 3
    seed: int = 0
    strict_similarity: bool = False
    warm_start: bool = False  # reuse the previous round's weights instead of reinitializing

    def __post_init__(self):
        if not 0.0 < self.candidate_fraction <= 1.0:
            raise ValueError("candidate_fraction must be in (0, 1]")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in [-1, 1]")
        if self.core_token_count < 1:
            raise ValueError("core_token_count must be >= 1")


@dataclass
class OodSample:
    tokens: list[int]
    words: list[str]
    source_example_id: int
    position: int
    original_word: str
    replacement_word: str
    iteration: int
    model_label: str


# ---------------------------------------------------------------------------
# word importance


def importance_profile(model: CnnClassifier, tokens: list[int], label: int) -> np.ndarray:
    """Per-position importance: drop in the truth-class logit when the
    position is replaced by the zero-embedding mask token."""
    n = len(tokens)
    if n == 0:
        raise ValueError("empty sentence")
    variants = [list(tokens)]
    for i in range(n):
        masked = list(tokens)
        masked[i] = MASK_ID
        variants.append(masked)
    logits = model.logits_for(variants)[:, label]
    return logits[0] - logits[1:]


def word_importance(model: CnnClassifier, tokens: list[int], label: int, position: int) -> float:
    if not 0 <= position < len(tokens):
        raise ValueError(f"position {position} outside the sentence")
    return float(importance_profile(model, tokens, label)[position])


def most_important_word(model: CnnClassifier, tokens: list[int], label: int) -> tuple[int, int]:
    """(position, word id) with the largest importance; ties take the lowest
    position.  Reserved tokens (PAD/UNK/MASK) are never selected."""
    eligible = [i for i, t in enumerate(tokens) if t >= NUM_RESERVED]
    if not eligible:
        raise ValueError("sentence has no non-reserved token")
    profile = importance_profile(model, tokens, label)
    best = max(eligible, key=lambda i: (profile[i], -i))
    return best, tokens[best]


# ---------------------------------------------------------------------------
# core class tokens


def extract_core_tokens(
    model: CnnClassifier,
    examples: list[LabeledExample],
    label_to_index: dict[str, int],
    count: int = 5,
    importance_cache: dict[int, tuple[int, int]] | None = None,
) -> dict[str, list[tuple[int, int]]]:
    """Per label, the ``count`` words most often found most important.

    Returns label -> [(word id, frequency), ...] sorted by frequency
    descending, ties by word id ascending.  When given, ``importance_cache``
    is filled with each example's (position, word id) so callers can reuse
    the computation.
    """
    tallies: dict[str, Counter] = {label: Counter() for label in label_to_index}
    seen_labels = set()
    for ex in examples:
        if ex.label not in label_to_index:
            continue
        seen_labels.add(ex.label)
        pos, word = most_important_word(model, ex.tokens, label_to_index[ex.label])
        if importance_cache is not None:
            importance_cache[ex.example_id] = (pos, word)
        tallies[ex.label][word] += 1
    missing = set(label_to_index) - seen_labels
    if missing:
        raise ValueError(f"labels without a training example: {sorted(missing)}")
    core: dict[str, list[tuple[int, int]]] = {}
    for label, counter in tallies.items():
        ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        core[label] = ranked[:count]
    return core


# ---------------------------------------------------------------------------
# candidate search


def candidate_pool_size(vocab_size: int, fraction: float) -> int:
    return max(1, math.ceil(fraction * vocab_size))


def candidate_replacements(
    model: CnnClassifier,
    table: EmbeddingTable,
    tokens: list[int],
    label: int,
    position: int,
    config: GenerationConfig,
    input_grad: np.ndarray | None = None,
) -> list[int]:
    """Words eligible to replace the token at ``position``.

    The vocabulary is scored by the first-order loss term of each word at
    that position, sorted ascending (ties by word id); the prefix of size
    ceil(candidate_fraction * |V|) is kept and then filtered to words whose
    pretrained cosine to the current word stays within the similarity
    threshold.  Reserved ids, words without a pretrained vector, and the
    current word itself are never returned.  An empty list signals "no
    candidate" and the caller should skip the sentence.
    """
    current = tokens[position]
    scores = model.vocab_scores(tokens, label, position, input_grad=input_grad)

    eligible = np.nonzero(table.pretrained)[0]
    eligible = eligible[eligible >= NUM_RESERVED]
    if eligible.size == 0:
        return []
    order = np.lexsort((eligible, scores[eligible]))
    ranked = eligible[order]
    prefix = ranked[: candidate_pool_size(len(table.vocab), config.candidate_fraction)]

    sims = table.cosine_to_row(current)
    kept = []
    for word_id in prefix:
        word_id = int(word_id)
        if word_id == current:
            continue
        sim = float(sims[word_id])
        if config.strict_similarity:
            if sim >= config.similarity_threshold:
                continue
        elif sim > config.similarity_threshold:
            continue
        kept.append(word_id)
    return kept


# ---------------------------------------------------------------------------
# generation


def _example_rng(seed: int, iteration: int, example_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(iteration), int(example_id))))


def generate_ood_samples(
    model: CnnClassifier,
    table: EmbeddingTable,
    vocab: Vocab,
    train_examples: list[LabeledExample],
    label_to_index: dict[str, int],
    config: GenerationConfig,
    iteration: int = 1,
    forbidden_sequences: set[tuple[int, ...]] | None = None,
) -> list[OodSample]:
    """One flipping pass over the in-domain training examples.

    For each sentence whose most important word is one of its class's core
    tokens, a replacement is drawn uniformly (per-example seeded stream)
    from the candidate list, and the flipped sentence is kept only if the
    model still classifies it as the source intent.  Sequences listed in
    ``forbidden_sequences`` (typically all current training sentences) and
    duplicates within the pass are dropped.
    """
    in_domain = [ex for ex in train_examples if ex.label in label_to_index]
    cache: dict[int, tuple[int, int]] = {}
    core = extract_core_tokens(
        model, in_domain, label_to_index, config.core_token_count, importance_cache=cache
    )
    core_sets = {label: {word for word, _ in ranked} for label, ranked in core.items()}

    forbidden = set(forbidden_sequences or ())
    forbidden.update(tuple(ex.tokens) for ex in train_examples)

    samples: list[OodSample] = []
    for ex in in_domain:
        position, word = cache[ex.example_id]
        if word not in core_sets[ex.label]:
            continue
        label_idx = label_to_index[ex.label]
        candidates = candidate_replacements(
            model, table, ex.tokens, label_idx, position, config
        )
        if not candidates:
            continue
        rng = _example_rng(config.seed, iteration, ex.example_id)
        replacement = candidates[int(rng.integers(len(candidates)))]
        flipped = list(ex.tokens)
        flipped[position] = replacement
        key = tuple(flipped)
        if key in forbidden:
            continue
        predicted = int(model.classify([flipped])[0])
        if predicted != label_idx:
            continue
        forbidden.add(key)
        words = list(ex.words)
        words[position] = vocab.id2word[replacement]
        samples.append(
            OodSample(
                tokens=flipped,
                words=words,
                source_example_id=ex.example_id,
                position=position,
                original_word=vocab.id2word[word],
                replacement_word=vocab.id2word[replacement],
                iteration=iteration,
                model_label=ex.label,
            )
        )
    logger.info("iteration %d: generated %d ood samples from %d in-domain examples",
                iteration, len(samples), len(in_domain))
    return samples


def export_samples_jsonl(samples: list[OodSample], path, ood_label: str) -> None:
    """Provenance-rich JSONL, loadable as a plain {"text", "label"} dataset."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "text": " ".join(s.words),
                "label": ood_label,
                "source_example_id": s.source_example_id,
                "position": s.position,
                "original_word": s.original_word,
                "replacement_word": s.replacement_word,
                "iteration": s.iteration,
                "model_label": s.model_label,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# adversarial variant


@dataclass
class FlipResult:
    tokens: list[int]
    position: int
    original_word: str
    replacement_word: str
    score: float
    prediction_changed: bool


def hotflip_attack(
    model: CnnClassifier,
    table: EmbeddingTable,
    vocab: Vocab,
    tokens: list[int],
    label: int,
    min_similarity: float,
) -> FlipResult | None:
    """Single-word substitution maximizing the first-order loss increase.

    Considers every non-reserved position and every pretrained-covered
    word with cosine(current, candidate) >= ``min_similarity``; ties break
    toward the lowest (position, word id).  Returns None when no pair is
    eligible.
    """
    if int(model.classify([list(tokens)])[0]) != label:
        raise ValueError("model does not classify the sentence as the given label")
    grad = model.input_gradient(list(tokens), label)
    eligible_words = np.nonzero(table.pretrained)[0]
    eligible_words = eligible_words[eligible_words >= NUM_RESERVED]

    best: tuple[float, int, int] | None = None
    for position, current in enumerate(tokens):
        if current < NUM_RESERVED:
            continue
        scores = model.vocab_scores(tokens, label, position, input_grad=grad)
        sims = table.cosine_to_row(current)
        for word_id in eligible_words:
            word_id = int(word_id)
            if word_id == current or sims[word_id] < min_similarity:
                continue
            gain = float(scores[word_id] - scores[current])
            if best is None or gain > best[0] or (
                gain == best[0] and (position, word_id) < (best[1], best[2])
            ):
                best = (gain, position, word_id)
    if best is None:
        return None
    gain, position, word_id = best
    flipped = list(tokens)
    flipped[position] = word_id
    changed = int(model.classify([flipped])[0]) != label
    return FlipResult(
        tokens=flipped,
        position=position,
        original_word=vocab.id2word[tokens[position]],
        replacement_word=vocab.id2word[word_id],
        score=gain,
        prediction_changed=changed,
    )
