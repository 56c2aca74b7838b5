"""Intent datasets, vocabulary, and the known-intent evaluation protocol.

All record formats are converted to a single in-memory shape: whitespace
tokenized, lowercased sentences carrying a string intent label.  Splitting
and label selection are pure functions of their inputs and a seed.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
MASK = "<mask>"
PAD_ID = 0
UNK_ID = 1
MASK_ID = 2
RESERVED_TOKENS = (PAD, UNK, MASK)
NUM_RESERVED = 3

#: Label under which every rejected / out-of-domain example is collapsed.
OOD_LABEL = "__ood__"

#: Sentences are padded to at least this many tokens so every convolution
#: bank has at least one window.
MIN_SENTENCE_LEN = 5

FORMATS = ("jsonl", "tsv", "atis-layout", "snips-layout")


def round_half_up(x: float) -> int:
    """Round to the nearest integer, with .5 always rounding up."""
    return int(math.floor(x + 0.5))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class LabeledExample:
    example_id: int
    words: list[str]
    label: str
    tokens: list[int] | None = None


@dataclass
class Dataset:
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample]
    labels: list[str]

    def split(self, name: str) -> list[LabeledExample]:
        return getattr(self, name)

    def label_counts(self, split: str = "train") -> Counter:
        return Counter(ex.label for ex in self.split(split))

    def encoded(self, vocab: "Vocab") -> "Dataset":
        """Return a copy with token ids filled in (OOV words map to UNK)."""

        def enc(examples):
            return [replace(ex, tokens=vocab.encode(ex.words)) for ex in examples]

        return Dataset(enc(self.train), enc(self.dev), enc(self.test), list(self.labels))

    def summary(self) -> str:
        return (
            f"{len(self.train)} train / {len(self.dev)} dev / "
            f"{len(self.test)} test, {len(self.labels)} classes"
        )


class Vocab:
    """Word/id table with reserved PAD, UNK and MASK entries.

    Non-reserved ids start at ``NUM_RESERVED`` and follow the insertion
    order handed to the constructor.
    """

    def __init__(self, words: list[str]):
        self.id2word: list[str] = list(RESERVED_TOKENS) + list(words)
        self.word2id: dict[str, int] = {w: i for i, w in enumerate(self.id2word)}
        if len(self.word2id) != len(self.id2word):
            dupes = [w for w, n in Counter(self.id2word).items() if n > 1]
            raise ValueError(f"duplicate vocabulary entries: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.id2word)

    def __contains__(self, word: str) -> bool:
        return word in self.word2id

    def is_reserved(self, word_id: int) -> bool:
        return word_id < NUM_RESERVED

    def encode(self, words: list[str]) -> list[int]:
        return [self.word2id.get(w, UNK_ID) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.id2word[int(i)] for i in ids]

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.id2word).encode("utf-8")).hexdigest()


def build_vocab(train: list[LabeledExample], pretrained_words: set[str] | None = None) -> Vocab:
    """Vocabulary over every training word, most frequent first.

    Ties are broken lexicographically so two runs over the same corpus
    assign identical ids.  ``pretrained_words`` is only used to log the
    expected embedding coverage ahead of the actual load.
    """
    if not train:
        raise ValueError("cannot build a vocabulary from an empty training split")
    counts = Counter(w for ex in train for w in ex.words)
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    vocab = Vocab(ordered)
    if pretrained_words is not None:
        covered = sum(1 for w in ordered if w in pretrained_words)
        logger.info(
            "vocab size %d (+%d reserved), expected embedding coverage %.3f",
            len(ordered), NUM_RESERVED, covered / len(ordered),
        )
    else:
        logger.info("vocab size %d (+%d reserved)", len(ordered), NUM_RESERVED)
    return vocab


# ---------------------------------------------------------------------------
# loading


def _records_to_examples(records, start_id):
    examples = []
    next_id = start_id
    for text, label in records:
        examples.append(LabeledExample(next_id, tokenize(text), label))
        next_id += 1
    return examples, next_id


def _read_jsonl(path: Path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise ValueError(f"{path}:{lineno}: record must carry 'text' and 'label'")
            if not str(obj["text"]).strip():
                raise ValueError(f"{path}:{lineno}: empty text")
            records.append((str(obj["text"]), str(obj["label"])))
    return records


def _read_tsv(path: Path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'text<TAB>label'")
            records.append((parts[0], parts[1]))
    return records


def _first_label(raw: str) -> tuple[str, bool]:
    # Multi-label records ("a#b") keep the first label only.
    if "#" in raw:
        return raw.split("#")[0], True
    return raw, False


def _read_seq_label_dir(split_dir: Path):
    seq_path = split_dir / "seq.in"
    label_path = split_dir / "label"
    with open(seq_path, "r", encoding="utf-8") as fh:
        texts = [line.rstrip("\n") for line in fh]
    with open(label_path, "r", encoding="utf-8") as fh:
        labels = [line.strip() for line in fh]
    if len(texts) != len(labels):
        raise ValueError(
            f"{split_dir}: seq.in has {len(texts)} lines but label has {len(labels)}"
        )
    records = []
    multi = 0
    for lineno, (text, raw_label) in enumerate(zip(texts, labels), start=1):
        if not text.strip():
            raise ValueError(f"{seq_path}:{lineno}: empty utterance")
        if not raw_label:
            raise ValueError(f"{label_path}:{lineno}: empty label")
        label, was_multi = _first_label(raw_label)
        multi += was_multi
        records.append((text, label))
    if multi:
        logger.warning("%s: %d multi-label records, kept the first label of each", split_dir, multi)
    return records


def _load_split_files(path: Path, suffix: str, reader):
    """Resolve a single file or a train/dev/test directory."""
    path = Path(path)
    if path.is_file():
        return {"train": reader(path)}
    splits = {}
    for split in ("train", "dev", "test"):
        candidate = path / f"{split}{suffix}"
        if candidate.exists():
            splits[split] = reader(candidate)
    # "valid" is a common alias for the dev file
    valid = path / f"valid{suffix}"
    if "dev" not in splits and valid.exists():
        splits["dev"] = reader(valid)
    if "train" not in splits:
        raise ValueError(f"{path}: no train{suffix} found")
    return splits


def _load_atis_layout(path: Path):
    path = Path(path)
    splits = {}
    for split, aliases in (("train", ("train",)), ("dev", ("dev", "valid")), ("test", ("test",))):
        for alias in aliases:
            split_dir = path / alias
            if (split_dir / "seq.in").exists():
                splits[split] = _read_seq_label_dir(split_dir)
                break
    if "train" not in splits:
        raise ValueError(f"{path}: expected <split>/seq.in and <split>/label files")
    return splits


def _load_snips_layout(path: Path):
    path = Path(path)
    train, dev = [], []
    for json_path in sorted(path.glob("*.json")):
        name = json_path.name
        if name.startswith("train_"):
            bucket, intent = train, name[len("train_"):].removesuffix(".json").removesuffix("_full")
        elif name.startswith("validate_"):
            bucket, intent = dev, name[len("validate_"):].removesuffix(".json")
        else:
            continue
        with open(json_path, "r", encoding="utf-8", errors="replace") as fh:
            payload = json.load(fh)
        if intent not in payload:
            raise ValueError(f"{json_path}: expected top-level key {intent!r}")
        for item in payload[intent]:
            text = "".join(chunk.get("text", "") for chunk in item.get("data", []))
            if not text.strip():
                raise ValueError(f"{json_path}: utterance with empty text under {intent!r}")
            bucket.append((text, intent))
    if not train:
        raise ValueError(f"{path}: no train_<Intent>*.json files found")
    return {"train": train, "dev": dev}


def load_dataset(path, fmt: str) -> Dataset:
    """Load a dataset in one of the supported on-disk layouts.

    jsonl / tsv accept either a single file (all records become the train
    split) or a directory holding train/dev/test files.  atis-layout wants
    per-split directories with parallel seq.in + label files; snips-layout
    wants the per-intent train_*/validate_* JSON files.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if fmt == "jsonl":
        split_records = _load_split_files(path, ".jsonl", _read_jsonl)
    elif fmt == "tsv":
        split_records = _load_split_files(path, ".tsv", _read_tsv)
    elif fmt == "atis-layout":
        split_records = _load_atis_layout(path)
    else:
        split_records = _load_snips_layout(path)

    next_id = 0
    splits = {}
    for split in ("train", "dev", "test"):
        splits[split], next_id = _records_to_examples(split_records.get(split, []), next_id)
    if not splits["train"]:
        raise ValueError(f"{path}: dataset has no training examples")
    labels = sorted({ex.label for s in splits.values() for ex in s})
    dataset = Dataset(splits["train"], splits["dev"], splits["test"], labels)
    logger.info("loaded %s (%s): %s", path, fmt, dataset.summary())
    return dataset


# ---------------------------------------------------------------------------
# splitting and label selection


def make_test_split(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Move a per-label fraction of the training examples into a test split.

    The draw is stratified: every label contributes round(ratio * count)
    examples, clamped so both sides stay nonempty.
    """
    if dataset.test:
        raise ValueError("dataset already has a test split")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_label: dict[str, list[LabeledExample]] = {}
    for ex in dataset.train:
        by_label.setdefault(ex.label, []).append(ex)
    for label, members in sorted(by_label.items()):
        if len(members) < 2:
            raise ValueError(f"label {label!r} has {len(members)} training example(s); need >= 2")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x7E57)))
    test, test_ids = [], set()
    for label, members in sorted(by_label.items()):
        n_test = min(len(members) - 1, max(1, round_half_up(ratio * len(members))))
        chosen = rng.choice(len(members), size=n_test, replace=False)
        for i in sorted(int(c) for c in chosen):
            test.append(members[i])
            test_ids.add(members[i].example_id)
    train = [ex for ex in dataset.train if ex.example_id not in test_ids]
    return Dataset(train, list(dataset.dev), test, list(dataset.labels))


def make_dev_split(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Carve a stratified dev split out of the train split (same rules as
    ``make_test_split``); only valid when the dataset has no dev yet."""
    if dataset.dev:
        raise ValueError("dataset already has a dev split")
    shuffled = make_test_split(
        Dataset(dataset.train, [], [], dataset.labels), ratio, seed
    )
    return Dataset(shuffled.train, shuffled.test, list(dataset.test), list(dataset.labels))


@dataclass
class KnownIntentSelection:
    seed: int
    fraction: float
    known_labels: list[str]
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample]


def select_known_intents(dataset: Dataset, fraction: float, seed: int) -> KnownIntentSelection:
    """Pick a subset of intents to keep during training.

    Labels are drawn sequentially without replacement, each draw weighted
    by the label's training-example count.  Examples of unselected labels
    are dropped from train and dev; the test split keeps every label.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    labels = sorted(dataset.labels)
    counts = dataset.label_counts("train")
    k = max(1, round_half_up(fraction * len(labels)))
    k = min(k, len(labels))
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5E1)))
    remaining = list(labels)
    known = []
    for _ in range(k):
        weights = np.array([counts.get(lab, 0) for lab in remaining], dtype=np.float64)
        if weights.sum() <= 0:
            weights = np.ones(len(remaining))
        probs = weights / weights.sum()
        pick = int(rng.choice(len(remaining), p=probs))
        known.append(remaining.pop(pick))
    known_set = set(known)
    train = [ex for ex in dataset.train if ex.label in known_set]
    dev = [ex for ex in dataset.dev if ex.label in known_set]
    return KnownIntentSelection(seed, fraction, sorted(known), train, dev, list(dataset.test))


def subsample_per_label(
    examples: list[LabeledExample], max_per_label: int, seed: int
) -> list[LabeledExample]:
    """Cap each label at ``max_per_label`` examples (for desk-scale runs)."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5AB)))
    by_label: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        by_label.setdefault(ex.label, []).append(ex)
    kept = []
    for label in sorted(by_label):
        members = by_label[label]
        if len(members) <= max_per_label:
            kept.extend(members)
        else:
            idx = rng.choice(len(members), size=max_per_label, replace=False)
            kept.extend(members[int(i)] for i in sorted(idx))
    kept.sort(key=lambda ex: ex.example_id)
    return kept


def pad_batch(token_lists: list[list[int]], min_len: int = MIN_SENTENCE_LEN):
    """Right-pad token id lists with PAD into a (batch, time) array."""
    if not token_lists:
        raise ValueError("empty batch")
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    if lengths.min() == 0:
        raise ValueError("empty sentence in batch")
    width = max(int(lengths.max()), min_len)
    ids = np.full((len(token_lists), width), PAD_ID, dtype=np.int64)
    for row, toks in enumerate(token_lists):
        ids[row, : len(toks)] = toks
    return ids, lengths
