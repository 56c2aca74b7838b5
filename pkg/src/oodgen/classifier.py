"""The convolutional intent classifier and its training loop.

The model embeds a padded token batch, runs parallel 1-D convolution
banks, ReLU, and a length-masked max-pool, concatenates the pooled
filters into one feature vector, and maps it to class logits.  Besides
parameter gradients, the backward pass keeps the gradient with respect
to each embedded input position, which the flip search consumes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .corpus import MASK_ID, PAD_ID, LabeledExample, pad_batch
from .optim import AdamState, adam_step, lr_schedule

logger = logging.getLogger(__name__)

LOSS_KINDS = ("softmax_ce", "sigmoid_bce", "lmcl")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    decay_rate: float = 0.8
    decay_every: int = 2
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    loss: str = "softmax_ce"
    kernel_widths: tuple[int, ...] = (2, 3, 4, 5)
    num_filters: int = 32
    embed_trainable: bool = False
    lmcl_scale: float = 30.0
    lmcl_margin: float = 0.35
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


class CnnClassifier:
    def __init__(self, embedding_matrix: np.ndarray, num_classes: int, config: TrainConfig):
        if num_classes < 1:
            raise ValueError("need at least one class")
        self.config = config
        self.num_classes = num_classes
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), 0xC4A)))

        emb = np.asarray(embedding_matrix, dtype=dtype).copy()
        # Reserved zero rows (PAD, MASK) stay pinned even in trainable mode.
        self.embedding = nn.Param(emb, trainable=config.embed_trainable, name="embedding")
        self.dim = emb.shape[1]
        self.vocab_size = emb.shape[0]
        self.min_len = max(config.kernel_widths)

        self.conv_w: list[nn.Param] = []
        self.conv_b: list[nn.Param] = []
        for width in config.kernel_widths:
            fan_in = width * self.dim
            limit = np.sqrt(6.0 / (fan_in + config.num_filters))
            w = rng.uniform(-limit, limit, size=(width, self.dim, config.num_filters))
            self.conv_w.append(nn.Param(w.astype(dtype), name=f"conv{width}_w"))
            self.conv_b.append(
                nn.Param(np.full(config.num_filters, 0.1, dtype=dtype), name=f"conv{width}_b")
            )
        self.feature_dim = len(config.kernel_widths) * config.num_filters

        if config.loss == "lmcl":
            limit = np.sqrt(6.0 / (self.feature_dim + num_classes))
            w = rng.uniform(-limit, limit, size=(num_classes, self.feature_dim))
            self.head_w = nn.Param(w.astype(dtype), name="head_w")
            self.head_b = None
        else:
            limit = np.sqrt(6.0 / (self.feature_dim + num_classes))
            w = rng.uniform(-limit, limit, size=(self.feature_dim, num_classes))
            self.head_w = nn.Param(w.astype(dtype), name="head_w")
            self.head_b = nn.Param(np.zeros(num_classes, dtype=dtype), name="head_b")

    # -- parameters ---------------------------------------------------------

    def params(self) -> list[nn.Param]:
        out = [self.embedding] + self.conv_w + self.conv_b + [self.head_w]
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def snapshot(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def restore(self, values: list[np.ndarray]):
        for p, v in zip(self.params(), values):
            p.value[...] = v

    def clone(self) -> "CnnClassifier":
        return copy.deepcopy(self)

    # -- forward / backward -------------------------------------------------

    def _valid_windows(self, lengths: np.ndarray, width: int, n_out: int) -> np.ndarray:
        # Window t is valid when it fits inside the sentence; sentences
        # shorter than the kernel keep their single left-aligned window.
        starts = np.arange(n_out)[None, :]
        last_valid = np.maximum(lengths - width, 0)[:, None]
        return starts <= last_valid

    def _forward(self, ids: np.ndarray, lengths: np.ndarray):
        x = nn.embedding_forward(self.embedding.value, ids)
        pooled, caches = [], []
        for w, b in zip(self.conv_w, self.conv_b):
            h, conv_cache = nn.conv1d_forward(x, w.value, b.value)
            a, relu_cache = nn.relu_forward(h)
            valid = self._valid_windows(lengths, w.value.shape[0], h.shape[1])
            p, pool_cache = nn.masked_max_pool_forward(a, valid)
            pooled.append(p)
            caches.append((conv_cache, relu_cache, pool_cache))
        feature = np.concatenate(pooled, axis=1)

        if self.config.loss == "lmcl":
            f_unit, _ = nn.normalize_rows(feature, "feature")
            w_unit, _ = nn.normalize_rows(self.head_w.value, "class weight")
            logits = self.config.lmcl_scale * (f_unit @ w_unit.T)
        else:
            logits, _ = nn.dense_forward(feature, self.head_w.value,
                                         self.head_b.value if self.head_b is not None else None)
        return x, feature, logits, caches

    def predict_logits(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Pre-softmax outputs; for the cosine head these are scaled cosines."""
        _, _, logits, _ = self._forward(ids, lengths)
        return logits

    def predict_features(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        _, feature, _, _ = self._forward(ids, lengths)
        return feature

    def forward_backward(
        self,
        ids: np.ndarray,
        lengths: np.ndarray,
        labels: np.ndarray,
        reduction: str = "mean",
        example_ids=None,
    ):
        """Compute the batch loss, accumulate parameter gradients, and
        return (loss, input_grads) where input_grads[r, i] = d(loss)/d(e_i)
        for row r (PAD positions zeroed)."""
        x = nn.embedding_forward(self.embedding.value, ids)
        pooled, caches = [], []
        for w, b in zip(self.conv_w, self.conv_b):
            h, conv_cache = nn.conv1d_forward(x, w.value, b.value)
            a, relu_cache = nn.relu_forward(h)
            valid = self._valid_windows(lengths, w.value.shape[0], h.shape[1])
            p, pool_cache = nn.masked_max_pool_forward(a, valid)
            pooled.append(p)
            caches.append((conv_cache, relu_cache, pool_cache))
        feature = np.concatenate(pooled, axis=1)

        if self.config.loss == "softmax_ce":
            logits, dense_cache = nn.dense_forward(feature, self.head_w.value, self.head_b.value)
            loss, d_logits = nn.softmax_cross_entropy(logits, labels, reduction)
            d_feature, d_w, d_b = nn.dense_backward(d_logits, dense_cache)
            self.head_w.accumulate(d_w)
            self.head_b.accumulate(d_b)
        elif self.config.loss == "sigmoid_bce":
            logits, dense_cache = nn.dense_forward(feature, self.head_w.value, self.head_b.value)
            loss, d_logits = nn.sigmoid_bce(logits, labels, reduction)
            d_feature, d_w, d_b = nn.dense_backward(d_logits, dense_cache)
            self.head_w.accumulate(d_w)
            self.head_b.accumulate(d_b)
        else:
            loss, d_feature, d_w, _ = nn.large_margin_cosine_loss(
                feature, self.head_w.value, labels,
                self.config.lmcl_scale, self.config.lmcl_margin, reduction,
            )
            self.head_w.accumulate(d_w)

        if not np.isfinite(loss):
            ids_note = f" (example ids {list(example_ids)})" if example_ids is not None else ""
            raise RuntimeError(f"non-finite loss {loss!r}{ids_note}")

        d_x = np.zeros_like(x)
        offset = 0
        for (w, b), (conv_cache, relu_cache, pool_cache) in zip(
            zip(self.conv_w, self.conv_b), caches
        ):
            n_f = self.config.num_filters
            d_pooled = d_feature[:, offset : offset + n_f]
            offset += n_f
            d_a = nn.masked_max_pool_backward(d_pooled, pool_cache)
            d_h = nn.relu_backward(d_a, relu_cache)
            d_xk, d_w, d_b = nn.conv1d_backward(d_h, conv_cache)
            w.accumulate(d_w)
            b.accumulate(d_b)
            d_x += d_xk

        if self.embedding.trainable:
            d_table = nn.embedding_backward(d_x, ids, self.vocab_size)
            d_table[PAD_ID] = 0.0
            d_table[MASK_ID] = 0.0
            self.embedding.accumulate(d_table)

        input_grads = d_x.copy()
        input_grads[ids == PAD_ID] = 0.0
        return loss, input_grads

    # -- convenience single-sentence views -----------------------------------

    def logits_for(self, token_lists: list[list[int]]) -> np.ndarray:
        ids, lengths = pad_batch(token_lists, self.min_len)
        return self.predict_logits(ids, lengths)

    def features_for(self, token_lists: list[list[int]]) -> np.ndarray:
        ids, lengths = pad_batch(token_lists, self.min_len)
        return self.predict_features(ids, lengths)

    def classify(self, token_lists: list[list[int]]) -> np.ndarray:
        return self.logits_for(token_lists).argmax(axis=1)

    def input_gradient(self, tokens: list[int], label: int) -> np.ndarray:
        """d(loss)/d(e_i) for one sentence, one row per position."""
        if not tokens:
            raise ValueError("empty sentence")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} outside 0..{self.num_classes - 1}")
        ids, lengths = pad_batch([list(tokens)], self.min_len)
        self.zero_grads()
        _, grads = self.forward_backward(ids, lengths, np.array([label]), reduction="sum")
        self.zero_grads()
        return grads[0, : len(tokens), :]

    def direction_score(self, tokens: list[int], label: int, position: int, candidate: int,
                        input_grad: np.ndarray | None = None) -> float:
        """First-order loss change from substituting ``candidate`` at
        ``position``: dot(e(candidate) - e(current), d loss / d e_position)."""
        if not 0 <= position < len(tokens):
            raise ValueError(f"position {position} outside the sentence")
        if candidate < 0 or candidate >= self.vocab_size:
            raise ValueError(f"candidate id {candidate} outside the vocabulary")
        g = input_grad if input_grad is not None else self.input_gradient(tokens, label)
        current = tokens[position]
        diff = self.embedding.value[candidate].astype(np.float64) - self.embedding.value[
            current
        ].astype(np.float64)
        return float(diff @ g[position].astype(np.float64))

    def vocab_scores(self, tokens: list[int], label: int, position: int,
                     input_grad: np.ndarray | None = None) -> np.ndarray:
        """Per-word first-order loss term E @ d(loss)/d(e_position).

        Differences of two entries give the substitution score, so the
        ascending order of this row is the ascending order of flips.
        """
        g = input_grad if input_grad is not None else self.input_gradient(tokens, label)
        return self.embedding.value.astype(np.float64) @ g[position].astype(np.float64)

    def add_class(self) -> "CnnClassifier":
        """Clone with one extra zero-initialized output class.

        The new row (and zero bias) leaves every existing logit unchanged,
        so in-domain predictions at initialization are preserved.
        """
        clone = self.clone()
        dtype = clone.head_w.value.dtype
        if clone.head_b is None:
            new_w = np.vstack([clone.head_w.value, np.zeros((1, clone.feature_dim), dtype=dtype)])
            clone.head_w = nn.Param(new_w, name="head_w")
        else:
            new_w = np.hstack([clone.head_w.value, np.zeros((clone.feature_dim, 1), dtype=dtype)])
            new_b = np.concatenate([clone.head_b.value, np.zeros(1, dtype=dtype)])
            clone.head_w = nn.Param(new_w, name="head_w")
            clone.head_b = nn.Param(new_b, name="head_b")
        clone.num_classes += 1
        return clone


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_accuracy: float
    lr: float


@dataclass
class TrainRecord:
    epochs: list[EpochStats] = field(default_factory=list)
    chosen_epoch: int = -1
    stop_reason: str = ""

    def best_dev_accuracy(self) -> float:
        return max(e.dev_accuracy for e in self.epochs)


def _accuracy(model: CnnClassifier, examples, label_to_index) -> float:
    correct = 0
    for start in range(0, len(examples), 256):
        chunk = examples[start : start + 256]
        preds = model.classify([ex.tokens for ex in chunk])
        truth = np.array([label_to_index[ex.label] for ex in chunk])
        correct += int((preds == truth).sum())
    return correct / len(examples)


def train_classifier(
    train: list[LabeledExample],
    dev: list[LabeledExample],
    label_to_index: dict[str, int],
    embedding_matrix: np.ndarray,
    config: TrainConfig,
    initial_model: CnnClassifier | None = None,
) -> tuple[CnnClassifier, TrainRecord]:
    """Train with Adam and stepped lr decay, early-stopping on dev accuracy.

    Returns the parameters of the best dev-accuracy epoch.  When
    ``initial_model`` is given, training continues from its weights
    instead of a fresh initialization.
    """
    if not train or not dev:
        raise ValueError("train and dev must both be nonempty")
    for ex in train + dev:
        if ex.label not in label_to_index:
            raise ValueError(f"example {ex.example_id} has unknown label {ex.label!r}")
        if ex.tokens is None:
            raise ValueError(f"example {ex.example_id} is not encoded")

    if initial_model is not None:
        if initial_model.num_classes != len(label_to_index):
            raise ValueError("initial model has the wrong number of classes")
        model = initial_model.clone()
    else:
        model = CnnClassifier(embedding_matrix, len(label_to_index), config)
    state = AdamState.for_params(model.params())
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), 0x5F)))

    record = TrainRecord()
    best_acc = -1.0
    best_values = model.snapshot()
    bad_epochs = 0

    for epoch in range(config.max_epochs):
        lr = lr_schedule(config.learning_rate, epoch, config.decay_rate, config.decay_every)
        order = shuffle_rng.permutation(len(train))
        total_loss = 0.0
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            ids, lengths = pad_batch([ex.tokens for ex in batch], model.min_len)
            labels = np.array([label_to_index[ex.label] for ex in batch])
            model.zero_grads()
            loss, _ = model.forward_backward(
                ids, lengths, labels, example_ids=[ex.example_id for ex in batch]
            )
            adam_step(model.params(), state, lr)
            total_loss += loss * len(batch)
        train_loss = total_loss / len(train)

        dev_acc = _accuracy(model, dev, label_to_index)
        if not np.isfinite(dev_acc):
            raise RuntimeError(
                f"dev accuracy became non-finite at epoch {epoch} (train loss {train_loss})"
            )
        record.epochs.append(EpochStats(epoch, train_loss, dev_acc, lr))

        if dev_acc > best_acc:
            best_acc = dev_acc
            best_values = model.snapshot()
            record.chosen_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                record.stop_reason = f"dev accuracy flat for {config.patience} epochs"
                break
    else:
        record.stop_reason = f"epoch cap {config.max_epochs}"

    model.restore(best_values)
    logger.debug(
        "training stopped: %s (best dev %.4f at epoch %d)",
        record.stop_reason, best_acc, record.chosen_epoch,
    )
    return model, record


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(model: CnnClassifier, path, vocab_hash: str = "") -> None:
    """Self-describing container: parameter arrays plus a JSON header."""
    meta = {
        "num_classes": model.num_classes,
        "config": asdict(model.config),
        "config_hash": config_hash(model.config),
        "vocab_hash": vocab_hash,
        "param_names": [p.name for p in model.params()],
    }
    arrays = {f"param_{i}": p.value for i, p in enumerate(model.params())}
    np.savez(path, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> tuple[CnnClassifier, dict]:
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        cfg_dict = dict(meta["config"])
        cfg_dict["kernel_widths"] = tuple(cfg_dict["kernel_widths"])
        config = TrainConfig(**cfg_dict)
        values = [blob[f"param_{i}"] for i in range(len(meta["param_names"]))]
    embedding = values[0]
    model = CnnClassifier(embedding, meta["num_classes"], config)
    model.restore(values)
    return model, meta
