"""Array-level building blocks with hand-written backward passes.

Each primitive is a pair of free functions, ``*_forward`` returning
(output, cache) and ``*_backward`` consuming the upstream gradient plus
that cache.  Everything runs in whatever float dtype the inputs carry;
gradient checking is done in float64.
"""

from __future__ import annotations

import numpy as np


class Param:
    """An array with an accumulated gradient and a trainable flag."""

    __slots__ = ("value", "grad", "trainable", "name")

    def __init__(self, value, trainable: bool = True, name: str = ""):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = bool(trainable)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def accumulate(self, g):
        # Frozen params keep an exactly-zero gradient.
        if self.trainable:
            self.grad += g

    def __repr__(self):
        return f"Param({self.name or 'unnamed'}, shape={self.value.shape}, trainable={self.trainable})"


# ---------------------------------------------------------------------------
# layers


def embedding_forward(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return table[ids]


def embedding_backward(d_out: np.ndarray, ids: np.ndarray, vocab_size: int) -> np.ndarray:
    dim = d_out.shape[-1]
    d_table = np.zeros((vocab_size, dim), dtype=d_out.dtype)
    np.add.at(d_table, ids.reshape(-1), d_out.reshape(-1, dim))
    return d_table


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Valid 1-D convolution over the time axis.

    x: (batch, time, dim), w: (width, dim, filters), b: (filters,).
    Output has time' = time - width + 1 positions.
    """
    batch, time, dim = x.shape
    width, _, filters = w.shape
    n_out = time - width + 1
    if n_out < 1:
        raise ValueError(f"sequence of length {time} too short for kernel width {width}")
    windows = np.stack([x[:, j : j + n_out, :] for j in range(width)], axis=2)
    cols = windows.reshape(batch, n_out, width * dim)
    out = cols @ w.reshape(width * dim, filters) + b
    return out, (cols, x.shape, w)


def conv1d_backward(d_out: np.ndarray, cache):
    cols, x_shape, w = cache
    batch, time, dim = x_shape
    width, _, filters = w.shape
    n_out = time - width + 1
    d_w = (cols.reshape(-1, width * dim).T @ d_out.reshape(-1, filters)).reshape(w.shape)
    d_b = d_out.sum(axis=(0, 1))
    d_cols = (d_out @ w.reshape(width * dim, filters).T).reshape(batch, n_out, width, dim)
    d_x = np.zeros(x_shape, dtype=d_out.dtype)
    for j in range(width):
        d_x[:, j : j + n_out, :] += d_cols[:, :, j, :]
    return d_x, d_w, d_b


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return d_out * (x > 0)


def masked_max_pool_forward(x: np.ndarray, valid: np.ndarray):
    """Max over the time axis, restricted to valid window positions.

    x: (batch, time', filters); valid: (batch, time') bool with at least
    one True per row.  Ties go to the lowest index so the backward pass is
    deterministic.
    """
    if not valid.any(axis=1).all():
        raise ValueError("a row has no valid pooling window")
    masked = np.where(valid[:, :, None], x, -np.inf)
    arg = masked.argmax(axis=1)
    out = np.take_along_axis(masked, arg[:, None, :], axis=1)[:, 0, :]
    return out, (arg, x.shape)


def masked_max_pool_backward(d_out: np.ndarray, cache) -> np.ndarray:
    arg, shape = cache
    d_x = np.zeros(shape, dtype=d_out.dtype)
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[2])[None, :]
    d_x[rows, arg, cols] = d_out
    return d_x


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w)


def dense_backward(d_out: np.ndarray, cache):
    x, w = cache
    d_x = d_out @ w.T
    d_w = x.T @ d_out
    d_b = d_out.sum(axis=0)
    return d_x, d_w, d_b


# ---------------------------------------------------------------------------
# losses

REDUCTIONS = ("mean", "sum")


def _check_reduction(reduction):
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, reduction: str = "mean"):
    """Mean (or summed) negative log-likelihood and its logit gradient."""
    _check_reduction(reduction)
    batch = logits.shape[0]
    logp = log_softmax(logits)
    nll = -logp[np.arange(batch), labels]
    d_logits = softmax(logits)
    d_logits[np.arange(batch), labels] -= 1.0
    if reduction == "mean":
        return float(nll.mean()), d_logits / batch
    return float(nll.sum()), d_logits


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bce(logits: np.ndarray, labels: np.ndarray, reduction: str = "mean"):
    """One-vs-rest binary cross entropy from logits against one-hot targets.

    The per-example loss sums over classes; the batch contribution follows
    ``reduction``.
    """
    _check_reduction(reduction)
    batch, n_classes = logits.shape
    targets = np.zeros_like(logits)
    targets[np.arange(batch), labels] = 1.0
    # max(z,0) - z*t + log(1 + exp(-|z|)) is the stable form of the BCE.
    per_elem = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    d_logits = sigmoid(logits) - targets
    if reduction == "mean":
        return float(per_elem.sum() / batch), d_logits / batch
    return float(per_elem.sum()), d_logits


def normalize_rows(x: np.ndarray, what: str = "row"):
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        bad = int(np.nonzero(norms[:, 0] == 0)[0][0])
        raise ValueError(f"zero-norm {what} at index {bad}")
    return x / norms, norms


def normalize_rows_backward(d_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/dv of v/|v| applied to the upstream gradient.
    inner = (d_unit * unit).sum(axis=1, keepdims=True)
    return (d_unit - inner * unit) / norms


def large_margin_cosine_loss(
    features: np.ndarray,
    weights: np.ndarray,
    labels: np.ndarray,
    scale: float,
    margin: float,
    reduction: str = "mean",
):
    """Softmax cross entropy over scaled cosines with a truth-class margin.

    Features and class-weight rows are L2-normalized, so the loss is
    invariant to positive rescaling of either.  Returns
    (loss, d_features, d_weights, cosines).
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must be in [0, 1)")
    f_unit, f_norms = normalize_rows(features, "feature")
    w_unit, w_norms = normalize_rows(weights, "class weight")
    cos = f_unit @ w_unit.T
    batch = features.shape[0]
    logits = scale * cos
    logits[np.arange(batch), labels] = scale * (cos[np.arange(batch), labels] - margin)
    loss, d_logits = softmax_cross_entropy(logits, labels, reduction)
    d_cos = scale * d_logits
    d_f_unit = d_cos @ w_unit
    d_w_unit = d_cos.T @ f_unit
    d_features = normalize_rows_backward(d_f_unit, f_unit, f_norms)
    d_weights = normalize_rows_backward(d_w_unit, w_unit, w_norms)
    return loss, d_features, d_weights, cos
