"""Central finite-difference validation of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .classifier import CnnClassifier
from .corpus import pad_batch


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| over max(|a|, |n|, floor).

    The floor keeps vanishing derivatives from blowing up the ratio; for
    gradients of ordinary magnitude it is the plain relative error.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def batch_loss(model: CnnClassifier, ids, lengths, labels) -> float:
    loss, _ = _loss_only(model, ids, lengths, labels)
    return loss


def _loss_only(model, ids, lengths, labels):
    model.zero_grads()
    loss, grads = model.forward_backward(ids, lengths, labels)
    return loss, grads


def finite_diff_check(
    model: CnnClassifier,
    batch_tokens: list[list[int]],
    labels,
    eps: float = 1e-5,
    num_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``num_samples`` scalar coordinates across all trainable
    parameters (frozen parameters are excluded; their gradient is asserted
    to be exactly zero).  Requires a float64 model.
    """
    if np.dtype(model.config.dtype) != np.float64:
        raise ValueError("gradient checking requires a float64 model")
    ids, lengths = pad_batch(batch_tokens, model.min_len)
    labels = np.asarray(labels)

    model.zero_grads()
    _, _ = model.forward_backward(ids, lengths, labels)
    analytic = [p.grad.copy() for p in model.params()]
    for p, g in zip(model.params(), analytic):
        if not p.trainable and np.any(g != 0.0):
            raise AssertionError(f"frozen param {p.name} accumulated a gradient")
    model.zero_grads()

    coords = []
    for pi, p in enumerate(model.params()):
        if p.trainable:
            coords.extend((pi, j) for j in range(p.value.size))
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xFD)))
    if len(coords) > num_samples:
        picked = rng.choice(len(coords), size=num_samples, replace=False)
        coords = [coords[int(i)] for i in picked]

    params = model.params()
    worst = 0.0
    for pi, j in coords:
        flat = params[pi].value.reshape(-1)
        original = flat[j]
        flat[j] = original + eps
        up = batch_loss(model, ids, lengths, labels)
        flat[j] = original - eps
        down = batch_loss(model, ids, lengths, labels)
        flat[j] = original
        numeric = (up - down) / (2.0 * eps)
        worst = max(worst, relative_error(analytic[pi].reshape(-1)[j], numeric))
    model.zero_grads()
    return worst
