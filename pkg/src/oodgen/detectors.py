"""Out-of-domain decision layers over a trained classifier.

Three rejection mechanisms (max softmax probability, per-class sigmoid
thresholds, local outlier factor over stored features) plus the
composition rule for models that carry an explicit OOD output class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn

logger = logging.getLogger(__name__)


@dataclass
class Decision:
    label: str | None
    reject: bool
    score: float
    detector: str


@dataclass(frozen=True)
class DetectorConfig:
    msp_threshold: float = 0.5
    doc_alpha: float = 3.0
    doc_min_examples: int = 3
    lof_neighbors: int = 20
    lof_threshold: float = 1.5


# ---------------------------------------------------------------------------
# max softmax probability


def msp_decide(logits: np.ndarray, label_names: list[str], threshold: float = 0.5) -> Decision:
    """Reject when the top softmax probability falls below the threshold.

    A score exactly at the threshold is accepted (strictly-below rejects).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("need at least two logits")
    probs = nn.softmax(logits[None, :])[0]
    top = int(probs.argmax())
    score = float(probs[top])
    if score < threshold:
        return Decision(None, True, score, "msp")
    return Decision(label_names[top], False, score, "msp")


# ---------------------------------------------------------------------------
# per-class sigmoid thresholds


@dataclass
class DocThresholds:
    thresholds: np.ndarray  # one per class, in [0.5, 1)
    alpha: float


def fit_doc_thresholds(
    scores_per_class: list[np.ndarray], alpha: float = 3.0, min_examples: int = 3
) -> DocThresholds:
    """Per-class threshold 1 - alpha*sigma from mirrored sigmoid scores.

    Each class's training scores p are mirrored around 1 (adding 2 - p) and
    sigma is the population standard deviation of that symmetric set, i.e.
    sqrt(mean((1 - p)^2)).  Thresholds clamp into [0.5, 1).
    """
    thresholds = np.empty(len(scores_per_class))
    for i, scores in enumerate(scores_per_class):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size < min_examples:
            logger.warning("class %d has %d scored examples; threshold falls back to 0.5",
                           i, scores.size)
            thresholds[i] = 0.5
            continue
        mirrored = np.concatenate([scores, 2.0 - scores])
        sigma = float(np.sqrt(np.mean((mirrored - 1.0) ** 2)))
        thresholds[i] = min(1.0 - 1e-6, max(0.5, 1.0 - alpha * sigma))
    return DocThresholds(thresholds, alpha)


def doc_fit(model, train_examples, label_to_index: dict[str, int],
            alpha: float = 3.0, min_examples: int = 3) -> DocThresholds:
    """Collect each training example's own-class sigmoid score and fit."""
    if model.config.loss != "sigmoid_bce":
        raise ValueError("per-class thresholds require a sigmoid-trained model")
    n_classes = len(label_to_index)
    per_class: list[list[float]] = [[] for _ in range(n_classes)]
    for start in range(0, len(train_examples), 256):
        chunk = train_examples[start : start + 256]
        logits = model.logits_for([ex.tokens for ex in chunk])
        probs = nn.sigmoid(logits.astype(np.float64))
        for row, ex in zip(probs, chunk):
            idx = label_to_index[ex.label]
            per_class[idx].append(float(row[idx]))
    return fit_doc_thresholds([np.array(s) for s in per_class], alpha, min_examples)


def doc_decide(sigmoid_scores: np.ndarray, thresholds: DocThresholds,
               label_names: list[str]) -> Decision:
    """Reject unless some class clears its threshold; else best passing class."""
    scores = np.asarray(sigmoid_scores, dtype=np.float64)
    if scores.shape[0] != thresholds.thresholds.shape[0]:
        raise ValueError("score/threshold length mismatch")
    passing = scores >= thresholds.thresholds
    if not passing.any():
        return Decision(None, True, float(scores.max()), "doc")
    masked = np.where(passing, scores, -np.inf)
    top = int(masked.argmax())
    return Decision(label_names[top], False, float(scores[top]), "doc")


# ---------------------------------------------------------------------------
# local outlier factor


@dataclass
class LofModel:
    points: np.ndarray          # fitted feature vectors
    k: int
    k_distance: np.ndarray      # per fitted point
    neighborhoods: list[np.ndarray]
    lrd: np.ndarray             # local reachability density per fitted point
    density_floor: float = 1e-12


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def lof_fit(features: np.ndarray, k: int) -> LofModel:
    """Standard LOF fit with tie-inclusive k-distance neighborhoods."""
    points = np.asarray(features, dtype=np.float64)
    n = points.shape[0]
    if not 0 < k < n:
        raise ValueError(f"need k in [1, n-1]; got k={k}, n={n}")
    dists = _pairwise_distances(points, points)
    np.fill_diagonal(dists, np.inf)
    sorted_d = np.sort(dists, axis=1)
    k_distance = sorted_d[:, k - 1]
    neighborhoods = [np.nonzero(dists[i] <= k_distance[i])[0] for i in range(n)]

    floor = LofModel.density_floor
    lrd = np.empty(n)
    for i, hood in enumerate(neighborhoods):
        reach = np.maximum(k_distance[hood], dists[i, hood])
        lrd[i] = 1.0 / max(reach.mean(), floor)
    return LofModel(points, k, k_distance, neighborhoods, lrd)


def lof_score(model: LofModel, feature: np.ndarray) -> float:
    """Outlier factor of a query point against the fitted set.

    Mean ratio of the neighbors' reachability densities to the query's
    own; values near 1 are inliers.
    """
    q = np.asarray(feature, dtype=np.float64)
    diff = model.points - q[None, :]
    dists = np.sqrt((diff * diff).sum(axis=1))
    order = np.sort(dists)
    k_dist = order[model.k - 1]
    hood = np.nonzero(dists <= k_dist)[0]
    reach = np.maximum(model.k_distance[hood], dists[hood])
    lrd_q = 1.0 / max(reach.mean(), model.density_floor)
    return float(model.lrd[hood].mean() / lrd_q)


def lof_scores(model: LofModel, features: np.ndarray) -> np.ndarray:
    return np.array([lof_score(model, f) for f in np.asarray(features, dtype=np.float64)])


def normalize_features(features: np.ndarray) -> np.ndarray:
    unit, _ = nn.normalize_rows(np.asarray(features, dtype=np.float64), "feature")
    return unit


# ---------------------------------------------------------------------------
# fitted detector objects and composition


class FittedDetector:
    """A rejection rule over (in-domain logits, feature vector) pairs."""

    kind: str

    def decide(self, logits: np.ndarray, feature: np.ndarray) -> Decision:
        raise NotImplementedError

    def metadata(self) -> dict:
        """Fitted state worth recording in experiment reports."""
        return {}


class MspDetector(FittedDetector):
    kind = "msp"

    def __init__(self, label_names: list[str], threshold: float = 0.5):
        self.label_names = list(label_names)
        self.threshold = threshold

    def decide(self, logits, feature):
        return msp_decide(logits, self.label_names, self.threshold)

    def metadata(self):
        return {"threshold": self.threshold}


class DocDetector(FittedDetector):
    kind = "doc"

    def __init__(self, thresholds: DocThresholds, label_names: list[str]):
        self.thresholds = thresholds
        self.label_names = list(label_names)

    def decide(self, logits, feature):
        scores = nn.sigmoid(np.asarray(logits, dtype=np.float64))
        return doc_decide(scores, self.thresholds, self.label_names)

    def metadata(self):
        return {
            "alpha": self.thresholds.alpha,
            "per_class_thresholds": {
                label: float(t)
                for label, t in zip(self.label_names, self.thresholds.thresholds)
            },
        }


class LofDetector(FittedDetector):
    kind = "lmcl_lof"

    def __init__(self, lof: LofModel, label_names: list[str], threshold: float = 1.5):
        self.lof = lof
        self.label_names = list(label_names)
        self.threshold = threshold

    def decide(self, logits, feature):
        unit = np.asarray(feature, dtype=np.float64)
        norm = np.sqrt(unit @ unit)
        if norm == 0:
            return Decision(None, True, np.inf, self.kind)
        score = lof_score(self.lof, unit / norm)
        if score > self.threshold:
            return Decision(None, True, score, self.kind)
        top = int(np.asarray(logits).argmax())
        return Decision(self.label_names[top], False, score, self.kind)

    def metadata(self):
        return {
            "neighbors": self.lof.k,
            "stored_points": int(self.lof.points.shape[0]),
            "threshold": self.threshold,
        }


class ArgmaxDetector(FittedDetector):
    """No extra rejection: accept the argmax over the given logits."""

    kind = "argmax"

    def __init__(self, label_names: list[str]):
        self.label_names = list(label_names)

    def decide(self, logits, feature):
        logits = np.asarray(logits, dtype=np.float64)
        top = int(logits.argmax())
        return Decision(self.label_names[top], False, float(logits[top]), self.kind)


def composed_decide(
    logits: np.ndarray,
    feature: np.ndarray,
    detector: FittedDetector,
    num_known: int,
    ood_softmax_score: float | None = None,
) -> Decision:
    """Decision for a model carrying a reserved OOD class as its last logit.

    If the full argmax lands on the OOD class the input is rejected
    outright; otherwise the wrapped detector rules on the in-domain logits
    and feature.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] != num_known + 1:
        raise ValueError("expected one logit per known class plus the OOD class")
    if int(logits.argmax()) == num_known:
        score = ood_softmax_score
        if score is None:
            score = float(nn.softmax(logits[None, :])[0, num_known])
        return Decision(None, True, score, f"ood+{detector.kind}")
    inner = detector.decide(logits[:num_known], feature)
    if inner.reject:
        return Decision(None, True, inner.score, f"ood+{detector.kind}")
    return Decision(inner.label, False, inner.score, f"ood+{detector.kind}")
