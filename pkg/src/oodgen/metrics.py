"""Macro-F1 scoring under the collapsed-OOD protocol."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import OOD_LABEL
from .detectors import Decision


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    true_count: int
    predicted_count: int


@dataclass
class EvalReport:
    per_class: dict[str, ClassScores]
    macro_f1: float
    accuracy: float
    num_examples: int

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "num_examples": self.num_examples,
            "per_class": {
                label: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "true_count": s.true_count,
                    "predicted_count": s.predicted_count,
                }
                for label, s in sorted(self.per_class.items())
            },
        }


def collapse_truth(label: str, known_labels) -> str:
    return label if label in known_labels else OOD_LABEL


def decisions_to_labels(decisions: list[Decision]) -> list[str]:
    return [OOD_LABEL if d.reject else d.label for d in decisions]


def macro_f1_report(
    predictions: list[str], truths: list[str], known_labels
) -> EvalReport:
    """Per-class precision/recall/F1 and their unweighted mean.

    The class universe is the known labels plus a single OOD class; every
    truth outside the known set collapses to OOD, as does every rejection.
    Degenerate 0/0 ratios count as 0.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must have equal length")
    known = set(known_labels)
    universe = sorted(known) + [OOD_LABEL]
    preds = [p if (p in known or p == OOD_LABEL) else OOD_LABEL for p in predictions]
    trues = [collapse_truth(t, known) for t in truths]

    per_class: dict[str, ClassScores] = {}
    correct = 0
    for label in universe:
        tp = fp = fn = 0
        for p, t in zip(preds, trues):
            if p == label and t == label:
                tp += 1
            elif p == label:
                fp += 1
            elif t == label:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassScores(precision, recall, f1, tp + fn, tp + fp)
    correct = sum(p == t for p, t in zip(preds, trues))
    macro = sum(s.f1 for s in per_class.values()) / len(universe)
    accuracy = correct / len(trues) if trues else 0.0
    return EvalReport(per_class, macro, accuracy, len(trues))
