"""Experiment harness: the iterative generation loop, the known-intent
benchmark grid, parameter sweeps, and the cross-model transfer study.

Every run is a pure function of its configuration dataclasses plus the
dataset, and every report embeds a fingerprint of that configuration so
reruns can be checked byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .classifier import CnnClassifier, TrainConfig, TrainRecord, train_classifier
from .corpus import (
    OOD_LABEL,
    Dataset,
    KnownIntentSelection,
    LabeledExample,
    Vocab,
    round_half_up,
    select_known_intents,
    subsample_per_label,
)
from .detectors import (
    ArgmaxDetector,
    DetectorConfig,
    DocDetector,
    FittedDetector,
    LofDetector,
    MspDetector,
    composed_decide,
    doc_fit,
    lof_fit,
    normalize_features,
)
from .embeddings import EmbeddingTable
from .generation import GenerationConfig, OodSample, generate_ood_samples
from .metrics import EvalReport, decisions_to_labels, macro_f1_report

logger = logging.getLogger(__name__)

BASELINE_SYSTEMS = ("msp", "doc", "lmcl_lof")
GEN_SYSTEMS = ("gen", "gen+msp", "gen+doc", "gen+lmcl_lof")
ALL_SYSTEMS = BASELINE_SYSTEMS + GEN_SYSTEMS

_SYSTEM_LOSS = {
    "msp": "softmax_ce",
    "doc": "sigmoid_bce",
    "lmcl_lof": "lmcl",
    "gen": "softmax_ce",
    "gen+msp": "softmax_ce",
    "gen+doc": "sigmoid_bce",
    "gen+lmcl_lof": "lmcl",
}


@dataclass(frozen=True)
class BenchmarkConfig:
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75)
    selections: int = 10
    master_seed: int = 0
    systems: tuple[str, ...] = ("msp", "gen")
    max_train_examples: int | None = None

    def __post_init__(self):
        for s in self.systems:
            if s not in ALL_SYSTEMS:
                raise ValueError(f"unknown system {s!r}; expected one of {ALL_SYSTEMS}")


@dataclass
class DatasetBundle:
    dataset: Dataset
    vocab: Vocab
    table: EmbeddingTable
    source: str


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# sample bookkeeping


def split_generated(samples: list[OodSample], seed: int) -> tuple[list[OodSample], list[OodSample]]:
    """Seeded 90/10 split of generated samples into train/dev additions."""
    n = len(samples)
    if n < 10:
        if n:
            logger.warning("only %d generated samples; all go to the training side", n)
        return list(samples), []
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x91)))
    order = rng.permutation(n)
    n_train = round_half_up(0.9 * n)
    train_idx = sorted(int(i) for i in order[:n_train])
    dev_idx = sorted(int(i) for i in order[n_train:])
    return [samples[i] for i in train_idx], [samples[i] for i in dev_idx]


def samples_to_examples(samples: list[OodSample], start_id: int) -> list[LabeledExample]:
    return [
        LabeledExample(start_id + i, list(s.words), OOD_LABEL, tokens=list(s.tokens))
        for i, s in enumerate(samples)
    ]


# ---------------------------------------------------------------------------
# evaluation


def _batched_outputs(model: CnnClassifier, examples, batch: int = 256):
    logits, feats = [], []
    for start in range(0, len(examples), batch):
        chunk = [ex.tokens for ex in examples[start : start + batch]]
        logits.append(model.logits_for(chunk))
        feats.append(model.features_for(chunk))
    return np.vstack(logits), np.vstack(feats)


def fit_detector(
    kind: str,
    model: CnnClassifier,
    train_examples: list[LabeledExample],
    known_labels: list[str],
    det: DetectorConfig,
) -> FittedDetector:
    label_names = list(known_labels)
    if kind == "argmax":
        return ArgmaxDetector(label_names)
    if kind == "msp":
        return MspDetector(label_names, det.msp_threshold)
    label_to_index = {label: i for i, label in enumerate(label_names)}
    in_domain = [ex for ex in train_examples if ex.label in label_to_index]
    if kind == "doc":
        thresholds = doc_fit(model, in_domain, label_to_index, det.doc_alpha, det.doc_min_examples)
        return DocDetector(thresholds, label_names)
    if kind == "lmcl_lof":
        features = normalize_features(model.features_for([ex.tokens for ex in in_domain]))
        k = det.lof_neighbors
        if k >= len(features):
            k = max(1, len(features) - 1)
            logger.warning("lof neighborhood clamped to %d (only %d stored points)",
                           k, len(features))
        return LofDetector(lof_fit(features, k), label_names, det.lof_threshold)
    raise ValueError(f"unknown detector kind {kind!r}")


def evaluate_detector(
    model: CnnClassifier,
    detector: FittedDetector,
    examples: list[LabeledExample],
    known_labels: list[str],
) -> EvalReport:
    """Score a detector over a split; the model may or may not carry the
    reserved OOD class as its final output."""
    num_known = len(known_labels)
    has_ood = model.num_classes == num_known + 1
    logits, feats = _batched_outputs(model, examples)
    decisions = []
    for row_logits, row_feat in zip(logits, feats):
        if has_ood:
            decisions.append(composed_decide(row_logits, row_feat, detector, num_known))
        else:
            decisions.append(detector.decide(row_logits, row_feat))
    preds = decisions_to_labels(decisions)
    truths = [ex.label for ex in examples]
    return macro_f1_report(preds, truths, known_labels)


# ---------------------------------------------------------------------------
# the iterative generation loop


@dataclass
class IterationState:
    index: int
    generated_count: int
    ood_train_total: int
    ood_dev_total: int
    train_record: TrainRecord
    report: EvalReport | None
    samples: list[OodSample] = field(default_factory=list, repr=False)
    stop_reason: str | None = None
    checkpoint_path: str | None = None
    model: CnnClassifier | None = field(default=None, repr=False)


@dataclass
class GenerationRun:
    states: list[IterationState]
    ood_train: list[LabeledExample]
    ood_dev: list[LabeledExample]
    known_labels: list[str]

    @property
    def final_model(self) -> CnnClassifier:
        return self.states[-1].model

    @property
    def all_samples(self) -> list[OodSample]:
        return [s for st in self.states for s in st.samples]

    def round_counts(self, iterations: int) -> list[int]:
        """Generated-sample count per round (0 for rounds never reached)."""
        counts = [st.generated_count for st in self.states if st.index < iterations]
        return counts + [0] * (iterations - len(counts))


def run_generation_loop(
    selection: KnownIntentSelection,
    vocab: Vocab,
    table: EmbeddingTable,
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig | None = None,
    detector_kind: str = "argmax",
    evaluate_each: bool = True,
    keep_models: bool = False,
) -> GenerationRun:
    """Alternate training and OOD generation for ``gen.iterations`` rounds.

    State ``t`` holds the model trained on the splits as augmented through
    round ``t`` plus the samples that model generated; the last state is
    the final model, trained on everything, which generates nothing.  The
    in-domain examples are never modified, only extended with generated
    OOD examples carrying the reserved label.
    """
    det = det or DetectorConfig()
    known = list(selection.known_labels)
    known_map = {label: i for i, label in enumerate(known)}
    in_train = [ex for ex in selection.train if ex.label in known_map]
    in_dev = [ex for ex in selection.dev if ex.label in known_map]

    ood_train: list[LabeledExample] = []
    ood_dev: list[LabeledExample] = []
    next_gen_id = 1 + max(
        (ex.example_id for ex in in_train + in_dev + selection.test), default=0
    )

    states: list[IterationState] = []
    prev_model: CnnClassifier | None = None
    for t in range(gen.iterations + 1):
        with_ood = bool(ood_train or ood_dev)
        label_map = dict(known_map)
        if with_ood:
            label_map[OOD_LABEL] = len(known)
        cfg_t = replace(train_cfg, seed=derive_seed(train_cfg.seed, 0x17E4, t))
        initial = None
        if gen.warm_start and prev_model is not None:
            initial = prev_model.add_class() if len(label_map) > prev_model.num_classes else prev_model.clone()
        model, record = train_classifier(
            in_train + ood_train,
            in_dev + ood_dev,
            label_map,
            table.matrix_for_model(np.dtype(train_cfg.dtype)),
            cfg_t,
            initial_model=initial,
        )
        prev_model = model

        report = None
        if evaluate_each or t == gen.iterations:
            detector = fit_detector(detector_kind, model, in_train + ood_train, known, det)
            report = evaluate_detector(model, detector, selection.test, known)

        state = IterationState(
            index=t,
            generated_count=0,
            ood_train_total=len(ood_train),
            ood_dev_total=len(ood_dev),
            train_record=record,
            report=report,
            model=model,
        )
        states.append(state)

        if t == gen.iterations:
            break
        forbidden = {
            tuple(ex.tokens) for ex in in_train + ood_train + in_dev + ood_dev
        }
        samples = generate_ood_samples(
            model, table, vocab, in_train, known_map, gen,
            iteration=t + 1, forbidden_sequences=forbidden,
        )
        state.generated_count = len(samples)
        state.samples = samples
        if not samples:
            state.stop_reason = "no samples generated"
            logger.info("generation loop ended early at round %d: no samples", t + 1)
            break
        tr_add, dev_add = split_generated(samples, derive_seed(gen.seed, 0x59, t))
        new_train = samples_to_examples(tr_add, next_gen_id)
        next_gen_id += len(new_train)
        new_dev = samples_to_examples(dev_add, next_gen_id)
        next_gen_id += len(new_dev)
        ood_train.extend(new_train)
        ood_dev.extend(new_dev)

    if not keep_models:
        for st in states[:-1]:
            st.model = None
    return GenerationRun(states, ood_train, ood_dev, known)


# ---------------------------------------------------------------------------
# benchmark grid


def _frac_key(fraction: float) -> str:
    return format(fraction, "g")


def _cell_systems_run(
    selection: KnownIntentSelection,
    bundle: DatasetBundle,
    systems: tuple[str, ...],
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig,
    seed_ctx: tuple[int, int, int],
) -> dict[str, dict]:
    """All requested systems for one (fraction, selection) cell.

    Systems sharing a loss share the trained model (baselines) or the
    whole generation run (gen arms).
    """
    known = selection.known_labels
    known_map = {label: i for i, label in enumerate(known)}
    in_train = [ex for ex in selection.train if ex.label in known_map]
    in_dev = [ex for ex in selection.dev if ex.label in known_map]

    results: dict[str, dict] = {}
    base_models: dict[str, CnnClassifier] = {}
    gen_runs: dict[str, GenerationRun] = {}

    for system in systems:
        loss = _SYSTEM_LOSS[system]
        loss_tag = ("softmax_ce", "sigmoid_bce", "lmcl").index(loss)
        if system.startswith("gen"):
            if loss not in gen_runs:
                cfg = replace(train_cfg, loss=loss,
                              seed=derive_seed(train_cfg.seed, *seed_ctx, 0x6E, loss_tag))
                run = run_generation_loop(
                    selection, bundle.vocab, bundle.table, gen, cfg, det,
                    detector_kind="argmax", evaluate_each=False, keep_models=False,
                )
                gen_runs[loss] = run
            run = gen_runs[loss]
            kind = "argmax" if system == "gen" else system.split("+", 1)[1]
            detector = fit_detector(kind, run.final_model, in_train + run.ood_train, known, det)
            report = evaluate_detector(run.final_model, detector, selection.test, known)
            results[system] = {
                "macro_f1": report.macro_f1,
                "report": report,
                "counts": run.round_counts(gen.iterations),
                "detector_meta": detector.metadata(),
            }
        else:
            if loss not in base_models:
                cfg = replace(train_cfg, loss=loss,
                              seed=derive_seed(train_cfg.seed, *seed_ctx, 0xBA, loss_tag))
                model, _ = train_classifier(
                    in_train, in_dev, known_map,
                    bundle.table.matrix_for_model(np.dtype(train_cfg.dtype)), cfg,
                )
                base_models[loss] = model
            model = base_models[loss]
            detector = fit_detector(system, model, in_train, known, det)
            report = evaluate_detector(model, detector, selection.test, known)
            results[system] = {
                "macro_f1": report.macro_f1,
                "report": report,
                "counts": None,
                "detector_meta": detector.metadata(),
            }
    return results


def config_payload(
    bundle: DatasetBundle,
    bench: BenchmarkConfig,
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig,
) -> dict:
    return {
        "dataset": {
            "source": bundle.source,
            "train": len(bundle.dataset.train),
            "dev": len(bundle.dataset.dev),
            "test": len(bundle.dataset.test),
            "classes": len(bundle.dataset.labels),
            "vocab_hash": bundle.vocab.content_hash(),
        },
        "benchmark": asdict(bench),
        "generation": asdict(gen),
        "training": asdict(train_cfg),
        "detectors": asdict(det),
    }


def fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_benchmark(
    bundle: DatasetBundle,
    bench: BenchmarkConfig,
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig | None = None,
) -> dict:
    """Mean/stddev macro F1 per (system, known-intent fraction) cell.

    Selections are paired: every system inside a cell sees the same known
    intents, so differences are attributable to the systems themselves.
    """
    det = det or DetectorConfig()
    payload = config_payload(bundle, bench, gen, train_cfg, det)
    cells: dict[str, dict] = {system: {} for system in bench.systems}
    iteration_counts: dict[str, dict] = {s: {} for s in bench.systems if s.startswith("gen")}

    for fi, fraction in enumerate(bench.fractions):
        per_sel: dict[str, list[float]] = {s: [] for s in bench.systems}
        counts_acc: dict[str, list[list[int]]] = {s: [] for s in bench.systems}
        meta_acc: dict[str, list[dict]] = {s: [] for s in bench.systems}
        for si in range(bench.selections):
            sel_seed = derive_seed(bench.master_seed, 0xA11, fi, si)
            selection = select_known_intents(bundle.dataset, fraction, sel_seed)
            if bench.max_train_examples:
                selection.train = subsample_per_label(
                    selection.train, bench.max_train_examples, sel_seed
                )
            results = _cell_systems_run(
                selection, bundle, bench.systems, gen, train_cfg, det, (0xCE, fi, si)
            )
            for system, res in results.items():
                per_sel[system].append(float(res["macro_f1"]))
                meta_acc[system].append(res["detector_meta"])
                if res["counts"] is not None:
                    counts_acc[system].append(res["counts"])
            logger.info(
                "fraction %.2f selection %d: %s", fraction, si,
                {s: round(r["macro_f1"], 4) for s, r in results.items()},
            )
        key = _frac_key(fraction)
        for system in bench.systems:
            values = np.array(per_sel[system])
            cells[system][key] = {
                "mean": float(values.mean()),
                "std": float(values.std()),
                "per_selection": [float(v) for v in per_sel[system]],
                "detector_meta": meta_acc[system],
            }
            if counts_acc[system]:
                rounds = np.array(counts_acc[system], dtype=np.float64)
                iteration_counts[system][key] = [float(c) for c in rounds.mean(axis=0)]

    return {
        "config": payload,
        "fingerprint": fingerprint(payload),
        "systems": list(bench.systems),
        "fractions": [float(f) for f in bench.fractions],
        "cells": cells,
        "iteration_counts": iteration_counts,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def report_to_text(report: dict) -> str:
    fractions = report["fractions"]
    header = "system".ljust(14) + "".join(f"{_frac_key(f):>16}" for f in fractions)
    lines = [header, "-" * len(header)]
    for system in report["systems"]:
        row = system.ljust(14)
        for f in fractions:
            cell = report["cells"][system][_frac_key(f)]
            row += f"{cell['mean'] * 100:10.2f}±{cell['std'] * 100:<5.2f}"
        lines.append(row)
    for system, by_fraction in sorted(report.get("iteration_counts", {}).items()):
        for key, counts in sorted(by_fraction.items()):
            pretty = ", ".join(f"{c:.1f}" for c in counts)
            lines.append(f"samples/round [{system} @ {key}]: {pretty}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sweeps


def run_sweep(
    bundle: DatasetBundle,
    axis: str,
    values,
    bench: BenchmarkConfig,
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig | None = None,
) -> list[dict]:
    """One benchmark run of the generation system per grid value."""
    if axis not in ("similarity_threshold", "iterations"):
        raise ValueError("axis must be 'similarity_threshold' or 'iterations'")
    if not len(values):
        raise ValueError("empty sweep grid")
    rows = []
    gen_bench = replace(bench, systems=("gen",))
    for value in values:
        if axis == "similarity_threshold":
            gen_v = replace(gen, similarity_threshold=float(value))
        else:
            gen_v = replace(gen, iterations=int(value))
        report = run_benchmark(bundle, gen_bench, gen_v, train_cfg, det)
        for fraction in bench.fractions:
            cell = report["cells"]["gen"][_frac_key(fraction)]
            rows.append(
                {
                    "axis": axis,
                    "value": float(value),
                    "fraction": float(fraction),
                    "macro_f1_mean": cell["mean"],
                    "macro_f1_std": cell["std"],
                }
            )
    return rows


def sweep_rows_to_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["axis", "value", "fraction", "macro_f1_mean", "macro_f1_std"]
        )
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# transfer


def run_transfer(
    selection: KnownIntentSelection,
    bundle: DatasetBundle,
    gen: GenerationConfig,
    train_cfg: TrainConfig,
    det: DetectorConfig,
    student_seed: int,
    student_filters: int | None = None,
) -> dict:
    """Train a differently seeded student on the teacher's generated samples.

    The teacher runs the full generation loop; the student then trains a
    single time on in-domain data plus the teacher's OOD samples (no
    further generation).  A control student with the same seed trains
    without the samples and is scored with the max-softmax detector.
    """
    known = selection.known_labels
    known_map = {label: i for i, label in enumerate(known)}
    in_train = [ex for ex in selection.train if ex.label in known_map]
    in_dev = [ex for ex in selection.dev if ex.label in known_map]

    teacher = run_generation_loop(
        selection, bundle.vocab, bundle.table, gen, train_cfg, det,
        detector_kind="argmax", evaluate_each=False,
    )
    teacher_report = evaluate_detector(
        teacher.final_model,
        fit_detector("argmax", teacher.final_model, in_train + teacher.ood_train, known, det),
        selection.test, known,
    )

    student_cfg = replace(train_cfg, seed=int(student_seed))
    if student_filters is not None:
        student_cfg = replace(student_cfg, num_filters=int(student_filters))

    with_map = dict(known_map)
    with_map[OOD_LABEL] = len(known)
    matrix = bundle.table.matrix_for_model(np.dtype(student_cfg.dtype))
    student_with, _ = train_classifier(
        in_train + teacher.ood_train, in_dev + teacher.ood_dev, with_map, matrix, student_cfg
    )
    with_report = evaluate_detector(
        student_with,
        fit_detector("argmax", student_with, in_train + teacher.ood_train, known, det),
        selection.test, known,
    )

    student_without, _ = train_classifier(in_train, in_dev, known_map, matrix, student_cfg)
    without_report = evaluate_detector(
        student_without,
        fit_detector("msp", student_without, in_train, known, det),
        selection.test, known,
    )

    return {
        "teacher_macro_f1": teacher_report.macro_f1,
        "student_with_macro_f1": with_report.macro_f1,
        "student_without_macro_f1": without_report.macro_f1,
        "ood_samples": len(teacher.ood_train) + len(teacher.ood_dev),
        "teacher_counts": [st.generated_count for st in teacher.states[: gen.iterations]],
        "reports": {
            "teacher": teacher_report.to_dict(),
            "student_with": with_report.to_dict(),
            "student_without": without_report.to_dict(),
        },
    }
