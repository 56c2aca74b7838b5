"""Command-line entry points.

Subcommands: train, generate, iterate, benchmark, sweep, transfer,
analogy-eval, export-ood.  Data and embedding paths may also come from
the OODGEN_DATA / OODGEN_FORMAT / OODGEN_EMBEDDINGS environment
variables; explicit flags win.  A ``--config`` file holding
``key = value`` lines supplies defaults for any flag (long name with
underscores), and flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import TrainConfig, save_checkpoint, train_classifier
from .corpus import (
    FORMATS,
    OOD_LABEL,
    build_vocab,
    load_dataset,
    make_dev_split,
    make_test_split,
    select_known_intents,
)
from .detectors import DetectorConfig
from .embeddings import (
    evaluate_analogies,
    load_analogy_file,
    load_embedding_vocab,
    load_pretrained,
)
from .experiment import (
    ALL_SYSTEMS,
    BenchmarkConfig,
    DatasetBundle,
    derive_seed,
    evaluate_detector,
    fit_detector,
    report_to_json,
    report_to_text,
    run_benchmark,
    run_generation_loop,
    run_sweep,
    run_transfer,
    sweep_rows_to_csv,
    split_generated,
)
from .generation import GenerationConfig, export_samples_jsonl, generate_ood_samples
from .synthetic import make_synthetic_task

logger = logging.getLogger("oodgen")

_CONFIG_TYPES = {
    "learning_rate": float, "batch_size": int, "decay_rate": float, "decay_every": int,
    "patience": int, "max_epochs": int, "train_seed": int, "loss": str,
    "filters": int, "kernel_widths": str, "train_embeddings": bool,
    "lmcl_scale": float, "lmcl_margin": float, "dtype": str,
    "similarity_threshold": float, "candidate_fraction": float, "core_tokens": int,
    "iterations": int, "gen_seed": int, "strict_similarity": bool, "warm_start": bool,
    "msp_threshold": float, "doc_alpha": float, "lof_k": int, "lof_threshold": float,
    "fractions": str, "selections": int, "master_seed": int, "systems": str,
    "max_train_examples": int, "fraction": float, "selection_seed": int,
    "test_ratio": float, "dev_ratio": float, "split_seed": int,
    "embedding_seed": int, "synthetic": str, "synthetic_seed": int,
    "data": str, "format": str, "embeddings": str, "out": str,
    "student_seed": int, "student_filters": int,
}


def _coerce(key: str, raw: str):
    typ = _CONFIG_TYPES.get(key, str)
    if typ is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return typ(raw.strip())


def load_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
            values[key] = _coerce(key, raw)
    return values


# ---------------------------------------------------------------------------
# argument wiring


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", default=None, help="dataset path (env OODGEN_DATA)")
    p.add_argument("--format", default=None, choices=FORMATS + ("synthetic",),
                   help="dataset layout (env OODGEN_FORMAT)")
    p.add_argument("--embeddings", default=None,
                   help="pretrained embedding text file (env OODGEN_EMBEDDINGS)")
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--synthetic", default="8x30",
                   help="INTENTSxPER_INTENT for --format synthetic")
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--test-ratio", type=float, default=0.3,
                   help="carve a test split when the dataset lacks one")
    p.add_argument("--dev-ratio", type=float, default=0.1,
                   help="carve a dev split when the dataset lacks one")
    p.add_argument("--split-seed", type=int, default=0)


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--decay-rate", type=float, default=0.8)
    p.add_argument("--decay-every", type=int, default=2)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--loss", default="softmax_ce", choices=("softmax_ce", "sigmoid_bce", "lmcl"))
    p.add_argument("--filters", type=int, default=32)
    p.add_argument("--kernel-widths", default="2,3,4,5")
    p.add_argument("--train-embeddings", action="store_true",
                   help="unfreeze the embedding table during training")
    p.add_argument("--lmcl-scale", type=float, default=30.0)
    p.add_argument("--lmcl-margin", type=float, default=0.35)
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))


def _add_gen_args(p: argparse.ArgumentParser):
    p.add_argument("--similarity-threshold", type=float, default=0.3)
    p.add_argument("--candidate-fraction", type=float, default=0.01)
    p.add_argument("--core-tokens", type=int, default=5)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--gen-seed", type=int, default=0)
    p.add_argument("--strict-similarity", action="store_true")
    p.add_argument("--warm-start", action="store_true")


def _add_detector_args(p: argparse.ArgumentParser):
    p.add_argument("--msp-threshold", type=float, default=0.5)
    p.add_argument("--doc-alpha", type=float, default=3.0)
    p.add_argument("--lof-k", type=int, default=20)
    p.add_argument("--lof-threshold", type=float, default=1.5)


def _add_selection_args(p: argparse.ArgumentParser):
    p.add_argument("--fraction", type=float, default=1.0,
                   help="known-intent fraction for this run")
    p.add_argument("--selection-seed", type=int, default=0)


def train_config(args) -> TrainConfig:
    widths = tuple(int(w) for w in str(args.kernel_widths).split(","))
    return TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        decay_rate=args.decay_rate, decay_every=args.decay_every,
        patience=args.patience, max_epochs=args.max_epochs, seed=args.train_seed,
        loss=args.loss, kernel_widths=widths, num_filters=args.filters,
        embed_trainable=args.train_embeddings, lmcl_scale=args.lmcl_scale,
        lmcl_margin=args.lmcl_margin, dtype=args.dtype,
    )


def gen_config(args) -> GenerationConfig:
    return GenerationConfig(
        similarity_threshold=args.similarity_threshold,
        candidate_fraction=args.candidate_fraction,
        core_token_count=args.core_tokens, iterations=args.iterations,
        seed=args.gen_seed, strict_similarity=args.strict_similarity,
        warm_start=args.warm_start,
    )


def detector_config(args) -> DetectorConfig:
    return DetectorConfig(
        msp_threshold=args.msp_threshold, doc_alpha=args.doc_alpha,
        lof_neighbors=args.lof_k, lof_threshold=args.lof_threshold,
    )


def resolve_bundle(args) -> DatasetBundle:
    fmt = args.format or os.environ.get("OODGEN_FORMAT")
    data = args.data or os.environ.get("OODGEN_DATA")
    if fmt is None:
        fmt = "synthetic" if data is None else "jsonl"
    if fmt == "synthetic":
        try:
            intents, per = (int(x) for x in args.synthetic.lower().split("x"))
        except ValueError:
            raise ValueError(f"--synthetic wants INTENTSxPER_INTENT, got {args.synthetic!r}")
        task = make_synthetic_task(intents, per, seed=args.synthetic_seed)
        return DatasetBundle(task.dataset, task.vocab, task.table,
                             f"synthetic:{intents}x{per}:seed{args.synthetic_seed}")
    if data is None:
        raise ValueError("no dataset: give --data or set OODGEN_DATA")
    embeddings = args.embeddings or os.environ.get("OODGEN_EMBEDDINGS")
    if embeddings is None:
        raise ValueError("no embeddings: give --embeddings or set OODGEN_EMBEDDINGS")
    dataset = load_dataset(data, fmt)
    if not dataset.test:
        logger.info("dataset has no test split; carving %.0f%% of train", args.test_ratio * 100)
        dataset = make_test_split(dataset, args.test_ratio, args.split_seed)
    if not dataset.dev:
        logger.info("dataset has no dev split; carving %.0f%% of train", args.dev_ratio * 100)
        dataset = make_dev_split(dataset, args.dev_ratio, args.split_seed + 1)
    vocab = build_vocab(dataset.train)
    dataset = dataset.encoded(vocab)
    table = load_pretrained(embeddings, vocab, seed=args.embedding_seed)
    return DatasetBundle(dataset, vocab, table, f"{fmt}:{data}")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    bundle = resolve_bundle(args)
    cfg = train_config(args)
    selection = select_known_intents(bundle.dataset, args.fraction, args.selection_seed)
    label_map = {label: i for i, label in enumerate(selection.known_labels)}
    model, record = train_classifier(
        selection.train, selection.dev, label_map,
        bundle.table.matrix_for_model(np.dtype(cfg.dtype)), cfg,
    )
    out = _outdir(args)
    save_checkpoint(model, out / "model.npz", vocab_hash=bundle.vocab.content_hash())
    detector = fit_detector("msp", model, selection.train, selection.known_labels,
                            detector_config(args))
    report = evaluate_detector(model, detector, selection.test, selection.known_labels)
    payload = {
        "known_labels": selection.known_labels,
        "chosen_epoch": record.chosen_epoch,
        "stop_reason": record.stop_reason,
        "epochs": [
            {"epoch": e.epoch, "train_loss": e.train_loss, "dev_accuracy": e.dev_accuracy,
             "lr": e.lr}
            for e in record.epochs
        ],
        "test_macro_f1_msp": report.macro_f1,
    }
    (out / "train_record.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"best dev accuracy {record.best_dev_accuracy():.4f} "
          f"at epoch {record.chosen_epoch}; test macro F1 (msp) {report.macro_f1:.4f}")
    print(f"wrote {out / 'model.npz'} and {out / 'train_record.json'}")
    return 0


def cmd_generate(args) -> int:
    bundle = resolve_bundle(args)
    cfg = train_config(args)
    gen = gen_config(args)
    selection = select_known_intents(bundle.dataset, args.fraction, args.selection_seed)
    label_map = {label: i for i, label in enumerate(selection.known_labels)}
    model, _ = train_classifier(
        selection.train, selection.dev, label_map,
        bundle.table.matrix_for_model(np.dtype(cfg.dtype)), cfg,
    )
    samples = generate_ood_samples(
        model, bundle.table, bundle.vocab, selection.train, label_map, gen, iteration=1,
        forbidden_sequences={tuple(ex.tokens) for ex in selection.dev},
    )
    out = _outdir(args)
    path = out / "ood_samples.jsonl"
    export_samples_jsonl(samples, path, OOD_LABEL)
    print(f"generated {len(samples)} samples -> {path}")
    return 0


def cmd_iterate(args) -> int:
    bundle = resolve_bundle(args)
    selection = select_known_intents(bundle.dataset, args.fraction, args.selection_seed)
    run = run_generation_loop(
        selection, bundle.vocab, bundle.table, gen_config(args), train_config(args),
        detector_config(args), detector_kind=args.detector, evaluate_each=True,
        keep_models=False,
    )
    out = _outdir(args)
    for state in run.states:
        if state.samples:
            export_samples_jsonl(
                state.samples, out / f"ood_samples_round{state.index + 1}.jsonl", OOD_LABEL
            )
    save_checkpoint(run.final_model, out / "final_model.npz",
                    vocab_hash=bundle.vocab.content_hash())
    states_payload = [
        {
            "round": st.index,
            "generated": st.generated_count,
            "ood_train_total": st.ood_train_total,
            "ood_dev_total": st.ood_dev_total,
            "macro_f1": st.report.macro_f1 if st.report else None,
            "stop_reason": st.stop_reason,
            "chosen_epoch": st.train_record.chosen_epoch,
        }
        for st in run.states
    ]
    (out / "iterations.json").write_text(json.dumps(states_payload, indent=2, sort_keys=True))
    for st in states_payload:
        print(f"round {st['round']}: generated={st['generated']} macro_f1={st['macro_f1']}")
    print(f"wrote {out / 'iterations.json'}")
    return 0


def cmd_benchmark(args) -> int:
    bundle = resolve_bundle(args)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    systems = tuple(args.systems.split(","))
    bench = BenchmarkConfig(
        fractions=fractions, selections=args.selections, master_seed=args.master_seed,
        systems=systems, max_train_examples=args.max_train_examples,
    )
    report = run_benchmark(bundle, bench, gen_config(args), train_config(args),
                           detector_config(args))
    out = _outdir(args)
    (out / "report.json").write_text(report_to_json(report))
    text = report_to_text(report)
    (out / "report.txt").write_text(text)
    print(text, end="")
    print(f"fingerprint {report['fingerprint']}")
    return 0


def cmd_sweep(args) -> int:
    bundle = resolve_bundle(args)
    axis = {"t-sim": "similarity_threshold", "iterations": "iterations"}[args.axis]
    values = [float(v) for v in args.grid.split(",")]
    bench = BenchmarkConfig(
        fractions=tuple(float(f) for f in args.fractions.split(",")),
        selections=args.selections, master_seed=args.master_seed, systems=("gen",),
        max_train_examples=args.max_train_examples,
    )
    rows = run_sweep(bundle, axis, values, bench, gen_config(args), train_config(args),
                     detector_config(args))
    out = _outdir(args)
    path = out / "sweep.csv"
    sweep_rows_to_csv(rows, path)
    for row in rows:
        print(f"{row['axis']}={row['value']:g} fraction={row['fraction']:g} "
              f"macro_f1={row['macro_f1_mean']:.4f}±{row['macro_f1_std']:.4f}")
    print(f"wrote {path}")
    return 0


def cmd_transfer(args) -> int:
    bundle = resolve_bundle(args)
    selection = select_known_intents(bundle.dataset, args.fraction, args.selection_seed)
    result = run_transfer(
        selection, bundle, gen_config(args), train_config(args), detector_config(args),
        student_seed=args.student_seed, student_filters=args.student_filters,
    )
    out = _outdir(args)
    (out / "transfer.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    print(f"teacher macro F1          {result['teacher_macro_f1']:.4f}")
    print(f"student with OOD samples  {result['student_with_macro_f1']:.4f}")
    print(f"student without           {result['student_without_macro_f1']:.4f}")
    return 0


def cmd_analogy_eval(args) -> int:
    embeddings = args.embeddings or os.environ.get("OODGEN_EMBEDDINGS")
    if embeddings is None:
        raise ValueError("no embeddings: give --embeddings or set OODGEN_EMBEDDINGS")
    vocab = load_embedding_vocab(embeddings)
    table = load_pretrained(embeddings, vocab, seed=args.embedding_seed)
    questions = load_analogy_file(args.questions)
    result = evaluate_analogies(table, questions)
    print(f"accuracy {result.accuracy:.4f} ({result.correct}/{result.attempted} attempted, "
          f"{result.skipped} skipped)")
    return 0


def cmd_export_ood(args) -> int:
    with open(args.samples, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    with open(args.out_file, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"text": rec["text"], "label": rec.get("label", OOD_LABEL)},
                                sort_keys=True) + "\n")
    print(f"exported {len(records)} records -> {args.out_file}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodgen", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, *, data=True, train=False, gen=False, det=False,
            selection=False, bench=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value defaults file")
        p.add_argument("--out", default="out", help="output directory")
        if data:
            _add_data_args(p)
        if train:
            _add_train_args(p)
        if gen:
            _add_gen_args(p)
        if det:
            _add_detector_args(p)
        if selection:
            _add_selection_args(p)
        if bench:
            p.add_argument("--fractions", default="0.25,0.5,0.75")
            p.add_argument("--selections", type=int, default=10)
            p.add_argument("--master-seed", type=int, default=0)
            p.add_argument("--max-train-examples", type=int, default=None)
        p.set_defaults(func=fn)
        return p

    add("train", cmd_train, "train a classifier on one known-intent selection",
        train=True, det=True, selection=True)
    add("generate", cmd_generate, "train a reference model and emit one round of OOD samples",
        train=True, gen=True, selection=True)
    p = add("iterate", cmd_iterate, "alternate training and OOD generation",
            train=True, gen=True, det=True, selection=True)
    p.add_argument("--detector", default="argmax", choices=("argmax", "msp", "doc", "lmcl_lof"))
    p = add("benchmark", cmd_benchmark, "macro-F1 grid over fractions and selections",
            train=True, gen=True, det=True, bench=True)
    p.add_argument("--systems", default="msp,gen",
                   help=f"comma list from {','.join(ALL_SYSTEMS)}")
    p = add("sweep", cmd_sweep, "sweep the similarity threshold or iteration count",
            train=True, gen=True, det=True, bench=True)
    p.add_argument("--axis", required=True, choices=("t-sim", "iterations"))
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    p = add("transfer", cmd_transfer, "train a differently seeded student on teacher samples",
            train=True, gen=True, det=True, selection=True)
    p.add_argument("--student-seed", type=int, default=1)
    p.add_argument("--student-filters", type=int, default=None)
    p = add("analogy-eval", cmd_analogy_eval, "score embeddings on a 4-word analogy corpus",
            data=False)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--questions", required=True)
    p = add("export-ood", cmd_export_ood, "strip provenance from a generated-samples JSONL",
            data=False)
    p.add_argument("--samples", required=True)
    p.add_argument("--out-file", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # First pass picks up --config so its values can become defaults.
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        defaults = load_config_file(args.config)
        for action in parser._subparsers._group_actions:
            if args.command in action.choices:
                action.choices[args.command].set_defaults(**defaults)
        args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
