#!/usr/bin/env python3
"""Full-protocol benchmark on a real corpus (ATIS or SNIPS layout + GloVe).

Uses the benchmark-scale training defaults (batch 128, lr 0.001, decay 0.8
every 2 epochs, patience 5) and 10 known-intent selections per fraction.
Point --data/--embeddings at the corpus directory and embedding text file,
or set OODGEN_DATA / OODGEN_EMBEDDINGS.
"""

import argparse
import logging
import os
from pathlib import Path

from oodgen.classifier import TrainConfig
from oodgen.corpus import build_vocab, load_dataset, make_test_split
from oodgen.detectors import DetectorConfig
from oodgen.embeddings import load_pretrained
from oodgen.experiment import (
    ALL_SYSTEMS,
    BenchmarkConfig,
    DatasetBundle,
    report_to_json,
    report_to_text,
    run_benchmark,
)
from oodgen.generation import GenerationConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", default=os.environ.get("OODGEN_DATA"))
    parser.add_argument("--format", default=os.environ.get("OODGEN_FORMAT", "atis-layout"),
                        choices=("jsonl", "tsv", "atis-layout", "snips-layout"))
    parser.add_argument("--embeddings", default=os.environ.get("OODGEN_EMBEDDINGS"))
    parser.add_argument("--out", default="out/benchmark_real")
    parser.add_argument("--selections", type=int, default=10)
    parser.add_argument("--systems", default=",".join(ALL_SYSTEMS))
    parser.add_argument("--max-train-examples", type=int, default=None,
                        help="per-class cap for desk-scale runs")
    args = parser.parse_args()
    if not args.data or not args.embeddings:
        parser.error("need --data and --embeddings (or OODGEN_DATA / OODGEN_EMBEDDINGS)")
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    dataset = load_dataset(args.data, args.format)
    if not dataset.test:
        dataset = make_test_split(dataset, 0.3, seed=0)
    vocab = build_vocab(dataset.train)
    dataset = dataset.encoded(vocab)
    table = load_pretrained(args.embeddings, vocab, seed=0)
    bundle = DatasetBundle(dataset, vocab, table, f"{args.format}:{args.data}")

    bench = BenchmarkConfig(
        fractions=(0.25, 0.5, 0.75), selections=args.selections, master_seed=0,
        systems=tuple(args.systems.split(",")),
        max_train_examples=args.max_train_examples,
    )
    report = run_benchmark(bundle, bench, GenerationConfig(seed=0),
                           TrainConfig(seed=0), DetectorConfig())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_to_json(report))
    text = report_to_text(report)
    (out / "report.txt").write_text(text)
    print(text)


if __name__ == "__main__":
    main()
