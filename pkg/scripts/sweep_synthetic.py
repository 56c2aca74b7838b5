#!/usr/bin/env python3
"""Similarity-threshold and iteration-count sweeps on the synthetic corpus.

Writes plot-ready CSVs (one row per grid value per fraction).  The
threshold sweep holds the iteration count at 2; the iteration sweep holds
the threshold at 0.3.
"""

import argparse
import logging
from pathlib import Path

from oodgen.classifier import TrainConfig
from oodgen.detectors import DetectorConfig
from oodgen.experiment import BenchmarkConfig, DatasetBundle, run_sweep, sweep_rows_to_csv
from oodgen.generation import GenerationConfig
from oodgen.synthetic import make_synthetic_task


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/sweep_synthetic")
    parser.add_argument("--selections", type=int, default=2)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    task = make_synthetic_task(8, 60, seed=606, dev_per_intent=12)
    bundle = DatasetBundle(task.dataset, task.vocab, task.table, "synthetic:8x60")
    train_cfg = TrainConfig(seed=9, batch_size=16, patience=10,
                            learning_rate=0.003, decay_every=8)
    det = DetectorConfig()
    bench = BenchmarkConfig(fractions=(0.25, 0.5), selections=args.selections,
                            master_seed=11, systems=("gen",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gen_two_rounds = GenerationConfig(seed=5, candidate_fraction=0.05, iterations=2)
    rows = run_sweep(bundle, "similarity_threshold", [0.1, 0.3, 0.5, 0.7],
                     bench, gen_two_rounds, train_cfg, det)
    sweep_rows_to_csv(rows, out / "similarity_threshold.csv")

    gen_fixed_sim = GenerationConfig(seed=5, candidate_fraction=0.05,
                                     similarity_threshold=0.3)
    rows = run_sweep(bundle, "iterations", [1, 2, 3, 4],
                     bench, gen_fixed_sim, train_cfg, det)
    sweep_rows_to_csv(rows, out / "iterations.csv")
    print(f"wrote {out}/similarity_threshold.csv and {out}/iterations.csv")


if __name__ == "__main__":
    main()
