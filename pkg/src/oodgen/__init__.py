"""Gradient-guided out-of-domain sample generation for intent classifiers,
with an open-set detection benchmark (max softmax probability, per-class
sigmoid thresholds, cosine-margin features with local outlier factor)."""

from .classifier import CnnClassifier, TrainConfig, train_classifier
from .corpus import (
    OOD_LABEL,
    Dataset,
    KnownIntentSelection,
    LabeledExample,
    Vocab,
    build_vocab,
    load_dataset,
    make_test_split,
    select_known_intents,
)
from .detectors import DetectorConfig
from .embeddings import EmbeddingTable, evaluate_analogies, load_pretrained
from .experiment import (
    BenchmarkConfig,
    DatasetBundle,
    run_benchmark,
    run_generation_loop,
    run_sweep,
    run_transfer,
)
from .generation import GenerationConfig, generate_ood_samples, hotflip_attack
from .synthetic import SyntheticTask, make_synthetic_task

__version__ = "0.1.0"
