"""Learned naturalness estimation for generated sentences given a human reference."""

from natureval.dataset import (
    AnnotationRecord,
    DatasetSplit,
    LabelDistribution,
    RatedPair,
    aggregate,
    distribution,
    load_records,
    split,
)
from natureval.metrics import ConfusionMatrix, EvalReport, confusion, macro_prf, per_class_recall, spearman

__version__ = "0.1.0"
