"""Reciprocal recommendation: directional models, aggregation and
pseudo-label distillation into a boosted meta-model."""

from .aggregate import Aggregator, PtaScorer, aggregate
from .domain import Dataset, InteractionEvent, Segment, assign_segments, split_by_time
from .evaluation import EvaluationReport, build_candidates, evaluate_method, ndcg_at_k, tune_alpha
from .pseudo import AlphaMode, AlphaPolicy, build_pseudo_labels, pseudo_score

__all__ = [
    "Aggregator",
    "AlphaMode",
    "AlphaPolicy",
    "Dataset",
    "EvaluationReport",
    "InteractionEvent",
    "PtaScorer",
    "Segment",
    "aggregate",
    "assign_segments",
    "build_candidates",
    "build_pseudo_labels",
    "evaluate_method",
    "ndcg_at_k",
    "pseudo_score",
    "split_by_time",
    "tune_alpha",
]
