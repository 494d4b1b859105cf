"""One end-to-end fit of the best-of-both recipe on a training window.

1. fit scout and reply models on the window;
2. blend realized match labels with the models' product under an alpha policy;
3. boost a meta-model onto the blended targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .domain import Dataset, SegmentAssignment
from .learners import MfModel, TrainConfig, train_reply_model, train_scout_model
from .meta import BobScorer, FeatureContext, GbdtConfig, GbdtModel, train_meta
from .pseudo import AlphaPolicy, build_pseudo_labels


@dataclass(frozen=True)
class BobSettings:
    learner: TrainConfig = field(default_factory=TrainConfig)
    meta: GbdtConfig = field(default_factory=GbdtConfig)
    negatives_per_positive: int = 1


def _direct(name: str, kind: str, fit: Callable):
    return fit()


def fit_directional(train: Dataset, settings: BobSettings, store=_direct) -> tuple[MfModel, MfModel]:
    """``store(name, kind, fit)`` lets callers cache models; the default just fits."""
    scout = store("scout", "mf", lambda: train_scout_model(train, settings.learner))
    reply = store("reply", "mf", lambda: train_reply_model(train, settings.learner))
    return scout, reply


def fit_bob(
    train: Dataset,
    scout: MfModel,
    reply: MfModel,
    segments: SegmentAssignment,
    policy: AlphaPolicy,
    settings: BobSettings,
    name: str = "bob",
    store=_direct,
    on_labels: Callable | None = None,
) -> BobScorer:
    """``on_labels`` receives the pseudo-label set when the meta-model is actually fit."""
    context = FeatureContext(train, scout, reply, segments)

    def fit() -> GbdtModel:
        labels = build_pseudo_labels(
            train, scout, reply, policy, segments,
            settings.negatives_per_positive, settings.learner.rng_seed,
        )
        if on_labels is not None:
            on_labels(labels)
        return train_meta(labels, context, settings.meta)

    return BobScorer(store(name, "gbdt", fit), context)
