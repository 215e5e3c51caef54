"""Ranking metrics: average precision, the instance/class/task mAP
protocol, and top-k ranking with rejection.

Conventions (recorded in every report): candidates are ranked by descending
score with ties broken by stable input order; AP is the mean of precision
at each positive's rank. Instance AP averages per-(instance, task) APs
within the instance; class AP is the mean of member-instance APs; task AP
pools every (instance, grasp) candidate carrying that task label. Entities
without a positive label are excluded from the means, not scored zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetIndex, SplitSpec
from .pipeline import FeaturePipeline, TrainSample, score_samples
from .training import build_eval_samples


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredGrasp:
    instance_id: str
    grasp_index: int
    task_id: str
    score: float
    label: int | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise MetricsError(f"non-finite score for {self.instance_id}/{self.grasp_index}")


def average_precision(scores, labels) -> float:
    """AP of a ranked candidate list against binary labels.

    Undefined (raises) when no label is positive; callers exclude such
    entities from their means.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricsError(f"scores/labels must be aligned 1-D arrays, got {s.shape} vs {y.shape}")
    if s.size == 0 or not np.isfinite(s).all():
        raise MetricsError("scores must be non-empty and finite")
    if y.sum() == 0:
        raise MetricsError("average precision is undefined without a positive label")
    order = np.argsort(-s, kind="stable")
    ranked = y[order]
    cumulative = np.cumsum(ranked)
    ranks = np.arange(1, s.size + 1)
    precision_at_positive = (cumulative / ranks)[ranked == 1]
    return float(precision_at_positive.mean())


@dataclass
class EvalReport:
    instance_map: float
    class_map: float
    task_map: float
    instance_ap: dict[str, float] = field(default_factory=dict)
    class_ap: dict[str, float] = field(default_factory=dict)
    task_ap: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "instance_map": self.instance_map,
            "class_map": self.class_map,
            "task_map": self.task_map,
            "instance_ap": self.instance_ap,
            "class_ap": self.class_ap,
            "task_ap": self.task_ap,
            "skipped": self.skipped,
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


class ModelScorer:
    """Scores eval samples with a trained evaluator in a fixed mode."""

    def __init__(self, model, pipeline: FeaturePipeline, mode: str = "full", batch_size: int = 64):
        self.model = model
        self.pipeline = pipeline
        self.mode = mode
        self.batch_size = batch_size

    def __call__(self, samples: list[TrainSample]) -> np.ndarray:
        return score_samples(
            self.model, self.pipeline, samples, mode=self.mode, batch_size=self.batch_size
        )


class OracleScorer:
    """Sanity path: score equals the ground-truth label."""

    def __call__(self, samples: list[TrainSample]) -> np.ndarray:
        return np.array([float(s.label) for s in samples])


class AntiOracleScorer:
    def __call__(self, samples: list[TrainSample]) -> np.ndarray:
        return np.array([1.0 - float(s.label) for s in samples])


class ConstantScorer:
    def __init__(self, value: float = 0.5):
        self.value = value

    def __call__(self, samples: list[TrainSample]) -> np.ndarray:
        return np.full(len(samples), self.value)


def evaluate(
    scorer,
    index: DatasetIndex,
    split: SplitSpec,
    samples: list[TrainSample] | None = None,
) -> EvalReport:
    """Score the held-out side of a split and aggregate the three mAPs."""
    if samples is None:
        samples = build_eval_samples(index, split)
    if not samples:
        raise MetricsError(f"split {split.setting}/fold{split.fold_index} has no test samples")
    scores = np.asarray(scorer(samples), dtype=np.float64)
    if scores.shape != (len(samples),):
        raise MetricsError("scorer returned a misshaped score array")

    by_pair: dict[tuple[str, str], list[int]] = {}
    for i, sample in enumerate(samples):
        by_pair.setdefault((sample.instance_id, sample.task_id), []).append(i)

    skipped: list[str] = []
    pair_ap: dict[tuple[str, str], float] = {}
    for (inst, task), idxs in by_pair.items():
        pair_scores = scores[idxs]
        pair_labels = np.array([samples[i].label for i in idxs])
        if pair_labels.sum() == 0:
            skipped.append(f"instance {inst} task {task}: no positive labels")
            continue
        pair_ap[(inst, task)] = average_precision(pair_scores, pair_labels)

    instance_ap: dict[str, float] = {}
    for inst in sorted({i for i, _ in by_pair}):
        values = [ap for (i, _), ap in pair_ap.items() if i == inst]
        if values:
            instance_ap[inst] = float(np.mean(values))
        else:
            skipped.append(f"instance {inst}: no scorable task")

    class_ap: dict[str, float] = {}
    for cls in sorted({index.instances[i].class_id for i, _ in by_pair}):
        members = [ap for inst, ap in instance_ap.items() if index.instances[inst].class_id == cls]
        if members:
            class_ap[cls] = float(np.mean(members))
        else:
            skipped.append(f"class {cls}: no scorable instance")

    task_ap: dict[str, float] = {}
    for task in sorted({t for _, t in by_pair}):
        idxs = [i for i, s in enumerate(samples) if s.task_id == task]
        labels = np.array([samples[i].label for i in idxs])
        if labels.sum() == 0:
            skipped.append(f"task {task}: no positive labels")
            continue
        task_ap[task] = average_precision(scores[idxs], labels)

    if not (instance_ap and class_ap and task_ap):
        raise MetricsError("no scorable entities in the evaluation split")
    return EvalReport(
        instance_map=float(np.mean(list(instance_ap.values()))),
        class_map=float(np.mean(list(class_ap.values()))),
        task_map=float(np.mean(list(task_ap.values()))),
        instance_ap=instance_ap,
        class_ap=class_ap,
        task_ap=task_ap,
        skipped=sorted(skipped),
        metadata={
            "setting": split.setting,
            "fold": split.fold_index,
            "tie_break": "stable input order",
            "class_ap_convention": "mean of member-instance APs",
            "task_ap_convention": "pooled candidates per task",
            "no_positive_policy": "entity excluded from the mean",
        },
    )


def rank_and_decide(
    scored: list[ScoredGrasp], top_k: int | None = None, reject_threshold: float = 0.5
) -> tuple[list[ScoredGrasp], bool]:
    """Sort candidates by descending score (stable) and flag rejection when
    even the best candidate falls below the threshold."""
    if not scored:
        raise MetricsError("cannot rank an empty candidate list")
    order = np.argsort(-np.array([g.score for g in scored]), kind="stable")
    ranked = [scored[i] for i in order]
    reject = ranked[0].score < reject_threshold
    if top_k is not None:
        ranked = ranked[: max(top_k, 0)]
    return ranked, reject
