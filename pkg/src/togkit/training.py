"""Training: binary cross-entropy objective, K-fold held-out splits, sample
enumeration per split setting, and the seeded optimization loop.

The optimizer is Adam with decoupled weight decay; the learning rate decays
by a constant per-epoch multiplier. Description and instruction seeds
refresh every epoch so each pass sees new paragraph combinations.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backends import Backends
from .configs import ModelConfig, desk_config
from .dataset import DatasetError, DatasetIndex, SplitSpec
from .evaluator import GraspEvaluator
from .knowledge import DescriptionBank, InstructionTemplateSet
from .pipeline import FeaturePipeline, TrainSample, collate, derive_seed


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the offending samples."""

    def __init__(self, message: str, sample_ids: list[str]):
        super().__init__(message)
        self.sample_ids = sample_ids


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lr_decay: float = 0.95  # multiplicative per-epoch factor
    seed: int = 0
    mode: str = "full"
    points_per_cloud: int = 4096
    augment: bool = True
    eval_every: int = 0  # epochs between val-mAP probes; 0 = final epoch only
    shuffle_labels: bool = False  # control arm: permute training labels

    def __post_init__(self) -> None:
        if min(self.epochs, self.batch_size) < 1:
            raise ValueError("epochs and batch size must be positive")
        if min(self.learning_rate, self.weight_decay, self.lr_decay) < 0:
            raise ValueError("rates must be non-negative")
        if self.points_per_cloud < 1:
            raise ValueError("points_per_cloud must be positive")


def bce_loss(scores, labels) -> torch.Tensor:
    """Mean binary cross-entropy with scores clamped to [1e-7, 1 - 1e-7]."""
    s = torch.as_tensor(scores, dtype=torch.float64) if not torch.is_tensor(scores) else scores
    y = torch.as_tensor(labels, dtype=s.dtype) if not torch.is_tensor(labels) else labels.to(s.dtype)
    s, y = s.reshape(-1), y.reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels disagree in length: {s.shape} vs {y.shape}")
    if s.numel() == 0:
        raise ValueError("loss requires at least one sample")
    s = torch.clamp(s, 1e-7, 1.0 - 1e-7)
    return -(y * torch.log(s) + (1.0 - y) * torch.log(1.0 - s)).mean()


def make_folds(
    index: DatasetIndex, setting: str, k: int = 4, seed: int = 0
) -> list[SplitSpec]:
    """Seeded shuffle of the split dimension, then contiguous quartering.

    Fold test sets are pairwise disjoint, cover the dimension, and hold
    1/k of its elements (within one element).
    """
    if setting == "instance":
        ids = list(index.instances.keys())
    elif setting == "class":
        ids = list(index.classes)
    elif setting == "task":
        ids = list(index.tasks)
    else:
        raise DatasetError(f"unknown split setting {setting!r}")
    if len(ids) < k:
        raise DatasetError(f"cannot make {k} folds from {len(ids)} {setting} ids")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    base, extra = divmod(len(ids), k)
    folds, start = [], 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        test = tuple(order[start : start + size])
        train = tuple(i for i in order if i not in test)
        folds.append(SplitSpec(setting=setting, fold_index=fold, train_ids=train, test_ids=test))
        start += size
    return folds


def _split_instances(index: DatasetIndex, split: SplitSpec) -> tuple[list[str], list[str]]:
    """Instance ids on each side of a split, per its setting."""
    if split.setting == "instance":
        return list(split.train_ids), list(split.test_ids)
    if split.setting == "class":
        train = [i for i, r in index.instances.items() if r.class_id in split.train_ids]
        test = [i for i, r in index.instances.items() if r.class_id in split.test_ids]
        return train, test
    all_ids = list(index.instances.keys())
    return all_ids, all_ids  # task setting: same instances, disjoint task labels


def _split_tasks(index: DatasetIndex, split: SplitSpec) -> tuple[list[str], list[str]]:
    if split.setting == "task":
        return list(split.train_ids), list(split.test_ids)
    return list(index.tasks), list(index.tasks)


def build_train_samples(
    index: DatasetIndex, split: SplitSpec, base_seed: int = 0
) -> list[TrainSample]:
    """Enumerate every labeled (instance, grasp, task) triple on the train side."""
    train_instances, _ = _split_instances(index, split)
    train_tasks, _ = _split_tasks(index, split)
    task_set = set(train_tasks)
    samples = []
    for inst_id in train_instances:
        record = index.instances[inst_id]
        for gi, grasp in enumerate(record.grasps):
            for task, label in grasp.labels.items():
                if task in task_set:
                    samples.append(
                        TrainSample(
                            instance_id=inst_id,
                            grasp_index=gi,
                            task_id=task,
                            label=int(label),
                            seed=derive_seed(base_seed, inst_id, gi, task),
                        )
                    )
    return samples


def build_eval_samples(index: DatasetIndex, split: SplitSpec) -> list[TrainSample]:
    """Enumerate the held-out (instance, grasp, task) triples."""
    _, test_instances = _split_instances(index, split)
    _, test_tasks = _split_tasks(index, split)
    task_set = set(test_tasks)
    samples = []
    for inst_id in test_instances:
        record = index.instances[inst_id]
        for gi, grasp in enumerate(record.grasps):
            for task, label in grasp.labels.items():
                if task in task_set:
                    samples.append(
                        TrainSample(
                            instance_id=inst_id,
                            grasp_index=gi,
                            task_id=task,
                            label=int(label),
                            seed=derive_seed("eval", inst_id, gi, task),
                        )
                    )
    return samples


def scan_split_leakage(
    index: DatasetIndex,
    split: SplitSpec,
    train_samples: list[TrainSample],
    test_samples: list[TrainSample],
) -> list[str]:
    """Setting-specific leakage scan; returns human-readable violations."""
    violations = []
    if split.setting == "instance":
        test_ids = set(split.test_ids)
        for s in train_samples:
            if s.instance_id in test_ids:
                violations.append(f"train sample uses held-out instance {s.instance_id}")
    elif split.setting == "class":
        test_classes = set(split.test_ids)
        for s in train_samples:
            if index.instances[s.instance_id].class_id in test_classes:
                violations.append(f"train sample uses held-out class via {s.instance_id}")
    else:
        test_tasks = set(split.test_ids)
        for s in train_samples:
            if s.task_id in test_tasks:
                violations.append(f"train sample references held-out task {s.task_id}")
        # same instances may appear on both sides in the task setting
        train_insts = {s.instance_id for s in train_samples}
        test_insts = {s.instance_id for s in test_samples}
        if not train_insts & test_insts:
            violations.append("task split expected shared instances across sides")
    return violations


@dataclass
class TrainResult:
    model: GraspEvaluator
    history: list[dict] = field(default_factory=list)
    train_seconds: float = 0.0


def _shuffled_labels(samples: list[TrainSample], seed: int) -> list[TrainSample]:
    """Control arm: permute labels across all training samples."""
    rng = np.random.default_rng(derive_seed(seed, "label-shuffle"))
    labels = [s.label for s in samples]
    perm = rng.permutation(len(labels))
    return [
        TrainSample(
            instance_id=s.instance_id,
            grasp_index=s.grasp_index,
            task_id=s.task_id,
            label=labels[perm[i]],
            seed=s.seed,
            class_id=s.class_id,
        )
        for i, s in enumerate(samples)
    ]


def fit_samples(
    samples: list[TrainSample],
    pipeline: FeaturePipeline,
    config: TrainConfig,
    model_cfg: ModelConfig,
    *,
    steps: int | None = None,
    val_fn=None,
    log_path: Path | str | None = None,
) -> TrainResult:
    """Train a fresh evaluator on the given samples.

    ``steps`` caps total optimizer steps (single-sample overfit checks);
    ``val_fn(model) -> float`` is probed per ``config.eval_every`` epochs.
    """
    if not samples:
        raise ValueError("no training samples")
    if config.shuffle_labels:
        samples = _shuffled_labels(samples, config.seed)
    torch.manual_seed(config.seed)
    model = GraspEvaluator(model_cfg)
    dtype = next(model.parameters()).dtype
    opt = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    history: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    start = time.perf_counter()
    step_count = 0
    try:
        for epoch in range(config.epochs):
            lr = config.learning_rate * (config.lr_decay**epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            order = np.random.default_rng(derive_seed(config.seed, "order", epoch)).permutation(
                len(samples)
            )
            model.train()
            losses = []
            for lo in range(0, len(order), config.batch_size):
                if steps is not None and step_count >= steps:
                    break
                chunk = [samples[i] for i in order[lo : lo + config.batch_size]]
                if config.augment:
                    raw = [pipeline.prepare_train(s, epoch) for s in chunk]
                else:
                    raw = [pipeline.prepare_eval(s) for s in chunk]
                batch = collate(raw, dtype)
                scores = model(batch, mode=config.mode)
                loss = bce_loss(scores, batch.labels)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}",
                        [f"{s.instance_id}/{s.grasp_index}/{s.task_id}" for s in chunk],
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss))
                step_count += 1
            mean_loss = float(np.mean(losses)) if losses else math.nan
            val_map = None
            is_last = epoch == config.epochs - 1 or (steps is not None and step_count >= steps)
            if val_fn is not None and (
                is_last or (config.eval_every > 0 and (epoch + 1) % config.eval_every == 0)
            ):
                val_map = float(val_fn(model))
            entry = {"epoch": epoch, "loss": mean_loss, "val_map": val_map, "lr": lr}
            history.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if steps is not None and step_count >= steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(model=model, history=history, train_seconds=time.perf_counter() - start)


def fit(
    index: DatasetIndex,
    split: SplitSpec,
    config: TrainConfig,
    model_cfg: ModelConfig | None = None,
    *,
    backends: Backends,
    bank: DescriptionBank,
    templates: InstructionTemplateSet | None = None,
    val_fn=None,
    log_path: Path | str | None = None,
) -> TrainResult:
    """Train on a split: enumerate train samples, build the feature pipeline,
    and run the seeded loop."""
    model_cfg = model_cfg or desk_config()
    model_cfg = model_cfg.replace(n_points=config.points_per_cloud)
    pipeline = FeaturePipeline(index, bank, backends, model_cfg, templates)
    samples = build_train_samples(index, split, base_seed=config.seed)
    return fit_samples(
        samples, pipeline, config, model_cfg, val_fn=val_fn, log_path=log_path
    )
