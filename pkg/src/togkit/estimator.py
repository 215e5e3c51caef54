"""Estimator-style facade over the training and evaluation pipeline.

``TaskGraspScorer`` follows the scikit-learn estimator conventions
(constructor params mirrored as attributes, ``fit`` returning self,
``get_params``/``set_params`` via ``BaseEstimator``) so the scorer composes
with standard tooling, while delegating the actual work to the training,
pipeline, and metrics modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backends import Backends, make_backends
from .configs import config_from_profile
from .dataset import DatasetIndex, SplitSpec
from .knowledge import (
    DescriptionBank,
    InstructionTemplateSet,
    OBJECT_KINDS,
    TASK_KINDS,
    ensure_descriptions,
)
from .metrics import EvalReport, ModelScorer, evaluate
from .pipeline import FeaturePipeline, TrainSample, derive_seed, score_samples
from .training import TrainConfig, build_train_samples, fit_samples


class TaskGraspScorer(BaseEstimator):
    """Trainable task-compatibility scorer for grasp candidates."""

    def __init__(
        self,
        profile: str = "desk",
        epochs: int = 50,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        weight_decay: float = 1e-4,
        lr_decay: float = 0.95,
        seed: int = 0,
        mode: str = "full",
        fusion: str = "cross-attention",
        points_per_cloud: int | None = None,
        n_augment: int = 2,
    ):
        self.profile = profile
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.seed = seed
        self.mode = mode
        self.fusion = fusion
        self.points_per_cloud = points_per_cloud
        self.n_augment = n_augment

    def _model_config(self):
        cfg = config_from_profile(self.profile, fusion=self.fusion)
        if self.points_per_cloud is not None:
            cfg = cfg.replace(n_points=self.points_per_cloud)
        return cfg

    def fit(
        self,
        dataset: DatasetIndex,
        split: SplitSpec,
        *,
        backends: Backends | None = None,
        knowledge: DescriptionBank | None = None,
        templates: InstructionTemplateSet | None = None,
    ) -> "TaskGraspScorer":
        if not isinstance(dataset, DatasetIndex):
            raise TypeError("fit expects a DatasetIndex")
        backends = backends or make_backends()
        bank = knowledge if knowledge is not None else DescriptionBank()
        ensure_descriptions(
            dataset.classes, OBJECT_KINDS, backends.generative, self.n_augment, bank
        )
        ensure_descriptions(dataset.tasks, TASK_KINDS, backends.generative, self.n_augment, bank)
        model_cfg = self._model_config()
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            lr_decay=self.lr_decay,
            seed=self.seed,
            mode=self.mode,
            points_per_cloud=model_cfg.n_points,
        )
        pipeline = FeaturePipeline(
            dataset, bank, backends, model_cfg, templates, n_augment=self.n_augment
        )
        samples = build_train_samples(dataset, split, base_seed=self.seed)
        result = fit_samples(samples, pipeline, config, model_cfg)
        self.model_ = result.model
        self.history_ = result.history
        self.pipeline_ = pipeline
        self.dataset_ = dataset
        self.split_ = split
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("this TaskGraspScorer has not been fitted")

    def predict_scores(
        self, instance_id: str, task: str, class_name: str | None = None
    ) -> np.ndarray:
        """Scores for every annotated candidate of one instance under an
        instruction naming (class, task)."""
        self._check_fitted()
        record = self.dataset_.instances[instance_id]
        samples = [
            TrainSample(
                instance_id=instance_id,
                grasp_index=gi,
                task_id=task,
                label=None,
                seed=derive_seed("predict", instance_id, gi, task),
                class_id=class_name,
            )
            for gi in range(len(record.grasps))
        ]
        return score_samples(self.model_, self.pipeline_, samples, mode=self.mode)

    def evaluate(self, split: SplitSpec | None = None) -> EvalReport:
        self._check_fitted()
        scorer = ModelScorer(self.model_, self.pipeline_, mode=self.mode)
        return evaluate(scorer, self.dataset_, split or self.split_)

    def score(self, X=None, y=None, split: SplitSpec | None = None) -> float:
        """Instance mAP on the held-out side (sklearn scoring convention)."""
        return self.evaluate(split).instance_map
