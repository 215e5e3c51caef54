"""Sample preparation: from dataset records and knowledge banks to the
tensor batches consumed by the evaluator.

Every random choice (augmentation, description combination, template and
image picks) is driven by seeds derived with a keyed hash, so preparation
is deterministic and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import blake2b

import numpy as np
import torch

from .backends import Backends
from .configs import ModelConfig
from .dataset import DatasetIndex
from .encoders import build_object_grasp_points
from .evaluator import RawBatch
from .geometry import (
    AugmentConfig,
    DEFAULT_AUGMENT,
    PointCloud,
    augment_cloud_and_pose,
    downsample,
    pose_to_control_points,
)
from .knowledge import (
    DescriptionBank,
    InstructionTemplateSet,
    OBJECT_KINDS,
    PromptSet,
    TASK_KINDS,
    assemble_paragraph,
    default_templates,
    ensure_descriptions,
    instantiate_instruction,
)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of hashable parts."""
    key = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(blake2b(key.encode("utf-8"), digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class TrainSample:
    """One (instance, grasp, task) triple with its label and seed material.

    ``class_id`` overrides the instance's class in the instruction and
    knowledge context; scoring mismatched instructions uses this hook.
    """

    instance_id: str
    grasp_index: int
    task_id: str
    label: int | None
    seed: int
    class_id: str | None = None


@dataclass
class RawSample:
    xyz: np.ndarray
    indicator: np.ndarray
    instruction: np.ndarray
    instruction_mask: np.ndarray
    class_semantic: np.ndarray
    class_semantic_mask: np.ndarray
    task_semantic: np.ndarray
    task_semantic_mask: np.ndarray
    image: np.ndarray
    class_geometric: np.ndarray
    task_geometric: np.ndarray
    label: int | None


class FeaturePipeline:
    """Prepares model inputs from dataset records, knowledge, and backends."""

    def __init__(
        self,
        index: DatasetIndex,
        bank: DescriptionBank,
        backends: Backends,
        model_cfg: ModelConfig,
        templates: InstructionTemplateSet | None = None,
        *,
        augment_cfg: AugmentConfig = DEFAULT_AUGMENT,
        n_augment: int = 2,
        prompt_sets: dict[str, PromptSet] | None = None,
    ):
        self.index = index
        self.bank = bank
        self.backends = backends
        self.cfg = model_cfg
        self.templates = templates or default_templates()
        self.augment_cfg = augment_cfg
        self.n_augment = n_augment
        self.prompt_sets = prompt_sets
        self._eval_cloud_cache: dict[str, PointCloud] = {}
        self._eval_ctx_cache: dict[tuple[str, str, str], dict] = {}

    def _ensure_knowledge(self, class_id: str, task_id: str) -> None:
        """Novel classes/tasks get descriptions generated on the fly, by the
        same procedure used offline."""
        if not self.bank.has_target(class_id, OBJECT_KINDS):
            ensure_descriptions(
                [class_id], OBJECT_KINDS, self.backends.generative, self.n_augment,
                self.bank, self.prompt_sets,
            )
        if not self.bank.has_target(task_id, TASK_KINDS):
            ensure_descriptions(
                [task_id], TASK_KINDS, self.backends.generative, self.n_augment,
                self.bank, self.prompt_sets,
            )

    def _context_arrays(self, class_id: str, task_id: str, seed: int) -> dict:
        """Instruction and knowledge embeddings for a (class, task) pairing."""
        self._ensure_knowledge(class_id, task_id)
        cfg, be = self.cfg, self.backends
        instruction = instantiate_instruction(
            self.templates, class_id, task_id, derive_seed(seed, "instr")
        )
        sem_c = assemble_paragraph(self.bank, class_id, "semantic", derive_seed(seed, "sem-c"))
        sem_t = assemble_paragraph(self.bank, task_id, "semantic", derive_seed(seed, "sem-t"))
        geo_c = assemble_paragraph(self.bank, class_id, "geometric", derive_seed(seed, "geo-c"))
        geo_t = assemble_paragraph(self.bank, task_id, "geometric", derive_seed(seed, "geo-t"))
        instr_emb = be.semantic.embed(instruction, cfg.max_instruction_tokens)
        sem_c_emb = be.semantic.embed(sem_c, cfg.max_description_tokens)
        sem_t_emb = be.semantic.embed(sem_t, cfg.max_description_tokens)
        return {
            "instruction": instr_emb.vectors,
            "instruction_mask": instr_emb.mask,
            "class_semantic": sem_c_emb.vectors,
            "class_semantic_mask": sem_c_emb.mask,
            "task_semantic": sem_t_emb.vectors,
            "task_semantic_mask": sem_t_emb.mask,
            "class_geometric": be.multimodal.embed_text(geo_c).vector,
            "task_geometric": be.multimodal.embed_text(geo_t).vector,
        }

    def _image_array(self, instance_id: str, seed: int) -> np.ndarray:
        images = self.index.instances[instance_id].images
        if not images:
            raise ValueError(f"instance {instance_id!r} has no images")
        pick = int(derive_seed(seed, "img") % len(images))
        return self.backends.multimodal.embed_image(images[pick]).grid

    def prepare_train(self, sample: TrainSample, epoch: int) -> RawSample:
        inst = self.index.instances[sample.instance_id]
        grasp = inst.grasps[sample.grasp_index]
        seed = derive_seed(sample.seed, epoch)
        cloud, pose = augment_cloud_and_pose(
            inst.cloud, grasp.pose, derive_seed(seed, "aug"), self.augment_cfg
        )
        cloud = downsample(cloud, self.cfg.n_points)
        xyz, indicator = build_object_grasp_points(cloud, pose_to_control_points(pose))
        class_id = sample.class_id or inst.class_id
        ctx = self._context_arrays(class_id, sample.task_id, seed)
        return RawSample(
            xyz=xyz,
            indicator=indicator,
            image=self._image_array(sample.instance_id, seed),
            label=sample.label,
            **ctx,
        )

    def prepare_eval(self, sample: TrainSample) -> RawSample:
        """Deterministic, augmentation-free preparation.

        The knowledge context is shared by all candidates of one
        (instance, class, task) triple, mirroring batch evaluation of a
        candidate set under a single instruction.
        """
        inst = self.index.instances[sample.instance_id]
        grasp = inst.grasps[sample.grasp_index]
        cloud = self._eval_cloud_cache.get(sample.instance_id)
        if cloud is None:
            cloud = downsample(inst.cloud, self.cfg.n_points)
            self._eval_cloud_cache[sample.instance_id] = cloud
        xyz, indicator = build_object_grasp_points(cloud, pose_to_control_points(grasp.pose))
        class_id = sample.class_id or inst.class_id
        ctx_key = (sample.instance_id, class_id, sample.task_id)
        cached = self._eval_ctx_cache.get(ctx_key)
        if cached is None:
            ctx_seed = derive_seed("eval", sample.instance_id, class_id, sample.task_id)
            cached = dict(self._context_arrays(class_id, sample.task_id, ctx_seed))
            cached["image"] = self._image_array(sample.instance_id, ctx_seed)
            self._eval_ctx_cache[ctx_key] = cached
        return RawSample(
            xyz=xyz,
            indicator=indicator,
            label=sample.label,
            **cached,
        )


def collate(samples: list[RawSample], dtype: torch.dtype = torch.float32) -> RawBatch:
    """Stack prepared samples into a batch of torch tensors."""

    def stack(name: str) -> torch.Tensor:
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples])).to(dtype)

    def stack_mask(name: str) -> torch.Tensor:
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples]))

    labels = None
    if all(s.label is not None for s in samples):
        labels = torch.tensor([float(s.label) for s in samples], dtype=dtype)
    return RawBatch(
        xyz=stack("xyz"),
        indicator=stack("indicator"),
        instruction=stack("instruction"),
        instruction_mask=stack_mask("instruction_mask"),
        class_semantic=stack("class_semantic"),
        class_semantic_mask=stack_mask("class_semantic_mask"),
        task_semantic=stack("task_semantic"),
        task_semantic_mask=stack_mask("task_semantic_mask"),
        image=stack("image"),
        class_geometric=stack("class_geometric"),
        task_geometric=stack("task_geometric"),
        labels=labels,
    )


def score_samples(
    model,
    pipeline: FeaturePipeline,
    samples: list[TrainSample],
    mode: str = "full",
    batch_size: int = 64,
) -> np.ndarray:
    """Score prepared eval samples in batches; returns an array of scores."""
    dtype = next(model.parameters()).dtype
    scores = np.empty(len(samples), dtype=np.float64)
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            batch = collate([pipeline.prepare_eval(s) for s in chunk], dtype)
            out = model(batch, mode=mode)
            scores[start : start + len(chunk)] = out.double().numpy()
    return scores
