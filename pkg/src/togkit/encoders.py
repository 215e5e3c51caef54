"""Trainable encoders: joint object+grasp point encoding via hierarchical
set abstraction with multi-scale grouping, plus the linear projections that
bring backend embeddings down to the evaluator stream widths.

Projection layers are bias-free so zero-padded rows stay zero and the
padding masks remain the single source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backends import ImageFeatureMap, TokenSequenceEmbedding
from .configs import ModelConfig, PointEncoderConfig
from .geometry import ControlPointSet, PointCloud


def square_distance(src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """Pairwise squared distances between point sets [B, N, 3] and [B, M, 3]."""
    dist = -2 * torch.matmul(src, dst.transpose(1, 2))
    dist += torch.sum(src**2, dim=-1, keepdim=True)
    dist += torch.sum(dst**2, dim=-1).unsqueeze(1)
    return dist


def index_points(points: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Gather rows from [B, N, C] by an index tensor [B, ...]."""
    batch = torch.arange(points.shape[0], device=points.device)
    batch = batch.view(-1, *([1] * (idx.dim() - 1))).expand_as(idx)
    return points[batch, idx]


def farthest_point_sample(xyz: torch.Tensor, npoint: int) -> torch.Tensor:
    """Greedy farthest point sampling with fixed start index 0 per batch row."""
    B, N, _ = xyz.shape
    idx = torch.zeros(B, npoint, dtype=torch.long, device=xyz.device)
    distance = torch.full((B, N), float("inf"), dtype=xyz.dtype, device=xyz.device)
    farthest = torch.zeros(B, dtype=torch.long, device=xyz.device)
    batch = torch.arange(B, device=xyz.device)
    for i in range(npoint):
        idx[:, i] = farthest
        centroid = xyz[batch, farthest].unsqueeze(1)
        dist = torch.sum((xyz - centroid) ** 2, dim=-1)
        distance = torch.minimum(distance, dist)
        farthest = torch.argmax(distance, dim=-1)
    return idx


def query_ball_point(
    radius: float, nsample: int, xyz: torch.Tensor, centers: torch.Tensor
) -> torch.Tensor:
    """Indices of up to ``nsample`` points within ``radius`` of each center.

    Groups short of ``nsample`` members are padded with their first member.
    """
    B, N, _ = xyz.shape
    S = centers.shape[1]
    group_idx = torch.arange(N, device=xyz.device).view(1, 1, N).repeat(B, S, 1)
    sqrdists = square_distance(centers, xyz)
    group_idx[sqrdists > radius**2] = N
    group_idx = group_idx.sort(dim=-1)[0][:, :, :nsample]
    first = group_idx[:, :, :1].repeat(1, 1, nsample)
    mask = group_idx == N
    group_idx[mask] = first[mask]
    return group_idx


class SetAbstractionMSG(nn.Module):
    """One PointNet++-style stage: sample centroids, group at several radii,
    run a shared MLP per scale, and max-pool each group."""

    def __init__(self, npoint, radii, nsamples, in_channel, mlps):
        super().__init__()
        self.npoint = npoint
        self.radii = list(radii)
        self.nsamples = list(nsamples)
        self.scale_convs = nn.ModuleList()
        for mlp in mlps:
            convs = nn.ModuleList()
            last = in_channel + 3
            for out in mlp:
                convs.append(nn.Conv2d(last, out, 1))
                last = out
            self.scale_convs.append(convs)

    def forward(self, xyz: torch.Tensor, feats: torch.Tensor):
        """
        Input:
            xyz: positions [B, N, 3]
            feats: per-point features [B, N, C]
        Return:
            new_xyz: centroid positions [B, S, 3]
            new_feats: concatenated multi-scale features [B, S, C']
        """
        B, N, _ = xyz.shape
        fps_idx = farthest_point_sample(xyz, self.npoint)
        new_xyz = index_points(xyz, fps_idx)
        scale_outputs = []
        for radius, nsample, convs in zip(self.radii, self.nsamples, self.scale_convs):
            group_idx = query_ball_point(radius, nsample, xyz, new_xyz)
            grouped_xyz = index_points(xyz, group_idx) - new_xyz.unsqueeze(2)
            grouped = torch.cat([grouped_xyz, index_points(feats, group_idx)], dim=-1)
            grouped = grouped.permute(0, 3, 2, 1)  # [B, C+3, nsample, S]
            for conv in convs:
                grouped = F.relu(conv(grouped))
            scale_outputs.append(torch.max(grouped, dim=2)[0])  # [B, C', S]
        return new_xyz, torch.cat(scale_outputs, dim=1).permute(0, 2, 1)


class PointGraspEncoder(nn.Module):
    """Joint object+grasp encoder: an indicator channel marks grasp points,
    three SA stages produce localized features, and a bias-free linear+ReLU
    reduces them to the evaluator's point-stream width."""

    def __init__(self, cfg: PointEncoderConfig):
        super().__init__()
        self.cfg = cfg
        stages = []
        in_channel = 1  # the object/grasp indicator
        for stage in cfg.stages:
            stages.append(
                SetAbstractionMSG(stage.npoint, stage.radii, stage.nsamples, in_channel, stage.mlps)
            )
            in_channel = stage.out_channels
        self.stages = nn.ModuleList(stages)
        self.reduce = nn.Linear(cfg.feature_width, cfg.out_width, bias=False)

    def forward(self, xyz: torch.Tensor, indicator: torch.Tensor):
        """
        Input:
            xyz: object+grasp positions [B, N+6, 3]
            indicator: 0 for object points, 1 for grasp points [B, N+6, 1]
        Return:
            positions [B, S, 3], features [B, S, out_width]
        """
        feats = indicator
        for stage in self.stages:
            xyz, feats = stage(xyz, feats)
        return xyz, F.relu(self.reduce(feats))


class SemanticProjection(nn.Module):
    """Shared linear map from backend token vectors to the semantic width."""

    def __init__(self, token_dim: int, sem_width: int):
        super().__init__()
        self.proj = nn.Linear(token_dim, sem_width, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.proj(tokens)


class GeometricProjection(nn.Module):
    """Linear maps for the flattened image grid and geometric text vectors."""

    def __init__(self, image_dim: int, text_dim: int, img_width: int, desc_width: int):
        super().__init__()
        self.image_proj = nn.Linear(image_dim, img_width, bias=False)
        self.text_proj = nn.Linear(text_dim, desc_width, bias=False)

    def project_image(self, grid: torch.Tensor) -> torch.Tensor:
        """Flatten [B, h, w, D] row-major (cell (r, c) -> row r*w + c) and project."""
        B, h, w, d = grid.shape
        return self.image_proj(grid.reshape(B, h * w, d))

    def project_text(self, vec: torch.Tensor) -> torch.Tensor:
        return self.text_proj(vec)


@dataclass(frozen=True)
class PointFeatureSet:
    """Reduced point set with per-point features."""

    positions: np.ndarray  # (S, 3)
    features: np.ndarray  # (S, d)


@dataclass(frozen=True)
class ProjectedSemantic:
    instruction: np.ndarray  # (T_L, sem_width)
    instruction_mask: np.ndarray
    class_desc: np.ndarray  # (T_c, sem_width)
    class_mask: np.ndarray
    task_desc: np.ndarray  # (T_t, sem_width)
    task_mask: np.ndarray


@dataclass(frozen=True)
class ProjectedGeometric:
    image: np.ndarray  # (h*w, img_width)
    class_desc: np.ndarray  # (desc_width,)
    task_desc: np.ndarray  # (desc_width,)


def build_object_grasp_points(
    pc: PointCloud, cps: ControlPointSet
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate object and grasp points and build the indicator channel."""
    xyz = np.concatenate([pc.points, cps.points], axis=0)
    indicator = np.zeros((xyz.shape[0], 1), dtype=np.float64)
    indicator[pc.n :, 0] = 1.0
    return xyz, indicator


def encode_object_grasp(
    pc: PointCloud, cps: ControlPointSet, encoder: PointGraspEncoder
) -> PointFeatureSet:
    """Run the point encoder on one (cloud, grasp) pair."""
    xyz, indicator = build_object_grasp_points(pc, cps)
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        pos, feat = encoder(
            torch.from_numpy(xyz).to(dtype).unsqueeze(0),
            torch.from_numpy(indicator).to(dtype).unsqueeze(0),
        )
    return PointFeatureSet(
        positions=pos.squeeze(0).double().numpy(), features=feat.squeeze(0).double().numpy()
    )


def project_semantic(
    instruction: TokenSequenceEmbedding,
    class_desc: TokenSequenceEmbedding,
    task_desc: TokenSequenceEmbedding,
    projection: SemanticProjection,
) -> ProjectedSemantic:
    """Project the three token sequences; masks pass through unchanged."""
    dtype = next(projection.parameters()).dtype

    def run(emb: TokenSequenceEmbedding) -> np.ndarray:
        with torch.no_grad():
            out = projection(torch.from_numpy(emb.vectors).to(dtype))
        return out.double().numpy()

    return ProjectedSemantic(
        instruction=run(instruction),
        instruction_mask=instruction.mask.copy(),
        class_desc=run(class_desc),
        class_mask=class_desc.mask.copy(),
        task_desc=run(task_desc),
        task_mask=task_desc.mask.copy(),
    )


def project_geometric(
    image: ImageFeatureMap,
    class_vec: np.ndarray,
    task_vec: np.ndarray,
    projection: GeometricProjection,
) -> ProjectedGeometric:
    dtype = next(projection.parameters()).dtype
    with torch.no_grad():
        img = projection.project_image(torch.from_numpy(image.grid).to(dtype).unsqueeze(0))
        cls = projection.project_text(torch.from_numpy(np.asarray(class_vec)).to(dtype))
        tsk = projection.project_text(torch.from_numpy(np.asarray(task_vec)).to(dtype))
    return ProjectedGeometric(
        image=img.squeeze(0).double().numpy(),
        class_desc=cls.double().numpy(),
        task_desc=tsk.double().numpy(),
    )


def check_point_budget(cfg: ModelConfig) -> None:
    """The reduced point count cannot exceed the encoder input size."""
    if cfg.point_encoder.n_reduced > cfg.n_points + 6:
        raise ValueError(
            f"reduced point count {cfg.point_encoder.n_reduced} exceeds input size {cfg.n_points + 6}"
        )
