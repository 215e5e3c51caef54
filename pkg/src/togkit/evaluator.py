"""Task-oriented grasp evaluator: a two-branch transformer.

The semantic branch contextualizes instruction tokens with class and then
task description sequences through residual cross-attention decoder layers
(post-norm: LN(x + sublayer(x))). The geometric branch fuses
description-conditioned image features into point features with residual
cross-attention followed by self-attention rectification, then reduces the
point set with a final set-abstraction layer under global max pooling.
A sigmoid MLP head maps the concatenated branch embeddings to the
task-compatibility score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import ModelConfig
from .encoders import GeometricProjection, PointGraspEncoder, SemanticProjection

MODES = ("full", "semantic-only", "geometric-only", "vanilla", "concat-fusion")


class EvaluatorError(ValueError):
    """Raised for invalid evaluator inputs or mode/bundle mismatches."""


@dataclass
class FeatureBundle:
    """Projected features entering the evaluator (torch tensors, batched).

    Members a mode does not consume may be ``None``; using such a bundle
    with a mode that needs them is an error.
    """

    point_positions: torch.Tensor | None  # [B, S, 3]
    point_features: torch.Tensor | None  # [B, S, geo_width]
    instruction: torch.Tensor | None  # [B, T_L, sem_width]
    instruction_mask: torch.Tensor | None  # [B, T_L] bool
    class_semantic: torch.Tensor | None  # [B, T_c, sem_width]
    class_semantic_mask: torch.Tensor | None
    task_semantic: torch.Tensor | None  # [B, T_t, sem_width]
    task_semantic_mask: torch.Tensor | None
    image: torch.Tensor | None  # [B, hw, img_width]
    class_geometric: torch.Tensor | None  # [B, desc_width]
    task_geometric: torch.Tensor | None  # [B, desc_width]

    GEOMETRIC_MEMBERS = (
        "point_positions",
        "point_features",
        "image",
        "class_geometric",
        "task_geometric",
    )
    SEMANTIC_MEMBERS = (
        "instruction",
        "instruction_mask",
        "class_semantic",
        "class_semantic_mask",
        "task_semantic",
        "task_semantic_mask",
    )

    def require(self, members: tuple[str, ...], mode: str) -> None:
        for name in members:
            if getattr(self, name) is None:
                raise EvaluatorError(f"bundle member {name!r} is required for mode {mode!r}")

    def any_tensor(self) -> torch.Tensor:
        for name in self.SEMANTIC_MEMBERS + self.GEOMETRIC_MEMBERS:
            value = getattr(self, name)
            if value is not None:
                return value
        raise EvaluatorError("feature bundle is empty")


@dataclass
class ScoreResult:
    """Scores in (0, 1) with optionally retained branch embeddings."""

    scores: torch.Tensor  # [B]
    geometric_embedding: torch.Tensor | None = None  # [B, geo_pool]
    semantic_embedding: torch.Tensor | None = None  # [B, sem_pool]


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with masked keys excluded exactly.

    Masked key positions receive -inf logits, so their softmax weight is
    exactly zero; a batch row whose keys are all masked is an error.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise EvaluatorError(f"width {dim} does not divide into {heads} heads")
        self.heads = heads
        self.d_k = dim // heads
        self.q_proj = nn.Linear(dim, dim, bias=False)
        self.k_proj = nn.Linear(dim, dim, bias=False)
        self.v_proj = nn.Linear(dim, dim, bias=False)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,
        key_value: torch.Tensor,
        key_mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Input:
            query: [B, Tq, D]; key_value: [B, Tk, D]
            key_mask: [B, Tk] bool, True = attendable
        Return:
            output [B, Tq, D], attention weights [B, heads, Tq, Tk]
        """
        B, Tq, D = query.shape
        Tk = key_value.shape[1]
        if key_mask is not None:
            if key_mask.shape != (B, Tk):
                raise EvaluatorError("key mask length must equal key count")
            if not key_mask.any(dim=1).all():
                raise EvaluatorError("attention received a row with every key masked")
        q = self.q_proj(query).view(B, Tq, self.heads, self.d_k).transpose(1, 2)
        k = self.k_proj(key_value).view(B, Tk, self.heads, self.d_k).transpose(1, 2)
        v = self.v_proj(key_value).view(B, Tk, self.heads, self.d_k).transpose(1, 2)
        logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_k)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        out = torch.matmul(weights, v).transpose(1, 2).reshape(B, Tq, D)
        return self.out_proj(out), weights


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over unmasked rows of [B, T, D] given a [B, T] bool mask."""
    weights = mask.to(x.dtype)
    denom = weights.sum(dim=1, keepdim=True).clamp(min=1.0)
    return (x * weights.unsqueeze(-1)).sum(dim=1) / denom


class ConcatFuse(nn.Module):
    """Fusion ablation: channel-wise concatenation with the pooled knowledge
    sequence followed by a linear map, in place of cross-attention."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim)

    def forward(
        self, query: torch.Tensor, key_value: torch.Tensor, key_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, None]:
        if key_mask is not None:
            pooled = masked_mean(key_value, key_mask)
        else:
            pooled = key_value.mean(dim=1)
        pooled = pooled.unsqueeze(1).expand_as(query)
        return self.proj(torch.cat([query, pooled], dim=-1)), None


class SemanticFusionLayer(nn.Module):
    """Decoder layer: residual cross-attention to a description sequence,
    then a residual feed-forward block, each followed by layer norm."""

    def __init__(self, dim: int, heads: int, ffn_mult: int, fusion: str):
        super().__init__()
        self.fuse = MultiHeadAttention(dim, heads) if fusion == "cross-attention" else ConcatFuse(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult)
        self.norm2 = nn.LayerNorm(dim)
        self.last_weights: torch.Tensor | None = None

    def forward(
        self, x: torch.Tensor, desc: torch.Tensor, desc_mask: torch.Tensor
    ) -> torch.Tensor:
        fused, weights = self.fuse(x, desc, desc_mask)
        self.last_weights = weights
        x = self.norm1(x + fused)
        return self.norm2(x + self.ffn(x))


class GeometricFusionLayer(nn.Module):
    """Point-stream layer: residual cross-attention to description-conditioned
    image features, then residual self-attention rectification, each
    followed by layer norm."""

    def __init__(self, dim: int, heads: int, fusion: str):
        super().__init__()
        self.fuse = MultiHeadAttention(dim, heads) if fusion == "cross-attention" else ConcatFuse(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, image_desc: torch.Tensor) -> torch.Tensor:
        fused, weights = self.fuse(x, image_desc)
        self.last_weights = weights
        x = self.norm1(x + fused)
        rectified, _ = self.self_attn(x, x)
        return self.norm2(x + rectified)


class SemanticBranch(nn.Module):
    """Object-knowledge layer, then task-knowledge layer, then a mean pool
    over unmasked instruction tokens projected to the pooled width."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.object_layer = SemanticFusionLayer(cfg.sem_width, cfg.sem_heads, cfg.ffn_mult, cfg.fusion)
        self.task_layer = SemanticFusionLayer(cfg.sem_width, cfg.sem_heads, cfg.ffn_mult, cfg.fusion)
        self.pool_proj = nn.Linear(cfg.sem_width, cfg.sem_pool, bias=False)

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        x = self.object_layer(bundle.instruction, bundle.class_semantic, bundle.class_semantic_mask)
        x = self.task_layer(x, bundle.task_semantic, bundle.task_semantic_mask)
        return self.pool_proj(masked_mean(x, bundle.instruction_mask))


class FinalSetAbstraction(nn.Module):
    """Group-all SA layer: a shared per-point MLP over (xyz, features)
    followed by global max pooling."""

    def __init__(self, in_width: int, hidden: tuple[int, ...], out_width: int):
        super().__init__()
        layers: list[nn.Module] = []
        last = in_width + 3
        for width in hidden:
            layers.append(nn.Linear(last, width))
            last = width
        self.hidden = nn.ModuleList(layers)
        self.out = nn.Linear(last, out_width)

    def forward(self, positions: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        x = torch.cat([positions, features], dim=-1)
        for layer in self.hidden:
            x = F.relu(layer(x))
        return torch.max(self.out(x), dim=1)[0]


class GeometricBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.object_layer = GeometricFusionLayer(cfg.geo_width, cfg.geo_heads, cfg.fusion)
        self.task_layer = GeometricFusionLayer(cfg.geo_width, cfg.geo_heads, cfg.fusion)
        self.final_sa = FinalSetAbstraction(cfg.geo_width, cfg.final_sa_hidden, cfg.geo_pool)

    @staticmethod
    def condition_image(image: torch.Tensor, desc: torch.Tensor) -> torch.Tensor:
        """Broadcast a description vector across spatial cells and concatenate
        channel-wise with the image features."""
        tiled = desc.unsqueeze(1).expand(-1, image.shape[1], -1)
        return torch.cat([image, tiled], dim=-1)

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        x = self.object_layer(
            bundle.point_features,
            self.condition_image(bundle.image, bundle.class_geometric),
        )
        x = self.task_layer(
            x, self.condition_image(bundle.image, bundle.task_geometric)
        )
        return self.final_sa(bundle.point_positions, x)


class ScoreHead(nn.Module):
    """Concatenate branch embeddings, MLP with one hidden layer, sigmoid."""

    def __init__(self, geo_pool: int, sem_pool: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(geo_pool + sem_pool, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, geo: torch.Tensor, sem: torch.Tensor) -> torch.Tensor:
        x = torch.cat([geo, sem], dim=-1)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(x)))).squeeze(-1)


@dataclass
class RawBatch:
    """Backend-level inputs for a batch, before the trainable projections."""

    xyz: torch.Tensor  # [B, N+6, 3]
    indicator: torch.Tensor  # [B, N+6, 1]
    instruction: torch.Tensor  # [B, T_L, 768]
    instruction_mask: torch.Tensor
    class_semantic: torch.Tensor  # [B, T_c, 768]
    class_semantic_mask: torch.Tensor
    task_semantic: torch.Tensor  # [B, T_t, 768]
    task_semantic_mask: torch.Tensor
    image: torch.Tensor  # [B, h, w, 1024]
    class_geometric: torch.Tensor  # [B, 1024]
    task_geometric: torch.Tensor  # [B, 1024]
    labels: torch.Tensor | None = None  # [B]

    def to(self, dtype: torch.dtype) -> "RawBatch":
        def cast(t):
            return t.to(dtype) if t is not None and t.is_floating_point() else t

        return RawBatch(
            xyz=cast(self.xyz),
            indicator=cast(self.indicator),
            instruction=cast(self.instruction),
            instruction_mask=self.instruction_mask,
            class_semantic=cast(self.class_semantic),
            class_semantic_mask=self.class_semantic_mask,
            task_semantic=cast(self.task_semantic),
            task_semantic_mask=self.task_semantic_mask,
            image=cast(self.image),
            class_geometric=cast(self.class_geometric),
            task_geometric=cast(self.task_geometric),
            labels=cast(self.labels),
        )


class GraspEvaluator(nn.Module):
    """The full trainable scorer: point encoder, projections, both branches,
    and the sigmoid head.

    Ablation modes substitute a zero vector for a disabled branch, so the
    score is bit-for-bit invariant to that branch's inputs:

    - ``full``: both branches active.
    - ``semantic-only``: geometric branch replaced by zeros.
    - ``geometric-only``: semantic branch replaced by zeros.
    - ``vanilla``: both branches replaced by zeros (bias-only baseline).
    - ``concat-fusion``: full composition on a model built with
      ``fusion="concat"``.
    """

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.point_encoder = PointGraspEncoder(cfg.point_encoder)
        self.semantic_proj = SemanticProjection(cfg.token_dim, cfg.sem_width)
        self.geometric_proj = GeometricProjection(
            cfg.image_feature_dim, cfg.geo_text_dim, cfg.img_width, cfg.desc_width
        )
        self.semantic_branch = SemanticBranch(cfg)
        self.geometric_branch = GeometricBranch(cfg)
        self.head = ScoreHead(cfg.geo_pool, cfg.sem_pool, cfg.head_hidden)
        self.apply_default_init()
        self.to(dtype)

    def apply_default_init(self) -> None:
        """Orthogonal init scaled 0.1 everywhere; attention and head output
        projections start at zero so knowledge layers begin on the identity
        path and the initial score is exactly 0.5."""
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                nn.init.orthogonal_(module.weight.view(module.weight.shape[0], -1), gain=0.1)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        for module in self.modules():
            if isinstance(module, MultiHeadAttention):
                nn.init.zeros_(module.out_proj.weight)
                nn.init.zeros_(module.out_proj.bias)
            elif isinstance(module, ConcatFuse):
                nn.init.zeros_(module.proj.weight)
                nn.init.zeros_(module.proj.bias)
        nn.init.zeros_(self.head.fc2.weight)
        nn.init.zeros_(self.head.fc2.bias)

    def check_mode(self, mode: str) -> str:
        if mode not in MODES:
            raise EvaluatorError(f"unknown mode {mode!r}; choose from {MODES}")
        if mode == "concat-fusion":
            if self.cfg.fusion != "concat":
                raise EvaluatorError(
                    "concat-fusion mode requires a model built with fusion='concat'"
                )
            return "full"
        return mode

    def project_features(self, raw: RawBatch) -> FeatureBundle:
        positions, point_feats = self.point_encoder(raw.xyz, raw.indicator)
        return FeatureBundle(
            point_positions=positions,
            point_features=point_feats,
            instruction=self.semantic_proj(raw.instruction),
            instruction_mask=raw.instruction_mask,
            class_semantic=self.semantic_proj(raw.class_semantic),
            class_semantic_mask=raw.class_semantic_mask,
            task_semantic=self.semantic_proj(raw.task_semantic),
            task_semantic_mask=raw.task_semantic_mask,
            image=self.geometric_proj.project_image(raw.image),
            class_geometric=self.geometric_proj.project_text(raw.class_geometric),
            task_geometric=self.geometric_proj.project_text(raw.task_geometric),
        )

    def tge_forward(
        self, bundle: FeatureBundle, mode: str = "full", keep_embeddings: bool = False
    ) -> ScoreResult:
        mode = self.check_mode(mode)
        B = bundle.any_tensor().shape[0]
        dtype, device = self.head.fc1.weight.dtype, self.head.fc1.weight.device
        if mode in ("full", "geometric-only"):
            bundle.require(FeatureBundle.GEOMETRIC_MEMBERS, mode)
            geo = self.geometric_branch(bundle)
        else:
            geo = torch.zeros(B, self.cfg.geo_pool, dtype=dtype, device=device)
        if mode in ("full", "semantic-only"):
            bundle.require(FeatureBundle.SEMANTIC_MEMBERS, mode)
            sem = self.semantic_branch(bundle)
        else:
            sem = torch.zeros(B, self.cfg.sem_pool, dtype=dtype, device=device)
        scores = self.head(geo, sem)
        return ScoreResult(
            scores=scores,
            geometric_embedding=geo if keep_embeddings else None,
            semantic_embedding=sem if keep_embeddings else None,
        )

    def forward(self, raw: RawBatch, mode: str = "full") -> torch.Tensor:
        return self.tge_forward(self.project_features(raw), mode).scores
