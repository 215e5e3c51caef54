"""Model architecture configuration and named profiles.

``default`` mirrors the full-scale architecture (512/256-wide streams,
128/300-d pooled embeddings, 4096-point clouds). ``desk`` shrinks every
count for CPU-scale training on the synthetic benchmark, and ``minimal``
is small enough for exhaustive finite-difference gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class SAStageConfig:
    """One set-abstraction stage with multi-scale grouping."""

    npoint: int
    radii: tuple[float, ...]
    nsamples: tuple[int, ...]
    mlps: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not (len(self.radii) == len(self.nsamples) == len(self.mlps)):
            raise ValueError("radii, nsamples, and mlps must be aligned per scale")

    @property
    def out_channels(self) -> int:
        return sum(m[-1] for m in self.mlps)


@dataclass(frozen=True)
class PointEncoderConfig:
    stages: tuple[SAStageConfig, ...]
    out_width: int  # width after the per-point reduction MLP

    @property
    def n_reduced(self) -> int:
        return self.stages[-1].npoint

    @property
    def feature_width(self) -> int:
        return self.stages[-1].out_channels


@dataclass(frozen=True)
class ModelConfig:
    """Every width/size knob of the encoders and the two-branch evaluator."""

    point_encoder: PointEncoderConfig
    n_points: int = 4096
    token_dim: int = 768
    geo_text_dim: int = 1024
    image_feature_dim: int = 1024
    image_grid: int = 7
    sem_width: int = 512
    geo_width: int = 256
    img_width: int = 128
    desc_width: int = 128
    sem_heads: int = 8
    geo_heads: int = 4
    ffn_mult: int = 4
    sem_pool: int = 128
    geo_pool: int = 300
    final_sa_hidden: tuple[int, ...] = (256,)
    head_hidden: int = 128
    max_instruction_tokens: int = 16
    max_description_tokens: int = 64
    fusion: str = "cross-attention"  # or "concat"

    def __post_init__(self) -> None:
        if self.img_width + self.desc_width != self.geo_width:
            raise ValueError("img_width + desc_width must equal geo_width")
        if self.sem_width % self.sem_heads or self.geo_width % self.geo_heads:
            raise ValueError("stream widths must divide evenly into heads")
        if self.point_encoder.out_width != self.geo_width:
            raise ValueError("point encoder output width must match geo stream width")
        if self.fusion not in ("cross-attention", "concat"):
            raise ValueError(f"unknown fusion strategy {self.fusion!r}")

    def replace(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


def default_config() -> ModelConfig:
    point = PointEncoderConfig(
        stages=(
            SAStageConfig(512, (0.02, 0.05), (16, 32), ((32, 32, 64), (64, 64, 128))),
            SAStageConfig(128, (0.05, 0.1), (16, 32), ((64, 64, 128), (128, 128, 256))),
            SAStageConfig(64, (0.1, 0.2), (16, 32), ((256, 256, 512), (256, 384, 512))),
        ),
        out_width=256,
    )
    return ModelConfig(point_encoder=point)


def desk_config() -> ModelConfig:
    """CPU-scale profile for the synthetic benchmark."""
    point = PointEncoderConfig(
        stages=(
            SAStageConfig(48, (0.04, 0.08), (8, 16), ((16, 32), (16, 32))),
            SAStageConfig(24, (0.08, 0.16), (8, 16), ((32, 64), (32, 64))),
            SAStageConfig(12, (0.16, 0.35), (8, 16), ((64, 128), (64, 128))),
        ),
        out_width=64,
    )
    return ModelConfig(
        point_encoder=point,
        n_points=192,
        image_grid=7,
        sem_width=64,
        geo_width=64,
        img_width=32,
        desc_width=32,
        sem_heads=2,
        geo_heads=2,
        ffn_mult=2,
        sem_pool=32,
        geo_pool=48,
        final_sa_hidden=(64,),
        head_hidden=32,
        max_instruction_tokens=16,
        max_description_tokens=48,
    )


def minimal_config() -> ModelConfig:
    """Tiny profile for finite-difference gradient verification."""
    point = PointEncoderConfig(
        stages=(
            SAStageConfig(16, (0.3, 0.6), (4, 4), ((4, 6), (4, 6))),
            SAStageConfig(12, (0.5, 0.9), (4, 4), ((6, 8), (6, 8))),
            SAStageConfig(8, (0.8, 1.4), (4, 4), ((8, 8), (8, 8))),
        ),
        out_width=8,
    )
    return ModelConfig(
        point_encoder=point,
        n_points=32,
        image_grid=2,
        sem_width=8,
        geo_width=8,
        img_width=4,
        desc_width=4,
        sem_heads=1,
        geo_heads=1,
        ffn_mult=2,
        sem_pool=6,
        geo_pool=10,
        final_sa_hidden=(10,),
        head_hidden=8,
        max_instruction_tokens=4,
        max_description_tokens=6,
    )


PROFILES = {
    "default": default_config,
    "desk": desk_config,
    "minimal": minimal_config,
}


def config_from_profile(name: str, **overrides) -> ModelConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown model profile {name!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[name]()
    return cfg.replace(**overrides) if overrides else cfg


def config_to_dict(cfg: ModelConfig) -> dict:
    doc = {
        f.name: getattr(cfg, f.name)
        for f in cfg.__dataclass_fields__.values()
        if f.name != "point_encoder"
    }
    doc["final_sa_hidden"] = list(cfg.final_sa_hidden)
    doc["point_encoder"] = {
        "out_width": cfg.point_encoder.out_width,
        "stages": [
            {
                "npoint": s.npoint,
                "radii": list(s.radii),
                "nsamples": list(s.nsamples),
                "mlps": [list(m) for m in s.mlps],
            }
            for s in cfg.point_encoder.stages
        ],
    }
    return doc


def config_from_dict(doc: dict) -> ModelConfig:
    pe = doc["point_encoder"]
    point = PointEncoderConfig(
        stages=tuple(
            SAStageConfig(
                npoint=int(s["npoint"]),
                radii=tuple(float(r) for r in s["radii"]),
                nsamples=tuple(int(n) for n in s["nsamples"]),
                mlps=tuple(tuple(int(c) for c in m) for m in s["mlps"]),
            )
            for s in pe["stages"]
        ),
        out_width=int(pe["out_width"]),
    )
    kwargs = {k: v for k, v in doc.items() if k != "point_encoder"}
    kwargs["final_sa_hidden"] = tuple(kwargs.get("final_sa_hidden", (256,)))
    return ModelConfig(point_encoder=point, **kwargs)
