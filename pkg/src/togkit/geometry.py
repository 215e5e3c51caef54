"""Point-cloud and grasp-frame primitives.

All coordinates are meters in the object frame, whose origin sits at the
point-cloud centroid. A grasp pose is an SE(3) transform mapping the
canonical gripper control-point template into the object frame.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Raised when geometric inputs violate their contracts."""


ROTATION_TOL = 1e-6
RIGIDITY_TOL = 1e-6

# Six control points of a parallel-jaw gripper (82 mm aperture): base, wrist,
# left/right fingertip, left/right finger root. Meters, gripper frame with
# +z as the approach direction and fingers opening along x.
GRIPPER_CONTROL_POINTS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.059],
        [0.041, 0.0, 0.112],
        [-0.041, 0.0, 0.112],
        [0.041, 0.0, 0.066],
        [-0.041, 0.0, 0.066],
    ],
    dtype=np.float64,
)


def _check_points(points: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"{name} must be an (N, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise GeometryError(f"{name} must contain at least one point")
    if not np.isfinite(arr).all():
        raise GeometryError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Object geometry as an (N, 3) array of finite coordinates."""

    points: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _check_points(self.points, "points"))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def centered(self) -> tuple["PointCloud", np.ndarray]:
        """Return a copy with zero centroid and the offset that was removed."""
        offset = self.centroid()
        return PointCloud(self.points - offset), offset

    def is_centered(self, tol: float = 1e-6) -> bool:
        return bool(np.max(np.abs(self.centroid())) <= tol)


@dataclass(frozen=True)
class GraspPose:
    """6-DoF grasp of a parallel-jaw gripper: rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (3,):
            raise GeometryError(f"translation must be a 3-vector, got {trans.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise GeometryError("grasp pose contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ROTATION_TOL:
            raise GeometryError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise GeometryError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class ControlPointSet:
    """The six gripper control points expressed in the object frame."""

    points: np.ndarray

    def __post_init__(self) -> None:
        arr = _check_points(self.points, "control points")
        if arr.shape[0] != 6:
            raise GeometryError(f"control point set must have 6 points, got {arr.shape[0]}")
        object.__setattr__(self, "points", arr)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def pairwise_distances(self) -> np.ndarray:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))

    def is_rigid(self, template: np.ndarray | None = None, tol: float = RIGIDITY_TOL) -> bool:
        ref = ControlPointSet(GRIPPER_CONTROL_POINTS if template is None else template)
        return bool(np.max(np.abs(self.pairwise_distances() - ref.pairwise_distances())) <= tol)


def pose_to_control_points(
    pose: GraspPose, template: np.ndarray | None = None
) -> ControlPointSet:
    """Embed a grasp pose as gripper control points in the object frame."""
    tpl = GRIPPER_CONTROL_POINTS if template is None else _check_points(template, "template")
    return ControlPointSet(pose.apply(tpl))


def fps_select(points: np.ndarray, count: int, start_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling over an (M, 3) array.

    Each chosen index maximizes the squared distance to the already-chosen
    set; ties break to the lowest index. Deterministic given ``start_index``.
    """
    pts = _check_points(points, "points")
    m = pts.shape[0]
    if not 1 <= count <= m:
        raise GeometryError(f"count must be in [1, {m}], got {count}")
    if not 0 <= start_index < m:
        raise GeometryError(f"start_index must be in [0, {m}), got {start_index}")
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start_index
    d2 = ((pts - pts[start_index]) ** 2).sum(axis=1)
    d2[start_index] = -1.0  # chosen points cannot be re-selected
    for i in range(1, count):
        nxt = int(np.argmax(d2))  # argmax returns the first (lowest) index on ties
        selected[i] = nxt
        nd = ((pts - pts[nxt]) ** 2).sum(axis=1)
        np.minimum(d2, nd, out=d2)
        d2[nxt] = -1.0
    return selected


def downsample(pc: PointCloud, n: int) -> PointCloud:
    """Resample a cloud to exactly ``n`` points.

    Clouds larger than ``n`` are FPS-thinned (start index 0); smaller clouds
    are resampled with replacement by cycling indices.
    """
    if n <= 0:
        raise GeometryError(f"target point count must be positive, got {n}")
    if pc.n > n:
        return PointCloud(pc.points[fps_select(pc.points, n)])
    if pc.n == n:
        return PointCloud(pc.points.copy())
    idx = np.arange(n) % pc.n
    return PointCloud(pc.points[idx])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (Shoemake quaternion sampling)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    w = a * np.sin(2.0 * np.pi * u2)
    x = a * np.cos(2.0 * np.pi * u2)
    y = b * np.sin(2.0 * np.pi * u3)
    z = b * np.cos(2.0 * np.pi * u3)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class AugmentConfig:
    """Cloud augmentation magnitudes: scale, rotation, jitter, dropout."""

    scale_range: tuple[float, float] = (0.8, 1.25)
    jitter_sigma: float = 0.005
    jitter_clip: float = 0.02
    keep_prob: float = 0.875

    def replace(self, **kwargs) -> "AugmentConfig":
        return dataclasses.replace(self, **kwargs)


DEFAULT_AUGMENT = AugmentConfig()


@dataclass(frozen=True)
class AugmentTransform:
    """The rigid part of an augmentation: uniform scale then rotation."""

    scale: float
    rotation: np.ndarray


def sample_augment_transform(
    rng: np.random.Generator, cfg: AugmentConfig = DEFAULT_AUGMENT
) -> AugmentTransform:
    lo, hi = cfg.scale_range
    return AugmentTransform(scale=float(rng.uniform(lo, hi)), rotation=random_rotation(rng))


def transform_grasp_pose(pose: GraspPose, transform: AugmentTransform) -> GraspPose:
    """Carry a grasp pose through the rigid part of an augmentation.

    The gripper itself does not scale, so only the translation picks up the
    object's scale factor.
    """
    return GraspPose(
        rotation=transform.rotation @ pose.rotation,
        translation=transform.scale * (transform.rotation @ pose.translation),
    )


def _apply_noise(
    points: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig
) -> np.ndarray:
    if cfg.jitter_sigma > 0:
        jitter = rng.normal(0.0, cfg.jitter_sigma, size=points.shape)
        points = points + np.clip(jitter, -cfg.jitter_clip, cfg.jitter_clip)
    if cfg.keep_prob < 1.0:
        keep = rng.random(points.shape[0]) < cfg.keep_prob
        if not keep.any():
            keep[0] = True
        points = points[keep]
    return points


def augment_pointcloud(
    pc: PointCloud, seed: int, cfg: AugmentConfig = DEFAULT_AUGMENT
) -> PointCloud:
    """Apply scale, rotation, jitter, and dropout; deterministic given seed."""
    rng = np.random.default_rng(seed)
    transform = sample_augment_transform(rng, cfg)
    pts = (transform.scale * pc.points) @ transform.rotation.T
    return PointCloud(_apply_noise(pts, rng, cfg))


def augment_cloud_and_pose(
    pc: PointCloud, pose: GraspPose, seed: int, cfg: AugmentConfig = DEFAULT_AUGMENT
) -> tuple[PointCloud, GraspPose]:
    """Augment a cloud and keep its grasp pose consistent with the transform.

    Uses the same RNG stream as :func:`augment_pointcloud`, so the cloud half
    of the result is identical to calling that function directly.
    """
    rng = np.random.default_rng(seed)
    transform = sample_augment_transform(rng, cfg)
    pts = (transform.scale * pc.points) @ transform.rotation.T
    return PointCloud(_apply_noise(pts, rng, cfg)), transform_grasp_pose(pose, transform)
