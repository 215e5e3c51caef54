"""Procedural synthetic benchmark: two-part tools (cylinder handle plus a
box/ellipsoid/disk head), antipodal pinch candidates, and an analytic
task-compatibility oracle.

A grasp is compatible with a task iff the instance's class affords the task
and the gripper control-point centroid falls inside the task's target part
bounding box inflated by a fixed margin. Class and task vocabularies overlap
by construction so held-out elements stay linguistically connected to
trained ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path

import numpy as np

from .dataset import (
    DatasetIndex,
    GraspAnnotation,
    ImageRef,
    ObjectInstanceRecord,
    save_dataset,
)
from .geometry import (
    ControlPointSet,
    GRIPPER_CONTROL_POINTS,
    GraspPose,
    PointCloud,
    pose_to_control_points,
)


class SynthesisError(Exception):
    pass


HEAD_SHAPES = ("box", "ellipsoid", "disk")
HEAD_WORDS = {"box": "block", "ellipsoid": "scoop", "disk": "pad"}

REGION_INFLATION = 0.005  # bounding-volume margin for the label oracle
FINGER_CLEARANCE = 0.001  # minimum fingertip distance outside the solid

# depth of the control-point centroid behind the fingertip plane
_CENTROID_DEPTH = float(GRIPPER_CONTROL_POINTS[:, 2].mean())
_TIP_DEPTH = float(GRIPPER_CONTROL_POINTS[2, 2])
_TIP_HALF_SPAN = float(GRIPPER_CONTROL_POINTS[2, 0])


@dataclass(frozen=True)
class ClassSpec:
    name: str
    head_shape: str
    handle_length: tuple[float, float]
    head_size: tuple[float, float]  # principal head extent range
    vocab: tuple[str, ...]
    handle_radius: float = 0.010

    def __post_init__(self) -> None:
        if self.head_shape not in HEAD_SHAPES:
            raise SynthesisError(f"unknown head shape {self.head_shape!r}")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    region: str  # "handle" or "head"
    vocab: tuple[str, ...]
    afforded: tuple[str, ...] | None = None  # None = afforded by every class

    def __post_init__(self) -> None:
        if self.region not in ("handle", "head"):
            raise SynthesisError(f"unknown target region {self.region!r}")

    def affords(self, class_name: str) -> bool:
        return self.afforded is None or class_name in self.afforded


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[ClassSpec, ...]
    tasks: tuple[TaskSpec, ...]
    instances_per_class: int = 8
    grasps_per_instance: int = 25
    points_per_instance: int = 512
    images_per_instance: int = 3
    noise: float = 0.0005
    seed: int = 0
    handle_grasp_fraction: float = 0.5
    region_inflation: float = REGION_INFLATION
    clearance: float = FINGER_CLEARANCE

    def __post_init__(self) -> None:
        if len(self.classes) < 2 or len(self.tasks) < 2:
            raise SynthesisError("spec needs at least 2 classes and 2 tasks")

    def class_by_name(self, name: str) -> ClassSpec:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise SynthesisError(f"unknown class {name!r}")

    def task_by_name(self, name: str) -> TaskSpec:
        for task in self.tasks:
            if task.name == name:
                return task
        raise SynthesisError(f"unknown task {name!r}")


_DEFAULT_CLASSES = (
    ClassSpec("hammer", "box", (0.10, 0.16), (0.050, 0.065),
              ("hammer", "shaft", "grip", "block", "steel", "pound")),
    ClassSpec("mallet", "box", (0.12, 0.18), (0.055, 0.070),
              ("mallet", "shaft", "grip", "block", "wood", "strike")),
    ClassSpec("spoon", "ellipsoid", (0.10, 0.14), (0.044, 0.056),
              ("spoon", "stem", "scoop", "bowl", "metal", "stir")),
    ClassSpec("ladle", "ellipsoid", (0.14, 0.20), (0.056, 0.068),
              ("ladle", "stem", "scoop", "bowl", "deep", "serve")),
    ClassSpec("brush", "disk", (0.10, 0.16), (0.056, 0.072),
              ("brush", "rod", "bristles", "pad", "fiber", "scrub")),
    ClassSpec("broom", "disk", (0.16, 0.24), (0.060, 0.080),
              ("broom", "rod", "bristles", "pad", "sweep", "floor")),
)

_PRESS = TaskSpec(
    "press", "handle", ("press", "push", "grip", "handle", "shaft", "force"),
    afforded=("hammer", "mallet", "brush", "broom"),
)
_HANDOVER = TaskSpec(
    "handover", "head", ("handover", "offer", "head", "receiver", "safe", "pass"),
)
_LIFT = TaskSpec("lift", "handle", ("lift", "raise", "grip", "handle", "shaft", "carry"))
_SHOW = TaskSpec("show", "head", ("show", "display", "head", "face", "present", "view"))


def default_spec(**overrides) -> SynthSpec:
    """Two-task benchmark: one restricted handle task plus a universal
    head task, so whole-negative (instance, task) pairs occur naturally."""
    return SynthSpec(classes=_DEFAULT_CLASSES, tasks=(_PRESS, _HANDOVER), **overrides)


def overlap_spec(**overrides) -> SynthSpec:
    """Four-task benchmark with vocabulary overlap within each target region,
    sized for held-out class and held-out task folds."""
    return SynthSpec(classes=_DEFAULT_CLASSES, tasks=(_PRESS, _LIFT, _HANDOVER, _SHOW), **overrides)


# ---------------------------------------------------------------------------
# primitive geometry


def _cylinder_sdf(p: np.ndarray, center_xy: np.ndarray, z0: float, z1: float, radius: float) -> float:
    """Signed distance to a capped vertical cylinder."""
    d_rad = float(np.hypot(p[0] - center_xy[0], p[1] - center_xy[1])) - radius
    d_z = max(z0 - p[2], p[2] - z1)
    if d_rad <= 0.0 and d_z <= 0.0:
        return max(d_rad, d_z)
    return float(np.hypot(max(d_rad, 0.0), max(d_z, 0.0)))


def _box_sdf(p: np.ndarray, center: np.ndarray, half: np.ndarray) -> float:
    q = np.abs(p - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0))
    inside = min(float(q.max()), 0.0)
    return float(outside + inside)


def _ellipsoid_sdf(p: np.ndarray, center: np.ndarray, semi: np.ndarray) -> float:
    # standard normalized-gradient approximation, exact at the surface
    q = p - center
    k0 = float(np.linalg.norm(q / semi))
    k1 = float(np.linalg.norm(q / (semi * semi)))
    if k1 == 0.0:
        return -float(semi.min())
    return k0 * (k0 - 1.0) / k1


@dataclass
class PartGeometry:
    """Analytic description of one part, in the instance's centered frame."""

    kind: str  # "cylinder", "box", "ellipsoid"
    center: np.ndarray
    params: dict

    def sdf(self, p: np.ndarray) -> float:
        if self.kind == "cylinder":
            return _cylinder_sdf(
                p, self.center[:2], self.params["z0"], self.params["z1"], self.params["radius"]
            )
        if self.kind == "box":
            return _box_sdf(p, self.center, np.asarray(self.params["half"]))
        return _ellipsoid_sdf(p, self.center, np.asarray(self.params["semi"]))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "cylinder":
            r = self.params["radius"]
            lo = np.array([self.center[0] - r, self.center[1] - r, self.params["z0"]])
            hi = np.array([self.center[0] + r, self.center[1] + r, self.params["z1"]])
        elif self.kind == "box":
            half = np.asarray(self.params["half"])
            lo, hi = self.center - half, self.center + half
        else:
            semi = np.asarray(self.params["semi"])
            lo, hi = self.center - semi, self.center + semi
        return lo, hi

    def translate(self, offset: np.ndarray) -> None:
        self.center = self.center + offset
        if self.kind == "cylinder":
            self.params = dict(
                self.params, z0=self.params["z0"] + offset[2], z1=self.params["z1"] + offset[2]
            )

    def to_json(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(),
                "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "PartGeometry":
        return cls(kind=doc["kind"], center=np.asarray(doc["center"], dtype=np.float64),
                   params=dict(doc["params"]))


@dataclass
class InstanceGeometry:
    handle: PartGeometry
    head: PartGeometry

    def part(self, region: str) -> PartGeometry:
        return self.handle if region == "handle" else self.head

    def min_sdf(self, p: np.ndarray) -> float:
        return min(self.handle.sdf(p), self.head.sdf(p))

    def translate(self, offset: np.ndarray) -> None:
        self.handle.translate(offset)
        self.head.translate(offset)

    def to_json(self) -> dict:
        return {"handle": self.handle.to_json(), "head": self.head.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "InstanceGeometry":
        return cls(handle=PartGeometry.from_json(doc["handle"]),
                   head=PartGeometry.from_json(doc["head"]))


def oracle_label(
    grasp: GraspPose | ControlPointSet,
    geometry: InstanceGeometry,
    task: TaskSpec,
    class_name: str | None = None,
    inflation: float = REGION_INFLATION,
) -> int:
    """1 iff the task applies to the class and the control-point centroid lies
    inside the target part's bounding box inflated by ``inflation``.

    The inflated volume is closed: a centroid exactly on the boundary counts
    as inside.
    """
    if class_name is not None and not task.affords(class_name):
        return 0
    cps = grasp if isinstance(grasp, ControlPointSet) else pose_to_control_points(grasp)
    centroid = cps.centroid()
    lo, hi = geometry.part(task.region).bounding_box()
    inside = np.all(centroid >= lo - inflation) and np.all(centroid <= hi + inflation)
    return int(inside)


# ---------------------------------------------------------------------------
# instance synthesis


def _sample_dimensions(spec: SynthSpec, cls: ClassSpec, rng: np.random.Generator) -> dict:
    for _ in range(32):
        length = float(rng.uniform(*cls.handle_length))
        size = float(rng.uniform(*cls.head_size))
        dims = {"handle_length": length, "head_size": size}
        if cls.head_shape == "box":
            dims["extents"] = np.array(
                [size, size * rng.uniform(0.45, 0.6), size * rng.uniform(0.45, 0.6)]
            )
            pinch = min(dims["extents"][1], dims["extents"][2])
        elif cls.head_shape == "ellipsoid":
            dims["semi"] = np.array(
                [size / 2, size / 2 * rng.uniform(0.6, 0.8), size / 2 * rng.uniform(0.5, 0.7)]
            )
            pinch = 2 * dims["semi"][2]
        else:  # disk
            dims["disk_radius"] = size / 2
            dims["disk_height"] = float(rng.uniform(0.010, 0.016))
            pinch = dims["disk_height"]
        # degenerate draws (head too wide to pinch with clearance) are resampled
        if pinch <= 2 * (_TIP_HALF_SPAN - spec.clearance) - 0.002:
            return dims
    raise SynthesisError(f"could not sample graspable dimensions for class {cls.name!r}")


def _build_geometry(cls: ClassSpec, dims: dict) -> InstanceGeometry:
    length = dims["handle_length"]
    handle = PartGeometry(
        kind="cylinder",
        center=np.array([0.0, 0.0, length / 2]),
        params={"radius": cls.handle_radius, "z0": 0.0, "z1": length},
    )
    if cls.head_shape == "box":
        half = dims["extents"] / 2
        center = np.array([0.0, 0.0, length + half[2] - 0.002])
        head = PartGeometry("box", center, {"half": half})
    elif cls.head_shape == "ellipsoid":
        semi = dims["semi"]
        center = np.array([0.0, 0.0, length + semi[2] - 0.002])
        head = PartGeometry("ellipsoid", center, {"semi": semi})
    else:
        h = dims["disk_height"]
        z0 = length - 0.002
        head = PartGeometry(
            "cylinder",
            center=np.array([0.0, 0.0, z0 + h / 2]),
            params={"radius": dims["disk_radius"], "z0": z0, "z1": z0 + h},
        )
    return InstanceGeometry(handle=handle, head=head)


def _surface_points(
    geometry: InstanceGeometry, cls: ClassSpec, n: int, noise: float, rng: np.random.Generator
) -> np.ndarray:
    handle = geometry.handle
    head = geometry.head
    r, z0, z1 = handle.params["radius"], handle.params["z0"], handle.params["z1"]
    handle_area = 2 * np.pi * r * (z1 - z0)
    if head.kind == "box":
        half = np.asarray(head.params["half"])
        head_area = 8 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
    elif head.kind == "ellipsoid":
        semi = np.asarray(head.params["semi"])
        p = 1.6075  # Knud Thomsen area approximation
        head_area = 4 * np.pi * ((semi[0] ** p * semi[1] ** p + semi[1] ** p * semi[2] ** p
                                  + semi[0] ** p * semi[2] ** p) / 3) ** (1 / p)
    else:
        hr = head.params["radius"]
        hh = head.params["z1"] - head.params["z0"]
        head_area = 2 * np.pi * hr * hh + 2 * np.pi * hr**2
    n_handle = max(8, int(round(n * handle_area / (handle_area + head_area))))
    n_head = max(8, n - n_handle)

    theta = rng.uniform(0, 2 * np.pi, n_handle)
    z = rng.uniform(z0, z1, n_handle)
    handle_pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)

    if head.kind == "box":
        half = np.asarray(head.params["half"])
        face_axis = rng.integers(0, 3, n_head)
        face_sign = rng.choice([-1.0, 1.0], n_head)
        head_pts = rng.uniform(-1.0, 1.0, (n_head, 3)) * half
        head_pts[np.arange(n_head), face_axis] = face_sign * half[face_axis]
        head_pts += head.center
    elif head.kind == "ellipsoid":
        direction = rng.normal(size=(n_head, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        head_pts = head.center + direction * np.asarray(head.params["semi"])
    else:
        hr = head.params["radius"]
        hz0, hz1 = head.params["z0"], head.params["z1"]
        lateral = rng.random(n_head) < 0.5
        theta_h = rng.uniform(0, 2 * np.pi, n_head)
        rho = hr * np.sqrt(rng.random(n_head))
        head_pts = np.empty((n_head, 3))
        head_pts[:, 0] = np.where(lateral, hr * np.cos(theta_h), rho * np.cos(theta_h))
        head_pts[:, 1] = np.where(lateral, hr * np.sin(theta_h), rho * np.sin(theta_h))
        head_pts[:, 2] = np.where(
            lateral, rng.uniform(hz0, hz1, n_head),
            np.where(rng.random(n_head) < 0.5, hz0, hz1),
        )
    points = np.concatenate([handle_pts, head_pts], axis=0)
    if noise > 0:
        points = points + rng.normal(0.0, noise, size=points.shape)
    return points


def _surface_contact(
    geometry: InstanceGeometry, region: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """A contact point on the part surface and its inward normal."""
    part = geometry.part(region)
    if part.kind == "cylinder":
        r = part.params["radius"]
        z0, z1 = part.params["z0"], part.params["z1"]
        span = z1 - z0
        if region == "handle":
            z = rng.uniform(z0 + 0.15 * span, z1 - 0.1 * span)
            theta = rng.uniform(0, 2 * np.pi)
            c = np.array([part.center[0] + r * np.cos(theta), part.center[1] + r * np.sin(theta), z])
            n = np.array([-np.cos(theta), -np.sin(theta), 0.0])
        else:  # disk head: contact on the top cap, pinch across the height
            theta = rng.uniform(0, 2 * np.pi)
            rho = (0.3 + 0.6 * rng.random()) * r
            c = np.array([part.center[0] + rho * np.cos(theta), part.center[1] + rho * np.sin(theta), z1])
            n = np.array([0.0, 0.0, -1.0])
        return c, n
    if part.kind == "box":
        half = np.asarray(part.params["half"])
        axis = int(rng.integers(0, 3))
        sign = 1.0 if (axis == 2 or rng.random() < 0.5) else -1.0  # skip the face joining the handle
        c = part.center + rng.uniform(-0.6, 0.6, 3) * half
        c[axis] = part.center[axis] + sign * half[axis]
        n = np.zeros(3)
        n[axis] = -sign
        return c, n
    semi = np.asarray(part.params["semi"])
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    if direction[2] < -0.2:  # keep contacts away from the handle junction
        direction[2] = -direction[2]
    c = part.center + direction * semi
    grad = (c - part.center) / (semi**2)
    n = -grad / np.linalg.norm(grad)
    return c, n


def _pinch_pose(
    contact: np.ndarray, normal: np.ndarray, rng: np.random.Generator
) -> GraspPose:
    """Antipodal pinch with approach along the inward normal; the gripper is
    placed so the control-point centroid sits at the contact point."""
    approach = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, approach)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(approach, helper)
    u /= np.linalg.norm(u)
    phi = rng.uniform(0, 2 * np.pi)
    v = np.cross(approach, u)
    pinch = np.cos(phi) * u + np.sin(phi) * v
    w = np.cross(approach, pinch)
    rotation = np.stack([pinch, w, approach], axis=1)
    translation = contact - _CENTROID_DEPTH * approach
    return GraspPose(rotation=rotation, translation=translation)


def _fingertips(pose: GraspPose) -> np.ndarray:
    cps = pose_to_control_points(pose)
    return cps.points[2:4]


def generate_instance(
    spec: SynthSpec, class_name: str, instance_index: int, rng: np.random.Generator | None = None
) -> ObjectInstanceRecord:
    """Synthesize one object instance with labeled grasp candidates."""
    cls = spec.class_by_name(class_name)
    if rng is None:
        name_key = int.from_bytes(blake2b(class_name.encode(), digest_size=4).digest(), "little")
        rng = np.random.default_rng([spec.seed, name_key, instance_index])
    dims = _sample_dimensions(spec, cls, rng)
    geometry = _build_geometry(cls, dims)
    points = _surface_points(geometry, cls, spec.points_per_instance, spec.noise, rng)

    n_handle = int(round(spec.grasps_per_instance * spec.handle_grasp_fraction))
    regions = ["handle"] * n_handle + ["head"] * (spec.grasps_per_instance - n_handle)
    grasps: list[GraspAnnotation] = []
    for region in regions:
        pose = None
        for _ in range(64):
            contact, normal = _surface_contact(geometry, region, rng)
            candidate = _pinch_pose(contact, normal, rng)
            tips = _fingertips(candidate)
            if all(geometry.min_sdf(tip) >= spec.clearance for tip in tips):
                pose = candidate
                break
        if pose is None:
            raise SynthesisError(
                f"could not place a clear {region} grasp on {class_name}_{instance_index}"
            )
        cps = pose_to_control_points(pose)
        labels = {
            task.name: oracle_label(cps, geometry, task, class_name, spec.region_inflation)
            for task in spec.tasks
        }
        grasps.append(GraspAnnotation(pose=pose, labels=labels))

    # decorrelate annotation order from the region-stratified construction
    order = rng.permutation(len(grasps))
    grasps = [grasps[i] for i in order]

    cloud = PointCloud(points)
    centered, offset = cloud.centered()
    geometry.translate(-offset)
    grasps = [
        GraspAnnotation(
            pose=GraspPose(g.pose.rotation, g.pose.translation - offset), labels=g.labels
        )
        for g in grasps
    ]
    instance_id = f"{class_name}_{instance_index:02d}"
    images = [
        ImageRef(id=f"{instance_id}::v{k}", signal=f"{class_name} {cls.head_shape} {HEAD_WORDS[cls.head_shape]}")
        for k in range(spec.images_per_instance)
    ]
    return ObjectInstanceRecord(
        instance_id=instance_id,
        class_id=class_name,
        cloud=centered,
        grasps=grasps,
        images=images,
        meta={"geometry": geometry.to_json(), "dims": {
            "handle_length": dims["handle_length"], "head_size": dims["head_size"]}},
    )


def instance_geometry(record: ObjectInstanceRecord) -> InstanceGeometry:
    if "geometry" not in record.meta:
        raise SynthesisError(f"instance {record.instance_id!r} carries no part geometry")
    return InstanceGeometry.from_json(record.meta["geometry"])


# ---------------------------------------------------------------------------
# description corpus


def _join(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def _head_phrase(shape: str) -> str:
    return {
        "box": "rectangular block head",
        "ellipsoid": "rounded scoop head",
        "disk": "flat pad head",
    }[shape]


def build_corpus(spec: SynthSpec) -> dict[tuple[str, str], list[str]]:
    """Seed description corpus for the fixture language model.

    Texts thread class/task vocabulary tokens so descriptions of related
    targets share words, which is what lets held-out elements borrow
    structure from trained ones.
    """
    corpus: dict[tuple[str, str], list[str]] = {}
    for cls in spec.classes:
        siblings = [c.name for c in spec.classes if c.head_shape == cls.head_shape and c.name != cls.name]
        others = [c.name for c in spec.classes if c.name != cls.name][:2]
        similar = siblings or others
        afforded_tasks = [t.name for t in spec.tasks if t.affords(cls.name)]
        vocab = " ".join(cls.vocab)
        corpus[(cls.name, "O2O")] = [
            f"Objects such as {_join(similar)} have similar geometries to a {cls.name}.",
            f"A {cls.name} belongs with {_join(similar)} among long-handled household tools.",
            f"Household objects like {_join(similar)} share the overall proportions of a {cls.name}.",
            f"In shape and build, a {cls.name} resembles {_join(similar)}; keywords: {vocab}.",
        ]
        corpus[(cls.name, "O2T")] = [
            f"A {cls.name} is commonly used to {_join(afforded_tasks)} household items.",
            f"Typical tasks for a {cls.name} include {_join(afforded_tasks)}.",
            f"People pick up a {cls.name} when they need to {afforded_tasks[0]} something.",
        ]
        corpus[(cls.name, "O2P")] = [
            f"- long cylindrical handle ({cls.vocab[1]} grip)\n- {_head_phrase(cls.head_shape)}",
            f"- straight {cls.vocab[1]} shaft\n- {HEAD_WORDS[cls.head_shape]} shaped head\n- narrow neck joint",
            f"- cylindrical handle segment\n- {_head_phrase(cls.head_shape)} at the far end",
        ]
    for task in spec.tasks:
        sibling_tasks = [t.name for t in spec.tasks if t.region == task.region and t.name != task.name]
        related = sibling_tasks or [task.region]
        afforded = [c.name for c in spec.classes if task.affords(c.name)]
        afford_shapes = sorted({HEAD_WORDS[spec.class_by_name(c).head_shape] for c in afforded})
        vocab = " ".join(task.vocab)
        corpus[(task.name, "T2T")] = [
            f"Verbs such as {_join(related)} achieve similar effects to '{task.name} an object'.",
            f"To {task.name} something is closely related to {_join(related)}.",
            f"Actions like {_join(related)} involve the same motion family as {task.name}; keywords: {vocab}.",
        ]
        corpus[(task.name, "T2O")] = [
            f"Objects such as {_join(afforded)} are household objects that afford the function of {task.name}.",
            f"A person would reach for a {_join(afforded[:2])} to {task.name} something.",
            f"{_join(afforded)} all support the task {task.name}.",
        ]
        if task.region == "handle":
            corpus[(task.name, "T2P")] = [
                "- long cylindrical handle\n- straight shaft segment",
                f"- cylindrical grip region\n- slender shaft suited to {task.name}",
            ]
        else:
            corpus[(task.name, "T2P")] = [
                f"- compact head ({_join(afford_shapes)})\n- broad functional face",
                f"- {_join(afford_shapes)} head region suited to {task.name}\n- end block opposite the grip",
            ]
    return corpus


def save_corpus(corpus: dict[tuple[str, str], list[str]], root: Path | str) -> Path:
    path = Path(root) / "knowledge" / "corpus.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = [
        {"target": target, "kind": kind, "texts": texts}
        for (target, kind), texts in sorted(corpus.items())
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"entries": entries}, fh, indent=1, sort_keys=True)
    return path


def load_corpus(root: Path | str) -> dict[tuple[str, str], list[str]]:
    path = Path(root) / "knowledge" / "corpus.json"
    if not path.is_file():
        return {}
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {(e["target"], e["kind"]): list(e["texts"]) for e in doc["entries"]}


def generate_dataset(
    spec: SynthSpec, out_dir: Path | str | None = None
) -> tuple[DatasetIndex, dict[tuple[str, str], list[str]]]:
    """Build the full synthetic dataset and its description seed corpus.

    When ``out_dir`` is given the dataset tree and corpus are also written
    to disk in the standard layout.
    """
    instances: dict[str, ObjectInstanceRecord] = {}
    for c_idx, cls in enumerate(sorted(spec.classes, key=lambda c: c.name)):
        for i in range(spec.instances_per_class):
            rng = np.random.default_rng([spec.seed, c_idx, i])
            record = generate_instance(spec, cls.name, i, rng)
            instances[record.instance_id] = record
    index = DatasetIndex(
        classes=sorted(c.name for c in spec.classes),
        tasks=[t.name for t in spec.tasks],
        instances=dict(sorted(instances.items())),
    )
    index.validate()
    corpus = build_corpus(spec)
    if out_dir is not None:
        save_dataset(index, out_dir)
        save_corpus(corpus, out_dir)
        index.root = Path(out_dir)
    return index, corpus


def spec_to_json(spec: SynthSpec) -> dict:
    return {
        "classes": [
            {
                "name": c.name,
                "head_shape": c.head_shape,
                "handle_length": list(c.handle_length),
                "head_size": list(c.head_size),
                "vocab": list(c.vocab),
                "handle_radius": c.handle_radius,
            }
            for c in spec.classes
        ],
        "tasks": [
            {
                "name": t.name,
                "region": t.region,
                "vocab": list(t.vocab),
                "afforded": list(t.afforded) if t.afforded is not None else None,
            }
            for t in spec.tasks
        ],
        "instances_per_class": spec.instances_per_class,
        "grasps_per_instance": spec.grasps_per_instance,
        "points_per_instance": spec.points_per_instance,
        "images_per_instance": spec.images_per_instance,
        "noise": spec.noise,
        "seed": spec.seed,
        "handle_grasp_fraction": spec.handle_grasp_fraction,
        "region_inflation": spec.region_inflation,
        "clearance": spec.clearance,
    }


def spec_from_json(doc: dict) -> SynthSpec:
    classes = tuple(
        ClassSpec(
            name=c["name"],
            head_shape=c["head_shape"],
            handle_length=tuple(c["handle_length"]),
            head_size=tuple(c["head_size"]),
            vocab=tuple(c["vocab"]),
            handle_radius=float(c.get("handle_radius", 0.010)),
        )
        for c in doc["classes"]
    )
    tasks = tuple(
        TaskSpec(
            name=t["name"],
            region=t["region"],
            vocab=tuple(t["vocab"]),
            afforded=tuple(t["afforded"]) if t.get("afforded") is not None else None,
        )
        for t in doc["tasks"]
    )
    extra = {
        k: doc[k]
        for k in (
            "instances_per_class", "grasps_per_instance", "points_per_instance",
            "images_per_instance", "noise", "seed", "handle_grasp_fraction",
            "region_inflation", "clearance",
        )
        if k in doc
    }
    return SynthSpec(classes=classes, tasks=tasks, **extra)
