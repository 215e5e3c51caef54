"""On-disk dataset model: instances, grasp annotations, indices, and splits.

Layout under a dataset root:

    index.json                      classes, tasks, instance manifest
    instances/<id>/points.f32le     8-byte header (magic + count), float32 LE xyz
    instances/<id>/grasps.json      poses and per-task binary labels
    instances/<id>/meta.json        optional free-form metadata
    instances/<id>/images/<k>.png   instance images
    splits/<setting>/fold<k>.json   held-out fold assignments
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GraspPose, PointCloud

POINTS_MAGIC = b"TGPC"
SPLIT_SETTINGS = ("instance", "class", "task")


class DatasetError(Exception):
    """Raised for missing or malformed dataset files."""


@dataclass(frozen=True)
class ImageRef:
    """Reference to one instance image.

    ``signal`` is free-form metadata a backend may use in place of pixels
    (the fixture embedders key on it); hosted backends read ``path``.
    """

    id: str
    signal: str = ""
    path: Path | None = None


@dataclass
class GraspAnnotation:
    pose: GraspPose
    labels: dict[str, int]


@dataclass
class ObjectInstanceRecord:
    instance_id: str
    class_id: str
    cloud: PointCloud
    grasps: list[GraspAnnotation]
    images: list[ImageRef] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class DatasetIndex:
    classes: list[str]
    tasks: list[str]
    instances: dict[str, ObjectInstanceRecord]
    root: Path | None = None

    def validate(self) -> None:
        if len(set(self.classes)) != len(self.classes):
            raise DatasetError("duplicate class ids in index")
        if len(set(self.tasks)) != len(self.tasks):
            raise DatasetError("duplicate task ids in index")
        if not (self.instances and self.classes and self.tasks):
            raise DatasetError("dataset must contain at least one instance, class, and task")
        known_tasks = set(self.tasks)
        for inst in self.instances.values():
            if inst.class_id not in self.classes:
                raise DatasetError(
                    f"instance {inst.instance_id!r} has unknown class {inst.class_id!r}"
                )
            if not inst.grasps:
                raise DatasetError(f"instance {inst.instance_id!r} has no grasp annotations")
            for gi, grasp in enumerate(inst.grasps):
                for task, label in grasp.labels.items():
                    if task not in known_tasks:
                        raise DatasetError(
                            f"instance {inst.instance_id!r} grasp {gi} labels unknown task {task!r}"
                        )
                    if label not in (0, 1):
                        raise DatasetError(
                            f"instance {inst.instance_id!r} grasp {gi} has non-binary label for {task!r}"
                        )

    def instances_of_class(self, class_id: str) -> list[ObjectInstanceRecord]:
        return [inst for inst in self.instances.values() if inst.class_id == class_id]


@dataclass(frozen=True)
class SplitSpec:
    """One held-out fold: ids of the split dimension assigned to train/test."""

    setting: str
    fold_index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.setting not in SPLIT_SETTINGS:
            raise DatasetError(f"unknown split setting {self.setting!r}")
        if set(self.train_ids) & set(self.test_ids):
            raise DatasetError("train and test ids overlap")


def write_points(path: Path, points: np.ndarray) -> None:
    data = np.ascontiguousarray(points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(POINTS_MAGIC)
        fh.write(struct.pack("<I", data.shape[0]))
        fh.write(data.tobytes())


def read_points(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read point file {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != POINTS_MAGIC:
        raise DatasetError(f"bad point file header in {path}")
    (count,) = struct.unpack("<I", raw[4:8])
    expected = 8 + count * 12
    if len(raw) != expected:
        raise DatasetError(f"point file {path} truncated: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, 3).astype(np.float64)


def _grasp_to_json(grasp: GraspAnnotation) -> dict:
    return {
        "rotation": [list(row) for row in grasp.pose.rotation.tolist()],
        "translation": list(grasp.pose.translation.tolist()),
        "labels": {task: int(v) for task, v in grasp.labels.items()},
    }


def _grasp_from_json(obj: dict, path: Path) -> GraspAnnotation:
    try:
        pose = GraspPose(np.array(obj["rotation"], dtype=np.float64),
                         np.array(obj["translation"], dtype=np.float64))
        labels = {str(k): int(v) for k, v in obj["labels"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed grasp record in {path}: {exc}") from exc
    return GraspAnnotation(pose=pose, labels=labels)


def save_dataset(index: DatasetIndex, root: Path | str) -> Path:
    """Write a dataset tree; returns the root path."""
    root = Path(root)
    index.validate()
    (root / "instances").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "togkit-dataset-v1",
        "classes": list(index.classes),
        "tasks": list(index.tasks),
        "instances": [],
    }
    for inst in index.instances.values():
        inst_dir = root / "instances" / inst.instance_id
        (inst_dir / "images").mkdir(parents=True, exist_ok=True)
        write_points(inst_dir / "points.f32le", inst.cloud.points)
        with open(inst_dir / "grasps.json", "w", encoding="utf-8") as fh:
            json.dump({"grasps": [_grasp_to_json(g) for g in inst.grasps]}, fh)
        if inst.meta:
            with open(inst_dir / "meta.json", "w", encoding="utf-8") as fh:
                json.dump(inst.meta, fh)
        image_entries = []
        for k, ref in enumerate(inst.images):
            fname = f"{k}.png"
            target = inst_dir / "images" / fname
            if not target.exists():
                _write_placeholder_png(target, ref.id)
            image_entries.append({"id": ref.id, "signal": ref.signal, "file": fname})
        manifest["instances"].append(
            {"id": inst.instance_id, "class": inst.class_id, "images": image_entries}
        )
    with open(root / "index.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return root


def _write_placeholder_png(path: Path, key: str) -> None:
    # 8x8 hash-patterned stand-in so the on-disk layout is complete even for
    # purely synthetic imagery.
    from hashlib import blake2b

    from PIL import Image

    digest = blake2b(key.encode("utf-8"), digest_size=8 * 8 * 3).digest()
    arr = np.frombuffer(digest, dtype=np.uint8).reshape(8, 8, 3)
    Image.fromarray(arr, mode="RGB").save(path)


def load_dataset(root: Path | str) -> DatasetIndex:
    """Load a dataset tree, centering each cloud at its centroid.

    Grasp translations are shifted by the same centering offset so the
    grasp-object relation is preserved.
    """
    root = Path(root)
    index_path = root / "index.json"
    if not index_path.is_file():
        raise DatasetError(f"no dataset index found at {index_path}")
    try:
        manifest = json.loads(index_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"malformed dataset index {index_path}: {exc}") from exc
    for key in ("classes", "tasks", "instances"):
        if key not in manifest:
            raise DatasetError(f"dataset index {index_path} is missing {key!r}")

    instances: dict[str, ObjectInstanceRecord] = {}
    for entry in manifest["instances"]:
        try:
            inst_id, class_id = str(entry["id"]), str(entry["class"])
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"malformed instance entry in {index_path}: {exc}") from exc
        inst_dir = root / "instances" / inst_id
        points_path = inst_dir / "points.f32le"
        grasps_path = inst_dir / "grasps.json"
        if not points_path.is_file():
            raise DatasetError(f"missing point file {points_path}")
        if not grasps_path.is_file():
            raise DatasetError(f"missing grasp file {grasps_path}")
        cloud, offset = PointCloud(read_points(points_path)).centered()
        try:
            grasp_doc = json.loads(grasps_path.read_text(encoding="utf-8"))["grasps"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DatasetError(f"malformed grasp file {grasps_path}: {exc}") from exc
        grasps = []
        for obj in grasp_doc:
            grasp = _grasp_from_json(obj, grasps_path)
            grasps.append(
                GraspAnnotation(
                    pose=GraspPose(grasp.pose.rotation, grasp.pose.translation - offset),
                    labels=grasp.labels,
                )
            )
        meta = {}
        meta_path = inst_dir / "meta.json"
        if meta_path.is_file():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed meta file {meta_path}: {exc}") from exc
        images = [
            ImageRef(
                id=str(img["id"]),
                signal=str(img.get("signal", "")),
                path=inst_dir / "images" / img["file"] if "file" in img else None,
            )
            for img in entry.get("images", [])
        ]
        instances[inst_id] = ObjectInstanceRecord(
            instance_id=inst_id,
            class_id=class_id,
            cloud=cloud,
            grasps=grasps,
            images=images,
            meta=meta,
        )

    index = DatasetIndex(
        classes=[str(c) for c in manifest["classes"]],
        tasks=[str(t) for t in manifest["tasks"]],
        instances=instances,
        root=root,
    )
    index.validate()
    return index


def split_path(root: Path | str, setting: str, fold_index: int) -> Path:
    return Path(root) / "splits" / setting / f"fold{fold_index}.json"


def write_split(root: Path | str, split: SplitSpec) -> Path:
    path = split_path(root, split.setting, split.fold_index)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "setting": split.setting,
                "fold": split.fold_index,
                "train_ids": list(split.train_ids),
                "test_ids": list(split.test_ids),
            },
            fh,
            indent=1,
        )
    return path


def read_split(root: Path | str, setting: str, fold_index: int) -> SplitSpec:
    path = split_path(root, setting, fold_index)
    if not path.is_file():
        raise DatasetError(f"no split file found at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return SplitSpec(
            setting=str(doc["setting"]),
            fold_index=int(doc["fold"]),
            train_ids=tuple(doc["train_ids"]),
            test_ids=tuple(doc["test_ids"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed split file {path}: {exc}") from exc
