"""Checkpoint format: a JSON manifest plus one little-endian float32 buffer.

The manifest maps stable parameter names (the model state-dict keys) to
shapes and byte offsets into ``params.bin``, and records the model
configuration and any training metadata, including the stand-in
learning-rate schedule actually used.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .configs import config_from_dict, config_to_dict
from .evaluator import GraspEvaluator

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


class CheckpointError(Exception):
    pass


def save_checkpoint(
    path: Path | str, model: GraspEvaluator, extra: dict | None = None
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    buffers = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float32-le",
                "offset": offset,
                "size": int(arr.size),
            }
        )
        buffers.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": "togkit-checkpoint-v1",
        "model_config": config_to_dict(model.cfg),
        "tensors": tensors,
        "extra": extra or {},
    }
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(path / PARAMS_NAME, "wb") as fh:
        for buf in buffers:
            fh.write(buf)
    return path


def load_checkpoint(
    path: Path | str, dtype: torch.dtype = torch.float32
) -> tuple[GraspEvaluator, dict]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    params_path = path / PARAMS_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    if not params_path.is_file():
        raise CheckpointError(f"no parameter buffer at {params_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        cfg = config_from_dict(manifest["model_config"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint manifest {manifest_path}: {exc}") from exc
    raw = params_path.read_bytes()
    state = {}
    for entry in manifest["tensors"]:
        size = int(entry["size"])
        start = int(entry["offset"])
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=start)
        state[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).astype(np.float32)
        ).to(dtype)
    model = GraspEvaluator(cfg, dtype=dtype)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
        )
    model.eval()
    return model, manifest
