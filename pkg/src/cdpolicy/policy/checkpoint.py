"""Checkpoint file format.

Layout: one JSON header line, then a JSON manifest, then the parameter blob.
The header carries the format version, both section lengths and a SHA-256 over
manifest + blob. Tensors are stored as little-endian float32 in sorted-name
order; parameters are rounded to float32 when a checkpoint is built so that a
save/load round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffusion import NoiseSchedule
from ..manipenv.dataset import Normalizer
from .network import Architecture, DenoiseNetwork

MAGIC = "cdpolicy-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class NotAStudentError(CheckpointError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    arch: Architecture
    params: dict[str, np.ndarray]
    noise: NoiseSchedule
    normalizer: Normalizer
    task: str
    consistency: dict | None = None  # {"sigma_d", "boundary_scale"} for students
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in self.params.items()}

    @classmethod
    def from_network(cls, net: DenoiseNetwork, noise, normalizer, task, consistency=None, provenance=None):
        return cls(net.arch, net.params, noise, normalizer, task, consistency, dict(provenance or {}))

    @property
    def is_student(self) -> bool:
        return self.consistency is not None

    def network(self) -> DenoiseNetwork:
        return DenoiseNetwork(self.arch, {k: v.copy() for k, v in self.params.items()})

    def consistency_schedule(self):
        from ..consistency import ConsistencySchedule

        if self.consistency is None:
            raise NotAStudentError("checkpoint has no consistency schedule (teacher checkpoint?)")
        return ConsistencySchedule.from_dict(self.consistency, self.noise)

    def manifest(self) -> dict:
        return {
            "magic": MAGIC,
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "architecture": self.arch.to_dict(),
            "noise_schedule": self.noise.to_dict(),
            "consistency_schedule": self.consistency,
            "normalizer": self.normalizer.to_dict(),
            "provenance": self.provenance,
            "tensors": [{"name": k, "shape": list(self.params[k].shape)} for k in sorted(self.params)],
        }


def _blob(ckpt: Checkpoint) -> bytes:
    return b"".join(np.asarray(ckpt.params[k], dtype="<f4").tobytes() for k in sorted(ckpt.params))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.dumps(ckpt.manifest(), sort_keys=True, indent=1).encode()
    blob = _blob(ckpt)
    header = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "manifest_bytes": len(manifest),
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(manifest + blob).hexdigest(),
    }
    path.write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + manifest + blob)
    return path


def load_checkpoint(path, *, require_student: bool = False) -> Checkpoint:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointTruncatedError(f"{path}: missing header")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: unreadable header") from e
    if header.get("magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('format_version')!r}, this build reads {FORMAT_VERSION}"
        )
    body = raw[nl + 1:]
    n_man, n_blob = header["manifest_bytes"], header["blob_bytes"]
    if len(body) < n_man + n_blob:
        raise CheckpointTruncatedError(f"{path}: expected {n_man + n_blob} bytes after header, found {len(body)}")
    if len(body) > n_man + n_blob:
        raise CheckpointError(f"{path}: trailing bytes after parameter blob")
    if hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise CheckpointHashError(f"{path}: content hash mismatch")
    manifest = json.loads(body[:n_man])
    blob = body[n_man:]

    arch = Architecture.from_dict(manifest["architecture"])
    expected = arch.param_shapes()
    params, offset = {}, 0
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointShapeError(f"{path}: tensor {name!r} has shape {shape}, architecture wants {expected.get(name)}")
        n = int(np.prod(shape)) * 4
        params[name] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if set(params) != set(expected) or offset != len(blob):
        raise CheckpointShapeError(f"{path}: tensor set does not match architecture")

    ckpt = Checkpoint(
        arch, params, NoiseSchedule.from_dict(manifest["noise_schedule"]),
        Normalizer.from_dict(manifest["normalizer"]), manifest["task"],
        manifest.get("consistency_schedule"), manifest.get("provenance", {}),
    )
    if require_student and not ckpt.is_student:
        raise NotAStudentError(f"{path}: checkpoint has no consistency schedule (teacher checkpoint?)")
    return ckpt
