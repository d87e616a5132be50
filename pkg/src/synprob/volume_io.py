"""Datasets on disk: a JSON manifest plus headerless little-endian volumes.

Manifest layout::

    {
      "version": 1,
      "geometry": {"pixel_size_xy_nm": 100, "slice_thickness_z_nm": 70},
      "dims": [X, Y, Z],
      "channels": [
        {"name": "PSD-95", "file": "psd95.raw", "dtype": "u16", "byte_order": "little"},
        {"name": "synapsin", "slices": ["syn_000.pgm", ...]}
      ],
      "annotations": "annotations.json"
    }

Paths are relative to the manifest. Raw payloads are x-fastest, then y,
then z. Probability volumes use the same manifest with ``"kind":
"probability"``, a ``"stage"`` entry and a single ``f32`` payload.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .core import (
    BoundsError,
    ChannelVolume,
    GroundTruthAnnotation,
    Label,
    ProbabilityVolume,
    Stage,
    VoxelGeometry,
    physical_to_voxel,
)

MANIFEST_VERSION = 1
DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}


class DatasetError(ValueError):
    """Base class for manifest and payload problems."""


class MissingFileError(DatasetError):
    pass


class SizeMismatchError(DatasetError):
    pass


class DuplicateChannelError(DatasetError):
    pass


class UnknownDtypeError(DatasetError):
    pass


class AnnotationError(DatasetError):
    pass


@dataclass
class Dataset:
    geometry: VoxelGeometry
    dims: tuple[int, int, int]
    channels: list[ChannelVolume]
    annotations: list[GroundTruthAnnotation] = field(default_factory=list)
    path: Optional[Path] = None

    def channel(self, name: str) -> ChannelVolume:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def volume_um3(self) -> float:
        x, y, z = self.dims
        return x * y * z * self.geometry.voxel_volume_um3


# -- atomic writes ----------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temporary sibling of ``path``, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- manifests --------------------------------------------------------------

def _read_manifest(path: Path) -> dict:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFileError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest {path}: invalid JSON: {e}") from None
    for key in ("geometry", "dims"):
        if key not in raw:
            raise DatasetError(f"manifest {path}: missing {key!r}")
    return raw


def _dims(raw: dict, path: Path) -> tuple[int, int, int]:
    try:
        x, y, z = (int(v) for v in raw["dims"])
    except (TypeError, ValueError):
        raise DatasetError(f"manifest {path}: dims must be [X, Y, Z]") from None
    if min(x, y, z) < 1:
        raise DatasetError(f"manifest {path}: dims must be positive, got {raw['dims']}")
    return x, y, z


def _read_raw(entry: dict, base: Path, dims) -> np.ndarray:
    name = entry["name"]
    dtype_name = entry.get("dtype")
    if dtype_name not in DTYPES:
        raise UnknownDtypeError(f"channel {name!r}: unknown dtype {dtype_name!r} (expected u8, u16 or f32)")
    order = entry.get("byte_order", "little")
    if order not in ("little", "little-endian", "le"):
        raise DatasetError(f"channel {name!r}: unsupported byte order {order!r}")
    f = base / entry["file"]
    if not f.is_file():
        raise MissingFileError(f"channel {name!r}: file not found")
    dt = DTYPES[dtype_name]
    x, y, z = dims
    expected = x * y * z * dt.itemsize
    actual = f.stat().st_size
    if actual != expected:
        raise SizeMismatchError(
            f"channel {name!r}: {f.name} has {actual} bytes, expected {expected} for {x}x{y}x{z} {dtype_name}"
        )
    return np.fromfile(f, dtype=dt).reshape(z, y, x)


def _read_slices(entry: dict, base: Path, dims) -> np.ndarray:
    name = entry["name"]
    x, y, z = dims
    files = entry["slices"]
    if len(files) != z:
        raise SizeMismatchError(f"channel {name!r}: {len(files)} slice images for {z} slices")
    out = np.empty((z, y, x), dtype=np.float64)
    for k, fn in enumerate(files):
        f = base / fn
        if not f.is_file():
            raise MissingFileError(f"channel {name!r}: slice file {fn} not found")
        with Image.open(f) as im:
            a = np.asarray(im)
        if a.shape != (y, x):
            raise SizeMismatchError(f"channel {name!r}: slice {fn} is {a.shape[::-1]}, expected {(x, y)}")
        out[k] = a
    return out


def load_dataset(manifest_path) -> Dataset:
    """Load every channel (and annotations, if referenced) of a manifest.

    Integer intensities are widened to float without rescaling.
    """
    path = Path(manifest_path)
    raw = _read_manifest(path)
    base = path.parent
    geometry = VoxelGeometry.from_dict(raw["geometry"])
    dims = _dims(raw, path)
    seen = set()
    channels = []
    for entry in raw.get("channels", []):
        name = entry.get("name")
        if not name:
            raise DatasetError(f"manifest {path}: channel entry without a name")
        if name in seen:
            raise DuplicateChannelError(f"channel {name!r}: listed more than once")
        seen.add(name)
        if "slices" in entry:
            data = _read_slices(entry, base, dims)
        elif "file" in entry:
            data = _read_raw(entry, base, dims).astype(np.float64)
        else:
            raise DatasetError(f"channel {name!r}: needs 'file' or 'slices'")
        try:
            channels.append(ChannelVolume(name, geometry, data))
        except ValueError as e:
            raise DatasetError(str(e)) from None
    annotations = []
    if raw.get("annotations"):
        annotations = load_annotations(base / raw["annotations"], geometry, dims)
    return Dataset(geometry, dims, channels, annotations, path)


def save_dataset(path, channels: Sequence[ChannelVolume], annotations: Sequence[GroundTruthAnnotation] = (),
                 dtype: str = "f32", extra: Optional[dict] = None) -> Path:
    """Write channels as raw payloads next to a manifest at ``path``."""
    path = Path(path)
    if dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}")
    geometry = channels[0].geometry
    dims = channels[0].dims
    entries = []
    for c in channels:
        fname = f"{_slug(c.name)}.{dtype}"
        data = c.data
        if dtype != "f32":
            info = np.iinfo(DTYPES[dtype])
            data = np.clip(np.rint(data), info.min, info.max)
        atomic_write_bytes(path.parent / fname, np.ascontiguousarray(data, dtype=DTYPES[dtype]).tobytes())
        entries.append({"name": c.name, "file": fname, "dtype": dtype, "byte_order": "little"})
    manifest = {"version": MANIFEST_VERSION, "geometry": geometry.to_dict(), "dims": list(dims),
                "channels": entries}
    if annotations:
        save_annotations(path.parent / "annotations.json", annotations)
        manifest["annotations"] = "annotations.json"
    if extra:
        manifest.update(extra)
    atomic_write_text(path, json.dumps(manifest, indent=2))
    return path


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


# -- probability volumes ----------------------------------------------------

def save_probability_volume(v: ProbabilityVolume, path) -> Path:
    """Write ``v`` as ``<path>`` (manifest) and ``<stem>.f32`` (payload)."""
    path = Path(path)
    payload = path.with_suffix(".f32")
    atomic_write_bytes(payload, np.ascontiguousarray(v.data, dtype="<f4").tobytes())
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": "probability",
        "stage": v.stage.value,
        "name": v.name,
        "geometry": v.geometry.to_dict(),
        "dims": list(v.dims),
        "channels": [{"name": v.name or v.stage.value, "file": payload.name, "dtype": "f32",
                      "byte_order": "little"}],
    }
    atomic_write_text(path, json.dumps(manifest, indent=2))
    return path


def load_probability_volume(path) -> ProbabilityVolume:
    path = Path(path)
    raw = _read_manifest(path)
    if raw.get("kind") != "probability":
        raise DatasetError(f"{path} is not a probability-volume manifest")
    entry = raw["channels"][0]
    data = _read_raw(entry, path.parent, _dims(raw, path))
    return ProbabilityVolume(Stage(raw["stage"]), VoxelGeometry.from_dict(raw["geometry"]), data,
                             raw.get("name", ""))


# -- annotations ------------------------------------------------------------

def _annotation(rec, geometry, dims) -> GroundTruthAnnotation:
    rid = rec.get("id", "?") if isinstance(rec, dict) else "?"
    try:
        aid = int(rec["id"])
        label = Label(rec.get("label", "Other"))
        c = tuple(float(v) for v in rec["centroid_um"])
        if len(c) != 3:
            raise ValueError("centroid_um needs 3 values")
        voxels = rec.get("voxels")
        if voxels is not None:
            voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    except (KeyError, TypeError, ValueError) as e:
        raise AnnotationError(f"annotation {rid}: malformed record: {e}") from None
    if dims is not None:
        try:
            physical_to_voxel(c, geometry, dims)
        except BoundsError as e:
            raise AnnotationError(f"annotation {aid}: centroid out of bounds: {e}") from None
    return GroundTruthAnnotation(aid, c, label, voxels)


def load_annotations(path, geometry: VoxelGeometry, dims=None) -> list[GroundTruthAnnotation]:
    """Read a JSON array of ``{id, label, centroid_um, voxels?}`` records.

    When ``dims`` (X, Y, Z) is given every centroid is bounds-checked.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFileError(f"annotation file not found: {path}") from None
    if not text.strip():
        return []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"annotation file {path}: invalid JSON: {e}") from None
    if not isinstance(raw, list):
        raise AnnotationError(f"annotation file {path}: expected a JSON array")
    return [_annotation(r, geometry, dims) for r in raw]


def save_annotations(path, annotations: Sequence[GroundTruthAnnotation]) -> None:
    atomic_write_text(path, json.dumps([a.to_dict() for a in annotations], indent=1))
