"""Shared data types, coordinate conventions and unit conversions.

Arrays are stored as ``(Z, Y, X)`` numpy arrays so that C order is x-fastest,
then y, then z. Anything reported to users (``dims``, voxel indices,
centroids) is ordered ``(x, y, z)``. Indices are zero-based. Physical
positions are in micrometers; voxel geometry is stored in nanometers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

#: Lower bound applied to every probability produced by the pipeline, so that
#: ``log(p)`` stays finite (``log(1e-12) ~ -27.6``).
EPS_FLOOR = 1e-12

#: Largest double below one; upper clamp for foreground probabilities.
ONE_MINUS_ULP = float(np.nextafter(1.0, 0.0))

Index3 = Tuple[int, int, int]
Point3 = Tuple[float, float, float]


class BoundsError(ValueError):
    """A physical point or voxel index falls outside the volume."""


def _guarded_floor(q: float) -> int:
    # 0.233 / 0.00233 evaluates to 99.99999999999999; snap before flooring
    return math.floor(round(q, 6))


def _round_half_up(q: float) -> int:
    return math.floor(round(q, 6) + 0.5)


@dataclass(frozen=True)
class VoxelGeometry:
    """Physical voxel size in nanometers."""

    pixel_size_xy: float
    slice_thickness_z: float

    def __post_init__(self):
        if not (self.pixel_size_xy > 0 and self.slice_thickness_z > 0):
            raise ValueError(
                f"voxel sizes must be positive, got xy={self.pixel_size_xy} "
                f"z={self.slice_thickness_z}"
            )

    @property
    def voxel_size_um(self) -> Point3:
        xy = self.pixel_size_xy / 1000.0
        return (xy, xy, self.slice_thickness_z / 1000.0)

    @property
    def voxel_volume_um3(self) -> float:
        sx, sy, sz = self.voxel_size_um
        return sx * sy * sz

    def to_dict(self) -> dict:
        return {
            "pixel_size_xy_nm": self.pixel_size_xy,
            "slice_thickness_z_nm": self.slice_thickness_z,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VoxelGeometry":
        return cls(float(d["pixel_size_xy_nm"]), float(d["slice_thickness_z_nm"]))


def physical_to_voxel(point_um: Sequence[float], geometry: VoxelGeometry,
                      dims: Optional[Sequence[int]] = None) -> Index3:
    """Map a physical point (micrometers) to the voxel containing it.

    Uses floor semantics, so a point on a voxel's lower corner maps to that
    voxel. When ``dims`` (X, Y, Z) is given the result is bounds-checked.
    """
    idx = []
    for axis, p, size in zip("xyz", point_um, geometry.voxel_size_um):
        if p < 0:
            raise BoundsError(f"{axis} coordinate {p} um is negative")
        idx.append(_guarded_floor(p / size))
    if dims is not None:
        for axis, i, n in zip("xyz", idx, dims):
            if i >= n:
                raise BoundsError(
                    f"{axis} coordinate maps to voxel {i}, outside 0..{n - 1}"
                )
    return tuple(idx)


def voxel_to_physical(index: Sequence[int], geometry: VoxelGeometry) -> Point3:
    """Lower-corner physical position (micrometers) of a voxel."""
    return tuple(float(i) * s for i, s in zip(index, geometry.voxel_size_um))


def window_halfwidth(xy_extent_um: float, geometry: VoxelGeometry) -> int:
    """Half-width ``W`` of the in-slice puncta window; the window is 2W+1 wide."""
    if not xy_extent_um > 0:
        raise ValueError("xy extent must be positive")
    return max(0, _round_half_up(xy_extent_um * 1000.0 / (2.0 * geometry.pixel_size_xy)))


def slice_span(z_extent_um: float, geometry: VoxelGeometry) -> int:
    """Number of slices an expected punctum spans (at least one)."""
    if not z_extent_um > 0:
        raise ValueError("z extent must be positive")
    return max(1, _round_half_up(z_extent_um * 1000.0 / geometry.slice_thickness_z))


def slice_neighbor_sets(span: int) -> list[tuple[int, ...]]:
    """Candidate z-offset sets compared against the centre slice.

    Odd spans give one symmetric set. Even spans give the two one-sided
    placements of the span around the centre slice; callers take the better
    of the two.

    >>> slice_neighbor_sets(3)
    [(-1, 1)]
    >>> slice_neighbor_sets(2)
    [(-1,), (1,)]
    """
    if span < 1:
        raise ValueError("span must be >= 1")
    if span % 2:
        h = span // 2
        return [tuple(range(-h, 0)) + tuple(range(1, h + 1))]
    h = span // 2
    below = tuple(range(-h, 0)) + tuple(range(1, h))
    above = tuple(range(-(h - 1), 0)) + tuple(range(1, h + 1))
    return [below, above]


class Stage(str, enum.Enum):
    FOREGROUND = "Foreground"
    PUNCTA2D = "Puncta2D"
    PUNCTA3D = "Puncta3D"
    SYNAPSE = "Synapse"


class SearchMode(str, enum.Enum):
    COLOCALIZED = "Colocalized"
    GRID_SEARCH = "GridSearch"

    @property
    def k(self) -> int:
        return 1 if self is SearchMode.COLOCALIZED else 3


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ChannelVolume:
    """One antibody channel: intensities shaped ``(Z, Y, X)``."""

    name: str
    geometry: VoxelGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"channel {self.name!r}: expected a non-empty 3D array, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError(f"channel {self.name!r}: non-finite intensities")
        if data.min() < 0:
            raise ValueError(f"channel {self.name!r}: negative intensities")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def dims(self) -> Index3:
        z, y, x = self.data.shape
        return (x, y, z)


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """A stage-tagged probability field shaped ``(Z, Y, X)``."""

    stage: Stage
    geometry: VoxelGeometry
    data: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected a 3D array, got {data.shape}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def dims(self) -> Index3:
        z, y, x = self.data.shape
        return (x, y, z)


@dataclass(frozen=True)
class PunctaSize:
    """Expected punctum size in micrometers."""

    xy_extent: float
    z_extent: float

    def __post_init__(self):
        if not (self.xy_extent > 0 and self.z_extent > 0):
            raise ValueError("puncta extents must be positive")

    def halfwidth(self, geometry: VoxelGeometry) -> int:
        return window_halfwidth(self.xy_extent, geometry)

    def span(self, geometry: VoxelGeometry) -> int:
        return slice_span(self.z_extent, geometry)


@dataclass(frozen=True)
class MarkerQuery:
    channel_name: str
    size: PunctaSize
    search_mode: SearchMode = SearchMode.COLOCALIZED


@dataclass(frozen=True)
class QuerySpec:
    """A synapse subtype: presynaptic markers are grid-searched around the
    anchor (first postsynaptic marker), postsynaptic markers co-localize."""

    name: str
    presynaptic: Tuple[MarkerQuery, ...]
    postsynaptic: Tuple[MarkerQuery, ...]
    #: optional annotation label this subtype is scored against
    label: Optional[str] = None

    def __post_init__(self):
        pre = tuple(
            MarkerQuery(m.channel_name, m.size, SearchMode.GRID_SEARCH) for m in self.presynaptic
        )
        post = tuple(
            MarkerQuery(m.channel_name, m.size, SearchMode.COLOCALIZED) for m in self.postsynaptic
        )
        if not pre or not post:
            raise ValueError(f"query {self.name!r}: needs at least one pre- and one postsynaptic marker")
        names = [m.channel_name for m in pre + post]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"query {self.name!r}: channel(s) listed twice: {', '.join(dupes)}")
        object.__setattr__(self, "presynaptic", pre)
        object.__setattr__(self, "postsynaptic", post)

    @property
    def anchor(self) -> MarkerQuery:
        return self.postsynaptic[0]

    @property
    def channels(self) -> list[str]:
        return [m.channel_name for m in self.presynaptic + self.postsynaptic]


@dataclass(frozen=True, eq=False)
class Detection:
    """A connected cluster of above-threshold voxels.

    ``voxels`` is an ``(N, 3)`` integer array of ``(x, y, z)`` indices.
    """

    id: int
    voxels: np.ndarray
    centroid: Point3
    peak_probability: float
    mean_probability: float
    volume_um3: float

    @property
    def n_voxels(self) -> int:
        return len(self.voxels)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "centroid_um": [float(c) for c in self.centroid],
            "n_voxels": self.n_voxels,
            "volume_um3": self.volume_um3,
            "peak_probability": self.peak_probability,
            "mean_probability": self.mean_probability,
            "voxels": self.voxels.tolist(),
        }


class Label(str, enum.Enum):
    EXCITATORY = "Excitatory"
    INHIBITORY = "Inhibitory"
    OTHER = "Other"


@dataclass(frozen=True, eq=False)
class GroundTruthAnnotation:
    id: int
    centroid: Point3
    label: Label = Label.OTHER
    voxels: Optional[np.ndarray] = field(default=None)

    def to_dict(self) -> dict:
        d = {"id": self.id, "label": Label(self.label).value,
             "centroid_um": [float(c) for c in self.centroid]}
        if self.voxels is not None:
            d["voxels"] = np.asarray(self.voxels).tolist()
        return d


def check_same_geometry(volumes) -> VoxelGeometry:
    """Return the shared geometry of ``volumes`` or raise ``ValueError``."""
    volumes = list(volumes)
    g, shape = volumes[0].geometry, volumes[0].data.shape
    for v in volumes[1:]:
        if v.geometry != g or v.data.shape != shape:
            raise ValueError(
                f"geometry mismatch: {getattr(v, 'name', '?')!r} has {v.dims} @ {v.geometry}, "
                f"expected {volumes[0].dims} @ {g}"
            )
    return g
