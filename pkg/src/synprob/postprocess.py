"""From a synapse probability map to discrete detections and densities."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import Detection, ProbabilityVolume, Stage, VoxelGeometry, physical_to_voxel, BoundsError


@dataclass(frozen=True)
class DetectionParams:
    threshold: float = 0.3
    min_voxels: int = 2
    connectivity: int = 26

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.min_voxels < 1:
            raise ValueError("min_voxels must be >= 1")
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")

    def with_threshold(self, t: float) -> "DetectionParams":
        return replace(self, threshold=t)


def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(3, 1 if connectivity == 6 else 3)


def label_components(data: np.ndarray, threshold: float, connectivity: int = 26):
    """Label ``data >= threshold``; returns ``(labels, n)`` as scipy does."""
    return ndimage.label(data >= threshold, structure=_structure(connectivity))


def extract_detections(p: ProbabilityVolume, params: DetectionParams = DetectionParams()) -> list[Detection]:
    """Connected components of ``p >= threshold`` with at least ``min_voxels``
    voxels, sorted by descending peak probability.

    Centroids are probability-weighted means of voxel centres, in micrometers.
    Ties in peak probability are broken by the first voxel in x-fastest scan
    order, so ids are reproducible.
    """
    if p.stage is not Stage.SYNAPSE:
        raise ValueError(f"detections are extracted from a Synapse map, got {p.stage.value}")
    return detections_at(p, params.threshold, params.min_voxels, params.connectivity)


def detections_at(p: ProbabilityVolume, threshold: float, min_voxels: int = 2,
                  connectivity: int = 26) -> list[Detection]:
    """:func:`extract_detections` without parameter validation, so sweeps can
    probe thresholds at or beyond 0 and 1."""
    data = p.data
    labels, n = label_components(data, threshold, connectivity)
    if n == 0:
        return []
    flat_labels = labels.ravel()
    idx = np.flatnonzero(flat_labels)
    lab = flat_labels[idx]
    order = np.argsort(lab, kind="stable")
    idx, lab = idx[order], lab[order]
    starts = np.searchsorted(lab, np.arange(1, n + 1))
    ends = np.append(starts[1:], len(lab))

    nz, ny, nx = data.shape
    zz, rem = np.divmod(idx, ny * nx)
    yy, xx = np.divmod(rem, nx)
    vals = data.ravel()[idx].astype(np.float64)
    sx, sy, sz = p.geometry.voxel_size_um
    vox_vol = p.geometry.voxel_volume_um3

    comps = []
    for s, e in zip(starts, ends):
        size = e - s
        if size < min_voxels:
            continue
        v = vals[s:e]
        wsum = v.sum()
        centroid = (
            float(((xx[s:e] + 0.5) * v).sum() / wsum * sx),
            float(((yy[s:e] + 0.5) * v).sum() / wsum * sy),
            float(((zz[s:e] + 0.5) * v).sum() / wsum * sz),
        )
        comps.append((float(v.max()), int(idx[s]), s, e, centroid, float(v.mean())))
    comps.sort(key=lambda c: (-c[0], c[1]))

    dets = []
    for i, (peak, _, s, e, centroid, mean) in enumerate(comps):
        voxels = np.stack([xx[s:e], yy[s:e], zz[s:e]], axis=1).astype(np.int64)
        dets.append(Detection(i, voxels, centroid, peak, mean, (e - s) * vox_vol))
    return dets


def _mask_volume(mask: np.ndarray, geometry: VoxelGeometry) -> float:
    return float(np.count_nonzero(mask)) * geometry.voxel_volume_um3


def _centroids_in_mask(dets: Sequence[Detection], mask: np.ndarray, geometry: VoxelGeometry) -> int:
    nz, ny, nx = mask.shape
    n = 0
    for d in dets:
        try:
            x, y, z = physical_to_voxel(d.centroid, geometry, (nx, ny, nz))
        except BoundsError:
            continue
        n += bool(mask[z, y, x])
    return n


def density(dets: Sequence[Detection], volume_um3: Optional[float] = None,
            mask: Optional[np.ndarray] = None, geometry: Optional[VoxelGeometry] = None) -> float:
    """Detections per cubic micrometer.

    With a voxel ``mask`` (shaped like the volume, plus its ``geometry``) only
    detections whose centroid falls inside the mask are counted, and the
    mask's own volume is the denominator.
    """
    if mask is not None:
        if geometry is None:
            raise ValueError("a mask needs the voxel geometry")
        volume_um3 = _mask_volume(mask, geometry)
        count = _centroids_in_mask(dets, mask, geometry)
    else:
        count = len(dets)
    if volume_um3 is None or not volume_um3 > 0:
        raise ValueError("volume must be positive")
    return count / volume_um3


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    count: int
    density: float


def density_sweep(p: ProbabilityVolume, thresholds: Sequence[float], min_voxels: int = 2,
                  connectivity: int = 26, mask: Optional[np.ndarray] = None) -> list[SweepPoint]:
    """Detection count and density at each threshold."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("empty threshold list")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    total = p.data.size * p.geometry.voxel_volume_um3
    out = []
    for t in thresholds:
        dets = detections_at(p, t, min_voxels, connectivity)
        if mask is None:
            out.append(SweepPoint(t, len(dets), density(dets, total)))
        else:
            n = _centroids_in_mask(dets, mask, p.geometry)
            out.append(SweepPoint(t, n, density(dets, mask=mask, geometry=p.geometry)))
    return out


def density_plateau(sweep: Sequence[SweepPoint], low: float, high: float) -> tuple[float, float]:
    """Widest contiguous threshold band whose densities all lie in
    ``[low, high]``; returns ``(t_start, t_end)`` or ``(nan, nan)``."""
    best = (float("nan"), float("nan"))
    best_w = -1.0
    start = None
    for i, pt in enumerate(sweep):
        if low <= pt.density <= high:
            if start is None:
                start = i
            w = pt.threshold - sweep[start].threshold
            if w > best_w:
                best_w, best = w, (sweep[start].threshold, pt.threshold)
        else:
            start = None
    return best


# -- export -----------------------------------------------------------------

DETECTION_CSV_HEADER = ["id", "centroid_x_um", "centroid_y_um", "centroid_z_um",
                        "n_voxels", "volume_um3", "peak_probability", "mean_probability"]


def detections_to_json(dets: Sequence[Detection]) -> str:
    return json.dumps([d.to_dict() for d in dets], indent=1)


def detections_to_csv(dets: Sequence[Detection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_CSV_HEADER)
    for d in dets:
        w.writerow([d.id, *(f"{c:.6f}" for c in d.centroid), d.n_voxels, f"{d.volume_um3:.9g}",
                    f"{d.peak_probability:.9g}", f"{d.mean_probability:.9g}"])
    return buf.getvalue()


def detections_from_json(text: str) -> list[Detection]:
    out = []
    for r in json.loads(text):
        out.append(Detection(int(r["id"]), np.asarray(r["voxels"], dtype=np.int64).reshape(-1, 3),
                             tuple(r["centroid_um"]), float(r["peak_probability"]),
                             float(r["mean_probability"]), float(r["volume_um3"])))
    return out


def sweep_to_csv(sweep: Sequence[SweepPoint], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "count", "density_per_um3"])
    for pt in sweep:
        w.writerow([f"{pt.threshold:.6g}", pt.count, f"{pt.density:.9g}"])
    return buf.getvalue()
