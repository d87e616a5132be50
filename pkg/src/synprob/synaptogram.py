"""Synaptogram panels: rows are channels (foreground probability) plus a
result row, columns are consecutive slices around a detection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .core import Detection, ProbabilityVolume, VoxelGeometry, physical_to_voxel
from .volume_io import atomic_write_text

log = logging.getLogger(__name__)


@dataclass
class Synaptogram:
    row_names: list[str]
    slices: list[int]
    panels: np.ndarray  # (rows, cols, h, w) uint8
    origin: tuple[int, int]  # (x0, y0) of the panel window, may be negative
    clamped: bool

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.panels.shape[:2]


def _window(arr: np.ndarray, z: int, y0: int, x0: int, h: int, w: int) -> np.ndarray:
    """``arr[z, y0:y0+h, x0:x0+w]`` with zeros outside the volume."""
    nz, ny, nx = arr.shape
    out = np.zeros((h, w), dtype=np.float64)
    if not 0 <= z < nz:
        return out
    ys, ye = max(y0, 0), min(y0 + h, ny)
    xs, xe = max(x0, 0), min(x0 + w, nx)
    if ys < ye and xs < xe:
        out[ys - y0:ye - y0, xs - x0:xe - x0] = arr[z, ys:ye, xs:xe]
    return out


def build_synaptogram(rows: Sequence[ProbabilityVolume], result_mask: np.ndarray,
                      centre_um: Sequence[float], geometry: VoxelGeometry,
                      half_window_um: float, n_slices: int) -> Synaptogram:
    """Cut ``n_slices`` consecutive slices centred on ``centre_um`` from each
    row volume, plus the boolean ``result_mask`` as the last row."""
    if n_slices < 1:
        raise ValueError("need at least one slice")
    nz, ny, nx = result_mask.shape
    cx, cy, cz = physical_to_voxel(centre_um, geometry, (nx, ny, nz))
    half = int(round(half_window_um / geometry.voxel_size_um[0]))
    size = 2 * half + 1
    x0, y0 = cx - half, cy - half
    z0 = cz - (n_slices - 1) // 2
    slices = list(range(z0, z0 + n_slices))
    clamped = x0 < 0 or y0 < 0 or x0 + size > nx or y0 + size > ny or z0 < 0 or slices[-1] >= nz
    if clamped:
        log.warning("synaptogram window extends past the volume; padding with zeros")
    sources = [r.data for r in rows] + [result_mask.astype(np.float64)]
    panels = np.zeros((len(sources), n_slices, size, size), dtype=np.uint8)
    for i, src in enumerate(sources):
        for j, z in enumerate(slices):
            win = np.clip(_window(src, z, y0, x0, size, size), 0.0, 1.0)
            panels[i, j] = np.rint(win * 255).astype(np.uint8)
    names = [r.name or r.stage.value for r in rows] + ["Result"]
    return Synaptogram(names, slices, panels, (x0, y0), clamped)


def detection_mask(shape: tuple[int, int, int], det: Optional[Detection]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if det is not None and det.n_voxels:
        x, y, z = det.voxels.T
        mask[z, y, x] = True
    return mask


def write_synaptogram(sg: Synaptogram, out_dir) -> Path:
    """Write one PGM per panel plus ``layout.json`` describing the grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, name in enumerate(sg.row_names):
        row = []
        for j, z in enumerate(sg.slices):
            fn = f"r{i:02d}_c{j:02d}.pgm"
            Image.fromarray(sg.panels[i, j]).save(out_dir / fn)
            row.append(fn)
        files.append(row)
    layout = {
        "rows": sg.row_names,
        "columns": [{"slice": z} for z in sg.slices],
        "grid": list(sg.grid_shape),
        "panel_size_px": [int(sg.panels.shape[3]), int(sg.panels.shape[2])],
        "origin_xy": list(sg.origin),
        "clamped": sg.clamped,
        "files": files,
    }
    path = out_dir / "layout.json"
    atomic_write_text(path, json.dumps(layout, indent=2))
    return path
