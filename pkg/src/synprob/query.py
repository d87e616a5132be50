"""Combining per-marker puncta maps into a synapse probability map.

For each voxel of the anchor (first postsynaptic) marker, presynaptic
evidence is searched on a K x K x K grid of subregions centred on the voxel.
Each subregion is scored by the mean of ``log p`` over its in-bounds voxels
and the best subregion wins. Postsynaptic markers use a single centred
subregion (K = 1).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._parallel import map_ranges, map_slabs, window_sum
from .core import (
    EPS_FLOOR,
    ChannelVolume,
    MarkerQuery,
    ProbabilityVolume,
    PunctaSize,
    QuerySpec,
    Stage,
    VoxelGeometry,
    check_same_geometry,
)
from .pipeline import ChannelStages, channel_stages
from .volume_io import atomic_write_text

log = logging.getLogger(__name__)

LOG_EPS = float(np.log(EPS_FLOOR))


class QueryError(ValueError):
    """A query cannot be run against the dataset (unknown channel, bad file)."""


@dataclass(frozen=True)
class GridSpec:
    """``k`` subregions per axis, each ``extent`` = (wx, wy, wz) voxels."""

    k: int
    extent: tuple[int, int, int]

    def __post_init__(self):
        if self.k not in (1, 3):
            raise ValueError(f"K must be 1 or 3, got {self.k}")
        if min(self.extent) < 1:
            raise ValueError(f"subregion extents must be >= 1, got {self.extent}")

    @classmethod
    def for_marker(cls, size: PunctaSize, geometry: VoxelGeometry, k: int) -> "GridSpec":
        w = 2 * size.halfwidth(geometry) + 1
        return cls(k, (w, w, size.span(geometry)))

    def offsets(self) -> list[tuple[int, int, int]]:
        """Subregion centre offsets ``(dz, dy, dx)`` relative to the anchor."""
        wx, wy, wz = self.extent
        r = range(-(self.k // 2), self.k // 2 + 1)
        return [(i * wz, j * wy, l * wx) for i in r for j in r for l in r]


def _subregion_bounds(w: int) -> tuple[int, int]:
    # voxels before / after a subregion's centre; even widths lean backwards
    before = w // 2
    return before, w - 1 - before


def _axis_counts(n: int, w: int, pad: int) -> np.ndarray:
    before, after = _subregion_bounds(w)
    ones = np.pad(np.ones(n), (pad, pad))
    return window_sum(ones, 0, before, after)


def subregion_logmeans(logp: np.ndarray, grid: GridSpec, threads: int = 1):
    """Mean of ``logp`` over a subregion centred at every voxel of the volume
    padded by the grid reach. Returns ``(means, pad)`` with ``pad`` =
    ``(pz, py, px)``; subregions with no in-bounds voxel score ``log EPS``.
    """
    wx, wy, wz = grid.extent
    reach = grid.k // 2
    pz, py, px = reach * wz, reach * wy, reach * wx
    padded = np.pad(logp, ((pz, pz), (py, py), (px, px)))
    bz, az = _subregion_bounds(wz)
    by, ay = _subregion_bounds(wy)
    bx, ax = _subregion_bounds(wx)

    s = map_slabs(lambda a: window_sum(window_sum(a, 2, bx, ax), 1, by, ay), padded, 0, threads)
    s = map_slabs(lambda a: window_sum(a, 0, bz, az), s, 1, threads)

    nz, ny, nx = logp.shape
    cz = _axis_counts(nz, wz, pz)[:, None, None]
    cy = _axis_counts(ny, wy, py)[None, :, None]
    cx = _axis_counts(nx, wx, px)[None, None, :]
    count = cz * cy * cx
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(count > 0, s / np.where(count > 0, count, 1.0), LOG_EPS)
    return means, (pz, py, px)


def grid_max_logmean_volume(p: ProbabilityVolume, grid: GridSpec, threads: int = 1) -> np.ndarray:
    """Best-subregion geometric mean of ``p`` around every voxel."""
    if p.stage is not Stage.PUNCTA3D:
        raise ValueError(f"grid search expects a Puncta3D map, got {p.stage.value}")
    logp = np.log(np.clip(p.data, EPS_FLOOR, 1.0))
    means, (pz, py, px) = subregion_logmeans(logp, grid, threads)
    nz, ny, nx = logp.shape
    offsets = grid.offsets()

    def slab(a, b):
        best = np.full((b - a, ny, nx), -np.inf)
        for dz, dy, dx in offsets:
            np.maximum(
                best,
                means[pz + dz + a: pz + dz + b, py + dy: py + dy + ny, px + dx: px + dx + nx],
                out=best,
            )
        return best

    best = map_ranges(slab, nz, axis=0, threads=threads)
    return np.clip(np.exp(best), EPS_FLOOR, 1.0)


def grid_max_logmean(p: ProbabilityVolume, center: Sequence[int], grid: GridSpec) -> float:
    """Best-subregion geometric mean of ``p`` around one voxel ``(x, y, z)``."""
    if p.stage is not Stage.PUNCTA3D:
        raise ValueError(f"grid search expects a Puncta3D map, got {p.stage.value}")
    x, y, z = center
    data = p.data
    nz, ny, nx = data.shape
    wx, wy, wz = grid.extent
    best = -np.inf
    for dz, dy, dx in grid.offsets():
        lo = []
        for c, d, w, n in ((z, dz, wz, nz), (y, dy, wy, ny), (x, dx, wx, nx)):
            before, after = _subregion_bounds(w)
            lo.append((max(c + d - before, 0), min(c + d + after + 1, n)))
        (z0, z1), (y0, y1), (x0, x1) = lo
        if z0 >= z1 or y0 >= y1 or x0 >= x1:
            m = LOG_EPS
        else:
            block = np.clip(data[z0:z1, y0:y1, x0:x1], EPS_FLOOR, 1.0)
            m = float(np.log(block).mean())
        best = max(best, m)
    return float(np.clip(np.exp(best), EPS_FLOOR, 1.0))


@dataclass(frozen=True, eq=False)
class QueryResult:
    synapse: ProbabilityVolume
    stages: Mapping[str, ChannelStages]


def _resolve(channels: Iterable[ChannelVolume], query: QuerySpec) -> dict[str, ChannelVolume]:
    by_name = {c.name: c for c in channels}
    missing = [n for n in query.channels if n not in by_name]
    if missing:
        raise QueryError(
            f"query {query.name!r}: channel(s) not in dataset: {', '.join(repr(m) for m in missing)}"
        )
    used = {n: by_name[n] for n in query.channels}
    try:
        check_same_geometry(list(used.values()))
    except ValueError as e:
        raise QueryError(f"query {query.name!r}: {e}") from None
    return used


def combine_markers(puncta3d: Mapping[str, ProbabilityVolume], query: QuerySpec, threads: int = 1,
                    post_window: bool = False) -> ProbabilityVolume:
    """Synapse probability from each marker's Puncta3D map.

    Presynaptic markers are grid-searched (K=3) and postsynaptic markers
    co-localize (K=1). By default the K=1 postsynaptic subregion is the voxel
    itself, so a single postsynaptic marker contributes its puncta map
    unchanged. With ``post_window=True`` each postsynaptic marker is instead
    averaged (in log space) over its own punctum window. Each presynaptic
    marker is searched independently with subregions the size of its own
    punctum.
    """
    missing = [n for n in query.channels if n not in puncta3d]
    if missing:
        raise QueryError(f"query {query.name!r}: no Puncta3D map for {', '.join(map(repr, missing))}")
    maps = [puncta3d[n] for n in query.channels]
    for n, v in zip(query.channels, maps):
        if v.stage is not Stage.PUNCTA3D:
            raise QueryError(f"query {query.name!r}: map for {n!r} is {v.stage.value}, expected Puncta3D")
    try:
        g = check_same_geometry(maps)
    except ValueError as e:
        raise QueryError(f"query {query.name!r}: {e}") from None

    def score(m: MarkerQuery, k: int) -> np.ndarray:
        return grid_max_logmean_volume(puncta3d[m.channel_name], GridSpec.for_marker(m.size, g, k), threads)

    # fixed multiplication order, so permuted marker lists agree bit for bit
    post = np.ones(maps[0].data.shape)
    for m in sorted(query.postsynaptic, key=lambda m: m.channel_name):
        post *= score(m, 1) if post_window else puncta3d[m.channel_name].data
    pre = np.ones_like(post)
    for m in sorted(query.presynaptic, key=lambda m: m.channel_name):
        pre *= score(m, 3)
    return ProbabilityVolume(Stage.SYNAPSE, g, pre * post, query.name)


def execute_query(channels: Iterable[ChannelVolume], query: QuerySpec, threads: int = 1,
                  trim_fraction: float = 0.0, post_window: bool = False) -> QueryResult:
    """Run every marker of ``query`` through the pipeline and combine them
    with :func:`combine_markers`."""
    used = _resolve(channels, query)
    stages = {
        m.channel_name: channel_stages(used[m.channel_name], m.size, threads, trim_fraction)
        for m in query.presynaptic + query.postsynaptic
    }
    synapse = combine_markers({n: s.puncta3d for n, s in stages.items()}, query, threads, post_window)
    return QueryResult(synapse, stages)


# -- query files ------------------------------------------------------------

def _marker_from_dict(d: Mapping, side: str, qname: str) -> MarkerQuery:
    try:
        name = d.get("channel", d.get("channel_name"))
        if "size_um" in d:
            sx, sy, sz = (float(v) for v in d["size_um"])
            if sx != sy:
                log.warning("query %r: marker %r has x size %g != y size %g; using max",
                            qname, name, sx, sy)
            size = PunctaSize(max(sx, sy), sz)
        else:
            size = PunctaSize(float(d["xy_um"]), float(d["z_um"]))
    except (KeyError, TypeError, ValueError) as e:
        raise QueryError(f"query {qname!r}: malformed {side} marker {dict(d)!r}: {e}") from None
    if not name:
        raise QueryError(f"query {qname!r}: {side} marker without a channel name")
    return MarkerQuery(str(name), size)


def query_from_dict(d: Mapping) -> QuerySpec:
    name = str(d.get("name", "query"))
    try:
        pre = [_marker_from_dict(m, "presynaptic", name) for m in d["presynaptic"]]
        post = [_marker_from_dict(m, "postsynaptic", name) for m in d["postsynaptic"]]
        label = d.get("label")
        return QuerySpec(name, tuple(pre), tuple(post), None if label is None else str(label))
    except KeyError as e:
        raise QueryError(f"query {name!r}: missing field {e}") from None
    except ValueError as e:
        if isinstance(e, QueryError):
            raise
        raise QueryError(str(e)) from None


def query_to_dict(q: QuerySpec) -> dict:
    def marker(m: MarkerQuery) -> dict:
        return {"channel": m.channel_name,
                "size_um": [m.size.xy_extent, m.size.xy_extent, m.size.z_extent]}

    d = {"name": q.name,
         "presynaptic": [marker(m) for m in q.presynaptic],
         "postsynaptic": [marker(m) for m in q.postsynaptic]}
    if q.label:
        d["label"] = q.label
    return d


def load_queries(path) -> list[QuerySpec]:
    """Read a JSON query file: one query object, a list, or ``{"queries": [...]}``."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise QueryError(f"query file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise QueryError(f"query file {path}: invalid JSON: {e}") from None
    if isinstance(raw, Mapping) and "queries" in raw:
        raw = raw["queries"]
    if isinstance(raw, Mapping):
        raw = [raw]
    queries = [query_from_dict(q) for q in raw]
    names = [q.name for q in queries]
    if len(set(names)) != len(names):
        raise QueryError(f"query file {path}: duplicate query names")
    return queries


def save_queries(queries: Sequence[QuerySpec], path) -> None:
    atomic_write_text(path, json.dumps({"queries": [query_to_dict(q) for q in queries]}, indent=2))
