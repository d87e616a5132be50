"""Per-channel probability maps: background model, foreground probability,
2D puncta probability and the cross-slice persistence factor.

Every map is shaped ``(Z, Y, X)`` and clamped to ``[EPS_FLOOR, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr

from ._parallel import map_ranges, map_slabs, window_sum
from .core import (
    EPS_FLOOR,
    ONE_MINUS_ULP,
    ChannelVolume,
    ProbabilityVolume,
    PunctaSize,
    Stage,
    slice_neighbor_sets,
)

#: Relative sigma floor, as a fraction of a slice's dynamic range.
SIGMA_REL_FLOOR = 1e-6
#: Absolute sigma floor, used for constant slices.
SIGMA_ABS_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    """Per-slice Gaussian background: ``mean[z]`` and ``sigma[z]``."""

    mean: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return len(self.mean)


def fit_background(channel: ChannelVolume, trim_fraction: float = 0.0) -> BackgroundModel:
    """Fit a Gaussian to the intensities of each slice.

    Statistics use every voxel of the slice and the population (divide by N)
    variance. With ``trim_fraction > 0`` the brightest fraction of each slice
    is excluded first, for sensitivity studies.
    """
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError("trim_fraction must lie in [0, 1)")
    data = channel.data
    means = np.empty(data.shape[0])
    sigmas = np.empty(data.shape[0])
    for z, sl in enumerate(data):
        v = sl.ravel().astype(np.float64)
        if trim_fraction > 0:
            cut = np.quantile(v, 1.0 - trim_fraction)
            kept = v[v <= cut]
            v = kept if kept.size else v
        mu = v.mean()
        sd = np.sqrt(np.mean((v - mu) ** 2))
        floor = max(SIGMA_REL_FLOOR * float(sl.max() - sl.min()), SIGMA_ABS_FLOOR)
        means[z] = mu
        sigmas[z] = max(sd, floor)
    return BackgroundModel(means, sigmas)


def foreground_probability(channel: ChannelVolume, model: BackgroundModel,
                           threads: int = 1) -> ProbabilityVolume:
    """Standard normal CDF of each voxel's per-slice z-score."""
    if len(model) != channel.data.shape[0]:
        raise ValueError(
            f"background model has {len(model)} slices, channel {channel.name!r} has {channel.data.shape[0]}"
        )
    mu = model.mean[:, None, None]
    sd = model.sigma[:, None, None]

    def slab(a, b):
        v = channel.data[a:b].astype(np.float64)
        p = ndtr((v - mu[a:b]) / sd[a:b])
        return np.clip(p, EPS_FLOOR, ONE_MINUS_ULP)

    data = map_ranges(slab, channel.data.shape[0], axis=0, threads=threads)
    return ProbabilityVolume(Stage.FOREGROUND, channel.geometry, data, channel.name)


def _box_log_product(p: np.ndarray, w: int) -> np.ndarray:
    logp = np.log(p)
    s = window_sum(logp, axis=2, before=w, after=w, mode="edge")
    s = window_sum(s, axis=1, before=w, after=w, mode="edge")
    return np.clip(np.exp(s), EPS_FLOOR, 1.0)


def puncta_2d(p_f: ProbabilityVolume, w: int, threads: int = 1) -> ProbabilityVolume:
    """Product of foreground probabilities over each voxel's (2w+1)^2 in-slice
    window, evaluated as ``exp`` of a box filter on ``log p``.

    Borders replicate the edge voxels.
    """
    if p_f.stage is not Stage.FOREGROUND:
        raise ValueError(f"puncta_2d expects a Foreground map, got {p_f.stage.value}")
    if w < 0:
        raise ValueError("window half-width must be >= 0")
    if w == 0:
        data = np.array(p_f.data, dtype=np.float64)
    else:
        data = map_slabs(lambda a: _box_log_product(a, w), p_f.data, axis=0, threads=threads)
    return ProbabilityVolume(Stage.PUNCTA2D, p_f.geometry, data, p_f.name)


def slice_factor(p_p: ProbabilityVolume, neighbors: Iterable[int]) -> np.ndarray:
    """Attenuation ``exp(-sum_j (p[z] - p[z+j])^2)`` over z-offsets ``neighbors``.

    Offsets that fall outside the volume are dropped from the sum.
    """
    if p_p.stage is not Stage.PUNCTA2D:
        raise ValueError(f"slice_factor expects a Puncta2D map, got {p_p.stage.value}")
    p = p_p.data
    nz = p.shape[0]
    acc = np.zeros(p.shape, dtype=np.float64)
    for j in neighbors:
        if j == 0:
            continue
        if j > 0:
            if j < nz:
                acc[: nz - j] += (p[: nz - j] - p[j:]) ** 2
        else:
            if -j < nz:
                acc[-j:] += (p[-j:] - p[: nz + j]) ** 2
    return np.exp(-acc)


def span_factor(p_p: ProbabilityVolume, span: int) -> np.ndarray:
    """Slice factor for a punctum spanning ``span`` slices.

    Even spans have no centred neighbourhood; the larger of the two one-sided
    factors is used.
    """
    sets = slice_neighbor_sets(span)
    f = slice_factor(p_p, sets[0])
    for other in sets[1:]:
        f = np.maximum(f, slice_factor(p_p, other))
    return f


def puncta_3d(p_p: ProbabilityVolume, factor: np.ndarray) -> ProbabilityVolume:
    if factor.shape != p_p.data.shape:
        raise ValueError(f"factor shape {factor.shape} != map shape {p_p.data.shape}")
    data = np.clip(p_p.data * factor, EPS_FLOOR, 1.0)
    return ProbabilityVolume(Stage.PUNCTA3D, p_p.geometry, data, p_p.name)


@dataclass(frozen=True, eq=False)
class ChannelStages:
    """All intermediate maps for one marker."""

    foreground: ProbabilityVolume
    puncta2d: ProbabilityVolume
    puncta3d: ProbabilityVolume
    background: BackgroundModel

    def __iter__(self):
        return iter((self.foreground, self.puncta2d, self.puncta3d))


def channel_stages(channel: ChannelVolume, size: PunctaSize, threads: int = 1,
                   trim_fraction: float = 0.0) -> ChannelStages:
    """Run steps one to three for ``channel`` with the marker's expected size."""
    g = channel.geometry
    model = fit_background(channel, trim_fraction)
    p_f = foreground_probability(channel, model, threads)
    p_p = puncta_2d(p_f, size.halfwidth(g), threads)
    p_3 = puncta_3d(p_p, span_factor(p_p, size.span(g)))
    return ChannelStages(p_f, p_p, p_3, model)
