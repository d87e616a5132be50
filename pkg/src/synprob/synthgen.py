"""Synthetic multi-channel volumes with planted, labelled synapses.

Each synapse is a postsynaptic punctum at its centre (in every postsynaptic
channel of its population) and a presynaptic punctum displaced along a
random axis by the cleft offset (in every presynaptic channel). Puncta are
anisotropic Gaussian blobs truncated to ``z_span`` slices, added to
Gaussian background noise.

Noise for (channel, slice) is drawn from its own Philox stream keyed by
``(seed, channel index, slice)``, so generation order does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import ChannelVolume, GroundTruthAnnotation, Label, VoxelGeometry


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Population:
    """A planted synapse class.

    ``amplitude`` is the blob peak above background, in intensity units.
    """

    count: int
    pre_markers: tuple[str, ...] = ("synapsin",)
    post_markers: tuple[str, ...] = ("PSD-95",)
    amplitude: float = 100.0
    cleft_offset_um: float = 0.2
    z_span: int = 5
    label: Label = Label.EXCITATORY


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple[int, int, int] = (128, 128, 30)
    geometry: VoxelGeometry = VoxelGeometry(100.0, 70.0)
    background: tuple[float, float] = (100.0, 10.0)
    psf_sigma_xy_um: float = 0.15
    psf_sigma_z_um: float = 0.14
    populations: tuple[Population, ...] = (Population(50),)
    decoy_pre_per_um3: float = 0.0
    decoy_post_per_um3: float = 0.0
    rng_seed: int = 0
    border_um: tuple[float, float, float] = (0.5, 0.5, 0.35)
    min_separation_um: float = 0.5
    extra_channels: tuple[str, ...] = ()

    def snr(self, pop: Population) -> float:
        return pop.amplitude / self.background[1]

    @property
    def volume_um3(self) -> float:
        x, y, z = self.dims
        return x * y * z * self.geometry.voxel_volume_um3

    @property
    def channel_names(self) -> list[str]:
        names: list[str] = []
        for pop in self.populations:
            for m in pop.pre_markers + pop.post_markers:
                if m not in names:
                    names.append(m)
        for m in self.extra_channels:
            if m not in names:
                names.append(m)
        return names

    def validate(self):
        if self.background[1] <= 0:
            raise SynthSpecError("background sigma must be positive")
        for pop in self.populations:
            if pop.count < 0:
                raise SynthSpecError("population counts must be >= 0")
            if pop.amplitude <= 0:
                raise SynthSpecError("amplitudes must be positive")
            if pop.z_span < 1:
                raise SynthSpecError("z_span must be >= 1")
            if not pop.pre_markers or not pop.post_markers:
                raise SynthSpecError("populations need pre- and postsynaptic markers")
        size = np.array(self.dims) * np.array(self.geometry.voxel_size_um)
        if np.any(2 * np.array(self.border_um) >= size):
            raise SynthSpecError(f"border {self.border_um} um leaves no room in a {tuple(size)} um volume")


def with_snr(pop: Population, snr: float, sigma: float) -> Population:
    """Copy of ``pop`` with amplitude ``snr * sigma``."""
    return replace(pop, amplitude=snr * sigma)


@dataclass(frozen=True)
class Punctum:
    kind: str  # "pre", "post", "decoy-pre", "decoy-post"
    index: tuple[int, int, int]  # (x, y, z)
    channels: tuple[str, ...]
    amplitude: float
    z_span: int
    synapse_id: Optional[int] = None


@dataclass
class SyntheticDataset:
    spec: SynthSpec
    channels: list[ChannelVolume]
    annotations: list[GroundTruthAnnotation]
    puncta: list[Punctum] = field(default_factory=list)

    @property
    def decoys(self) -> list[Punctum]:
        return [p for p in self.puncta if p.kind.startswith("decoy")]


def _centre_um(index, geometry: VoxelGeometry) -> np.ndarray:
    return (np.asarray(index, dtype=np.float64) + 0.5) * np.array(geometry.voxel_size_um)


class _Placer:
    """Random sequential placement with a minimum separation."""

    def __init__(self, spec: SynthSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.vox = np.array(spec.geometry.voxel_size_um)
        dims = np.array(spec.dims)
        border = np.array(spec.border_um)
        self.lo = np.ceil(border / self.vox - 0.5).astype(int)
        self.hi = dims - 1 - self.lo
        self.points = np.empty((0, 3))

    def place(self, min_sep: float, max_tries: int = 20000) -> tuple[int, int, int]:
        for _ in range(max_tries):
            idx = self.rng.integers(self.lo, self.hi + 1)
            c = (idx + 0.5) * self.vox
            if len(self.points) == 0 or np.min(np.linalg.norm(self.points - c, axis=1)) >= min_sep:
                return tuple(int(v) for v in idx)
        raise SynthSpecError(
            f"could not place punctum {len(self.points) + 1} with {min_sep} um separation; "
            "lower the counts or enlarge the volume"
        )

    def add(self, index) -> None:
        self.points = np.vstack([self.points, (np.asarray(index) + 0.5) * self.vox])

    def inside(self, index) -> bool:
        i = np.asarray(index)
        return bool(np.all(i >= 0) and np.all(i < np.array(self.spec.dims)))


_AXES = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def _layout(spec: SynthSpec) -> tuple[list[Punctum], list[GroundTruthAnnotation]]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.rng_seed, 0xC0FFEE])))
    placer = _Placer(spec, rng)
    vox = np.array(spec.geometry.voxel_size_um)
    puncta: list[Punctum] = []
    annotations: list[GroundTruthAnnotation] = []
    sid = 0
    for pop in spec.populations:
        for _ in range(pop.count):
            post = placer.place(spec.min_separation_um)
            axis = np.array(_AXES[rng.integers(len(_AXES))])
            step = np.rint(axis * pop.cleft_offset_um / vox).astype(int)
            pre = tuple(int(v) for v in np.asarray(post) + step)
            placer.add(post)
            puncta.append(Punctum("post", post, pop.post_markers, pop.amplitude, pop.z_span, sid))
            if placer.inside(pre):
                puncta.append(Punctum("pre", pre, pop.pre_markers, pop.amplitude, pop.z_span, sid))
            annotations.append(GroundTruthAnnotation(sid, tuple(_centre_um(post, spec.geometry)),
                                                     Label(pop.label)))
            sid += 1
    # decoys keep clear of planted synapses and each other
    for kind, rate in (("decoy-pre", spec.decoy_pre_per_um3), ("decoy-post", spec.decoy_post_per_um3)):
        for pop_i, pop in enumerate(spec.populations):
            n = int(round(rate * spec.volume_um3 / max(len(spec.populations), 1)))
            markers = pop.pre_markers if kind == "decoy-pre" else pop.post_markers
            for _ in range(n):
                idx = placer.place(spec.min_separation_um + pop.cleft_offset_um)
                placer.add(idx)
                puncta.append(Punctum(kind, idx, markers, pop.amplitude, pop.z_span))
    return puncta, annotations


def render_blob(vol: np.ndarray, index, amplitude: float, sigma_px: tuple[float, float, float],
                z_span: int) -> None:
    """Add a truncated anisotropic Gaussian with peak ``amplitude`` at
    voxel ``index`` (x, y, z) into ``vol`` (Z, Y, X), in place."""
    x, y, z = index
    sx, sy, sz = sigma_px
    nz, ny, nx = vol.shape
    rx, ry = int(np.ceil(3 * sx)), int(np.ceil(3 * sy))
    z0, z1 = z - (z_span - 1) // 2, z + z_span // 2
    zs = np.arange(max(z0, 0), min(z1, nz - 1) + 1)
    ys = np.arange(max(y - ry, 0), min(y + ry, ny - 1) + 1)
    xs = np.arange(max(x - rx, 0), min(x + rx, nx - 1) + 1)
    if not (len(zs) and len(ys) and len(xs)):
        return
    gz = np.exp(-0.5 * ((zs - z) / sz) ** 2) if sz > 0 else (zs == z).astype(float)
    gy = np.exp(-0.5 * ((ys - y) / sy) ** 2)
    gx = np.exp(-0.5 * ((xs - x) / sx) ** 2)
    vol[zs[0]:zs[-1] + 1, ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] += (
        amplitude * gz[:, None, None] * gy[None, :, None] * gx[None, None, :]
    )


def _noise(spec: SynthSpec, channel_index: int) -> np.ndarray:
    x, y, z = spec.dims
    mu, sigma = spec.background
    out = np.empty((z, y, x))
    for k in range(z):
        bitgen = np.random.Philox(np.random.SeedSequence([spec.rng_seed, channel_index, k]))
        out[k] = mu + sigma * np.random.Generator(bitgen).standard_normal((y, x))
    return out


def generate(spec: SynthSpec) -> SyntheticDataset:
    """Render ``spec`` into channels plus ground-truth annotations."""
    spec.validate()
    puncta, annotations = _layout(spec)
    vx, vy, vz = spec.geometry.voxel_size_um
    sigma_px = (spec.psf_sigma_xy_um / vx, spec.psf_sigma_xy_um / vy, spec.psf_sigma_z_um / vz)
    channels = []
    for ci, name in enumerate(spec.channel_names):
        vol = _noise(spec, ci)
        for p in puncta:
            if name in p.channels:
                render_blob(vol, p.index, p.amplitude, sigma_px, p.z_span)
        np.maximum(vol, 0.0, out=vol)
        channels.append(ChannelVolume(name, spec.geometry, vol))
    return SyntheticDataset(spec, channels, annotations, puncta)


def excitatory_inhibitory_spec(n_excitatory: int, n_inhibitory: int, snr: float = 5.0,
                               **kw) -> SynthSpec:
    """Two populations with disjoint marker sets: synapsin / PSD-95 and
    GAD / gephyrin."""
    sigma = kw.get("background", (100.0, 10.0))[1]
    pops = (
        Population(n_excitatory, ("synapsin",), ("PSD-95",), snr * sigma, label=Label.EXCITATORY),
        Population(n_inhibitory, ("GAD",), ("gephyrin",), snr * sigma, label=Label.INHIBITORY),
    )
    return SynthSpec(populations=pops, **kw)


def shift_channel(channel: ChannelVolume, shift_xyz: Sequence[int], fill: Optional[float] = None) -> ChannelVolume:
    """Translate a channel by whole voxels; vacated voxels get ``fill``
    (default: the channel mean)."""
    data = channel.data
    sx, sy, sz = shift_xyz
    out = np.full(data.shape, float(data.mean()) if fill is None else fill)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    for ax, s in zip((2, 1, 0), (sx, sy, sz)):
        n = data.shape[ax]
        if s >= 0:
            src[ax], dst[ax] = slice(0, n - s), slice(s, n)
        else:
            src[ax], dst[ax] = slice(-s, n), slice(0, n + s)
    out[tuple(dst)] = data[tuple(src)]
    return ChannelVolume(channel.name, channel.geometry, out)
