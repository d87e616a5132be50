"""Synthetic experiments shared by the acceptance suite and ``scripts/``.

Every experiment is a plain function of a frozen config so runs are
reproducible from the config alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import ChannelVolume, MarkerQuery, PunctaSize, QuerySpec, VoxelGeometry
from .evaluation import PRPoint, match_detections, operating_point, pr_curve
from .postprocess import DetectionParams, SweepPoint, density_plateau, density_sweep, extract_detections
from .query import GridSpec, QueryResult, execute_query
from .synthgen import Population, SynthSpec, SyntheticDataset, excitatory_inhibitory_spec, generate, shift_channel

#: Query size used throughout: 0.2 um across (3 x 3 px at 100 nm), 3 slices at 70 nm.
PUNCTA = PunctaSize(0.2, 0.21)

#: PR-curve thresholds, fine at the low end where SNR-5 maps peak.
PR_THRESHOLDS = tuple(np.unique(np.round(np.concatenate([
    np.arange(0.005, 0.05, 0.005), np.arange(0.05, 1.0, 0.025)]), 4)).tolist())

#: Density-sweep thresholds.
SWEEP_THRESHOLDS = tuple(np.round(np.arange(0.01, 1.0, 0.01), 2).tolist())


def query(name: str, pre: str, post: str, size: PunctaSize = PUNCTA, label: Optional[str] = None) -> QuerySpec:
    return QuerySpec(name, (MarkerQuery(pre, size),), (MarkerQuery(post, size),), label)


EXCITATORY = query("excitatory", "synapsin", "PSD-95", label="Excitatory")
INHIBITORY = query("inhibitory", "GAD", "gephyrin", label="Inhibitory")


# -- end-to-end detection ---------------------------------------------------

@dataclass(frozen=True)
class DetectionExperiment:
    n_synapses: int = 200
    snr: float = 5.0
    dims: tuple[int, int, int] = (256, 256, 30)
    decoys_per_um3: float = 0.02
    seed: int = 0
    threads: int = 1

    def spec(self) -> SynthSpec:
        sigma = 10.0
        return SynthSpec(dims=self.dims, background=(100.0, sigma),
                         populations=(Population(self.n_synapses, amplitude=self.snr * sigma),),
                         decoy_pre_per_um3=self.decoys_per_um3, decoy_post_per_um3=self.decoys_per_um3,
                         rng_seed=self.seed)


@dataclass
class DetectionOutcome:
    dataset: SyntheticDataset
    result: QueryResult
    curve: list[PRPoint]
    operating: PRPoint
    seconds: float


def run_detection(cfg: DetectionExperiment = DetectionExperiment()) -> DetectionOutcome:
    t0 = time.perf_counter()
    ds = generate(cfg.spec())
    result = execute_query(ds.channels, EXCITATORY, threads=cfg.threads)
    curve = pr_curve(result.synapse, ds.annotations, PR_THRESHOLDS)
    return DetectionOutcome(ds, result, curve, operating_point(curve), time.perf_counter() - t0)


# -- misalignment -----------------------------------------------------------

@dataclass
class MisalignmentOutcome:
    shift_xyz: tuple[int, int, int]
    threshold: float
    recall_aligned: float
    recall_shifted: float

    @property
    def delta_pp(self) -> float:
        return 100.0 * (self.recall_shifted - self.recall_aligned)


def run_misalignment(base: DetectionOutcome, axis: int = 0, sign: int = 1,
                     threads: int = 1) -> MisalignmentOutcome:
    """Shift the presynaptic channel by one subregion extent along ``axis``
    (0 = x, 1 = y, 2 = z) and re-score at the aligned operating threshold."""
    g = base.dataset.spec.geometry
    extent = GridSpec.for_marker(PUNCTA, g, 3).extent
    shift = [0, 0, 0]
    shift[axis] = sign * extent[axis]
    pre = EXCITATORY.presynaptic[0].channel_name
    chans = [shift_channel(c, shift) if c.name == pre else c for c in base.dataset.channels]
    shifted = execute_query(chans, EXCITATORY, threads=threads).synapse
    t = base.operating.threshold
    rep = match_detections(extract_detections(shifted, DetectionParams(t)), base.dataset.annotations)
    return MisalignmentOutcome(tuple(shift), t, base.operating.recall, rep.recall)


# -- population ratio -------------------------------------------------------

@dataclass(frozen=True)
class RatioExperiment:
    n_excitatory: int = 200
    n_inhibitory: int = 20
    snr: float = 10.0
    dims: tuple[int, int, int] = (256, 256, 30)
    threshold: float = DetectionParams.threshold
    seed: int = 0
    threads: int = 1


@dataclass
class RatioOutcome:
    counts: dict[str, int]
    results: dict[str, QueryResult]
    seconds: float

    @property
    def ratio(self) -> float:
        e, i = self.counts["excitatory"], self.counts["inhibitory"]
        return e / i if i else float("inf")


def run_ratio(cfg: RatioExperiment = RatioExperiment()) -> RatioOutcome:
    t0 = time.perf_counter()
    ds = generate(excitatory_inhibitory_spec(cfg.n_excitatory, cfg.n_inhibitory, snr=cfg.snr,
                                             dims=cfg.dims, rng_seed=cfg.seed))
    results, counts = {}, {}
    for q in (EXCITATORY, INHIBITORY):
        r = execute_query(ds.channels, q, threads=cfg.threads)
        results[q.name] = r
        counts[q.name] = len(extract_detections(r.synapse, DetectionParams(cfg.threshold)))
    return RatioOutcome(counts, results, time.perf_counter() - t0)


# -- density plateau --------------------------------------------------------

@dataclass(frozen=True)
class DensityExperiment:
    density_per_um3: float = 0.9
    dims: tuple[int, int, int] = (128, 128, 100)
    snr: float = 10.0
    band: tuple[float, float] = (0.75, 1.05)
    seed: int = 0
    threads: int = 1

    def spec(self) -> SynthSpec:
        base = SynthSpec(dims=self.dims)
        n = int(round(self.density_per_um3 * base.volume_um3))
        return replace(base, populations=(Population(n, amplitude=self.snr * base.background[1]),),
                       rng_seed=self.seed)


@dataclass
class DensityOutcome:
    planted: int
    volume_um3: float
    sweep: list[SweepPoint]
    plateau: tuple[float, float]
    result: QueryResult
    seconds: float

    @property
    def plateau_width(self) -> float:
        lo, hi = self.plateau
        return float(hi - lo) if np.isfinite(lo) else 0.0


def run_density(cfg: DensityExperiment = DensityExperiment()) -> DensityOutcome:
    t0 = time.perf_counter()
    spec = cfg.spec()
    ds = generate(spec)
    r = execute_query(ds.channels, EXCITATORY, threads=cfg.threads)
    sweep = density_sweep(r.synapse, SWEEP_THRESHOLDS)
    return DensityOutcome(len(ds.annotations), spec.volume_um3, sweep, density_plateau(sweep, *cfg.band),
                          r, time.perf_counter() - t0)


# -- throughput -------------------------------------------------------------

def throughput_channels(dims=(512, 512, 30), seed: int = 0) -> list[ChannelVolume]:
    """Two noise channels with sparse bright puncta; content barely matters
    for timing, so skip the generator's placement loop."""
    g = VoxelGeometry(100.0, 70.0)
    x, y, z = dims
    out = []
    for i, name in enumerate(("synapsin", "PSD-95")):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        data = rng.normal(100.0, 10.0, (z, y, x))
        idx = rng.integers(0, data.size, data.size // 2000)
        data.ravel()[idx] += 100.0
        np.maximum(data, 0.0, out=data)
        out.append(ChannelVolume(name, g, data))
    return out
