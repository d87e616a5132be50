import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import excitatory_query
from synprob.core import Label, VoxelGeometry, physical_to_voxel
from synprob.pipeline import fit_background, foreground_probability
from synprob.postprocess import DetectionParams, extract_detections
from synprob.query import execute_query
from synprob.synthgen import (
    Population,
    SynthSpec,
    SynthSpecError,
    excitatory_inhibitory_spec,
    generate,
    render_blob,
    shift_channel,
    with_snr,
)
from synprob.volume_io import load_dataset, save_dataset


def small(**kw):
    base = dict(dims=(48, 48, 16), populations=(Population(6),), rng_seed=5)
    base.update(kw)
    return SynthSpec(**base)


class TestGenerate:
    def test_deterministic(self):
        a, b = generate(small()), generate(small())
        for x, y in zip(a.channels, b.channels):
            assert x.data.tobytes() == y.data.tobytes()
        assert [t.centroid for t in a.annotations] == [t.centroid for t in b.annotations]

    def test_seed_changes_output(self):
        a, b = generate(small()), generate(small(rng_seed=6))
        assert a.channels[0].data.tobytes() != b.channels[0].data.tobytes()

    @given(st.integers(0, 12), st.integers(0, 4), st.integers(0, 10_000))
    @settings(max_examples=15)
    def test_annotation_count_exact(self, n_exc, n_inh, seed):
        ds = generate(excitatory_inhibitory_spec(n_exc, n_inh, dims=(64, 64, 16), rng_seed=seed))
        labels = [a.label for a in ds.annotations]
        assert labels.count(Label.EXCITATORY) == n_exc
        assert labels.count(Label.INHIBITORY) == n_inh
        assert len({a.id for a in ds.annotations}) == len(ds.annotations)

    def test_placement_constraints(self):
        spec = small(populations=(Population(20),), decoy_pre_per_um3=0.05, decoy_post_per_um3=0.05)
        ds = generate(spec)
        c = np.array([a.centroid for a in ds.annotations])
        d = np.linalg.norm(c[:, None] - c[None], axis=2) + np.eye(len(c)) * 99
        assert d.min() >= spec.min_separation_um
        size = np.array(spec.dims) * np.array(spec.geometry.voxel_size_um)
        # one 3-subregion grid reach (0.3 um in x/y, 3 slices in z) from every border
        reach = np.array([0.3, 0.3, 0.21])
        assert np.all(c >= reach) and np.all(c <= size - reach)
        assert len(ds.decoys) > 0
        assert all(p.synapse_id is None for p in ds.decoys)

    def test_pre_offset_from_post(self):
        ds = generate(small())
        vox = np.array(ds.spec.geometry.voxel_size_um)
        by_sid = {}
        for p in ds.puncta:
            by_sid.setdefault(p.synapse_id, {})[p.kind] = np.array(p.index)
        for sid, pair in by_sid.items():
            if sid is None or "pre" not in pair:
                continue
            step = np.abs(pair["pre"] - pair["post"]) * vox
            assert np.count_nonzero(step) == 1
            assert step.max() == pytest.approx(0.2, abs=0.5 * vox.max())

    def test_snr(self):
        spec = small()
        pop = with_snr(spec.populations[0], 7.5, spec.background[1])
        assert spec.snr(pop) == pytest.approx(7.5, rel=0.01)
        # the rendered peak (before noise) equals the nominal amplitude
        vol = np.zeros((9, 9, 9))
        render_blob(vol, (4, 4, 4), pop.amplitude, (1.5, 1.5, 2.0), 5)
        assert vol.max() == pytest.approx(pop.amplitude, rel=0.01)

    def test_blob_spans_z_slices(self):
        vol = np.zeros((11, 9, 9))
        render_blob(vol, (4, 4, 5), 10.0, (1.0, 1.0, 1.0), 3)
        assert np.flatnonzero(vol.sum(axis=(1, 2))).tolist() == [4, 5, 6]

    def test_invalid_specs(self):
        with pytest.raises(SynthSpecError):
            generate(small(populations=(Population(-1),)))
        with pytest.raises(SynthSpecError):
            generate(small(populations=(Population(1, amplitude=0.0),)))
        with pytest.raises(SynthSpecError):
            generate(small(background=(100.0, 0.0)))
        with pytest.raises(SynthSpecError, match="separation"):
            generate(small(dims=(16, 16, 12), populations=(Population(200),)))

    def test_pure_noise_tail(self):
        ds = generate(SynthSpec(dims=(256, 256, 16), populations=(Population(0),), rng_seed=2))
        c = ds.channels[0]
        assert c.data.size >= 10**6
        p = foreground_probability(c, fit_background(c)).data
        for q in (0.95, 0.98):
            assert abs(np.mean(p > q) - (1 - q)) <= 0.005

    def test_noiseless_single_synapse_is_found(self):
        spec = SynthSpec(dims=(40, 40, 16), background=(100.0, 1e-9), populations=(Population(1),),
                         rng_seed=11)
        ds = generate(spec)
        p = execute_query(ds.channels, excitatory_query()).synapse
        peak = np.unravel_index(np.argmax(p.data), p.data.shape)
        planted = physical_to_voxel(ds.annotations[0].centroid, spec.geometry)
        assert max(abs(a - b) for a, b in zip(peak[::-1], planted)) <= 1

    def test_decoys_score_below_planted_median(self):
        spec = SynthSpec(dims=(96, 96, 24), populations=(Population(15, amplitude=50.0),),
                         decoy_pre_per_um3=0.1, decoy_post_per_um3=0.1, rng_seed=4)
        ds = generate(spec)
        p = execute_query(ds.channels, excitatory_query()).synapse.data

        def local_max(idx):
            x, y, z = idx
            return p[max(z - 2, 0):z + 3, max(y - 2, 0):y + 3, max(x - 2, 0):x + 3].max()

        planted = [local_max(physical_to_voxel(a.centroid, spec.geometry)) for a in ds.annotations]
        decoys = [local_max(d.index) for d in ds.decoys]
        assert len(decoys) >= 10
        assert max(decoys) < np.median(planted)

    def test_round_trips_through_dataset_files(self, tmp_path):
        ds = generate(small())
        back = load_dataset(save_dataset(tmp_path / "d.json", ds.channels, ds.annotations))
        assert [c.name for c in back.channels] == ds.spec.channel_names
        assert len(back.annotations) == len(ds.annotations)


def test_shift_channel():
    ds = generate(small())
    c = ds.channels[0]
    s = shift_channel(c, (3, 0, 0))
    np.testing.assert_array_equal(s.data[:, :, 3:], c.data[:, :, :-3])
    assert np.all(s.data[:, :, :3] == pytest.approx(c.data.mean()))
    back = shift_channel(s, (-3, 0, 0), fill=0.0)
    np.testing.assert_array_equal(back.data[:, :, :-3], c.data[:, :, :-3])


def test_detection_count_at_default_threshold():
    spec = SynthSpec(dims=(128, 128, 30), populations=(Population(60),), rng_seed=8)
    ds = generate(spec)
    dets = extract_detections(execute_query(ds.channels, excitatory_query()).synapse, DetectionParams())
    assert abs(len(dets) - 60) <= 6
