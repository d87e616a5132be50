import csv
import json

import numpy as np
import pytest

from synprob.cli import main, parse_thresholds, UsageError
from synprob.core import MarkerQuery, PunctaSize, QuerySpec
from synprob.query import save_queries
from synprob.synthgen import Population, SynthSpec, generate
from synprob.volume_io import save_dataset

S = PunctaSize(0.2, 0.21)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["synth", "--out", str(out), "--n-excitatory", "40", "--n-inhibitory", "4",
               "--dims", "96x96x24", "--seed", "3"])
    assert rc == 0
    return out


def _args(d, *extra):
    return ["--manifest", str(d / "dataset.json"), "--queries", str(d / "queries.json"), *extra]


class TestDetect:
    def test_count_near_planted(self, synth_dir, tmp_path, capsys):
        assert main(["detect", *_args(synth_dir), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "excitatory\tcount=" in out and "density=" in out
        dets = json.loads((tmp_path / "excitatory" / "detections.json").read_text())
        assert abs(len(dets) - 40) <= 4
        assert (tmp_path / "excitatory" / "synapse_probability.f32").stat().st_size == 96 * 96 * 24 * 4
        meta = json.loads((tmp_path / "run_metadata_detect.json").read_text())
        assert meta["version"] and len(meta["config_hash"]) == 64 and meta["started"]

    def test_export_stages(self, synth_dir, tmp_path):
        assert main(["detect", *_args(synth_dir), "--out", str(tmp_path), "--export-stages"]) == 0
        names = sorted(p.name for p in (tmp_path / "excitatory" / "stages").glob("*.json"))
        assert "PSD-95_Foreground.json" in names and "synapsin_Puncta3D.json" in names

    def test_thread_count_does_not_change_outputs(self, synth_dir, tmp_path):
        for t in ("1", "3"):
            assert main(["detect", *_args(synth_dir), "--out", str(tmp_path / t), "--threads", t]) == 0
        for f in ("synapse_probability.f32", "detections.json", "detections.csv"):
            assert (tmp_path / "1" / "excitatory" / f).read_bytes() == \
                   (tmp_path / "3" / "excitatory" / f).read_bytes()

    def test_missing_channel(self, synth_dir, tmp_path, capsys):
        q = QuerySpec("bad", (MarkerQuery("VGluT1", S),), (MarkerQuery("PSD-95", S),))
        save_queries([q], tmp_path / "q.json")
        rc = main(["detect", "--manifest", str(synth_dir / "dataset.json"), "--queries",
                   str(tmp_path / "q.json"), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "VGluT1" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_empty_query_list(self, synth_dir, tmp_path, caplog):
        (tmp_path / "q.json").write_text('{"queries": []}')
        rc = main(["detect", "--manifest", str(synth_dir / "dataset.json"), "--queries",
                   str(tmp_path / "q.json"), "--out", str(tmp_path / "o")])
        assert rc == 0
        assert "no queries" in caplog.text
        assert not (tmp_path / "o").exists()

    def test_bad_threshold_is_usage_error(self, synth_dir, tmp_path):
        assert main(["detect", *_args(synth_dir), "--out", str(tmp_path), "--threshold", "1.5"]) == 2

    def test_output_path_is_a_file(self, synth_dir, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["detect", *_args(synth_dir), "--out", str(blocker)]) == 3


class TestEval:
    def test_reports(self, synth_dir, tmp_path, capsys):
        assert main(["eval", *_args(synth_dir), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "excitatory" / "evaluation.json").read_text())
        assert rep["n_annotations"] == 40  # filtered to the query's label
        assert rep["true_positives"] + rep["false_negatives"] == 40
        assert rep["pr_intersection"]["precision"] >= 0.9
        rows = list(csv.reader((tmp_path / "excitatory" / "pr_curve.csv").open()))
        assert rows[0][0] == "threshold" and len(rows) == 20

    def test_noise_free_run_is_perfect(self, tmp_path):
        # well separated, so no two synapses merge into one detection
        spec = SynthSpec(dims=(64, 64, 20), background=(100.0, 1e-6), populations=(Population(8),),
                         rng_seed=1, min_separation_um=1.0)
        ds = generate(spec)
        save_dataset(tmp_path / "d" / "dataset.json", ds.channels, ds.annotations)
        save_queries([QuerySpec("excitatory", (MarkerQuery("synapsin", S),), (MarkerQuery("PSD-95", S),))],
                     tmp_path / "d" / "queries.json")
        assert main(["eval", *_args(tmp_path / "d"), "--out", str(tmp_path / "o"),
                     "--thresholds", "0.3,0.4,0.5,0.6,0.7"]) == 0
        rows = list(csv.DictReader((tmp_path / "o" / "excitatory" / "pr_curve.csv").open()))
        for r in rows:
            assert float(r["precision"]) == 1.0 and float(r["recall"]) == 1.0

    def test_two_annotation_sets(self, synth_dir, tmp_path):
        full = json.loads((synth_dir / "annotations.json").read_text())
        (tmp_path / "em.json").write_text(json.dumps(full))
        (tmp_path / "if.json").write_text(json.dumps(full[::2]))
        assert main(["eval", *_args(synth_dir), "--out", str(tmp_path / "o"),
                     "--annotations", str(tmp_path / "em.json"),
                     "--annotations", str(tmp_path / "if.json")]) == 0
        em = json.loads((tmp_path / "o" / "excitatory" / "em_evaluation.json").read_text())
        if_ = json.loads((tmp_path / "o" / "excitatory" / "if_evaluation.json").read_text())
        assert if_["n_annotations"] < em["n_annotations"]

    def test_missing_annotation_file(self, synth_dir, tmp_path):
        assert main(["eval", *_args(synth_dir), "--out", str(tmp_path),
                     "--annotations", str(tmp_path / "none.json")]) == 2

    def test_out_of_bounds_annotations(self, synth_dir, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps(
            [{"id": 9, "label": "Excitatory", "centroid_um": [500.0, 1.0, 1.0]}]))
        assert main(["eval", *_args(synth_dir), "--out", str(tmp_path / "o"),
                     "--annotations", str(tmp_path / "a.json")]) == 2


class TestSweep:
    def test_csv(self, synth_dir, tmp_path):
        assert main(["sweep", *_args(synth_dir), "--out", str(tmp_path), "--bands",
                     "--thresholds", "0.1:0.9:0.2"]) == 0
        lines = (tmp_path / "excitatory" / "density_sweep.csv").read_text().splitlines()
        body = [l for l in lines if not l.startswith("#")]
        assert any("0.9 +/- 0.15" in l for l in lines) and any("0.1 +/- 0.05" in l for l in lines)
        assert body[0] == "threshold,count,density_per_um3" and len(body) == 6

    def test_population_ratio(self, synth_dir, tmp_path):
        main(["sweep", *_args(synth_dir), "--out", str(tmp_path), "--thresholds", "0.2,0.3,0.4"])
        exc = list(csv.DictReader((tmp_path / "excitatory" / "density_sweep.csv").open()))
        inh = list(csv.DictReader((tmp_path / "inhibitory" / "density_sweep.csv").open()))
        ratios = [int(a["count"]) / int(b["count"]) for a, b in zip(exc, inh)]
        assert all(8 <= r <= 12 for r in ratios)

    def test_empty_grid(self, synth_dir, tmp_path):
        assert main(["sweep", *_args(synth_dir), "--out", str(tmp_path), "--thresholds", ""]) == 2


def test_parse_thresholds():
    assert parse_thresholds("0.1:0.5:0.2") == [0.1, 0.3, 0.5]
    assert parse_thresholds("0.2, 0.4") == [0.2, 0.4]
    for bad in ("", "0.5,0.4", "0:0.5:0.1", "a,b", "0.1:0.5:0"):
        with pytest.raises(UsageError):
            parse_thresholds(bad)


@pytest.fixture(scope="module")
def four_channel(tmp_path_factory):
    d = tmp_path_factory.mktemp("four")
    pop = Population(5, pre_markers=("synapsin", "VGluT1"), post_markers=("PSD-95", "NR1"))
    ds = generate(SynthSpec(dims=(64, 64, 20), populations=(pop,), rng_seed=2))
    save_dataset(d / "dataset.json", ds.channels, ds.annotations)
    q = QuerySpec("four", (MarkerQuery("synapsin", S), MarkerQuery("VGluT1", S)),
                  (MarkerQuery("PSD-95", S), MarkerQuery("NR1", S)))
    save_queries([q], d / "queries.json")
    return d


class TestSynaptogram:
    def test_grid_layout(self, four_channel, tmp_path):
        assert main(["synaptogram", *_args(four_channel), "--out", str(tmp_path),
                     "--detection-id", "0", "--slices", "6"]) == 0
        layout = json.loads((tmp_path / "layout.json").read_text())
        assert layout["grid"] == [5, 6]
        assert layout["rows"] == ["synapsin", "VGluT1", "PSD-95", "NR1", "Result"]
        pgm = sorted(p.name for p in tmp_path.glob("*.pgm"))
        assert len(pgm) == 30
        from PIL import Image
        result_row = [np.asarray(Image.open(tmp_path / f"r04_c{j:02d}.pgm")) for j in range(6)]
        assert any(r.max() == 255 for r in result_row)
        assert set(np.unique(np.concatenate([r.ravel() for r in result_row]))) <= {0, 255}

    def test_clamped_window_warns(self, four_channel, tmp_path, caplog):
        assert main(["synaptogram", *_args(four_channel), "--out", str(tmp_path),
                     "--centroid", "0.05,0.05,0.03"]) == 0
        assert "padding" in caplog.text
        assert json.loads((tmp_path / "layout.json").read_text())["clamped"] is True

    def test_unknown_detection(self, four_channel, tmp_path, capsys):
        assert main(["synaptogram", *_args(four_channel), "--out", str(tmp_path),
                     "--detection-id", "999"]) == 2
        assert "999" in capsys.readouterr().err

    def test_needs_exactly_one_target(self, four_channel, tmp_path):
        assert main(["synaptogram", *_args(four_channel), "--out", str(tmp_path)]) == 2


def test_synth_writes_loadable_dataset(synth_dir):
    from synprob.volume_io import load_dataset
    from synprob.query import load_queries

    ds = load_dataset(synth_dir / "dataset.json")
    assert {c.name for c in ds.channels} == {"synapsin", "PSD-95", "GAD", "gephyrin"}
    assert len(ds.annotations) == 44
    assert [q.name for q in load_queries(synth_dir / "queries.json")] == ["excitatory", "inhibitory"]
    assert (synth_dir / "run_metadata_synth.json").is_file()
