"""Command-line front end.

Subcommands: ``detect``, ``eval``, ``sweep``, ``synth`` and ``synaptogram``.
Exit codes: 0 success, 2 usage or validation error, 3 runtime or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import BoundsError, Label, MarkerQuery, PunctaSize, QuerySpec, VoxelGeometry
from .evaluation import MatchParams, match_detections, operating_point, pr_curve, pr_curve_to_csv
from .postprocess import (
    DetectionParams,
    density,
    density_sweep,
    detections_to_csv,
    detections_to_json,
    extract_detections,
    sweep_to_csv,
)
from .query import QueryError, _resolve, execute_query, load_queries, save_queries
from .synaptogram import build_synaptogram, detection_mask, write_synaptogram
from .synthgen import Population, SynthSpec, SynthSpecError, generate
from .volume_io import (
    DatasetError,
    atomic_write_text,
    load_annotations,
    load_dataset,
    save_dataset,
    save_probability_volume,
)

log = logging.getLogger("synprob")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

#: Reference density bands (synapses per cubic micrometer) echoed into sweep CSVs.
REFERENCE_BANDS = {"Excitatory": (0.9, 0.15), "Inhibitory": (0.1, 0.05)}


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def parse_thresholds(text: str) -> list[float]:
    """``"0.1,0.2,0.5"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = (text or "").strip()
    if not text:
        raise UsageError("empty threshold grid")
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise UsageError("threshold step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + i * step, 10) for i in range(max(n, 0))]
        else:
            vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse threshold grid {text!r}") from None
    if not vals:
        raise UsageError("empty threshold grid")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise UsageError("thresholds must be strictly increasing")
    if vals[0] <= 0 or vals[-1] >= 1:
        raise UsageError("thresholds must lie strictly between 0 and 1")
    return vals


def _triple(text: str, kind=float) -> tuple:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise UsageError(f"expected three values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise UsageError(f"cannot parse {text!r}") from None


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def _write_metadata(out: Path, command: str, config: dict, started: float, outputs: list[str]) -> None:
    meta = {
        "tool": "synprob",
        "version": __version__,
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": sorted(outputs),
    }
    atomic_write_text(out / f"run_metadata_{command}.json", json.dumps(meta, indent=2))


def _load_inputs(args):
    """Load the dataset and queries and check every query resolves, before
    any heavy computation."""
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    if not Path(args.queries).is_file():
        raise UsageError(f"query file not found: {args.queries}")
    queries = load_queries(args.queries)
    dataset = load_dataset(args.manifest)
    for q in queries:
        _resolve(dataset.channels, q)
    return dataset, queries


def _det_params(args, threshold: Optional[float] = None) -> DetectionParams:
    try:
        return DetectionParams(args.threshold if threshold is None else threshold,
                               args.min_voxels, args.connectivity)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _query_dir(out: Path, q: QuerySpec) -> Path:
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in q.name)
    return out / safe


def _run_query(dataset, q, args):
    log.info("query %r: computing probability map", q.name)
    return execute_query(dataset.channels, q, threads=args.threads)


def _base_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}


# -- subcommands ------------------------------------------------------------

def cmd_detect(args) -> int:
    started = time.time()
    params = _det_params(args)
    dataset, queries = _load_inputs(args)
    if not queries:
        log.warning("query file lists no queries; nothing to do")
        return EXIT_OK
    out = Path(args.out)
    outputs = []
    for q in queries:
        result = _run_query(dataset, q, args)
        qdir = _query_dir(out, q)
        save_probability_volume(result.synapse, qdir / "synapse_probability.json")
        outputs += [str(qdir / "synapse_probability.json"), str(qdir / "synapse_probability.f32")]
        if args.export_stages:
            for name, stages in result.stages.items():
                for vol in stages:
                    p = qdir / "stages" / f"{name}_{vol.stage.value}.json"
                    save_probability_volume(vol, p)
                    outputs.append(str(p))
        dets = extract_detections(result.synapse, params)
        atomic_write_text(qdir / "detections.json", detections_to_json(dets))
        atomic_write_text(qdir / "detections.csv", detections_to_csv(dets))
        outputs += [str(qdir / "detections.json"), str(qdir / "detections.csv")]
        d = density(dets, dataset.volume_um3)
        print(f"{q.name}\tcount={len(dets)}\tdensity={d:.4f}/um3")
    _write_metadata(out, "detect", _base_config(args), started, outputs)
    return EXIT_OK


def _annotation_sets(args, dataset):
    sets = {}
    if args.annotations:
        for i, path in enumerate(args.annotations):
            name = Path(path).stem if len(args.annotations) > 1 else "annotations"
            if not Path(path).is_file():
                raise UsageError(f"annotation file not found: {path}")
            try:
                sets[name] = load_annotations(path, dataset.geometry, dataset.dims)
            except DatasetError as e:
                raise UsageError(f"{path}: {e}") from None
    elif dataset.annotations:
        sets["annotations"] = dataset.annotations
    if not sets:
        raise UsageError("no annotations: pass --annotations or reference them in the manifest")
    return sets


def cmd_eval(args) -> int:
    started = time.time()
    params = _det_params(args)
    thresholds = parse_thresholds(args.thresholds)
    dataset, queries = _load_inputs(args)
    ann_sets = _annotation_sets(args, dataset)
    match = MatchParams(args.max_distance, args.require_overlap)
    out = Path(args.out)
    outputs = []
    for q in queries:
        result = _run_query(dataset, q, args)
        qdir = _query_dir(out, q)
        dets = extract_detections(result.synapse, params)
        for set_name, anns in ann_sets.items():
            if q.label:
                anns = [a for a in anns if Label(a.label).value.lower() == q.label.lower()]
            report = match_detections(dets, anns, match)
            report.threshold = params.threshold
            curve = pr_curve(result.synapse, anns, thresholds, params, match)
            op = operating_point(curve)
            body = report.to_dict()
            body.update({
                "query": q.name,
                "annotation_set": set_name,
                "n_annotations": len(anns),
                "n_detections": len(dets),
                "pr_intersection": {"threshold": op.threshold, "precision": op.precision,
                                    "recall": op.recall},
            })
            stem = f"{set_name}_" if len(ann_sets) > 1 else ""
            atomic_write_text(qdir / f"{stem}evaluation.json", json.dumps(body, indent=2))
            atomic_write_text(qdir / f"{stem}pr_curve.csv", pr_curve_to_csv(curve))
            outputs += [str(qdir / f"{stem}evaluation.json"), str(qdir / f"{stem}pr_curve.csv")]
            print(f"{q.name}\t{set_name}\tprecision={report.precision:.3f}\trecall={report.recall:.3f}"
                  f"\tpr_intersection@{op.threshold:g}: P={op.precision:.3f} R={op.recall:.3f}")
    _write_metadata(out, "eval", _base_config(args), started, outputs)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    thresholds = parse_thresholds(args.thresholds)
    _det_params(args, thresholds[0])
    dataset, queries = _load_inputs(args)
    out = Path(args.out)
    outputs = []
    comments = []
    if args.bands:
        comments = [f"reference {k.lower()} density: {m} +/- {w} per um3" for k, (m, w) in REFERENCE_BANDS.items()]
    for q in queries:
        result = _run_query(dataset, q, args)
        sweep = density_sweep(result.synapse, thresholds, args.min_voxels, args.connectivity)
        path = _query_dir(out, q) / "density_sweep.csv"
        atomic_write_text(path, sweep_to_csv(sweep, comments))
        outputs.append(str(path))
        print(f"{q.name}\t" + " ".join(f"{pt.threshold:g}:{pt.density:.3f}" for pt in sweep))
    _write_metadata(out, "sweep", _base_config(args), started, outputs)
    return EXIT_OK


def cmd_synth(args) -> int:
    started = time.time()
    dims = _triple(args.dims, int)
    sigma = args.noise_sigma
    pops = [Population(args.n_excitatory, ("synapsin",), ("PSD-95",), args.snr * sigma,
                       cleft_offset_um=args.cleft_offset, z_span=args.z_span, label=Label.EXCITATORY)]
    if args.n_inhibitory:
        pops.append(Population(args.n_inhibitory, ("GAD",), ("gephyrin",), args.snr * sigma,
                               cleft_offset_um=args.cleft_offset, z_span=args.z_span,
                               label=Label.INHIBITORY))
    try:
        spec = SynthSpec(dims=dims, geometry=VoxelGeometry(args.pixel_nm, args.slice_nm),
                         background=(args.noise_mean, sigma), psf_sigma_xy_um=args.psf_xy,
                         psf_sigma_z_um=args.psf_z, populations=tuple(pops),
                         decoy_pre_per_um3=args.decoys, decoy_post_per_um3=args.decoys,
                         rng_seed=args.seed)
        ds = generate(spec)
    except (SynthSpecError, ValueError) as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    manifest = save_dataset(out / "dataset.json", ds.channels, ds.annotations, dtype=args.dtype,
                            extra={"synthetic": {"seed": args.seed, "snr": args.snr,
                                                 "populations": len(pops)}})
    size = PunctaSize(0.2, 0.21)
    queries = [QuerySpec("excitatory", (MarkerQuery("synapsin", size),), (MarkerQuery("PSD-95", size),),
                         "Excitatory")]
    if args.n_inhibitory:
        queries.append(QuerySpec("inhibitory", (MarkerQuery("GAD", size),), (MarkerQuery("gephyrin", size),),
                                 "Inhibitory"))
    save_queries(queries, out / "queries.json")
    print(f"wrote {manifest} ({len(ds.channels)} channels, {len(ds.annotations)} synapses, "
          f"{len(ds.decoys)} decoys)")
    _write_metadata(out, "synth", _base_config(args), started,
                    [str(manifest), str(out / "queries.json")])
    return EXIT_OK


def cmd_synaptogram(args) -> int:
    started = time.time()
    params = _det_params(args)
    dataset, queries = _load_inputs(args)
    by_name = {q.name: q for q in queries}
    if args.query is None:
        if len(queries) != 1:
            raise UsageError("several queries in file; pick one with --query")
        q = queries[0]
    elif args.query not in by_name:
        raise UsageError(f"unknown query {args.query!r}")
    else:
        q = by_name[args.query]
    if (args.detection_id is None) == (args.centroid is None):
        raise UsageError("give exactly one of --detection-id or --centroid")
    result = _run_query(dataset, q, args)
    dets = extract_detections(result.synapse, params)
    det = None
    if args.detection_id is not None:
        matches = [d for d in dets if d.id == args.detection_id]
        if not matches:
            raise UsageError(f"unknown detection id {args.detection_id} ({len(dets)} detections)")
        det = matches[0]
        centre = det.centroid
    else:
        centre = _triple(args.centroid, float)
    rows = [result.stages[name].foreground for name in q.channels]
    try:
        sg = build_synaptogram(rows, detection_mask(result.synapse.data.shape, det), centre,
                               dataset.geometry, args.half_window, args.slices)
    except BoundsError as e:
        raise UsageError(f"centroid out of bounds: {e}") from None
    out = Path(args.out)
    layout = write_synaptogram(sg, out)
    print(f"wrote {sg.grid_shape[0]}x{sg.grid_shape[1]} synaptogram to {out}")
    _write_metadata(out, "synaptogram", _base_config(args), started, [str(layout)])
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, detection=True):
    p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
    p.add_argument("--queries", required=True, help="query file (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    if detection:
        p.add_argument("--threshold", type=float, default=DetectionParams.threshold)
    p.add_argument("--min-voxels", type=int, default=DetectionParams.min_voxels)
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=DetectionParams.connectivity)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synprob", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"synprob {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="probability maps and detections for each query")
    _add_common(p)
    p.add_argument("--export-stages", action="store_true",
                   help="also write per-channel foreground / puncta maps")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="precision / recall against annotations")
    _add_common(p)
    p.add_argument("--annotations", action="append",
                   help="annotation file (JSON); repeat to score against several sets")
    p.add_argument("--thresholds", default="0.05:0.95:0.05", help="PR curve thresholds")
    p.add_argument("--max-distance", type=float, default=MatchParams.max_centroid_distance,
                   help="match radius in micrometers")
    p.add_argument("--require-overlap", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="detection density across thresholds")
    _add_common(p, detection=False)
    p.add_argument("--thresholds", default="0.05:0.95:0.05")
    p.add_argument("--bands", action="store_true", help="echo reference density bands into the CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted synapses")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="128x128x30", help="X x Y x Z voxels")
    p.add_argument("--pixel-nm", type=float, default=100.0)
    p.add_argument("--slice-nm", type=float, default=70.0)
    p.add_argument("--n-excitatory", type=int, default=50)
    p.add_argument("--n-inhibitory", type=int, default=0)
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--noise-mean", type=float, default=100.0)
    p.add_argument("--noise-sigma", type=float, default=10.0)
    p.add_argument("--psf-xy", type=float, default=SynthSpec.psf_sigma_xy_um, help="um")
    p.add_argument("--psf-z", type=float, default=SynthSpec.psf_sigma_z_um, help="um")
    p.add_argument("--z-span", type=int, default=Population.z_span, help="slices per punctum")
    p.add_argument("--cleft-offset", type=float, default=Population.cleft_offset_um, help="um")
    p.add_argument("--decoys", type=float, default=0.0, help="lone pre and post puncta per um3")
    p.add_argument("--dtype", choices=("u16", "f32"), default="f32")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synaptogram", help="panel grid around one detection")
    _add_common(p)
    p.add_argument("--query", help="query name (default: the only query)")
    p.add_argument("--detection-id", type=int)
    p.add_argument("--centroid", help="x,y,z in micrometers")
    p.add_argument("--half-window", type=float, default=0.5, help="um")
    p.add_argument("--slices", type=int, default=6)
    p.set_defaults(func=cmd_synaptogram)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, QueryError, DatasetError, SynthSpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MemoryError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
