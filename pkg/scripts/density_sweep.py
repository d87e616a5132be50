"""Density against threshold for a volume planted at a known density.

    python3 scripts/density_sweep.py --density 0.9 --seeds 0 1 --out results/density
"""

import argparse
from pathlib import Path

from synprob.experiments import DensityExperiment, run_density
from synprob.postprocess import sweep_to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--density", type=float, default=0.9, help="planted synapses per um^3")
    ap.add_argument("--tolerance", type=float, default=0.15)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/density"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    band = (args.density - args.tolerance, args.density + args.tolerance)
    for seed in args.seeds:
        d = run_density(DensityExperiment(args.density, band=band, seed=seed, threads=args.threads))
        note = [f"planted {d.planted} in {d.volume_um3:.1f} um^3", f"plateau {d.plateau} width {d.plateau_width:.2f}"]
        (args.out / f"density_sweep_seed{seed}.csv").write_text(sweep_to_csv(d.sweep, note))
        print(f"seed {seed}: plateau {d.plateau} width {d.plateau_width:.2f} ({d.seconds:.1f}s)")


if __name__ == "__main__":
    main()
