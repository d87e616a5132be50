"""Recovered excitatory : inhibitory count ratio across thresholds and seeds.

    python3 scripts/population_ratio.py --seeds 0 1 2 3 --snr 10
"""

import argparse
import csv
import sys

from synprob.experiments import RatioExperiment, run_ratio
from synprob.postprocess import DetectionParams, extract_detections

THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--snr", type=float, default=10.0)
    ap.add_argument("--n-excitatory", type=int, default=200)
    ap.add_argument("--n-inhibitory", type=int, default=20)
    args = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["seed", "threshold", "excitatory", "inhibitory", "ratio"])
    for seed in args.seeds:
        r = run_ratio(RatioExperiment(args.n_excitatory, args.n_inhibitory, args.snr, seed=seed))
        for t in THRESHOLDS:
            n = {k: len(extract_detections(v.synapse, DetectionParams(t))) for k, v in r.results.items()}
            ratio = n["excitatory"] / n["inhibitory"] if n["inhibitory"] else float("inf")
            w.writerow([seed, t, n["excitatory"], n["inhibitory"], f"{ratio:.3f}"])


if __name__ == "__main__":
    main()
