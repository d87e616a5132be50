"""Wall time and peak memory of a two-channel query at several volume sizes.

    python3 scripts/throughput.py --threads 1 4 --sizes 256 512
"""

import argparse
import json
import subprocess
import sys

_CHILD = """
import json, resource, sys, time
from synprob.experiments import EXCITATORY, throughput_channels
from synprob.query import execute_query
n, threads = int(sys.argv[1]), int(sys.argv[2])
chans = throughput_channels((n, n, 30))
t0 = time.perf_counter()
execute_query(chans, EXCITATORY, threads=threads)
print(json.dumps({"seconds": time.perf_counter() - t0,
                  "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024}))
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 512])
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    args = ap.parse_args()
    for n in args.sizes:
        for t in args.threads:
            # a fresh process per run so peak RSS is not inherited from earlier runs
            out = subprocess.run([sys.executable, "-c", _CHILD, str(n), str(t)],
                                 check=True, capture_output=True, text=True)
            m = json.loads(out.stdout)
            print(f"{n}x{n}x30 threads={t}: {m['seconds']:.2f}s peak RSS {m['peak_rss_mb']:.0f} MB")


if __name__ == "__main__":
    main()
