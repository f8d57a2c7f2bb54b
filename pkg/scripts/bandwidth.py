"""Bytes on the wire per strategy: detection messages against raw point clouds.

Encodes every message the ego would receive over one seed and reports the
mean per frame and the total over the first ten frames.

    python scripts/bandwidth.py [--seed 0] [--frames 10]
"""

import argparse

import numpy as np

from v2xcollab.collab import CollabConfig, Episode, run_strategy
from v2xcollab.config import default_scenario
from v2xcollab.experiment import frame_times
from v2xcollab.scene import generate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frames", type=int, default=10)
    args = ap.parse_args()
    world = generate_scenario(default_scenario(), args.seed)
    ep = Episode(world, CollabConfig(), args.seed)
    times = frame_times(ep)[: args.frames]
    print(f"{'strategy':16s}{'MB/frame':>12s}{'MB total':>12s}")
    for s in ("LATE_SYNC", "LATE_ASYNC", "LATE_ASYNC_PROP", "EARLY", "LATE_EARLY"):
        sizes = [run_strategy(s, world, t, episode=ep).bytes_exchanged for t in times]
        print(f"{s:16s}{np.mean(sizes) / 1e6:12.4f}{np.sum(sizes) / 1e6:12.4f}")


if __name__ == "__main__":
    main()
