"""LATE_EARLY against LATE_ASYNC_PROP as more agents switch to the weaker detector.

    python scripts/heterogeneity_sweep.py [--config configs/heterogeneity.toml] [--out results/heterogeneity]
"""

import argparse
from pathlib import Path

from v2xcollab.config import heterogeneity_config, load
from v2xcollab.experiment import sweep_heterogeneity, write_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results/heterogeneity"))
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    cfg = load(args.config) if args.config else heterogeneity_config()
    table = write_sweep(sweep_heterogeneity(cfg, args.parallel), args.out, "heterogeneity_sweep", "mix")
    strategies = list(dict.fromkeys(r["strategy"] for r in table))
    print(f"{'mix':>4s}" + "".join(f"{s:>20s}" for s in strategies))
    for mix in sorted({r["mix"] for r in table}):
        cells = {r["strategy"]: r for r in table if r["mix"] == mix}
        print(f"{mix:4d}" + "".join(f"{cells[s]['map_mean']:13.2f} ± {cells[s]['map_sem']:4.2f}" for s in strategies))


if __name__ == "__main__":
    main()
