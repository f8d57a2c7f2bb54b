"""All six strategies over the default 30-seed ensemble, under both ground-truth filters.

    python scripts/main_comparison.py [--config configs/default_config.toml] [--out results/main] [--parallel 4]
"""

import argparse
from pathlib import Path

from v2xcollab.config import ExperimentConfig, load
from v2xcollab.experiment import recovery_ratio, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results/main"))
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    cfg = load(args.config) if args.config else ExperimentConfig().validate()
    summary = run_experiment(cfg, args.out, args.parallel)

    modes = list(cfg.gt_modes)
    table = {}
    for row in summary["rows"]:
        table.setdefault(row["strategy"], {})[row["gt_mode"]] = row
    print(f"{'strategy':16s}" + "".join(f"{m:>20s}" for m in modes) + f"{'bytes/frame':>14s}")
    for s, by_mode in table.items():
        cells = "".join(f"{by_mode[m]['map_mean']:13.2f} ± {by_mode[m]['map_sem']:4.2f}" for m in modes)
        print(f"{s:16s}{cells}{by_mode[modes[0]]['bytes_mean']:14.0f}")
    for m in modes:
        means = {s: by_mode[m]["map_mean"] for s, by_mode in table.items() if m in by_mode}
        if {"LATE_SYNC", "LATE_ASYNC", "LATE_ASYNC_PROP"} <= set(means):
            print(f"recovery ratio ({m}): {recovery_ratio(means):.3f}")


if __name__ == "__main__":
    main()
