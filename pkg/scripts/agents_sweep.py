"""mAP as agents join the network in roster order (ego, roadside unit, vehicles).

    python scripts/agents_sweep.py [--config configs/agents_sweep.toml] [--out results/agents_sweep]
"""

import argparse
from pathlib import Path

from v2xcollab.config import agents_sweep_config, load
from v2xcollab.experiment import sweep_agents, write_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results/agents_sweep"))
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    cfg = load(args.config) if args.config else agents_sweep_config()
    table = write_sweep(sweep_agents(cfg, args.parallel), args.out, "agents_sweep", "agents")
    prev = None
    for row in table:
        step = "" if prev is None else f"  (+{row['map_mean'] - prev:.2f})"
        print(f"{row['agents']} agents: {row['map_mean']:6.2f} ± {row['map_sem']:.2f}{step}")
        prev = row["map_mean"]


if __name__ == "__main__":
    main()
