"""Command line entry point.

Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .collab import Episode, StrategyId
from .config import ExperimentConfig, load
from .errors import ConfigError, ContractViolation
from .scene import AGENT_ORDER, generate_scenario
from .v2x import BASE_HEADER_BYTES, DET_HEADER_BYTES, EARLY_HEADER_BYTES, encode_detection, encode_early

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML experiment config (defaults built in)")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--strategy", help="run this single strategy")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--estimator", choices=("eq5", "lag_weighted"))
    p.add_argument("--lag", type=float, help="async lag in seconds")
    p.add_argument("--agents", type=int, help="number of participating agents, in roster order")
    p.add_argument("--parallel", type=int, default=1, help="worker processes over seeds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="v2xcollab", description="Multi-agent collaborative perception simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment and write results.csv and summary.json")
    _add_common(p)

    p = sub.add_parser("sweep", help="run the agent-count or detector-mix sweep")
    p.add_argument("kind", choices=("agents", "heterogeneity"))
    _add_common(p)

    p = sub.add_parser("protocol-dump", help="hex-dump one encoded message")
    _add_common(p)
    p.add_argument("--kind", choices=("detection", "early"), default="detection")
    p.add_argument("--agent", type=int, default=0, help="sending agent id")
    p.add_argument("--time", type=float, default=1.0, help="production time in seconds")
    p.add_argument("--max-bytes", type=int, default=512, help="truncate the dump after this many bytes")

    p = sub.add_parser("verify", help="run acceptance criteria, or spot-check a results directory")
    p.add_argument("--out", type=Path, help="results directory to spot-check instead")
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--only", help="comma-separated criterion numbers, e.g. 1,2,7")
    p.add_argument("--workdir", type=Path, help="where acceptance runs write their outputs")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    if args.strategy:
        try:
            cfg.strategies = (StrategyId.parse(args.strategy).value,)
        except ContractViolation:
            raise ConfigError(f"--strategy: unknown strategy {args.strategy!r}") from None
    if args.estimator:
        cfg.estimator = args.estimator
    if args.lag is not None:
        cfg.lag = args.lag
    if args.agents is not None:
        cfg.agents = args.agents
    if args.out:
        cfg.out_dir = str(args.out)
    if args.parallel < 1:
        raise ConfigError("--parallel must be >= 1")
    return cfg.validate()


def hexdump(data: bytes, limit: int) -> str:
    lines = []
    for off in range(0, min(len(data), limit), 16):
        chunk = data[off : off + 16]
        hx = " ".join(f"{b:02x}" for b in chunk)
        txt = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"{off:08x}  {hx:<47}  {txt}")
    if len(data) > limit:
        lines.append(f"... {len(data) - limit} more bytes")
    return "\n".join(lines)


def _simulate(args) -> int:
    from .experiment import run_experiment

    cfg = resolve_config(args)
    summary = run_experiment(cfg, cfg.out_dir, args.parallel)
    for row in summary["rows"]:
        print(f"{row['strategy']:16s} {row['gt_mode']:10s} mAP {row['map_mean']:7.2f} +- {row['map_std']:5.2f}  bytes/frame {row['bytes_mean']:.0f}")
    print(f"wrote {Path(cfg.out_dir) / 'results.csv'}")
    return EXIT_OK


def _sweep(args) -> int:
    from .experiment import sweep_agents, sweep_heterogeneity, write_sweep

    cfg = resolve_config(args)
    if args.kind == "agents":
        table = write_sweep(sweep_agents(cfg, args.parallel), cfg.out_dir, "agents_sweep", "agents")
        for row in table:
            print(f"agents {row['agents']}  mAP {row['map_mean']:7.2f} +- {row['map_sem']:.2f}")
    else:
        table = write_sweep(sweep_heterogeneity(cfg, args.parallel), cfg.out_dir, "heterogeneity_sweep", "mix")
        for row in table:
            print(f"mix {row['mix']}  {row['strategy']:16s} mAP {row['map_mean']:7.2f} +- {row['map_sem']:.2f}")
    return EXIT_OK


def _protocol_dump(args) -> int:
    cfg = resolve_config(args)
    ids = AGENT_ORDER[: cfg.scenario.agent_count]
    if args.agent not in ids:
        raise ConfigError(f"--agent: no agent {args.agent} in this scenario")
    seed = cfg.seeds[0]
    world = generate_scenario(cfg.scenario, seed)
    ep = Episode(world, cfg.collab(), seed)
    first = (cfg.sequence_length - 1) / world.frame_rate
    if not first - 1e-9 <= args.time <= world.duration:
        raise ConfigError(f"--time: must lie in [{first}, {world.duration}]")
    if args.kind == "detection":
        msg = ep.detection_message(args.agent, args.time)
        data = encode_detection(msg)
        print(f"detection message: agent {msg.agent_id}, t_i {msg.t_i}, {len(msg.entries)} entries, {len(data)} bytes")
        print(f"header {DET_HEADER_BYTES} B (base {BASE_HEADER_BYTES} B + span + count), 45 B per entry")
    else:
        msg = ep.early_message(args.agent, args.time)
        data = encode_early(msg)
        print(f"early message: agent {msg.agent_id}, t_i {msg.t_i}, {len(msg.points)} points, {len(data)} bytes")
        print(f"header {EARLY_HEADER_BYTES} B, 20 B per point")
    print(hexdump(data, args.max_bytes))
    return EXIT_OK


def _verify(args) -> int:
    if args.out:
        from .experiment import verify_results

        checks = verify_results(args.out, args.rows)
        for row, got, ok in checks:
            status = "PASS" if ok else "FAIL"
            print(f"{status} {row['strategy']} seed {row['seed']} {row['gt_mode']}: csv {row['map_score']} recomputed {got}")
        return EXIT_OK if all(ok for _, _, ok in checks) else EXIT_RUNTIME

    from .acceptance import CRITERIA, run_criteria

    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise ConfigError(f"--only: expected comma-separated integers, got {args.only!r}") from None
        unknown = sorted(set(only) - set(CRITERIA))
        if unknown:
            raise ConfigError(f"--only: no criterion {unknown[0]}")
    results = run_criteria(only, workdir=args.workdir)
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


COMMANDS = {"simulate": _simulate, "sweep": _sweep, "protocol-dump": _protocol_dump, "verify": _verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure past config parsing is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
