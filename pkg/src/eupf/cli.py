"""Command line entry point: ``eupf run`` and ``eupf compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from eupf import harness


def _run(args) -> int:
    overrides = dict(
        policy=args.policy,
        seed=args.seed,
        episodes=args.episodes,
        output_dir=args.out,
        trigger_mode=args.trigger_mode,
        trace=True if args.trace else None,
    )
    if args.config:
        cfg = harness.load_config(args.config, **overrides)
    else:
        cfg = harness.default_config(**overrides)
    result = harness.run_experiment(cfg)
    last = result.summary["last"]
    print(
        f"{cfg.policy.value} seed={cfg.seed} episodes={len(result.records)} "
        f"mean_rtt={result.summary['all_episodes']['mean_rtt_ms']:.2f}ms "
        f"last{last['n']}_reward={last['reward']['mean']:.2f} "
        f"last{last['n']}_n6a_share={last['share_n6a']:.3f} -> {cfg.output_dir}"
    )
    return 0


def _compare(args) -> int:
    a = harness.load_episodes(args.run_a)
    b = harness.load_episodes(args.run_b)
    report = harness.compare_runs(a, b, window=args.window)
    report["run_a"] = str(args.run_a)
    report["run_b"] = str(args.run_b)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    for key in ("mean_rtt_ms", "last_mean_rtt_ms", "last_rtt_range_ms", "last_mean_reward"):
        print(f"{key:20s} a={report['a'][key]:10.3f} b={report['b'][key]:10.3f} delta={report['delta'][key]:+10.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eupf", description="DQN vs random N6 path selection experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment and write episodes.csv / summary.json")
    r.add_argument("--config", type=Path, help="INI config file (defaults used for anything missing)")
    r.add_argument("--policy", choices=["dqn", "random"])
    r.add_argument("--seed", type=int)
    r.add_argument("--episodes", type=int)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--trigger-mode", choices=["traversal", "per-step"])
    r.add_argument("--trace", action="store_true", help="also write per-step steps.csv")
    r.set_defaults(func=_run)

    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("run_a", type=Path)
    c.add_argument("run_b", type=Path)
    c.add_argument("--window", type=int, default=50)
    c.add_argument("--out", type=Path, help="write the full JSON report here")
    c.set_defaults(func=_compare)

    d = sub.add_parser("default-config", help="write an INI file holding every default")
    d.add_argument("path", type=Path)
    d.set_defaults(func=lambda a: harness.write_default_config(a.path) or 0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError, OSError) as e:
        print(f"eupf: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
