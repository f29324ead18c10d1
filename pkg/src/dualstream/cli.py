"""Command-line entry point.

Subcommands: run, train, compare, fit-tail, gen-content, gen-trace.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .analytics import default_x_high, fit_power_tail
from .config import (ENCODE_MODES, PROFILE_NAMES, RATE_POLICIES,
                     ExperimentConfig, default_config_text, load_config)
from .errors import ConfigError, InsufficientDataError, ParseError, SchemaError
from .media import gen_synthetic_content, save_trace_csv
from .netsim import SYNTH_ENVELOPES, fixed_trace, save_trace, synth_trace


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "policy", None):
        cfg.rate.policy = args.policy
    if getattr(args, "profile", None):
        cfg.content.profile = args.profile
    if getattr(args, "duration", None):
        cfg.content.duration_s = args.duration
    if getattr(args, "bitrate_mbps", None):
        cfg.rate.fixed_bps = args.bitrate_mbps * 1e6
    if getattr(args, "net_trace", None):
        cfg.link.trace_path = args.net_trace
    if getattr(args, "content_trace", None):
        cfg.content.trace_path = args.content_trace
    if getattr(args, "checkpoint", None):
        cfg.rate.checkpoint = args.checkpoint
    return cfg.validate()


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (defaults otherwise)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=ENCODE_MODES)
    p.add_argument("--policy", choices=RATE_POLICIES)
    p.add_argument("--profile", choices=PROFILE_NAMES)
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--bitrate-mbps", type=float, dest="bitrate_mbps")
    p.add_argument("--net-trace", dest="net_trace", help="bandwidth trace CSV")
    p.add_argument("--content-trace", dest="content_trace", help="content trace CSV")
    p.add_argument("--checkpoint", help="RL policy checkpoint")


def cmd_run(args) -> int:
    cfg = _base_config(args)
    out = harness.run_experiment(cfg, args.out)
    summary = json.loads((out / "summary.json").read_text())
    print(f"run complete: {out}")
    print(f"  fps={summary['fps']:.2f} stall={summary['stall_rate_pct']:.2f}% "
          f"d_e2e_mean={summary['d_e2e_mean_ms']:.1f} ms")
    return 0


def cmd_train(args) -> int:
    cfg = _base_config(args)
    cfg.rate.policy = "RL"
    if args.episodes:
        cfg.rl.episodes = args.episodes
    outcome = harness.train(cfg, args.out)
    print(f"trained {outcome.episodes} episodes; checkpoint: {outcome.checkpoint}")
    if outcome.curve:
        first, last = outcome.curve[0][1], outcome.curve[-1][1]
        print(f"  mean reward: first={first:.2f} last={last:.2f}")
    return 0


def cmd_compare(args) -> int:
    result = harness.compare(args.runs, slash_at=tuple(args.at), x_high=args.x_high)
    print(harness.format_comparison(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1, sort_keys=True))
    return 0


def cmd_fit_tail(args) -> int:
    samples = harness.read_frame_column(args.run, column=args.column)
    x_high = args.x_high if args.x_high is not None else default_x_high(samples)
    fit = fit_power_tail(samples, x_high)
    payload = fit.as_dict()
    print(json.dumps(payload, indent=1, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True))
    return 0


def cmd_gen_content(args) -> int:
    trace = gen_synthetic_content(args.seed, args.duration, args.fps, args.profile)
    save_trace_csv(trace, args.out)
    print(f"wrote {len(trace)} frames to {args.out}")
    return 0


def cmd_gen_trace(args) -> int:
    if args.kind == "fixed":
        if not args.bitrate_mbps:
            raise ConfigError("--bitrate-mbps required for fixed traces")
        trace = fixed_trace(args.bitrate_mbps * 1e6, factor=args.factor,
                            duration_s=args.duration)
    else:
        trace = synth_trace(args.kind, duration_s=args.duration, seed=args.seed)
    save_trace(trace, args.out)
    print(f"wrote trace {trace.name} ({len(trace.samples)} samples) to {args.out}")
    return 0


def cmd_print_config(args) -> int:
    print(default_config_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualstream",
                                     description="dual-stream video delivery simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one session")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train the bitrate policy")
    _add_run_options(p)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="side-by-side report for run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--x-high", type=float, dest="x_high")
    p.add_argument("--at", type=float, nargs="+", default=[200.0, 250.0])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fit-tail", help="power-law fit of a run's delay tail")
    p.add_argument("run")
    p.add_argument("--column", default="d_e2e")
    p.add_argument("--x-high", type=float, dest="x_high")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_tail)

    p = sub.add_parser("gen-content", help="write a synthetic content trace CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--profile", choices=PROFILE_NAMES, default="street")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_content)

    p = sub.add_parser("gen-trace", help="write a bandwidth trace CSV")
    p.add_argument("--kind", choices=["fixed", *sorted(SYNTH_ENVELOPES)], required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--bitrate-mbps", type=float, dest="bitrate_mbps")
    p.add_argument("--factor", type=float, default=1.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("print-config", help="dump the default config INI")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, SchemaError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
