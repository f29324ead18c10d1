"""Experiment orchestration: runs, training, comparisons, artifact layout.

Each run writes one directory with fixed filenames (frames.csv, events.csv,
alloc.csv, report.csv, tailfit.json, config.ini). Every CSV opens with a
comment line embedding the config hash and seed so outputs are traceable and
byte-identical across replays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytics import (REPORT_COLUMNS, default_x_high, fit_power_tail,
                        percentile, qoe_report, tail_slash)
from .config import ExperimentConfig, config_hash, save_config
from .errors import ConfigError, InsufficientDataError, SchemaError, TrainingDiverged
from .media import ContentTrace, gen_synthetic_content, load_trace_csv
from .ratecontrol import (PolicyNet, TrajectoryBatch, critic_update,
                          load_checkpoint, ppo_update, returns_with_horizon,
                          save_checkpoint)
from .simulate import RunResult, Simulation, build_bw_trace

FRAME_COLUMNS = ["capture_ts", "stream_id", "frame_type", "d_encode", "d_pacer",
                 "d_trans", "d_jitter", "d_decode", "d_e2e", "rendered", "stalled"]
ALLOC_COLUMNS = ["ts", "b", "R1", "f_prime", "T", "q_bar_prime", "b_prime",
                 "b_dprime", "delta_q", "scaled", "delta_q_index"]
EVENT_COLUMNS = ["ts", "event", "value"]


def _write_csv(path: Path, header: list[str], rows, stamp: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def load_content(cfg: ExperimentConfig) -> ContentTrace:
    if cfg.content.trace_path:
        return load_trace_csv(cfg.content.trace_path, fps=cfg.content.fps,
                              profile_name=cfg.content.profile)
    return gen_synthetic_content(cfg.seed, cfg.content.duration_s,
                                 cfg.content.fps, cfg.content.profile, cfg.content)


def _policy_net(cfg: ExperimentConfig, input_dim: int) -> PolicyNet | None:
    if cfg.rate.policy != "RL":
        return None
    if cfg.rate.checkpoint:
        net, _ = load_checkpoint(cfg.rate.checkpoint, expect_input_dim=input_dim)
        return net
    return PolicyNet.create(input_dim, cfg.rl, seed=cfg.seed)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path,
                   content: ContentTrace | None = None) -> Path:
    """Simulate one session and persist the artifact layout. Returns the
    run directory."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    content = content or load_content(cfg)
    bw = build_bw_trace(cfg)
    from .ratecontrol import PolicyStateBuilder
    dim = PolicyStateBuilder(cfg.rl, cfg.rate.decision_interval_ms / 1000.0).dim
    net = _policy_net(cfg, dim)
    sim = Simulation(cfg, content, bw, policy_net=net, train_mode=False)
    result = sim.run()
    write_run_outputs(cfg, result, out)
    return out


def write_run_outputs(cfg: ExperimentConfig, result: RunResult, out: Path) -> None:
    stamp = f"config_hash={config_hash(cfg)} seed={cfg.seed}"
    save_config(cfg, out / "config.ini")

    frame_rows = [[_fmt(r[c]) for c in FRAME_COLUMNS] for r in result.frame_rows]
    _write_csv(out / "frames.csv", FRAME_COLUMNS, frame_rows, stamp)

    event_rows = [[_fmt(ts), event, _fmt(val)] for ts, event, val in result.event_rows]
    _write_csv(out / "events.csv", EVENT_COLUMNS, event_rows, stamp)

    alloc_rows = [[_fmt(r[c]) for c in ALLOC_COLUMNS] for r in result.alloc_rows]
    _write_csv(out / "alloc.csv", ALLOC_COLUMNS, alloc_rows, stamp)

    report = qoe_report(result.frame_rows, result.summary, label=cfg.mode)
    _write_csv(out / "report.csv", REPORT_COLUMNS,
               [[_fmt(report[c]) for c in REPORT_COLUMNS]], stamp)

    tail = {"config_hash": config_hash(cfg), "seed": cfg.seed, "fit": None}
    d_e2e = [r["d_e2e"] for r in result.frame_rows if r["rendered"]]
    if d_e2e:
        try:
            x_high = default_x_high(d_e2e, cfg.analytics)
            fit = fit_power_tail(d_e2e, x_high, cfg.analytics)
            tail["fit"] = fit.as_dict()
        except InsufficientDataError as exc:
            tail["error"] = str(exc)
    (out / "tailfit.json").write_text(json.dumps(tail, sort_keys=True, indent=1))

    summary = dict(result.summary)
    summary["config_hash"] = config_hash(cfg)
    summary["seed"] = cfg.seed
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))


def read_report(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "report.csv"
    if not path.exists():
        raise ConfigError(f"missing report.csv under {run_dir}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, values = rows[0], rows[1]
    if header != REPORT_COLUMNS:
        raise SchemaError(f"{path}: columns {header} != {REPORT_COLUMNS}")
    row = dict(zip(header, values))
    for key in REPORT_COLUMNS[1:]:
        row[key] = float(row[key])
    return row


def read_frame_column(run_dir: str | Path, column: str = "d_e2e",
                      rendered_only: bool = True) -> list[float]:
    path = Path(run_dir) / "frames.csv"
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = rows[0]
    if column not in header or "rendered" not in header:
        raise SchemaError(f"{path}: missing column {column!r}")
    ci = header.index(column)
    ri = header.index("rendered")
    out = []
    for r in rows[1:]:
        if rendered_only and float(r[ri]) < 0.5:
            continue
        out.append(float(r[ci]))
    return out


def compare(run_dirs: list[str | Path], slash_at: tuple[float, ...] = (200.0, 250.0),
            x_high: float | None = None) -> dict:
    """Side-by-side table for two or more runs plus tail-slash percentages of
    every run against the first (the baseline)."""
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    for d in run_dirs:
        if not (Path(d) / "report.csv").exists():
            raise ConfigError(f"missing run directory or report: {d}")
    reports = [read_report(d) for d in run_dirs]
    delays = [read_frame_column(d, "d_e2e") for d in run_dirs]
    baseline = delays[0]
    threshold = x_high if x_high is not None else default_x_high(baseline)
    result = {"rows": reports, "x_high": threshold, "tail": []}
    p97_base = percentile(baseline, 97.0)
    try:
        fit_base = fit_power_tail(baseline, threshold)
    except InsufficientDataError:
        fit_base = None
    for d, sample in zip(run_dirs, delays):
        entry = {"run": str(d), "p97_ms": percentile(sample, 97.0),
                 "p97_reduction_pct": 100.0 * (1.0 - percentile(sample, 97.0) / p97_base)}
        if fit_base is not None:
            try:
                fit = fit_power_tail(sample, threshold)
                entry["alpha"] = fit.alpha
                entry["slash_pct"] = {str(x): 100.0 * tail_slash(fit_base, fit, x)
                                      for x in slash_at if x > threshold}
            except InsufficientDataError as exc:
                entry["fit_error"] = str(exc)
        result["tail"].append(entry)
    return result


def format_comparison(result: dict) -> str:
    lines = []
    header = " | ".join(f"{c:>14}" for c in REPORT_COLUMNS)
    lines.append(header)
    lines.append("-" * len(header))
    for row in result["rows"]:
        lines.append(" | ".join(
            f"{row[c]:>14.3f}" if isinstance(row[c], float) else f"{row[c]:>14}"
            for c in REPORT_COLUMNS))
    lines.append("")
    for entry in result["tail"]:
        slash = entry.get("slash_pct", {})
        slash_txt = ", ".join(f"P(>= {x} ms) slashed {v:.1f}%" for x, v in slash.items())
        lines.append(f"{entry['run']}: p97 {entry['p97_ms']:.1f} ms "
                     f"({entry['p97_reduction_pct']:.1f}% vs baseline) {slash_txt}")
    return "\n".join(lines)


@dataclass
class TrainOutcome:
    checkpoint: Path
    curve: list[tuple[int, float]]
    episodes: int


def train(cfg: ExperimentConfig, out_dir: str | Path,
          traces: list[ContentTrace] | None = None) -> TrainOutcome:
    """Episode loop: simulate, compute horizon returns, take one clipped
    policy step and one critic step per epoch. Checkpoints land in
    ``out_dir`` together with the reward curve CSV."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rl = cfg.rl
    from .ratecontrol import PolicyStateBuilder
    dim = PolicyStateBuilder(rl, cfg.rate.decision_interval_ms / 1000.0).dim
    net = PolicyNet.create(dim, rl, seed=cfg.seed)
    if cfg.rate.checkpoint:
        net, _ = load_checkpoint(cfg.rate.checkpoint, expect_input_dim=dim)

    if traces is None:
        traces = [gen_synthetic_content(cfg.seed + i, rl.episode_s, cfg.content.fps,
                                        cfg.content.profile, cfg.content)
                  for i in range(4)]
    rng = np.random.default_rng([cfg.seed, 0x77])
    order = rng.permutation(len(traces))
    split = max(1, int(round(rl.train_split * len(traces))))
    train_traces = [traces[i] for i in order[:split]] or traces

    run_cfg = cfg
    horizon_steps = int(round(rl.horizon_s / (cfg.rate.decision_interval_ms / 1000.0)))
    curve: list[tuple[int, float]] = []
    last_good = out / "policy_init.npz"
    save_checkpoint(net, last_good)
    gamma = rl.gamma

    for episode in range(rl.episodes):
        trace = train_traces[episode % len(train_traces)]
        ep_cfg = _episode_config(run_cfg, episode)
        bw = build_bw_trace(ep_cfg)
        sim = Simulation(ep_cfg, trace, bw, policy_net=net, train_mode=True)
        result = sim.run()
        steps = result.trajectory
        if len(steps) < 2:
            continue
        rewards = np.array([s.reward for s in steps])
        states = np.stack([s.state for s in steps])
        actions = np.array([s.action for s in steps])
        old_probs = np.array([s.prob for s in steps])
        returns = returns_with_horizon(rewards, gamma, horizon_steps)
        batch = TrajectoryBatch(states=states, actions=actions, returns=returns,
                                old_probs=old_probs, rewards=rewards)
        try:
            ppo_update(net, batch, rl.epsilon, rl.lr_actor, epochs=rl.update_epochs)
            terminal = np.zeros(len(steps) - 1)
            critic_update(net, states[:-1], rewards[:-1], states[1:], gamma,
                          rl.lr_critic, terminal)
        except TrainingDiverged:
            save_checkpoint(net, out / "policy_diverged.npz")
            raise
        mean_reward = float(rewards.mean())
        curve.append((episode, mean_reward))
        if (episode + 1) % rl.checkpoint_every == 0:
            ckpt = out / f"policy_ep{episode + 1:04d}.npz"
            save_checkpoint(net, ckpt, extra={"episode": episode + 1})
            last_good = ckpt

    final = out / "policy_final.npz"
    save_checkpoint(net, final, extra={"episode": rl.episodes})
    with open(out / "training_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_reward"])
        for ep, r in curve:
            writer.writerow([ep, f"{r:.6f}"])
    return TrainOutcome(checkpoint=final, curve=curve, episodes=rl.episodes)


def _episode_config(cfg: ExperimentConfig, episode: int) -> ExperimentConfig:
    from copy import deepcopy
    ep = deepcopy(cfg)
    ep.seed = cfg.seed * 1000 + episode
    ep.content.duration_s = cfg.rl.episode_s
    return ep
