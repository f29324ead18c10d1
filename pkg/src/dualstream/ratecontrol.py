"""Bitrate adaptation: rule baseline and the learned actor-critic policy.

The policy networks are plain numpy MLPs (three leaky-rectifier hidden layers
of 128/64/32 units). The actor normalizes its head into a distribution over a
discrete bitrate grid; the critic shares the trunk shape with a scalar head.
Updates are the clipped-ratio surrogate for the actor and a squared
temporal-difference step for the critic, both as explicit gradient steps so
they stay cheap, deterministic, and finite-difference checkable.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RLConfig, RewardConfig
from .errors import ConfigError, DomainError, TrainingDiverged

CHECKPOINT_VERSION = 1

# state layout: each channel is a fixed-length history at the decision grid
STATE_CHANNELS = (
    "throughput_bps", "loss_frac", "rtt_ms", "d_e2e_ms", "fps", "qp_index",
    "target_bps", "actual_bps", "dual_active", "s1_frame_bits",
    "s2_frame_bits", "b_prime_bps", "b_dprime_bps",
)


def bitrate_grid(cfg: RLConfig) -> np.ndarray:
    """Geometric grid of candidate target bitrates."""
    return np.geomspace(cfg.grid_lo_bps, cfg.grid_hi_bps, cfg.grid_size)


def channel_norms(cfg: RLConfig) -> np.ndarray:
    return np.array([
        cfg.norm_throughput, cfg.norm_loss, cfg.norm_rtt_ms, cfg.norm_delay_ms,
        cfg.norm_fps, cfg.norm_qp, cfg.norm_bitrate, cfg.norm_bitrate, 1.0,
        cfg.norm_s1_bits, cfg.norm_s2_bits, cfg.norm_bitrate, cfg.norm_bitrate,
    ])


class PolicyStateBuilder:
    """Fixed-layout sliding window over the past ``window_s`` seconds.

    Dual-stream channels are zero whenever the second stream is inactive, so
    the vector length never changes with activation.
    """

    def __init__(self, cfg: RLConfig, decision_interval_s: float = 0.1):
        self.cfg = cfg
        self.steps = max(1, int(round(cfg.window_s / decision_interval_s)))
        self.norms = channel_norms(cfg)
        self.history: deque[np.ndarray] = deque(maxlen=self.steps)

    @property
    def dim(self) -> int:
        return self.steps * len(STATE_CHANNELS)

    def push(self, sample: dict[str, float]) -> None:
        row = np.array([float(sample.get(ch, 0.0)) for ch in STATE_CHANNELS])
        self.history.append(row)

    def vector(self) -> np.ndarray:
        rows = list(self.history)
        while len(rows) < self.steps:
            rows.insert(0, np.zeros(len(STATE_CHANNELS)))
        mat = np.stack(rows, axis=0) / self.norms[None, :]
        return mat.reshape(-1)


# ---------------------------------------------------------------------------
# reward and returns


@dataclass
class PlaybackMetrics:
    """Averages over the last decision interval."""

    bitrate_bps: float
    fps: float
    qp_index: float
    delay_s: float
    stall_frac: float


def reward(metrics: PlaybackMetrics, w: RewardConfig) -> float:
    """Weighted playback score: bitrate and smoothness up, clarity loss,
    delay (seconds) and stalling (fraction) down."""
    return (w.w_bitrate * metrics.bitrate_bps + w.w_fps * metrics.fps
            - w.w_qp * metrics.qp_index - w.w_delay * metrics.delay_s
            - w.w_stall * metrics.stall_frac)


def discounted_return(rewards, gamma: float) -> float:
    """Sum of ``gamma**k * r_k`` over the supplied horizon slice."""
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * r
        g *= gamma
    return total


def returns_with_horizon(rewards: np.ndarray, gamma: float, horizon_steps: int) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    n = len(rewards)
    out = np.zeros(n)
    for i in range(n):
        stop = min(n, i + horizon_steps)
        out[i] = discounted_return(rewards[i:stop], gamma)
    return out


# ---------------------------------------------------------------------------
# rule-based baseline


class GccController:
    """Delay-gradient / loss rule in the spirit of WebRTC's default
    controller: multiplicative backoff on overuse or heavy loss, gentle
    multiplicative probing otherwise."""

    def __init__(self, b_min: float, b_max: float, increase: float = 1.05,
                 decrease: float = 0.85, loss_threshold: float = 0.10,
                 loss_factor: float = 0.5, gradient_threshold: float = 10.0,
                 gradient_smoothing: float = 0.9):
        self.b_min = b_min
        self.b_max = b_max
        self.increase = increase
        self.decrease = decrease
        self.loss_threshold = loss_threshold
        self.loss_factor = loss_factor
        self.gradient_threshold = gradient_threshold
        self.smoothing = gradient_smoothing
        self._last_rtt: float | None = None
        self.smoothed_gradient = 0.0

    def observe_rtt(self, rtt_ms: float, interval_s: float) -> float:
        if self._last_rtt is not None and interval_s > 0:
            grad = (rtt_ms - self._last_rtt) / interval_s  # ms of growth per second
            self.smoothed_gradient = (self.smoothing * self.smoothed_gradient
                                      + (1.0 - self.smoothing) * grad)
        self._last_rtt = rtt_ms
        return self.smoothed_gradient

    def update(self, rate_bps: float, loss_frac: float) -> float:
        if self.smoothed_gradient > self.gradient_threshold:
            rate = rate_bps * self.decrease
        elif loss_frac > self.loss_threshold:
            rate = rate_bps * (1.0 - self.loss_factor * loss_frac)
        else:
            rate = rate_bps * self.increase
        return float(min(self.b_max, max(self.b_min, rate)))


def gcc_update(rtt_gradient: float, loss_frac: float, rate_bps: float, *,
               b_min: float = 0.3e6, b_max: float = 4.0e6,
               gradient_threshold: float = 10.0) -> float:
    """Stateless form of the rule for a pre-smoothed gradient."""
    ctl = GccController(b_min, b_max, gradient_threshold=gradient_threshold)
    ctl.smoothed_gradient = rtt_gradient
    return ctl.update(rate_bps, loss_frac)


# ---------------------------------------------------------------------------
# networks


def leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, slope)


class MLP:
    """Fully connected net with leaky-rectifier hidden layers and a linear
    head. Parameters initialize from a seeded uniform fan-in rule."""

    def __init__(self, dims: list[int], slope: float = 0.01,
                 rng: np.random.Generator | None = None):
        if len(dims) < 2:
            raise ConfigError("MLP needs at least input and output dims")
        self.dims = list(dims)
        self.slope = slope
        rng = rng or np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            self.biases.append(rng.uniform(-bound, bound, size=d_out))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns head output and the cache needed for backward."""
        x = np.atleast_2d(x)
        cache = [("input", x)]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < len(self.weights) - 1:
                cache.append(("z", z, h))
                h = leaky(z, self.slope)
            else:
                cache.append(("out", z, h))
                h = z
        return h, cache

    def backward(self, cache: list, upstream: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(upstream * head)`` in parameter order
        ``[W0, b0, W1, b1, ...]``."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = np.atleast_2d(upstream)
        for i in range(len(self.weights) - 1, -1, -1):
            kind, z, h_in = cache[i + 1]
            if kind == "z":
                g = g * leaky_grad(z, self.slope)
            grads_w[i] = h_in.T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        flat: list[np.ndarray] = []
        for gw, gb in zip(grads_w, grads_b):
            flat.extend([gw, gb])
        return flat

    def params(self) -> list[np.ndarray]:
        flat: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            flat.extend([w, b])
        return flat

    def apply_step(self, grads: list[np.ndarray], lr: float) -> None:
        params = self.params()
        for p, g in zip(params, grads):
            p += lr * g

    def finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def copy(self) -> "MLP":
        clone = MLP(self.dims, self.slope, np.random.default_rng(0))
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PolicyNet:
    """Actor over the bitrate grid plus a same-trunk-shape critic."""

    actor: MLP
    critic: MLP
    grid: np.ndarray
    norms: np.ndarray

    @classmethod
    def create(cls, input_dim: int, cfg: RLConfig, seed: int = 1) -> "PolicyNet":
        rng = np.random.default_rng([seed, 0x9E])
        hidden = list(cfg.hidden)
        actor = MLP([input_dim, *hidden, cfg.grid_size], cfg.leaky_slope, rng)
        critic = MLP([input_dim, *hidden, 1], cfg.leaky_slope, rng)
        return cls(actor=actor, critic=critic, grid=bitrate_grid(cfg),
                   norms=channel_norms(cfg))


def policy_forward(state: np.ndarray, net: PolicyNet) -> np.ndarray:
    """Action distribution over the bitrate grid for one state vector."""
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        bad = np.flatnonzero(~np.isfinite(state))
        raise DomainError(f"non-finite state entries at indices {bad[:8].tolist()}")
    logits, _ = net.actor.forward(state)
    return softmax(logits)[0]


def critic_value(state: np.ndarray, net: PolicyNet) -> float:
    out, _ = net.critic.forward(np.asarray(state, dtype=float))
    return float(out[0, 0])


def log_prob_grad(actor: MLP, state: np.ndarray, action: int) -> tuple[float, list[np.ndarray]]:
    """Log-probability of ``action`` and its parameter gradient."""
    logits, cache = actor.forward(state)
    probs = softmax(logits)
    upstream = -probs
    upstream[0, action] += 1.0
    grads = actor.backward(cache, upstream)
    return float(np.log(max(probs[0, action], 1e-300))), grads


@dataclass
class TrajectoryBatch:
    states: np.ndarray        # (N, D)
    actions: np.ndarray       # (N,)
    returns: np.ndarray       # (N,)
    old_probs: np.ndarray     # (N,) probability of the taken action under theta'
    rewards: np.ndarray       # (N,)


def clipped_surrogate(ratio: np.ndarray, advantage: np.ndarray, epsilon: float) -> np.ndarray:
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    return np.minimum(ratio * advantage, clipped * advantage)


def ppo_update(net: PolicyNet, batch: TrajectoryBatch, epsilon: float,
               lr: float, epochs: int = 1) -> dict:
    """Clipped-ratio ascent on the actor.

    Per-sample gradients vanish exactly where the clip binds (ratio above
    ``1+eps`` with positive advantage, or below ``1-eps`` with negative), so
    no contribution moves the objective outside the trust band.
    """
    n = len(batch.actions)
    if n < 2:
        return {"skipped": True, "reason": "degenerate batch", "surrogate": 0.0}
    states = batch.states
    actions = batch.actions.astype(int)
    values = net.critic.forward(states)[0][:, 0]
    advantages = batch.returns - values
    old_probs = np.maximum(batch.old_probs, 1e-12)
    surrogate_before = None
    for _ in range(max(1, epochs)):
        logits, cache = net.actor.forward(states)
        probs = softmax(logits)
        p_taken = probs[np.arange(n), actions]
        ratio = p_taken / old_probs
        if surrogate_before is None:
            surrogate_before = float(np.sum(clipped_surrogate(ratio, advantages, epsilon)))
        active = np.where(advantages >= 0.0, ratio <= 1.0 + epsilon, ratio >= 1.0 - epsilon)
        coef = ratio * advantages * active
        upstream = -probs * coef[:, None]
        upstream[np.arange(n), actions] += coef
        grads = net.actor.backward(cache, upstream)
        net.actor.apply_step(grads, lr)
    if not net.actor.finite():
        raise TrainingDiverged("actor parameters became non-finite")
    logits, _ = net.actor.forward(states)
    probs = softmax(logits)
    ratio = probs[np.arange(n), actions] / old_probs
    surrogate_after = float(np.sum(clipped_surrogate(ratio, advantages, epsilon)))
    return {"skipped": False, "surrogate": surrogate_after,
            "surrogate_before": surrogate_before,
            "mean_advantage": float(advantages.mean())}


def critic_update(net: PolicyNet, states: np.ndarray, rewards: np.ndarray,
                  next_states: np.ndarray, gamma: float, lr: float,
                  terminal: np.ndarray | None = None) -> float:
    """One descent step on the summed squared temporal-difference residual,
    differentiating through both value terms. Returns the pre-step loss."""
    states = np.atleast_2d(states)
    next_states = np.atleast_2d(next_states)
    n = len(states)
    if n < 1:
        return 0.0
    mask = np.ones(n) if terminal is None else 1.0 - np.asarray(terminal, dtype=float)
    v, cache_s = net.critic.forward(states)
    v_next, cache_n = net.critic.forward(next_states)
    td = rewards + gamma * v_next[:, 0] * mask - v[:, 0]
    loss = float(np.sum(td ** 2))
    if td.ndim == 0 or n == 0:
        return loss
    up_s = (-2.0 * td)[:, None]
    up_n = (2.0 * gamma * td * mask)[:, None]
    grads_s = net.critic.backward(cache_s, up_s)
    grads_n = net.critic.backward(cache_n, up_n)
    total = [gs + gn for gs, gn in zip(grads_s, grads_n)]
    net.critic.apply_step(total, -lr)
    if not net.critic.finite():
        raise TrainingDiverged("critic parameters became non-finite")
    return loss


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: PolicyNet, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    meta = {"version": CHECKPOINT_VERSION, "actor_dims": net.actor.dims,
            "critic_dims": net.critic.dims, "slope": net.actor.slope,
            "grid": net.grid.tolist(), "norms": net.norms.tolist(),
            "extra": extra or {}}
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(net.actor.weights, net.actor.biases)):
        arrays[f"actor_w{i}"] = w
        arrays[f"actor_b{i}"] = b
    for i, (w, b) in enumerate(zip(net.critic.weights, net.critic.biases)):
        arrays[f"critic_w{i}"] = w
        arrays[f"critic_b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, expect_input_dim: int | None = None) -> tuple[PolicyNet, dict]:
    data = np.load(Path(path), allow_pickle=False)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
    if expect_input_dim is not None and meta["actor_dims"][0] != expect_input_dim:
        raise ConfigError(
            f"checkpoint input dim {meta['actor_dims'][0]} != expected {expect_input_dim}")
    actor = MLP(meta["actor_dims"], meta["slope"])
    critic = MLP(meta["critic_dims"], meta["slope"])
    for i in range(len(actor.weights)):
        w, b = data[f"actor_w{i}"], data[f"actor_b{i}"]
        if w.shape != actor.weights[i].shape:
            raise ConfigError(f"actor layer {i} shape mismatch: {w.shape}")
        actor.weights[i], actor.biases[i] = w, b
    for i in range(len(critic.weights)):
        w, b = data[f"critic_w{i}"], data[f"critic_b{i}"]
        if w.shape != critic.weights[i].shape:
            raise ConfigError(f"critic layer {i} shape mismatch: {w.shape}")
        critic.weights[i], critic.biases[i] = w, b
    net = PolicyNet(actor=actor, critic=critic, grid=np.array(meta["grid"]),
                    norms=np.array(meta["norms"]))
    return net, meta.get("extra", {})
