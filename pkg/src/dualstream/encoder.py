"""Analytic encoder: rate-quantization model, complexity prediction, modes.

Frame sizes come from the hyperbolic rate model ``R(q, c) = c * (a1/q + a2/q^2)``.
The simulator keeps two instances of it: the generating ("true") coefficients
owned by the content profile, and the encoder's own continuously refitted
estimate used for every planning decision.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import EncoderConfig, ProfileParams
from .errors import DomainError, InsufficientDataError
from .media import DELTA, KEY, STREAM_1, ContentFrame, EncodedFrame

COMPLEXITY_FLOOR = 1.0


def build_quant_table(q_min: float = 0.625, steps: int = 52,
                      octave_steps: float = 6.0) -> np.ndarray:
    """Geometric quantizer ladder; index differences behave like QP deltas."""
    idx = np.arange(steps, dtype=float)
    return q_min * np.exp2(idx / octave_steps)


def q_to_index(q: float, table: np.ndarray) -> float:
    """Fractional position of a continuous quantizer value in the ladder."""
    ratio = table[1] / table[0]
    return math.log(q / table[0]) / math.log(ratio)


def snap_to_table(q: float, table: np.ndarray) -> tuple[float, int, bool]:
    """Nearest ladder entry for a continuous quantizer; flags clamping."""
    if q <= table[0]:
        return float(table[0]), 0, q < table[0] * 0.999
    if q >= table[-1]:
        return float(table[-1]), len(table) - 1, q > table[-1] * 1.001
    i = int(round(q_to_index(q, table)))
    return float(table[i]), i, False


@dataclass
class RQModel:
    """Hyperbolic rate model with an exponentially weighted refit window."""

    alpha1: float
    alpha2: float
    window: int = 60
    decay: float = 0.92
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or (self.alpha1 == 0 and self.alpha2 == 0):
            raise DomainError("alpha1/alpha2 must be non-negative and not both zero")
        self.history = deque(self.history, maxlen=self.window)

    def snapshot(self) -> dict:
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "n_obs": len(self.history)}


def rq_required_bits(q: float, c: float, m: RQModel) -> float:
    """Bits needed to encode a frame of complexity ``c`` at quantizer ``q``."""
    if q <= 0:
        raise DomainError("quantizer must be positive")
    if c < 0:
        raise DomainError("complexity must be non-negative")
    return c * (m.alpha1 / q + m.alpha2 / (q * q))


def rq_invert(bits: float, c: float, m: RQModel) -> float:
    """Quantizer achieving ``bits`` for complexity ``c`` (continuous value).

    Solves ``c*a2*u^2 + c*a1*u - R = 0`` for ``u = 1/q`` and returns the
    positive root.
    """
    if bits <= 0:
        raise DomainError("target bits must be positive")
    if c <= 0:
        raise DomainError("complexity must be positive")
    if m.alpha2 == 0.0:
        return c * m.alpha1 / bits
    a = c * m.alpha2
    b = c * m.alpha1
    u = (-b + math.sqrt(b * b + 4.0 * a * bits)) / (2.0 * a)
    return 1.0 / u


def rq_refit(m: RQModel, observation: tuple[float, float, float]) -> RQModel:
    """Fold one ``(q, c, R)`` observation into the model.

    Refits by weighted least squares on the regressors ``c/q`` and ``c/q^2``;
    negative coefficients are clamped to zero and degenerate windows keep the
    previous fit. Returns the same model instance for chaining.
    """
    q, c, bits = observation
    if q <= 0 or c < 0 or bits < 0:
        raise DomainError("invalid observation")
    m.history.append((float(q), float(c), float(bits)))
    if len(m.history) < 2:
        return m
    qs = np.array([h[0] for h in m.history])
    if np.ptp(qs) < 1e-9 * qs.mean():
        # single operating point cannot identify two coefficients; rescale
        # alpha1 alone to track the latest magnitude
        cs = np.array([h[1] for h in m.history])
        rs = np.array([h[2] for h in m.history])
        denom = np.sum(cs * (1.0 / qs)) + 1e-12
        scale = np.sum(rs - cs * m.alpha2 / qs ** 2) / denom
        if scale > 0 and math.isfinite(scale):
            m.alpha1 = float(scale)
        return m
    cs = np.array([h[1] for h in m.history])
    rs = np.array([h[2] for h in m.history])
    ages = np.arange(len(m.history) - 1, -1, -1, dtype=float)
    w = m.decay ** ages
    x1 = cs / qs
    x2 = cs / qs ** 2
    design = np.stack([x1, x2], axis=1) * np.sqrt(w)[:, None]
    target = rs * np.sqrt(w)
    sol, *_ = np.linalg.lstsq(design, target, rcond=None)
    a1, a2 = float(sol[0]), float(sol[1])
    if a1 < 0.0:
        a2 = max(0.0, float(np.sum(w * x2 * rs) / (np.sum(w * x2 * x2) + 1e-12)))
        a1 = 0.0
    elif a2 < 0.0:
        a1 = max(0.0, float(np.sum(w * x1 * rs) / (np.sum(w * x1 * x1) + 1e-12)))
        a2 = 0.0
    if a1 == 0.0 and a2 == 0.0:
        return m
    m.alpha1, m.alpha2 = a1, a2
    return m


@dataclass
class SadCubicModel:
    """Cubic map from inter-frame SAD to frame complexity."""

    beta0: float
    beta1: float
    beta2: float = 0.0
    beta3: float = 0.0
    fit_rms: float = 0.0
    degenerate: bool = False

    def snapshot(self) -> dict:
        return {"betas": [self.beta0, self.beta1, self.beta2, self.beta3],
                "fit_rms": self.fit_rms, "degenerate": self.degenerate}


def satd_from_sad(sad: float, m: SadCubicModel) -> float:
    if sad < 0:
        raise DomainError("sad must be non-negative")
    value = m.beta0 + m.beta1 * sad + m.beta2 * sad ** 2 + m.beta3 * sad ** 3
    return max(COMPLEXITY_FLOOR, value)


def fit_sad_cubic(samples: list[tuple[float, float]]) -> SadCubicModel:
    """Ordinary least squares on the cubic design; linear fallback when rank
    deficient (flagged ``degenerate``). Requires at least 8 samples."""
    if len(samples) < 8:
        raise InsufficientDataError(f"need >= 8 samples, got {len(samples)}")
    s = np.array([p[0] for p in samples], dtype=float)
    c = np.array([p[1] for p in samples], dtype=float)
    design = np.stack([np.ones_like(s), s, s ** 2, s ** 3], axis=1)
    rank = np.linalg.matrix_rank(design / max(1.0, np.abs(design).max()), tol=1e-10)
    if rank < 4:
        lin = np.stack([np.ones_like(s), s], axis=1)
        sol, *_ = np.linalg.lstsq(lin, c, rcond=None)
        resid = c - lin @ sol
        return SadCubicModel(float(sol[0]), float(sol[1]), 0.0, 0.0,
                             fit_rms=float(np.sqrt(np.mean(resid ** 2))), degenerate=True)
    sol, *_ = np.linalg.lstsq(design, c, rcond=None)
    resid = c - design @ sol
    return SadCubicModel(*(float(v) for v in sol),
                         fit_rms=float(np.sqrt(np.mean(resid ** 2))))


def predict_complexity_linear(history: list[tuple[float, float]],
                              fps_changed: bool = False) -> tuple[float, bool]:
    """Linear extrapolation of complexity over frame index.

    Returns ``(prediction, confident)``; falls back to the last observation
    with ``confident=False`` on short history or after an FPS change.
    """
    if not history:
        raise InsufficientDataError("empty complexity history")
    if fps_changed or len(history) < 2:
        return history[-1][1], False
    xs = np.array([h[0] for h in history], dtype=float)
    ys = np.array([h[1] for h in history], dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    nxt = xs[-1] + (xs[-1] - xs[-2] if len(xs) > 1 else 1.0)
    return float(max(COMPLEXITY_FLOOR, slope * nxt + intercept)), True


@dataclass
class EncoderMode:
    mode: str
    keyframe_period_s: float
    quant_table: np.ndarray

    def __post_init__(self):
        diffs = np.diff(self.quant_table)
        if len(self.quant_table) != 52 or np.any(diffs <= 0):
            raise DomainError("quant_table must be 52 strictly increasing steps")


def model_snapshot_json(rq: RQModel, cubic: SadCubicModel) -> str:
    return json.dumps({"rq": rq.snapshot(), "sad_cubic": cubic.snapshot()}, sort_keys=True)


class StreamEncoder:
    """Per-stream encode pipeline: budget tracking, quantizer choice, and
    synthetic size realization from the generating model."""

    def __init__(self, stream_id: int, cfg: EncoderConfig, fps: float,
                 profile: ProfileParams, rq: RQModel, rng: np.random.Generator):
        self.stream_id = stream_id
        self.cfg = cfg
        self.fps = fps
        self.profile = profile
        self.rq = rq
        self.rng = rng
        self.table = build_quant_table(cfg.q_min, cfg.q_steps, cfg.q_octave_steps)
        self.mode_name = "CBR_L"
        self.target_bps = 1.0e6
        self.window: deque = deque()  # (ts_ms, bits) inside the trailing window
        self.last_q = float(self.table[len(self.table) // 2])
        self._true_rq = RQModel(alpha1=profile.rq_true[0], alpha2=profile.rq_true[1])

    def set_bitrate(self, bps: float) -> None:
        self.target_bps = max(1.0, bps)

    def _window_bits(self, now_ms: float) -> float:
        horizon = now_ms - self.cfg.cbr_window_s * 1000.0
        while self.window and self.window[0][0] < horizon:
            self.window.popleft()
        return sum(b for _, b in self.window)

    def note_external_bits(self, now_ms: float, bits: float) -> None:
        """Charge bits produced outside this encoder against the window
        (the dual phase shares one video budget across both streams)."""
        self.window.append((now_ms, bits))

    def frame_target_bits(self, now_ms: float, backlog_bits: float = 0.0) -> float:
        """Trailing-window budget: nominal per-frame share plus the window
        deficit amortized over one window of frames (negative after a large
        frame, which is what shrinks the deltas following a keyframe).
        ``backlog_bits`` not yet on the wire count as spent, so planning
        error pays itself down instead of parking in the pacer. Upward
        catch-up is capped so an idle window cannot trigger a burst."""
        nominal = self.target_bps / self.fps
        if not self.window:
            return nominal
        budget = self.target_bps * self.cfg.cbr_window_s
        frames_per_window = max(1.0, self.fps * self.cfg.cbr_window_s)
        correction = (budget - self._window_bits(now_ms) - backlog_bits) / frames_per_window
        target = nominal + self.cfg.cbr_catchup * correction
        target = min(target, (1.0 + self.cfg.cbr_boost_cap) * nominal)
        return max(self.cfg.cbr_floor * nominal, target)

    def true_size_bits(self, q: float, c_eff: float) -> float:
        noise = math.exp(self.rng.normal(0.0, self.cfg.size_noise_sigma))
        return max(8.0, rq_required_bits(q, c_eff, self._true_rq) * noise)

    def encode(self, frame_id: int, content: ContentFrame, now_ms: float, *,
               want_key: bool, c_eff_true: float, c_pred: float,
               target_bits: float | None = None, target_q: float | None = None,
               strict: bool = False, gap: int = 1) -> EncodedFrame:
        """Produce one frame. Exactly one of ``target_bits``/``target_q`` is
        honored; the realized size comes from the generating model (or the
        exact target under strict CBR)."""
        if target_q is not None:
            q_cont = target_q
        else:
            bits_goal = target_bits if target_bits is not None else self.frame_target_bits(now_ms)
            q_cont = rq_invert(max(8.0, bits_goal), max(COMPLEXITY_FLOOR, c_pred), self.rq)
        q, qp_index, saturated = snap_to_table(q_cont, self.table)

        kind = KEY if want_key else DELTA
        if strict and not saturated and target_bits is not None:
            wiggle = self.rng.uniform(-self.cfg.cbr_s_tolerance, self.cfg.cbr_s_tolerance)
            size = max(8.0, target_bits * (1.0 + wiggle))
        else:
            size = self.true_size_bits(q, c_eff_true)
        extra = self.cfg.encode_key_extra_ms if kind == KEY else 0.0
        done = now_ms + self.cfg.encode_base_ms + extra
        self.window.append((now_ms, size))
        self.last_q = q
        return EncodedFrame(frame_id=frame_id, stream_id=self.stream_id, frame_type=kind,
                            size_bits=size, quant_step=q, capture_ts=now_ms,
                            encode_done_ts=done, qp_index=qp_index, gap=gap,
                            saturated=saturated)


def encode_frame(mode: EncoderMode, stream_id: int, want_key: bool,
                 content: ContentFrame, rq: RQModel, *,
                 profile: ProfileParams, rng: np.random.Generator,
                 fps: float = 30.0, cfg: EncoderConfig | None = None,
                 target_bits: float | None = None, target_q: float | None = None,
                 c_eff_true: float | None = None, now_ms: float = 0.0,
                 frame_id: int = 0, kappa: float | None = None) -> EncodedFrame:
    """One-shot functional wrapper around :class:`StreamEncoder`.

    Keyframes consume ``kappa``-inflated effective complexity so their size
    lands a configurable multiple above delta frames.
    """
    cfg = cfg or EncoderConfig()
    kappa = cfg.kappa if kappa is None else kappa
    enc = StreamEncoder(stream_id, cfg, fps, profile, rq, rng)
    enc.mode_name = mode.mode
    c_true = content.satd_base if c_eff_true is None else c_eff_true
    if want_key:
        c_true = kappa * c_true
    return enc.encode(frame_id, content, now_ms, want_key=want_key,
                      c_eff_true=c_true, c_pred=content.satd_base,
                      target_bits=target_bits, target_q=target_q,
                      strict=(mode.mode == "CBR_S"))
