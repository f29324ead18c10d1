"""Content traces, frames and packets.

A :class:`ContentTrace` stands in for raw video: per-frame complexity
(SATD-like units) plus the inter-frame absolute difference (SAD) to the next
frame. Traces are immutable after generation and safe to share between
simulator instances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PROFILES, ContentConfig, ProfileParams
from .errors import ConfigError, DomainError, ParseError

KEY = "KEY"
DELTA = "DELTA"

STREAM_1 = 1
STREAM_2 = 2

# pacer service classes, highest priority first
AUDIO = "AUDIO"
RETX = "RETX"
VIDEO_S2 = "VIDEO_S2"
VIDEO_S1 = "VIDEO_S1"
FEC = "FEC"
PRIORITY_ORDER = (AUDIO, RETX, VIDEO_S2, VIDEO_S1, FEC)


@dataclass(frozen=True)
class ContentFrame:
    satd_base: float
    sad_next: float
    scene_cut: bool = False


@dataclass
class ContentTrace:
    fps_native: float
    frames: list[ContentFrame]
    profile_name: str

    def __post_init__(self):
        if not 1.0 <= self.fps_native <= 120.0:
            raise ConfigError("fps_native must be within [1, 120]")
        self._median_sad = float(np.median([f.sad_next for f in self.frames])) if self.frames else 0.0
        for i, f in enumerate(self.frames):
            if f.satd_base <= 0 or f.sad_next < 0:
                raise ConfigError(f"frame {i}: satd_base must be > 0 and sad_next >= 0")
            if f.scene_cut and f.sad_next < 5.0 * self._median_sad:
                raise ConfigError(f"frame {i}: scene-cut SAD below 5x trace median")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def median_sad(self) -> float:
        return self._median_sad

    def scene_cut_level(self) -> float:
        """Saturation level for gap-extrapolated SAD (a full scene change)."""
        cut_sads = [f.sad_next for f in self.frames if f.scene_cut]
        return max([5.0 * self._median_sad] + cut_sads)

    def profile(self) -> ProfileParams:
        return PROFILES.get(self.profile_name, PROFILES["street"])


def gen_synthetic_content(seed: int, duration_s: float, fps: float,
                          profile: str, cfg: ContentConfig | None = None) -> ContentTrace:
    """Generate a deterministic synthetic content trace for one profile.

    SAD follows a lognormal AR(1) process; each frame's complexity is the
    profile's generating cubic applied to the previous inter-frame SAD, with
    multiplicative noise. Scene cuts are placed by a Bernoulli process and
    pinned above five times the trace median.
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    if duration_s <= 0:
        raise ConfigError("duration must be positive")
    if not 1.0 <= fps <= 120.0:
        raise ConfigError("fps must be within [1, 120]")
    cfg = cfg or ContentConfig()
    params = PROFILES[profile]
    rng = np.random.default_rng([seed, 0xC0]) if seed is not None else np.random.default_rng()

    n = int(round(duration_s * fps))
    log_mean = math.log(params.sad_mean)
    log_sad = np.empty(n)
    level = log_mean
    eps = rng.normal(0.0, params.sad_sigma, size=n)
    for i in range(n):
        level = (1.0 - params.sad_phi) * log_mean + params.sad_phi * level + eps[i]
        log_sad[i] = level
    sad = np.exp(log_sad)

    cuts = rng.random(n) < params.scene_cut_rate / fps
    cuts[0] = False
    base_median = float(np.median(sad))
    cut_sad = cfg.scene_cut_uplift * 5.0 * base_median
    sad[cuts] = np.maximum(sad[cuts], cut_sad)

    b0, b1, b2, b3 = params.cubic_true
    noise = np.exp(rng.normal(0.0, params.satd_noise_sigma, size=n))
    satd = np.empty(n)
    satd[0] = (b0 + b1 * params.sad_mean + b2 * params.sad_mean ** 2
               + b3 * params.sad_mean ** 3) * noise[0]
    prev_sad = np.minimum(sad[:-1], cut_sad)  # complexity saturates at a full scene change
    satd[1:] = (b0 + b1 * prev_sad + b2 * prev_sad ** 2 + b3 * prev_sad ** 3) * noise[1:]

    frames = [ContentFrame(float(satd[i]), float(sad[i]), bool(cuts[i])) for i in range(n)]
    return ContentTrace(fps_native=float(fps), frames=frames, profile_name=profile)


def sad_at_gap(trace: ContentTrace, frame_idx: int, gap_frames: int) -> float:
    """Inter-frame SAD of frame ``frame_idx`` against the frame ``gap`` back.

    Grows sublinearly (``g ** rho``) with the reference gap and saturates at
    the scene-change level; any scene cut inside the gap forces at least the
    cut-level difference.
    """
    g = int(gap_frames)
    if g < 1:
        raise DomainError("gap_frames must be >= 1")
    if frame_idx - g < 0 or frame_idx >= len(trace.frames):
        raise DomainError(f"frame_idx {frame_idx} with gap {g} out of range")
    base = trace.frames[frame_idx - 1].sad_next
    if g == 1:
        return base
    rho = 0.75
    ceiling = trace.scene_cut_level()
    value = min(base * g ** rho, ceiling)
    spanned = trace.frames[frame_idx - g:frame_idx - 1]
    cut_levels = [f.sad_next for f in spanned if f.scene_cut]
    if cut_levels:
        value = max(value, max(cut_levels))
    return value


def gap_sad_estimate(sad_base: float, gap: float, rho: float, ceiling: float) -> float:
    """Continuous-gap version of the gap SAD model, for rate planning."""
    if gap <= 1.0:
        return sad_base
    return min(sad_base * gap ** rho, ceiling)


@dataclass
class EncodedFrame:
    frame_id: int
    stream_id: int
    frame_type: str
    size_bits: float
    quant_step: float
    capture_ts: float
    encode_done_ts: float
    qp_index: int = 0
    gap: int = 1
    saturated: bool = False

    def __post_init__(self):
        if self.size_bits <= 0:
            raise DomainError("size_bits must be positive")
        if self.frame_type == KEY and self.stream_id != STREAM_1:
            raise DomainError("KEY frames only appear on stream 1")
        if self.encode_done_ts < self.capture_ts:
            raise DomainError("encode_done_ts must be >= capture_ts")


@dataclass
class Packet:
    pkt_id: int
    frame_id: int
    stream_id: int
    seq_in_frame: int
    size_bytes: int
    priority_class: str
    last_in_frame: bool = False
    frame: EncodedFrame | None = None
    ts_enqueued: float = -1.0
    ts_sent: float = -1.0
    ts_arrived: float = -1.0
    lost: bool = False


def packetize(frame: EncodedFrame, first_pkt_id: int,
              mtu_payload: int = 1200, header_bytes: int = 12) -> list[Packet]:
    """Split a frame into MTU-sized packets; payload bytes sum to the frame."""
    total_bytes = int(math.ceil(frame.size_bits / 8.0))
    n = max(1, int(math.ceil(total_bytes / mtu_payload)))
    cls = VIDEO_S1 if frame.stream_id == STREAM_1 else VIDEO_S2
    packets = []
    remaining = total_bytes
    for seq in range(n):
        payload = min(mtu_payload, remaining)
        remaining -= payload
        packets.append(Packet(
            pkt_id=first_pkt_id + seq, frame_id=frame.frame_id,
            stream_id=frame.stream_id, seq_in_frame=seq,
            size_bytes=payload + header_bytes, priority_class=cls,
            last_in_frame=(seq == n - 1), frame=frame))
    return packets


def reassembled_bytes(packets: list[Packet], header_bytes: int = 12) -> int:
    return sum(p.size_bytes - header_bytes for p in packets)


TRACE_HEADER = ["frame_idx", "satd_base", "sad_next", "scene_cut"]


def save_trace_csv(trace: ContentTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for i, f in enumerate(trace.frames):
            writer.writerow([i, f"{f.satd_base:.6f}", f"{f.sad_next:.6f}", int(f.scene_cut)])


def load_trace_csv(path: str | Path, fps: float = 30.0,
                   profile_name: str = "street") -> ContentTrace:
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty trace file")
        if [h.strip() for h in header] != TRACE_HEADER:
            raise ParseError(f"{path}: line 1: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                frames.append(ContentFrame(float(row[1]), float(row[2]), bool(int(row[3]))))
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return ContentTrace(fps_native=fps, frames=frames, profile_name=profile_name)
