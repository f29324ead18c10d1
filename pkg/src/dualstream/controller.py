"""Dual-stream state machine.

The second stream exists only between a keyframe being encoded on stream 1
and stream 1's delta sizes settling back near their running average (or the
hard duration cap). While dual, stream 1 skips captures whenever its previous
frame is still in flight; stream 2 encodes every capture to keep playback
continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .allocator import Allocation
from .errors import LogicError
from .media import DELTA, KEY, STREAM_1, STREAM_2

SINGLE = "SINGLE"
DUAL = "DUAL"


@dataclass
class EncodeDirective:
    stream_id: int
    frame_type: str


@dataclass
class DualStreamState:
    phase: str = SINGLE
    activation_ts: float = -1.0
    keyframe_size_r1: float = 0.0
    encoded_bits_so_far: float = 0.0
    s1_busy_until: float = -1.0
    avg_delta_size: float = 0.0
    avg_last_ts: float = -1.0
    skip_count: int = 0
    activation_id: int = 0
    s1_deltas_since_activation: int = 0


class DualStreamController:
    """Owns the SINGLE/DUAL transitions for one simulator instance."""

    def __init__(self, theta: float = 1.2, eta: float = 5.0, f_k: float = 0.1,
                 avg_half_life_s: float = 2.0, event_sink=None):
        self.theta = theta
        self.eta = eta
        self.f_k = f_k
        self.avg_half_life_ms = avg_half_life_s * 1000.0
        self.state = DualStreamState()
        self._events = event_sink if event_sink is not None else []
        self._s1_latest_frame = -1

    @property
    def t_max_s(self) -> float:
        return 1.0 / (self.eta * self.f_k)

    def _log(self, ts: float, event: str, value: float = 0.0) -> None:
        self._events.append((ts, event, value))

    def on_frame_captured(self, now: float, want_key: bool,
                          allocation: Allocation | None = None) -> list[EncodeDirective]:
        """Directives for one capture tick.

        SINGLE with a keyframe due activates the dual phase: the keyframe on
        stream 1 and a synchronous delta on stream 2. While DUAL, stream 2
        always encodes; stream 1 only when its previous frame finished
        transmitting, otherwise the capture is skipped for stream 1.
        """
        st = self.state
        if st.phase == SINGLE:
            if want_key:
                st.phase = DUAL
                st.activation_ts = now
                st.activation_id += 1
                st.encoded_bits_so_far = 0.0
                st.keyframe_size_r1 = 0.0
                st.skip_count = 0
                st.s1_deltas_since_activation = 0
                self._log(now, "dual_activate")
                return [EncodeDirective(STREAM_1, KEY), EncodeDirective(STREAM_2, DELTA)]
            return [EncodeDirective(STREAM_1, DELTA)]

        # a scene-forced keyframe while DUAL restarts the phase with the new key
        if want_key:
            self.deactivate(now, reason="restart")
            return self.on_frame_captured(now, want_key=True, allocation=allocation)

        directives = [EncodeDirective(STREAM_2, DELTA)]
        if now >= st.s1_busy_until:
            directives.append(EncodeDirective(STREAM_1, DELTA))
        else:
            st.skip_count += 1
            self._log(now, "s1_skip", st.skip_count)
        return directives

    def abort_dual(self, now: float) -> None:
        """Infeasible allocation: fall back to single-stream for this key."""
        if self.state.phase != DUAL:
            raise LogicError("abort_dual outside DUAL")
        self.state.phase = SINGLE
        self._log(now, "dual_abort")

    def on_s1_encoded(self, frame_size_bits: float, frame_type: str, now: float) -> None:
        st = self.state
        if st.phase == DUAL:
            st.encoded_bits_so_far += frame_size_bits
            if frame_type == KEY:
                st.keyframe_size_r1 = frame_size_bits
            else:
                st.s1_deltas_since_activation += 1

    def on_s1_sent(self, frame_id: int, now: float) -> None:
        """A stream-1 frame finished leaving the pacer; only the newest one
        clears the busy gate (older frames may still drain behind a key)."""
        if frame_id == self._s1_latest_frame:
            self.state.s1_busy_until = now

    def mark_s1_busy(self, frame_id: int, until: float) -> None:
        self._s1_latest_frame = frame_id
        self.state.s1_busy_until = max(self.state.s1_busy_until, until)

    def update_avg_delta(self, size_bits: float, now: float) -> None:
        """Time-decayed EWMA of stream-1 delta sizes (half-life in config)."""
        st = self.state
        if st.avg_last_ts < 0 or st.avg_delta_size <= 0:
            st.avg_delta_size = size_bits
        else:
            dt = max(0.0, now - st.avg_last_ts)
            decay = 0.5 ** (dt / self.avg_half_life_ms)
            st.avg_delta_size = decay * st.avg_delta_size + (1.0 - decay) * size_bits
        st.avg_last_ts = now

    def should_deactivate(self, latest_s1_delta_size: float, now: float) -> bool:
        """Dual phase ends when the newest stream-1 delta is close to the
        running average, or the hard duration cap is reached."""
        st = self.state
        if st.phase != DUAL:
            raise LogicError("should_deactivate outside DUAL")
        if st.s1_deltas_since_activation < 1:
            raise LogicError("should_deactivate before any stream-1 delta")
        if st.avg_delta_size > 0 and latest_s1_delta_size <= self.theta * st.avg_delta_size:
            return True
        elapsed_s = (now - st.activation_ts) / 1000.0
        return elapsed_s >= self.t_max_s - 1e-9

    def deactivate(self, now: float, reason: str = "size") -> None:
        if self.state.phase != DUAL:
            raise LogicError("deactivate outside DUAL")
        self.state.phase = SINGLE
        self._log(now, f"dual_deactivate_{reason}")

    def cap_expired(self, now: float, activation_id: int) -> bool:
        """True when the scheduled hard-cap event still refers to the live
        activation (stale events for older activations are ignored)."""
        st = self.state
        return st.phase == DUAL and st.activation_id == activation_id


@dataclass
class RenderDecision:
    render: bool
    reason: str


class PlaybackSelector:
    """First-complete-first-rendered across the two streams.

    Exactly one copy renders per capture timestamp; simultaneous completions
    prefer stream 2. Stream-1 frames always feed the reference chain even
    when their display copy is discarded.
    """

    def __init__(self):
        self.rendered_captures: set[float] = set()
        self.last_rendered_capture: float = -math.inf

    def on_playback(self, capture_ts: float, stream_id: int,
                    competing_stream2: bool = False) -> RenderDecision:
        """Decide whether a decodable frame completion renders.

        ``competing_stream2`` marks a stream-1 completion that ties with a
        stream-2 copy of the same capture at the same tick.
        """
        if capture_ts in self.rendered_captures:
            return RenderDecision(False, "duplicate_capture")
        if stream_id == STREAM_1 and competing_stream2:
            return RenderDecision(False, "tie_prefers_stream2")
        if capture_ts <= self.last_rendered_capture:
            return RenderDecision(False, "late")
        self.rendered_captures.add(capture_ts)
        self.last_rendered_capture = capture_ts
        return RenderDecision(True, "first_complete")
