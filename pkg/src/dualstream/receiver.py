"""Receiver side: frame reassembly, jitter buffer, render timing, delay books.

Every rendered frame carries a delay breakdown whose components sum exactly
to the capture-to-playback time: encode, pacer wait, transmission (first
packet out of the pacer to last packet in), jitter-buffer wait, decode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DomainError
from .media import DELTA, KEY, STREAM_1, STREAM_2, EncodedFrame, Packet


@dataclass
class DelayBreakdown:
    d_encode: float
    d_pacer: float
    d_trans: float
    d_jitter: float
    d_decode: float
    d_other: float = 0.0

    def __post_init__(self):
        parts = (self.d_encode, self.d_pacer, self.d_trans, self.d_jitter,
                 self.d_decode, self.d_other)
        if any(p < -1e-9 for p in parts):
            raise DomainError(f"negative delay component: {parts}")

    @property
    def d_e2e(self) -> float:
        return (self.d_encode + self.d_pacer + self.d_trans + self.d_jitter
                + self.d_decode + self.d_other)


@dataclass
class FrameArrival:
    frame: EncodedFrame
    first_sent: float
    last_arrival: float
    first_enqueued: float
    first_pkt_sent: float

    @property
    def d_trans(self) -> float:
        return self.last_arrival - self.first_sent

    @property
    def d_pacer(self) -> float:
        return self.first_pkt_sent - self.first_enqueued


class FrameAssembler:
    """Collects packets per (stream, frame); reports completions and frames
    rendered undecodable by packet loss."""

    def __init__(self):
        self._open: dict[tuple[int, int], dict] = {}
        self.undecodable: list[EncodedFrame] = []

    def _slot(self, pkt: Packet) -> dict:
        key = (pkt.stream_id, pkt.frame_id)
        if key not in self._open:
            self._open[key] = {"got": set(), "total": None, "first_sent": None,
                               "first_enqueued": None, "first_pkt_sent": None,
                               "last_arrival": -1.0, "dead": False}
        return self._open[key]

    def on_packet_arrival(self, pkt: Packet) -> FrameArrival | None:
        slot = self._slot(pkt)
        if pkt.seq_in_frame == 0:
            slot["first_sent"] = pkt.ts_sent
            slot["first_enqueued"] = pkt.ts_enqueued
            slot["first_pkt_sent"] = pkt.ts_sent
        slot["got"].add(pkt.seq_in_frame)
        slot["last_arrival"] = max(slot["last_arrival"], pkt.ts_arrived)
        if pkt.last_in_frame:
            slot["total"] = pkt.seq_in_frame + 1
        if slot["dead"] or slot["total"] is None or len(slot["got"]) < slot["total"]:
            return None
        del self._open[(pkt.stream_id, pkt.frame_id)]
        return FrameArrival(frame=pkt.frame, first_sent=slot["first_sent"],
                            last_arrival=slot["last_arrival"],
                            first_enqueued=slot["first_enqueued"],
                            first_pkt_sent=slot["first_pkt_sent"])

    def on_packet_lost(self, pkt: Packet) -> None:
        slot = self._slot(pkt)
        if not slot["dead"]:
            slot["dead"] = True
            if pkt.frame is not None:
                self.undecodable.append(pkt.frame)


@dataclass
class JitterBufferState:
    target_wait: float = 0.0
    delay_var_ewma: float = 0.0
    min_wait: float = 0.0


class JitterBuffer:
    """EWMA-of-deviation playout delay: the buffer waits ``min_wait`` plus a
    multiple of the smoothed inter-completion jitter, clamped to a cap."""

    def __init__(self, weight: float = 0.05, sigma_mult: float = 3.0,
                 min_wait_ms: float = 0.0, max_wait_ms: float = 500.0):
        self.weight = weight
        self.sigma_mult = sigma_mult
        self.max_wait = max_wait_ms
        self.state = JitterBufferState(min_wait=min_wait_ms, target_wait=min_wait_ms)
        self._last_completion: float | None = None

    def jitter_update(self, completion_ts: float, expected_interval_ms: float) -> JitterBufferState:
        st = self.state
        if self._last_completion is not None:
            observed = completion_ts - self._last_completion
            deviation = abs(observed - expected_interval_ms)
            st.delay_var_ewma = (1.0 - self.weight) * st.delay_var_ewma + self.weight * deviation
        self._last_completion = completion_ts
        st.target_wait = min(self.max_wait,
                             max(0.0, st.min_wait + self.sigma_mult * st.delay_var_ewma))
        return st


@dataclass
class RenderedFrame:
    capture_ts: float
    stream_id: int
    frame_type: str
    render_ts: float
    breakdown: DelayBreakdown
    qp_index: int
    degraded: bool
    psnr_db: float


class ReceiverState:
    """Decode bookkeeping: per-stream reference-chain degradation and the
    QP-derived clarity proxy."""

    def __init__(self, decode_key_ms: float = 5.0, decode_delta_ms: float = 3.0,
                 psnr_base_db: float = 50.0, psnr_per_qp: float = 0.89,
                 loss_penalty_db: float = 3.0):
        self.decode_key_ms = decode_key_ms
        self.decode_delta_ms = decode_delta_ms
        self.psnr_base_db = psnr_base_db
        self.psnr_per_qp = psnr_per_qp
        self.loss_penalty_db = loss_penalty_db
        self.degraded: dict[int, bool] = {STREAM_1: False, STREAM_2: False}

    def decode_delay(self, frame_type: str) -> float:
        return self.decode_key_ms if frame_type == KEY else self.decode_delta_ms

    def on_undecodable(self, frame: EncodedFrame) -> None:
        # a broken stream-1 reference poisons the chain until the next key;
        # stream-2 breakage only drops that frame (the stream is short-lived)
        if frame.stream_id == STREAM_1:
            self.degraded[STREAM_1] = True

    def on_decodable(self, frame: EncodedFrame) -> None:
        if frame.stream_id == STREAM_1 and frame.frame_type == KEY:
            self.degraded[STREAM_1] = False

    def is_degraded(self, stream_id: int) -> bool:
        return self.degraded.get(stream_id, False)

    def psnr_for(self, qp_index: int, degraded: bool) -> float:
        psnr = self.psnr_base_db - self.psnr_per_qp * qp_index
        if degraded:
            psnr -= self.loss_penalty_db
        return psnr


def render(arrival: FrameArrival, now: float, jb: JitterBuffer,
           receiver: ReceiverState, degraded: bool) -> RenderedFrame:
    """Assemble the delay breakdown for a frame rendering at ``now``.

    ``now`` must already include the jitter wait and decode time after the
    frame's completion; the jitter component is the realized wait.
    """
    frame = arrival.frame
    d_decode = receiver.decode_delay(frame.frame_type)
    d_encode = frame.encode_done_ts - frame.capture_ts
    d_pacer = arrival.d_pacer
    d_trans = arrival.d_trans
    d_jitter = now - d_decode - arrival.last_arrival
    if d_jitter < 0 and d_jitter > -1e-9:
        d_jitter = 0.0
    breakdown = DelayBreakdown(d_encode=d_encode, d_pacer=d_pacer,
                               d_trans=d_trans, d_jitter=d_jitter, d_decode=d_decode)
    return RenderedFrame(capture_ts=frame.capture_ts, stream_id=frame.stream_id,
                         frame_type=frame.frame_type, render_ts=now,
                         breakdown=breakdown, qp_index=frame.qp_index,
                         degraded=degraded,
                         psnr_db=receiver.psnr_for(frame.qp_index, degraded))


class FpsWindow:
    """Rendered-frame counts on fixed one-second windows of the render
    timeline; a window below the stall threshold flags its frames stalled."""

    def __init__(self, stall_fps: float = 12.0):
        self.stall_fps = stall_fps
        self.counts: dict[int, int] = {}

    def add(self, render_ts: float) -> int:
        w = int(render_ts // 1000.0)
        self.counts[w] = self.counts.get(w, 0) + 1
        return w

    def fps_at(self, now_ms: float) -> float:
        """Trailing-second rendered FPS at an arbitrary time."""
        w = int(now_ms // 1000.0)
        return float(self.counts.get(w - 1, 0))

    def stalled_windows(self, duration_s: float) -> list[int]:
        total = int(duration_s)
        return [w for w in range(total) if self.counts.get(w, 0) < self.stall_fps]

    def stall_rate(self, duration_s: float) -> float:
        total = max(1, int(duration_s))
        return len(self.stalled_windows(duration_s)) / total
