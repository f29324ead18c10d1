"""Deterministic event-loop simulation of one streaming session.

Single priority-queue clock in milliseconds. Captures arrive on the frame
grid, the pacer ticks every 5 ms, the link delivers, the receiver renders,
and the rate controller decides every 100 ms. All randomness comes from
generators spawned off the run seed, so identical configs replay exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import Allocation, AllocatorInputs, allocate, reallocate
from .config import PROFILES, ExperimentConfig
from .controller import DUAL, SINGLE, DualStreamController, PlaybackSelector
from .encoder import (RQModel, SadCubicModel, StreamEncoder, build_quant_table,
                      fit_sad_cubic, predict_complexity_linear, rq_refit)
from .errors import ConfigError
from .media import (DELTA, KEY, STREAM_1, STREAM_2, ContentTrace, EncodedFrame,
                    Packet, packetize, sad_at_gap)
from .netsim import BandwidthTrace, Link, fixed_trace, load_trace
from .pacer import PacerQueue
from .ratecontrol import (GccController, PlaybackMetrics, PolicyNet,
                          PolicyStateBuilder, policy_forward, reward)
from .receiver import (FpsWindow, FrameAssembler, JitterBuffer, ReceiverState,
                       render)

# event priorities at equal timestamps: stream-2 renders win ties by design
PRIO_RENDER_S2 = 0
PRIO_RENDER_S1 = 1
PRIO_ARRIVAL = 2
PRIO_CAPTURE = 3
PRIO_ENCODE_DONE = 4
PRIO_DUAL_CAP = 5
PRIO_DECISION = 6
PRIO_PACER = 7


@dataclass
class TrajectoryStep:
    state: np.ndarray
    action: int
    prob: float
    reward: float = 0.0


@dataclass
class RunResult:
    frame_rows: list[dict]
    event_rows: list[tuple]
    alloc_rows: list[dict]
    summary: dict
    trajectory: list[TrajectoryStep] = field(default_factory=list)
    decision_log: list[dict] = field(default_factory=list)


class Simulation:
    def __init__(self, cfg: ExperimentConfig, content: ContentTrace,
                 bw_trace: BandwidthTrace, policy_net: PolicyNet | None = None,
                 train_mode: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.content = content
        self.bw_trace = bw_trace
        self.policy_net = policy_net
        self.train_mode = train_mode
        if cfg.rate.policy == "RL" and policy_net is None:
            raise ConfigError("RL policy requires a policy network")

        self.fps = content.fps_native
        self.frame_interval = 1000.0 / self.fps
        self.duration_ms = cfg.content.duration_s * 1000.0
        self.profile = content.profile()

        seed = cfg.seed
        self.rng_policy = np.random.default_rng([seed, 0x51])
        rng_enc1 = np.random.default_rng([seed, 0x52])
        rng_enc2 = np.random.default_rng([seed, 0x53])
        self.rng_world = np.random.default_rng([seed, 0x54])

        enc_cfg = cfg.encoder
        self.table = build_quant_table(enc_cfg.q_min, enc_cfg.q_steps, enc_cfg.q_octave_steps)
        self.rq = RQModel(alpha1=enc_cfg.alpha1_init, alpha2=enc_cfg.alpha2_init,
                          window=enc_cfg.rq_window, decay=enc_cfg.rq_decay)
        self.cubic = SadCubicModel(beta0=0.0, beta1=3.0)
        self.cubic_samples: list[tuple[float, float]] = []
        self.c_history: list[tuple[float, float]] = []
        self.sad_ewma = self.profile.sad_mean

        self.enc1 = StreamEncoder(STREAM_1, enc_cfg, self.fps, self.profile, self.rq, rng_enc1)
        self.enc2 = StreamEncoder(STREAM_2, enc_cfg, self.fps, self.profile, self.rq, rng_enc2)
        for enc in (self.enc1, self.enc2):
            enc.mode_name = cfg.mode

        self.event_rows: list[tuple] = []
        self.controller = DualStreamController(
            theta=cfg.dual.theta, eta=cfg.dual.eta, f_k=cfg.keyframe_rate_hz,
            avg_half_life_s=cfg.dual.avg_half_life_s, event_sink=self.event_rows)

        mult = 1.0 if cfg.mode == "PDSTREAM" else cfg.pacer.burst_multiplier
        self.pacer = PacerQueue(cfg.rate.fixed_bps, multiplier=mult,
                                tick_ms=cfg.pacer.tick_ms,
                                burst_policy=cfg.pacer.burst_policy)
        self.link = Link(bw_trace, seed=seed, queue_cap_ms=cfg.link.queue_cap_ms)
        self.assembler = FrameAssembler()
        self.jb = JitterBuffer(cfg.jitter.weight, cfg.jitter.sigma_mult,
                               cfg.jitter.min_wait_ms, cfg.jitter.max_wait_ms)
        self.receiver = ReceiverState(enc_cfg.decode_key_ms, enc_cfg.decode_delta_ms,
                                      cfg.analytics.psnr_base_db, cfg.analytics.psnr_per_qp,
                                      cfg.analytics.loss_penalty_db)
        self.selector = PlaybackSelector()
        self.fps_window = FpsWindow(cfg.reward.stall_fps)

        self.gcc = GccController(cfg.rate.b_min, cfg.rate.b_max, cfg.rate.gcc_increase,
                                 cfg.rate.gcc_decrease, cfg.rate.gcc_loss_threshold,
                                 cfg.rate.gcc_loss_factor, cfg.rate.gcc_gradient_threshold,
                                 cfg.rate.gcc_gradient_smoothing)
        self.state_builder = PolicyStateBuilder(cfg.rl, cfg.rate.decision_interval_ms / 1000.0)

        self.target_bps = cfg.rate.fixed_bps
        self.enc1.set_bitrate(self.target_bps)
        self.enc2.set_bitrate(self.target_bps)
        self.pacer.set_rate(self.target_bps)

        self.current_alloc: Allocation | None = None
        self.last_key_ms = -math.inf
        self.last_s1_frame_idx = -1
        self.s2_first_pending = False
        self.pkt_counter = 0
        self.frame_counter = 0
        self.frames_encoded: list[EncodedFrame] = []
        self.frame_rows: list[dict] = []
        self.alloc_rows: list[dict] = []
        self.trajectory: list[TrajectoryStep] = []
        self.decision_log: list[dict] = []
        self.completed_captures: set[float] = set()

        # sliding stats for the controller's view of the network
        self._arrived_bits: list[tuple[float, float]] = []
        self._sent_bits: list[tuple[float, float]] = []
        self._loss_events: list[tuple[float, int]] = []  # (ts, lost?)
        self._rendered_recent: list[dict] = []
        self._rtt_samples: list[float] = []
        self._last_qp = 26.0
        self._last_delay_ms = 0.0

        self._events: list = []
        self._seq = 0

    # ------------------------------------------------------------------ utils

    def _push(self, t: float, prio: int, kind: str, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._events, (t, prio, self._seq, kind, payload))

    def _log(self, ts: float, event: str, value: float = 0.0) -> None:
        self.event_rows.append((ts, event, value))

    def _predict_c(self, fallback: float | None = None) -> float:
        if not self.c_history:
            return fallback if fallback is not None else self.profile.sad_mean * 3.0
        value, _ = predict_complexity_linear(self.c_history[-12:])
        return value

    def _true_delta_complexity(self, idx: int, gap: int) -> float:
        if gap <= 1:
            return self.content.frames[idx].satd_base
        sad = sad_at_gap(self.content, idx, gap)
        b0, b1, b2, b3 = self.profile.cubic_true
        noise = math.exp(self.rng_world.normal(0.0, self.profile.satd_noise_sigma))
        return (b0 + b1 * sad + b2 * sad ** 2 + b3 * sad ** 3) * noise

    def _want_key(self, idx: int, now: float) -> bool:
        frame = self.content.frames[idx]
        if idx == 0:
            return True
        if self.cfg.mode == "KEY_MIN":
            return bool(frame.scene_cut)
        return now - self.last_key_ms >= self.cfg.encoder.keyframe_period_s * 1000.0 - 1e-6

    # -------------------------------------------------------------- encoding

    def _encode(self, stream_id: int, idx: int, now: float, want_key: bool,
                gap: int, target_q: float | None = None) -> EncodedFrame:
        content = self.content.frames[idx]
        enc = self.enc1 if stream_id == STREAM_1 else self.enc2
        c_delta_true = self._true_delta_complexity(idx, gap)
        c_eff = self.cfg.encoder.kappa * content.satd_base if want_key else c_delta_true
        c_pred = self._predict_c()
        target_bits = None
        strict = False
        if target_q is None:
            if self.cfg.mode == "CBR_S":
                target_bits = self.target_bps / self.fps
                strict = True
            else:
                backlog = 8.0 * self.pacer.queued_bytes()
                target_bits = enc.frame_target_bits(now, backlog_bits=backlog)
        frame = enc.encode(self.frame_counter, content, now, want_key=want_key,
                           c_eff_true=c_eff, c_pred=c_pred, target_bits=target_bits,
                           target_q=target_q, strict=strict, gap=gap)
        self.frame_counter += 1
        self.frames_encoded.append(frame)
        if stream_id == STREAM_2:
            # dual-phase bits count against stream 1's shared window budget
            self.enc1.note_external_bits(now, frame.size_bits)
        rq_refit(self.rq, (frame.quant_step, c_eff, frame.size_bits))
        if not want_key and gap == 1 and stream_id == STREAM_1:
            self.c_history.append((idx, c_delta_true))
            if len(self.c_history) > 64:
                self.c_history = self.c_history[-64:]
            self.cubic_samples.append((self.content.frames[idx - 1].sad_next if idx > 0
                                       else self.profile.sad_mean, c_delta_true))
        if len(self.cubic_samples) >= 8 and (
                len(self.cubic_samples) % self.cfg.encoder.sad_refit_interval == 8 % self.cfg.encoder.sad_refit_interval
                or len(self.cubic_samples) == 8):
            self.cubic = fit_sad_cubic(self.cubic_samples[-2000:])
        self._push(frame.encode_done_ts, PRIO_ENCODE_DONE, "encode_done", frame)
        return frame

    def _allocator_inputs(self, b: float, R1: float, q1: float) -> AllocatorInputs:
        c_bar = self._predict_c()
        return AllocatorInputs(
            b=b, f=self.fps, f_k=self.cfg.keyframe_rate_hz, R1=R1, q1=q1,
            c_bar=c_bar, c1_dprime=c_bar, sad_base=self.sad_ewma,
            sad_ceiling=self.content.scene_cut_level(), gap_rho=self.cfg.content.gap_rho,
            rq=self.rq, sad_cubic=self.cubic, quant_table=self.table,
            eta=self.cfg.dual.eta)

    def _log_alloc(self, now: float, alloc: Allocation, b: float, R1: float) -> None:
        self.alloc_rows.append({
            "ts": now, "b": b, "R1": R1, "f_prime": alloc.f_prime, "T": alloc.T,
            "q_bar_prime": alloc.q_bar_prime, "b_prime": alloc.b_prime,
            "b_dprime": alloc.b_dprime, "delta_q": alloc.delta_q,
            "scaled": int(alloc.scaled), "delta_q_index": alloc.delta_q_index})

    # ---------------------------------------------------------------- events

    def _on_capture(self, idx: int, now: float) -> None:
        frame = self.content.frames[idx]
        self.sad_ewma = 0.98 * self.sad_ewma + 0.02 * frame.sad_next
        want_key = self._want_key(idx, now)

        if self.cfg.mode != "PDSTREAM":
            if want_key:
                self.last_key_ms = now
            gap = idx - self.last_s1_frame_idx if self.last_s1_frame_idx >= 0 else 1
            self._encode(STREAM_1, idx, now, want_key, max(1, gap))
            self.last_s1_frame_idx = idx
            return

        directives = self.controller.on_frame_captured(now, want_key,
                                                       self.current_alloc)
        key_frame: EncodedFrame | None = None
        for d in directives:
            if d.stream_id == STREAM_1:
                gap = idx - self.last_s1_frame_idx if self.last_s1_frame_idx >= 0 else 1
                gap = max(1, gap)
                if d.frame_type == KEY:
                    self.last_key_ms = now
                    key_frame = self._encode(STREAM_1, idx, now, True, gap)
                    self.controller.on_s1_encoded(key_frame.size_bits, KEY, now)
                else:
                    target_q = (self.current_alloc.q_bar_prime
                                if (self.controller.state.phase == DUAL and self.current_alloc)
                                else None)
                    f = self._encode(STREAM_1, idx, now, False, gap, target_q=target_q)
                    self.controller.on_s1_encoded(f.size_bits, DELTA, now)
                    if self.controller.state.phase == DUAL:
                        if self.controller.should_deactivate(f.size_bits, now):
                            self.controller.deactivate(now)
                    else:
                        self.controller.update_avg_delta(f.size_bits, now)
                    if self.controller.state.phase == SINGLE and f.gap <= 2:
                        self.controller.update_avg_delta(f.size_bits, now)
                self.last_s1_frame_idx = idx

        if key_frame is not None:
            inputs = self._allocator_inputs(self.target_bps, key_frame.size_bits,
                                            key_frame.quant_step)
            alloc = allocate(inputs)
            self._log_alloc(now, alloc, self.target_bps, key_frame.size_bits)
            if alloc.feasible:
                self.current_alloc = alloc
                self.s2_first_pending = True
                self._push(now + self.controller.t_max_s * 1000.0, PRIO_DUAL_CAP,
                           "dual_cap", self.controller.state.activation_id)
            else:
                self.controller.abort_dual(now)
                self.current_alloc = None

        if self.controller.state.phase == DUAL:
            for d in directives:
                if d.stream_id == STREAM_2 and self.current_alloc is not None:
                    if self.s2_first_pending:
                        target_q = self.current_alloc.q_bar_prime if key_frame is None else key_frame.quant_step
                        self.s2_first_pending = False
                    else:
                        target_q = self.current_alloc.q_bar_prime
                    self._encode(STREAM_2, idx, now, False, 1, target_q=target_q)

    def _on_encode_done(self, frame: EncodedFrame, now: float) -> None:
        pkts = packetize(frame, self.pkt_counter, self.cfg.pacer.mtu_payload,
                         self.cfg.pacer.header_bytes)
        self.pkt_counter += len(pkts)
        for p in pkts:
            self.pacer.enqueue(p, now)
        if frame.stream_id == STREAM_1:
            self.controller.mark_s1_busy(frame.frame_id, math.inf)

    def _on_pacer_tick(self, now: float) -> None:
        released = self.pacer.pace_tick(now)
        for p in released:
            self._sent_bits.append((now, p.size_bytes * 8.0))
            if p.stream_id == STREAM_1 and p.last_in_frame:
                self.controller.on_s1_sent(p.frame_id, now)
        if released:
            for arrival in self.link.advance(released, now):
                self._push(arrival.ts_arrived, PRIO_ARRIVAL, "arrival", arrival.pkt)
        nxt = now + self.cfg.pacer.tick_ms
        if nxt <= self.duration_ms + 2000.0:
            self._push(nxt, PRIO_PACER, "pacer_tick", None)

    def _on_arrival(self, pkt: Packet, now: float) -> None:
        self._loss_events.append((now, 1 if pkt.lost else 0))
        if pkt.lost:
            before = len(self.assembler.undecodable)
            self.assembler.on_packet_lost(pkt)
            if len(self.assembler.undecodable) > before:
                self.receiver.on_undecodable(pkt.frame)
                self._log(now, "frame_undecodable", pkt.frame_id)
            return
        self._arrived_bits.append((now, pkt.size_bytes * 8.0))
        arrival = self.assembler.on_packet_arrival(pkt)
        if arrival is None:
            return
        frame = arrival.frame
        self.receiver.on_decodable(frame)
        if frame.capture_ts not in self.completed_captures:
            self.completed_captures.add(frame.capture_ts)
            self.jb.jitter_update(arrival.last_arrival, self.frame_interval)
        wait = self.jb.state.target_wait
        render_ts = arrival.last_arrival + wait + self.receiver.decode_delay(frame.frame_type)
        prio = PRIO_RENDER_S2 if frame.stream_id == STREAM_2 else PRIO_RENDER_S1
        self._push(render_ts, prio, "render", arrival)

    def _on_render(self, arrival, now: float) -> None:
        frame = arrival.frame
        decision = self.selector.on_playback(frame.capture_ts, frame.stream_id)
        if not decision.render:
            return
        degraded = (frame.stream_id == STREAM_1
                    and self.receiver.is_degraded(STREAM_1)
                    and frame.frame_type != KEY)
        rendered = render(arrival, now, self.jb, self.receiver, degraded)
        self.fps_window.add(now)
        bd = rendered.breakdown
        self._last_qp = frame.qp_index
        self._last_delay_ms = bd.d_e2e
        row = {"capture_ts": frame.capture_ts, "stream_id": frame.stream_id,
               "frame_type": frame.frame_type, "d_encode": bd.d_encode,
               "d_pacer": bd.d_pacer, "d_trans": bd.d_trans,
               "d_jitter": bd.d_jitter, "d_decode": bd.d_decode,
               "d_e2e": bd.d_e2e, "rendered": 1, "stalled": 0,
               "render_ts": now, "qp_index": frame.qp_index,
               "psnr_db": rendered.psnr_db, "frame_id": frame.frame_id}
        self.frame_rows.append(row)
        self._rendered_recent.append(row)

    def _window_sum(self, series: list[tuple[float, float]], now: float,
                    span_ms: float) -> float:
        while series and series[0][0] < now - span_ms:
            series.pop(0)
        return sum(v for _, v in series)

    def _decision_metrics(self, now: float) -> dict:
        span = self.cfg.rate.decision_interval_ms
        thr = self._window_sum(self._arrived_bits, now, span) / (span / 1000.0)
        while self._loss_events and self._loss_events[0][0] < now - 1000.0:
            self._loss_events.pop(0)
        total = len(self._loss_events)
        lost = sum(l for _, l in self._loss_events)
        loss_frac = lost / total if total else 0.0
        rtt = self.link.rtt_probe(now)
        self._rtt_samples.append(rtt)
        recent = [r for r in self._rendered_recent if r["render_ts"] >= now - span]
        self._rendered_recent = [r for r in self._rendered_recent
                                 if r["render_ts"] >= now - 2000.0]
        fps = self.fps_window.fps_at(now)
        qp = float(np.mean([r["qp_index"] for r in recent])) if recent else self._last_qp
        delay_ms = float(np.mean([r["d_e2e"] for r in recent])) if recent else self._last_delay_ms
        stalled = 1.0 if (now >= 1500.0 and fps < self.cfg.reward.stall_fps) else 0.0
        sent = self._window_sum(self._sent_bits, now, span) / (span / 1000.0)
        st = self.controller.state
        dual_active = 1.0 if st.phase == DUAL else 0.0
        alloc = self.current_alloc
        return {
            "throughput_bps": thr, "loss_frac": loss_frac, "rtt_ms": rtt,
            "d_e2e_ms": delay_ms, "fps": fps, "qp_index": qp,
            "target_bps": self.target_bps, "actual_bps": sent,
            "dual_active": dual_active,
            "s1_frame_bits": st.keyframe_size_r1 if dual_active else 0.0,
            "s2_frame_bits": (self.frames_encoded[-1].size_bits
                              if dual_active and self.frames_encoded
                              and self.frames_encoded[-1].stream_id == STREAM_2 else 0.0),
            "b_prime_bps": alloc.b_prime if (dual_active and alloc) else 0.0,
            "b_dprime_bps": alloc.b_dprime if (dual_active and alloc) else 0.0,
            "stall": stalled, "delay_s": delay_ms / 1000.0,
        }

    def _on_decision(self, now: float) -> None:
        m = self._decision_metrics(now)
        w = self.cfg.reward
        r = reward(PlaybackMetrics(bitrate_bps=self.target_bps, fps=m["fps"],
                                   qp_index=m["qp_index"], delay_s=m["delay_s"],
                                   stall_frac=m["stall"]), w)
        if self.trajectory:
            self.trajectory[-1].reward = r
        self.decision_log.append({"ts": now, "reward": r, **m})

        policy = self.cfg.rate.policy
        new_b = self.target_bps
        if policy == "GCC":
            self.gcc.observe_rtt(m["rtt_ms"], self.cfg.rate.decision_interval_ms / 1000.0)
            new_b = self.gcc.update(self.target_bps, m["loss_frac"])
        elif policy == "RL":
            self.state_builder.push(m)
            vec = self.state_builder.vector()
            probs = policy_forward(vec, self.policy_net)
            if self.train_mode:
                action = int(self.rng_policy.choice(len(probs), p=probs))
            else:
                action = int(np.argmax(probs))
            self.trajectory.append(TrajectoryStep(state=vec, action=action,
                                                  prob=float(probs[action])))
            new_b = float(self.policy_net.grid[action])

        if new_b != self.target_bps:
            self.target_bps = new_b
            self.pacer.set_rate(new_b)
            self.enc1.set_bitrate(new_b)
            self.enc2.set_bitrate(new_b)
            self._log(now, "rate_change", new_b)
            if (self.cfg.mode == "PDSTREAM" and self.controller.state.phase == DUAL
                    and self.current_alloc is not None):
                st = self.controller.state
                elapsed_s = (now - st.activation_ts) / 1000.0
                if st.encoded_bits_so_far > 0 and elapsed_s < self.controller.t_max_s:
                    inputs = self._allocator_inputs(new_b, st.encoded_bits_so_far,
                                                    self.current_alloc.q_bar_prime)
                    alloc = reallocate(inputs, new_b, st.encoded_bits_so_far, elapsed_s)
                    self._log_alloc(now, alloc, new_b, st.encoded_bits_so_far)
                    if alloc.feasible:
                        self.current_alloc = alloc

        nxt = now + self.cfg.rate.decision_interval_ms
        if nxt <= self.duration_ms:
            self._push(nxt, PRIO_DECISION, "decision", None)

    def _on_dual_cap(self, activation_id: int, now: float) -> None:
        if self.controller.cap_expired(now, activation_id):
            self.controller.deactivate(now, reason="cap")

    # ------------------------------------------------------------------- run

    def run(self) -> RunResult:
        n_frames = min(len(self.content), int(self.duration_ms / self.frame_interval))
        for i in range(n_frames):
            self._push(i * self.frame_interval, PRIO_CAPTURE, "capture", i)
        self._push(self.cfg.pacer.tick_ms, PRIO_PACER, "pacer_tick", None)
        self._push(self.cfg.rate.decision_interval_ms, PRIO_DECISION, "decision", None)

        horizon = self.duration_ms + 2000.0  # drain window after the last capture
        while self._events:
            t, prio, _, kind, payload = heapq.heappop(self._events)
            if t > horizon:
                break
            if kind == "capture":
                self._on_capture(payload, t)
            elif kind == "encode_done":
                self._on_encode_done(payload, t)
            elif kind == "pacer_tick":
                self._on_pacer_tick(t)
            elif kind == "arrival":
                self._on_arrival(payload, t)
            elif kind == "render":
                self._on_render(payload, t)
            elif kind == "decision":
                self._on_decision(t)
            elif kind == "dual_cap":
                self._on_dual_cap(payload, t)

        return self._finish()

    def _finish(self) -> RunResult:
        duration_s = self.cfg.content.duration_s
        stalled = set(self.fps_window.stalled_windows(duration_s))
        for row in self.frame_rows:
            row["stalled"] = int(int(row["render_ts"] // 1000.0) in stalled)

        rendered_ids = {r["frame_id"] for r in self.frame_rows}
        for f in self.frames_encoded:
            if f.frame_id not in rendered_ids:
                self.frame_rows.append({
                    "capture_ts": f.capture_ts, "stream_id": f.stream_id,
                    "frame_type": f.frame_type, "d_encode": f.encode_done_ts - f.capture_ts,
                    "d_pacer": 0.0, "d_trans": 0.0, "d_jitter": 0.0, "d_decode": 0.0,
                    "d_e2e": 0.0, "rendered": 0, "stalled": 0, "render_ts": -1.0,
                    "qp_index": f.qp_index, "psnr_db": 0.0, "frame_id": f.frame_id})
        self.frame_rows.sort(key=lambda r: (r["capture_ts"], r["stream_id"], r["frame_id"]))

        rendered = [r for r in self.frame_rows if r["rendered"]]
        d_e2e = [r["d_e2e"] for r in rendered]
        keys = [f for f in self.frames_encoded if f.frame_type == KEY]
        deltas = [f for f in self.frames_encoded if f.frame_type == DELTA]
        summary = {
            "frames_encoded": len(self.frames_encoded),
            "frames_rendered": len(rendered),
            "fps": len(rendered) / duration_s,
            "stall_rate_pct": 100.0 * self.fps_window.stall_rate(duration_s),
            "d_trans_ms": float(np.mean([r["d_trans"] for r in rendered])) if rendered else 0.0,
            "d_pacer_ms": float(np.mean([r["d_pacer"] for r in rendered])) if rendered else 0.0,
            "d_jitter_ms": float(np.mean([r["d_jitter"] for r in rendered])) if rendered else 0.0,
            "d_e2e_mean_ms": float(np.mean(d_e2e)) if d_e2e else 0.0,
            "rtt_ms": float(np.mean(self._rtt_samples)) if self._rtt_samples else 0.0,
            "loss_pct": 100.0 * (self.link.lost + self.link.dropped)
                        / max(1, self.link.delivered + self.link.lost + self.link.dropped),
            "psnr_db": float(np.mean([r["psnr_db"] for r in rendered])) if rendered else 0.0,
            "mean_key_bits": float(np.mean([f.size_bits for f in keys])) if keys else 0.0,
            "mean_delta_bits": float(np.mean([f.size_bits for f in deltas])) if deltas else 0.0,
            "mean_reward": float(np.mean([d["reward"] for d in self.decision_log]))
                           if self.decision_log else 0.0,
        }
        return RunResult(frame_rows=self.frame_rows, event_rows=list(self.event_rows),
                         alloc_rows=self.alloc_rows, summary=summary,
                         trajectory=self.trajectory, decision_log=self.decision_log)


def build_bw_trace(cfg: ExperimentConfig) -> BandwidthTrace:
    link = cfg.link
    if link.trace_path:
        return load_trace(link.trace_path, default_prop_ms=link.prop_delay_ms,
                          default_loss=link.loss_rate)
    if link.fixed_bw_bps > 0:
        bw = link.fixed_bw_bps
        factor = bw / cfg.rate.fixed_bps
    else:
        factor = link.fixed_bw_factor
        bw = factor * cfg.rate.fixed_bps
    trace = fixed_trace(bw / factor, factor=factor, duration_s=cfg.content.duration_s,
                        prop_delay_ms=link.prop_delay_ms, loss_rate=link.loss_rate)
    return trace
