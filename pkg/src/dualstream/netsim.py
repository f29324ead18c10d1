"""Trace-driven bottleneck link.

Bandwidth follows a piecewise-constant trace (zero-order hold); packets are
serialized FIFO through a drop-tail queue sized in milliseconds of current
bandwidth, then delivered after a fixed propagation delay. Loss is Bernoulli
per packet from a seeded generator, so runs replay bit-identically.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .media import Packet


@dataclass(frozen=True)
class BwSample:
    t_ms: float
    bw_bps: float
    loss_rate: float = 0.0
    prop_delay_ms: float = 10.0


@dataclass
class BandwidthTrace:
    samples: list[BwSample]
    name: str = "trace"

    def __post_init__(self):
        if not self.samples:
            raise ConfigError("bandwidth trace needs at least one sample")
        last = -math.inf
        for s in self.samples:
            if s.t_ms <= last:
                raise ConfigError(f"trace {self.name}: sample times must strictly increase")
            if s.bw_bps <= 0:
                raise ConfigError(f"trace {self.name}: bandwidth must be positive")
            if not 0.0 <= s.loss_rate <= 0.5:
                raise ConfigError(f"trace {self.name}: loss_rate must be within [0, 0.5]")
            last = s.t_ms
        self._times = [s.t_ms for s in self.samples]

    def at(self, t_ms: float) -> BwSample:
        i = bisect_right(self._times, t_ms) - 1
        return self.samples[max(0, i)]

    def mean_bw(self) -> float:
        return float(np.mean([s.bw_bps for s in self.samples]))

    def std_bw(self) -> float:
        return float(np.std([s.bw_bps for s in self.samples]))


def load_trace(path: str | Path, default_prop_ms: float = 10.0,
               default_loss: float = 0.0) -> BandwidthTrace:
    """Parse ``t_ms,bw_kbps[,loss_rate,prop_ms]`` rows; a header line is
    skipped when present. Bandwidth is stored in bps."""
    samples = []
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                t = float(row[0])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"{path}: line {lineno}: non-numeric time {row[0]!r}")
            try:
                bw_kbps = float(row[1])
                loss = float(row[2]) if len(row) > 2 and row[2] != "" else default_loss
                prop = float(row[3]) if len(row) > 3 and row[3] != "" else default_prop_ms
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            samples.append(BwSample(t, bw_kbps * 1000.0, loss, prop))
    if not samples:
        raise ParseError(f"{path}: no samples")
    try:
        return BandwidthTrace(samples, name=path.stem)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_trace(trace: BandwidthTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "bw_kbps", "loss_rate", "prop_ms"])
        for s in trace.samples:
            writer.writerow([f"{s.t_ms:.1f}", f"{s.bw_bps / 1000.0:.3f}",
                             f"{s.loss_rate:.6f}", f"{s.prop_delay_ms:.3f}"])


def fixed_trace(target_bitrate_bps: float, factor: float = 1.1,
                duration_s: float = 600.0, prop_delay_ms: float = 10.0,
                loss_rate: float = 0.0) -> BandwidthTrace:
    """Constant-bandwidth trace pinned to a multiple of the video bitrate."""
    bw = factor * target_bitrate_bps
    return BandwidthTrace([BwSample(0.0, bw, loss_rate, prop_delay_ms)],
                          name=f"fixed_{bw / 1e6:.2f}mbps")


# mean/std envelopes (Mbps) the synthetic cellular/wifi traces are shaped to
SYNTH_ENVELOPES = {
    "5g": (2.23, 1.41),
    "4g": (1.83, 0.53),
    "wifi": (1.18, 0.20),
}


def synth_trace(kind: str, duration_s: float = 600.0, seed: int = 1,
                step_ms: float = 1000.0, prop_delay_ms: float = 10.0,
                loss_rate: float = 0.005) -> BandwidthTrace:
    """Lognormal AR(1) bandwidth series rescaled to the target mean/std."""
    if kind not in SYNTH_ENVELOPES:
        raise ConfigError(f"unknown trace kind {kind!r}, expected one of {sorted(SYNTH_ENVELOPES)}")
    mean_mbps, std_mbps = SYNTH_ENVELOPES[kind]
    kind_tag = sorted(SYNTH_ENVELOPES).index(kind)
    rng = np.random.default_rng([seed, 0x7A, kind_tag])
    n = max(2, int(duration_s * 1000.0 / step_ms))
    phi = 0.97
    sigma2 = math.log(1.0 + (std_mbps / mean_mbps) ** 2)
    innov = rng.normal(0.0, math.sqrt(sigma2 * (1.0 - phi * phi)), size=n)
    level = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = phi * acc + innov[i]
        level[i] = acc
    bw = np.exp(level)
    # two affine passes pin the empirical mean/std despite the positivity floor
    for _ in range(2):
        bw = (bw - bw.mean()) / max(1e-9, bw.std()) * std_mbps + mean_mbps
        bw = np.maximum(bw, 0.15)
    samples = [BwSample(i * step_ms, float(b) * 1e6, loss_rate, prop_delay_ms)
               for i, b in enumerate(bw)]
    return BandwidthTrace(samples, name=kind)


@dataclass
class Arrival:
    pkt: Packet
    ts_arrived: float


class Link:
    """Single FIFO bottleneck: serialization, queue cap, loss, propagation."""

    def __init__(self, trace: BandwidthTrace, seed: int = 1, queue_cap_ms: float = 300.0):
        self.trace = trace
        self.queue_cap_ms = queue_cap_ms
        self.busy_until = 0.0
        self.rng = np.random.default_rng([seed, 0x11])
        self.delivered = 0
        self.lost = 0
        self.dropped = 0

    def advance(self, packets: list[Packet], now: float) -> list[Arrival]:
        """Serialize newly released packets; returns delivery events.

        Packets above the queue cap are tail-dropped; surviving packets may
        still be lost at the configured random loss rate. Both count as loss
        for the receiver.
        """
        arrivals: list[Arrival] = []
        for pkt in packets:
            start = max(now, self.busy_until)
            sample = self.trace.at(start)
            backlog_ms = max(0.0, self.busy_until - now)
            if backlog_ms > self.queue_cap_ms:
                pkt.lost = True
                self.dropped += 1
                arrivals.append(Arrival(pkt, start + sample.prop_delay_ms))
                continue
            tx_ms = pkt.size_bytes * 8.0 / sample.bw_bps * 1000.0
            self.busy_until = start + tx_ms
            if self.rng.random() < sample.loss_rate:
                pkt.lost = True
                self.lost += 1
                arrivals.append(Arrival(pkt, self.busy_until + sample.prop_delay_ms))
                continue
            pkt.ts_arrived = self.busy_until + sample.prop_delay_ms
            self.delivered += 1
            arrivals.append(Arrival(pkt, pkt.ts_arrived))
        return arrivals

    def rtt_probe(self, now: float) -> float:
        """Two-way propagation plus the data-direction drain time; the
        feedback path is modeled congestion-free."""
        sample = self.trace.at(now)
        drain = max(0.0, self.busy_until - now)
        return 2.0 * sample.prop_delay_ms + drain
