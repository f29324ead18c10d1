"""Token-budget pacing queue with strict priority classes.

Packets drain on a fixed tick in class-priority order (audio first, then
retransmissions, stream-2 video, stream-1 video, FEC). The head of the
highest non-empty class blocks everything behind it, which is exactly what
gates stream 1 behind stream 2 during the dual phase. Budget carry-over is
capped at one tick's allowance once the queue is empty so an idle pacer
cannot store up a burst.
"""

from __future__ import annotations

from collections import deque

from .errors import LogicError
from .media import PRIORITY_ORDER, VIDEO_S1, VIDEO_S2, Packet


class PacerQueue:
    def __init__(self, pacing_rate_bps: float, multiplier: float = 1.0,
                 tick_ms: float = 5.0, burst_policy: str = "backlogged"):
        self.pacing_rate = pacing_rate_bps
        self.multiplier = multiplier
        self.tick_ms = tick_ms
        self.burst_policy = burst_policy
        self.queues: dict[str, deque[Packet]] = {cls: deque() for cls in PRIORITY_ORDER}
        self.budget_bytes = 0.0
        self._seen: set[int] = set()
        self.released_count = 0

    def set_rate(self, bps: float) -> None:
        self.pacing_rate = max(1.0, bps)

    def queued_bytes(self, cls: str | None = None) -> int:
        if cls is not None:
            return sum(p.size_bytes for p in self.queues[cls])
        return sum(p.size_bytes for q in self.queues.values() for p in q)

    def queue_depths(self) -> dict[str, int]:
        return {cls: len(q) for cls, q in self.queues.items()}

    def is_empty(self) -> bool:
        return all(not q for q in self.queues.values())

    def enqueue(self, pkt: Packet, now: float) -> None:
        if pkt.pkt_id in self._seen:
            raise LogicError(f"packet {pkt.pkt_id} enqueued twice")
        self._seen.add(pkt.pkt_id)
        pkt.ts_enqueued = now
        self.queues[pkt.priority_class].append(pkt)

    def _base_allowance(self) -> float:
        return self.pacing_rate * self.tick_ms / 1000.0 / 8.0

    def effective_multiplier(self) -> float:
        """Burst multiplier engages only against a real backlog under the
        "backlogged" policy; otherwise it always applies."""
        if self.multiplier <= 1.0 or self.burst_policy == "always":
            return self.multiplier
        return self.multiplier if self.queued_bytes() > self._base_allowance() else 1.0

    def stream1_release_allowed(self) -> bool:
        """Stream 1 is eligible only with no stream-2 backlog and budget left."""
        return not self.queues[VIDEO_S2] and self.budget_bytes > 0.0

    def pace_tick(self, now: float) -> list[Packet]:
        """One pacing interval: accrue budget, release in priority order.

        A head packet larger than the current budget blocks its class and all
        lower ones, so budget accumulates across ticks until it fits.
        """
        allowance = self._base_allowance() * self.effective_multiplier()
        self.budget_bytes += allowance
        released: list[Packet] = []
        for cls in PRIORITY_ORDER:
            queue = self.queues[cls]
            if cls == VIDEO_S1 and queue and not self.stream1_release_allowed():
                break
            while queue:
                head = queue[0]
                if head.size_bytes > self.budget_bytes:
                    break
                queue.popleft()
                self.budget_bytes -= head.size_bytes
                head.ts_sent = now
                released.append(head)
            if queue:
                break  # strict priority: a blocked class blocks everything below
        if self.is_empty():
            self.budget_bytes = min(self.budget_bytes, allowance)
        self.released_count += len(released)
        return released
