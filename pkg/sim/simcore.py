"""Deterministic discrete-event core for the cooperative driving simulator.

Time is an integer number of milliseconds since scenario start. Events are
ordered by ``(fire_at, seq)`` where ``seq`` is a per-engine insertion counter,
so two runs that schedule the same events in the same order process them in
the same order. All randomness is drawn from labelled streams forked off a
single master seed.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np

logger = logging.getLogger("sim.simcore")

SimTime = int


class SimulationError(RuntimeError):
    pass


class EventKind(str, Enum):
    FRAME_EMIT = "frame-emit"
    FRAME_READY = "frame-ready"
    MESSAGE_ARRIVAL = "message-arrival"
    FUSION_TICK = "fusion-tick"
    AGENT_STEP = "agent-step"
    FAILOVER_CHECK = "failover-check"
    METRICS_SAMPLE = "metrics-sample"
    CLOUD_TICK = "cloud-tick"
    ROUTE_PLANNING = "route-planning"


@dataclass(frozen=True, order=True)
class Event:
    fire_at: SimTime
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)
    action: Optional[Callable[["Event"], None]] = field(default=None, compare=False, repr=False)


class RngStream:
    """Labelled random stream derived from ``(master seed, label)``."""

    def __init__(self, seed: int, label: str) -> None:
        self.seed = int(seed)
        self.label = label
        # label key must be stable across processes
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        label_key = int.from_bytes(digest[:8], "big")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(label_key,))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform_int(self, low: int, high: int) -> int:
        """Uniform integer on the closed range ``[low, high]``."""
        if high <= low:
            return int(low)
        return int(self._gen.integers(low, high + 1))

    def normal(self, sigma: float) -> float:
        if sigma <= 0.0:
            return 0.0
        return float(self._gen.normal(0.0, sigma))

    def draws(self, n: int) -> List[float]:
        return [self.random() for _ in range(n)]


class Engine:
    """Single-threaded event loop with a monotone integer clock."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = int(seed)
        self._now: SimTime = 0
        self._seq = 0
        self._queue: List[Event] = []
        self._streams: Dict[str, RngStream] = {}
        self._trace = hashlib.sha256()
        self.processed = 0
        self.processed_by_kind: Dict[str, int] = {}

    @property
    def now(self) -> SimTime:
        return self._now

    def __len__(self) -> int:
        return len(self._queue)

    def event(
        self,
        fire_at: SimTime,
        kind: EventKind,
        action: Optional[Callable[[Event], None]] = None,
        payload: Any = None,
    ) -> Event:
        ev = Event(fire_at=int(fire_at), seq=self._seq, kind=kind, payload=payload, action=action)
        self._seq += 1
        return ev

    def schedule(self, event: Event) -> None:
        if event.fire_at < self._now:
            raise SimulationError(
                f"cannot schedule {event.kind.value} at t={event.fire_at} ms, clock is at {self._now} ms"
            )
        heapq.heappush(self._queue, event)

    def call_at(
        self,
        fire_at: SimTime,
        kind: EventKind,
        action: Callable[[Event], None],
        payload: Any = None,
    ) -> Event:
        ev = self.event(fire_at, kind, action, payload)
        self.schedule(ev)
        return ev

    def run_until(self, t_end: SimTime) -> int:
        """Process every event with ``fire_at <= t_end``; leave the clock at ``t_end``."""
        if t_end < self._now:
            raise SimulationError(f"run_until({t_end}) is behind the clock ({self._now})")
        count = 0
        while self._queue and self._queue[0].fire_at <= t_end:
            ev = heapq.heappop(self._queue)
            self._now = ev.fire_at
            self._trace.update(f"{ev.fire_at}:{ev.seq}:{ev.kind.value};".encode("ascii"))
            if ev.action is not None:
                ev.action(ev)
            count += 1
            self.processed_by_kind[ev.kind.value] = self.processed_by_kind.get(ev.kind.value, 0) + 1
        self._now = int(t_end)
        self.processed += count
        logger.debug("run_until(%d): %d events processed", t_end, count)
        return count

    def fork_rng(self, label: str) -> RngStream:
        if not isinstance(label, str) or not label:
            raise SimulationError("rng label must be a non-empty string")
        if label in self._streams:
            raise SimulationError(f"rng stream '{label}' already forked in this run")
        stream = RngStream(self.seed, label)
        self._streams[label] = stream
        return stream

    def trace_digest(self) -> str:
        return self._trace.hexdigest()
