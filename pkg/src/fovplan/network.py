"""Discrete-event broadcast network with per-message latency and drops.

Broadcast fans out to every other registered agent as independent unicast
deliveries, each delayed by a uniform draw from a seeded stream, so a whole
run is reproducible from its scenario seed.  The event queue is the single
serialization point of a simulation: agents interact only through it.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetworkConfig:
    delay_min: float = 0.01     # seconds
    delay_max: float = 0.05
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delay_min <= self.delay_max:
            raise ValueError("need 0 <= delay_min <= delay_max")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")


@dataclass(frozen=True)
class Delivery:
    deliver_at: float
    recipient: str
    message: object


class EventQueue:
    """Time-ordered pending deliveries; ties break by insertion order."""

    def __init__(self):
        self._heap = []
        self._counter = itertools.count()
        self.now = 0.0

    def push(self, deliver_at: float, recipient: str, message) -> None:
        if deliver_at < self.now:
            raise ValueError("cannot schedule a delivery in the past")
        heapq.heappush(self._heap, (deliver_at, next(self._counter),
                                    recipient, message))

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def advance(self, until: float) -> list[Delivery]:
        """Pop every delivery due by ``until`` in order; clock moves to ``until``."""
        if until < self.now:
            raise ValueError("cannot advance backwards")
        out = []
        while self._heap and self._heap[0][0] <= until:
            t, _, rcpt, msg = heapq.heappop(self._heap)
            out.append(Delivery(t, rcpt, msg))
        self.now = until
        return out

    def __len__(self):
        return len(self._heap)


class Network:
    """Seeded broadcast fabric over an EventQueue.

    Agents are registered by id; a broadcast schedules one delivery per
    other agent with its own delay draw and drop coin.
    """

    def __init__(self, cfg: NetworkConfig, agent_ids=()):
        self.cfg = cfg
        self.queue = EventQueue()
        self.agent_ids = list(agent_ids)
        self._rng = np.random.default_rng(cfg.seed)

    def register(self, agent_id: str) -> None:
        if agent_id in self.agent_ids:
            raise ValueError(f"duplicate agent id {agent_id!r}")
        self.agent_ids.append(agent_id)

    def broadcast(self, sender: str, message, now: float) -> list[Delivery]:
        """Schedule deliveries to everyone but the sender; returns what was scheduled."""
        scheduled = []
        for rcpt in self.agent_ids:
            if rcpt == sender:
                continue
            delay = self._rng.uniform(self.cfg.delay_min, self.cfg.delay_max)
            dropped = self._rng.random() < self.cfg.drop_prob
            if dropped:
                continue
            self.queue.push(now + delay, rcpt, message)
            scheduled.append(Delivery(now + delay, rcpt, message))
        return scheduled

    def advance(self, until: float) -> list[Delivery]:
        return self.queue.advance(until)
