"""Deterministic discrete-event scheduler.

Time is integer ticks with no wall-clock coupling. Events at equal
timestamps execute by (priority, submission order): triggered detector scans
run synchronously inside the emitting event and therefore always precede
anything scheduled at the same tick, attacker actions precede periodic
scans, and equal-priority events preserve submission order.

The scheduler also carries the cross-module wiring a process would provide:
the thread-creation observer list and the registry of monitored spaces.
"""

from __future__ import annotations

import heapq
from typing import Callable

from .errors import ScenarioError

PRIORITY_EVENT_SCAN = 0
PRIORITY_ATTACK = 1
PRIORITY_PERIODIC = 2


class Scheduler:
    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int, int, Callable[[], None]]] = []
        self._seq = 0
        self.thread_observers: list[Callable] = []
        self._monitored: list[object] = []

    def schedule(
        self, at: int, action: Callable[[], None], priority: int = PRIORITY_ATTACK
    ) -> None:
        if at < self.now:
            raise ScenarioError(f"cannot schedule at {at}, now is {self.now}")
        heapq.heappush(self._heap, (at, priority, self._seq, action))
        self._seq += 1

    def run_until(self, horizon: int) -> None:
        """Execute every queued event with timestamp <= horizon, in order."""
        while self._heap and self._heap[0][0] <= horizon:
            at, _priority, _seq, action = heapq.heappop(self._heap)
            self.now = at
            action()

    # -- thread-creation events ------------------------------------------

    def subscribe_thread_events(self, callback: Callable) -> None:
        self.thread_observers.append(callback)

    def unsubscribe_thread_events(self, callback: Callable) -> None:
        if callback in self.thread_observers:
            self.thread_observers.remove(callback)

    def emit_thread_create(self, event) -> None:
        """Deliver synchronously; observers run inside the emitting event,
        ahead of anything scheduled at the same or a later tick."""
        for callback in list(self.thread_observers):
            callback(event)

    # -- monitored-space registry -----------------------------------------

    def claim_monitor(self, space: object) -> bool:
        if any(existing is space for existing in self._monitored):
            return False
        self._monitored.append(space)
        return True

    def release_monitor(self, space: object) -> None:
        self._monitored = [s for s in self._monitored if s is not space]
