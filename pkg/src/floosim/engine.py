"""Two-phase synchronous simulation kernel.

Every cross-component boundary is a :class:`Fifo` port with committed-state
semantics: during a cycle, all components read the state committed at the end
of the previous cycle (valid = committed head exists, ready = committed
occupancy below capacity), and pushes/pops only take effect at the commit
point.  Results are therefore independent of the order components are stepped
in, which the determinism tests exercise directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Fifo:
    """Single-producer single-consumer handshake port.

    Readers see only committed state.  At most one push and one pop per cycle;
    both are applied by :meth:`commit`.
    """

    __slots__ = ("capacity", "items", "_staged", "_popped", "_touched", "sim")

    def __init__(self, capacity: int):
        assert capacity >= 1
        self.capacity = capacity
        self.items: deque = deque()
        self._staged: object = None
        self._popped = False
        self._touched = False
        self.sim: Optional["Simulation"] = None

    def __len__(self) -> int:
        return len(self.items)

    def can_accept(self) -> bool:
        return len(self.items) < self.capacity and self._staged is None

    def head(self):
        return self.items[0] if self.items else None

    def pop(self):
        assert not self._popped, "one pop per cycle"
        self._popped = True
        self._mark()
        return self.items[0]

    def push(self, item) -> None:
        assert self._staged is None, "one push per cycle"
        assert len(self.items) < self.capacity, "push into full port"
        self._staged = item
        self._mark()

    def _mark(self) -> None:
        if not self._touched:
            self._touched = True
            if self.sim is not None:
                self.sim.note_activity(self)

    def commit(self) -> None:
        if self._popped:
            self.items.popleft()
            self._popped = False
        if self._staged is not None:
            self.items.append(self._staged)
            self._staged = None
        self._touched = False


class ExitStatus(Enum):
    COMPLETED = "completed"
    MAX_CYCLES = "max_cycles"
    DEADLOCK = "deadlock"


@dataclass
class RunResult:
    status: ExitStatus
    cycles: int
    blocked: list = field(default_factory=list)


class Simulation:
    """Steps a built network cycle by cycle.

    The network object provides ``step_components`` (objects with a
    ``step(cycle, sim)`` method), ``all_fifos``, and accounting hooks
    (``outstanding()``, ``generators_done()``, ``blocked_snapshot()``).
    State at cycle t is a pure function of (network config, workload, seed).
    """

    def __init__(self, network, collector=None, order_seed: Optional[int] = None):
        self.network = network
        self.collector = collector
        self.cycle = 0
        self.last_progress = 0
        self._dirty: list[Fifo] = []
        self._components = list(network.step_components)
        if order_seed is not None:
            import random as _random

            _random.Random(order_seed).shuffle(self._components)
        for f in network.all_fifos:
            f.sim = self

    def note_activity(self, fifo: Fifo) -> None:
        self._dirty.append(fifo)
        self.last_progress = self.cycle

    def mark_progress(self) -> None:
        self.last_progress = self.cycle

    def on_link_transfer(self, link_id, flit) -> None:
        if self.collector is not None:
            self.collector.on_link_transfer(link_id, flit, self.cycle)

    def step(self) -> None:
        cycle = self.cycle
        for comp in self._components:
            comp.step(cycle, self)
        dirty = self._dirty
        if dirty:
            for f in dirty:
                f.commit()
            dirty.clear()
        self.cycle = cycle + 1

    def run(
        self,
        max_cycles: int,
        quiesce: bool = True,
        deadlock_window: int = 10_000,
    ) -> RunResult:
        assert max_cycles > 0
        net = self.network
        while True:
            if quiesce and net.generators_done() and net.outstanding() == 0:
                return RunResult(ExitStatus.COMPLETED, self.cycle)
            if self.cycle >= max_cycles:
                return RunResult(ExitStatus.MAX_CYCLES, self.cycle)
            if (
                net.outstanding() > 0
                and self.cycle - self.last_progress >= deadlock_window
            ):
                return RunResult(
                    ExitStatus.DEADLOCK, self.cycle, net.blocked_snapshot()
                )
            self.step()


class DeadlockError(Exception):
    def __init__(self, result: RunResult):
        super().__init__(f"deadlock at cycle {result.cycles}")
        self.result = result
