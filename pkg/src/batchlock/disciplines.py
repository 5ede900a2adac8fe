"""Thread-facing lock objects that drive the step machines.

``BatchedPriorityLock`` (BPL), ``TicketLock`` (FL, FIFO baseline) and
``TestAndSetLock`` (SL, unordered baseline) share one acquire/release
interface.  Acquire takes a numeric priority (lower value = more urgent;
baselines accept and ignore it) and the caller's core index, and returns a
ticket describing the grant.  The pause hint inside spin loops is
``time.sleep(0)``, the GIL-yield analogue of a processor pause instruction,
escalating to a short nap after ``SPIN_LIMIT`` fruitless steps so waiting
threads do not crowd the run queue on hosts with fewer cores than threads.

With a recorder attached, every acquisition logs request/acquire/release
events and the longest wall-clock gap between consecutive steps of the
wait.  A large gap means the OS parked the thread mid-acquire, voiding the
commensurate-progress premise behind the bypass bound for that one wait, so
trace verification can tell scheduler-induced stalls from ordering bugs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from . import baselines, bpl
from .atomics import UMAX, ThreadedWords
from .trace import NO_REG

_pause = time.sleep  # _pause(0) yields the interpreter: the spin hint.

# Spin-then-nap: after this many consecutive fruitless steps the waiter
# sleeps for one OS scheduling grain instead of yielding.  A bare yield
# leaves the waiter runnable, and on a host with fewer cores than
# threads the yielding spinner usually reclaims the interpreter at once,
# so the one thread the lock is waiting for can sit unscheduled for a
# full OS timeslice.  Napping takes the spinner off the run queue and
# hands the core to that thread within a sleep grain.
SPIN_LIMIT = 16
NAP_S = 5e-5


@dataclass(frozen=True)
class Ticket:
    core: int
    priority: int
    batch: int | None


class LockDiscipline:
    """Common driver over the per-discipline step machines."""

    name = "?"
    _num_words = 0
    _init_words = None

    def __init__(self, m: int, recorder=None, debug: bool = False):
        if m < 1:
            raise ValueError(f"need at least one core, got {m}")
        self.m = m
        self._mem = ThreadedWords(self._num_words, self._init_words)
        self._recorder = recorder
        self._debug = debug
        self._holder = None

    def _acquire_machine(self, priority, core):
        raise NotImplementedError

    def _release_machine(self):
        raise NotImplementedError

    def acquire(self, priority: int = 0, core: int = 0) -> Ticket:
        if not 0 <= core < self.m:
            raise ValueError(f"core {core} out of range 0..{self.m - 1}")
        if not 0 <= priority < UMAX:
            raise ValueError(f"priority {priority} out of range")
        machine = self._acquire_machine(priority, core)
        rec = self._recorder
        mem = self._mem
        stall = 0
        if rec is None:
            fruitless = 0
            while not machine.step(mem):
                if machine.progressed:
                    fruitless = 0
                else:
                    fruitless += 1
                    _pause(0 if fruitless < SPIN_LIMIT else NAP_S)
        else:
            rec.request(core, priority)
            reg_pc = machine.REGISTER_PC
            reg = NO_REG
            clk = time.perf_counter_ns
            last = clk()
            fruitless = 0
            while True:
                registering = machine.pc == reg_pc and reg == NO_REG
                done = machine.step(mem)
                now = clk()
                if now - last > stall:
                    stall = now - last
                last = now
                if registering:
                    # Ticket drawn: the bypass window opens at the first
                    # sequence point where registration is certainly done.
                    reg = rec.checkpoint()
                if machine.reset_from is not None:
                    rec.batch_reset(core, machine.reset_from)
                    machine.reset_from = None
                if done:
                    break
                if machine.progressed:
                    fruitless = 0
                else:
                    fruitless += 1
                    _pause(0 if fruitless < SPIN_LIMIT else NAP_S)
        ticket = Ticket(core, priority, machine.ticket_value())
        self._holder = ticket
        if rec is not None:
            rec.acquire(core, priority, ticket.batch, stall, reg)
        return ticket

    def release(self) -> None:
        holder = self._holder
        if self._debug and holder is None:
            raise RuntimeError("release without a matching acquire")
        if self._recorder is not None and holder is not None:
            # Logged before the status bit drops, i.e. still inside the
            # critical section, so sequence intervals cannot overlap.
            self._recorder.release(holder.core, holder.priority, holder.batch)
        self._holder = None
        machine = self._release_machine()
        mem = self._mem
        while not machine.step(mem):
            pass

    def words(self) -> tuple:
        """Snapshot of the raw lock words (tests and diagnostics)."""
        return self._mem.snapshot()


class BatchedPriorityLock(LockDiscipline):
    name = "BPL"
    _num_words = bpl.NUM_WORDS

    def __init__(self, m: int, recorder=None, debug: bool = False):
        self.k = bpl.batch_field_width(m)   # validates m <= 64 as well
        self._init_words = bpl.initial_words()
        super().__init__(m, recorder, debug)

    def _acquire_machine(self, priority, core):
        return bpl.BplAcquire(priority, core, self.k)

    def _release_machine(self):
        return bpl.BplRelease(self.k)


class TicketLock(LockDiscipline):
    name = "FL"
    _num_words = baselines.TK_NUM_WORDS

    def _acquire_machine(self, priority, core):
        return baselines.TicketAcquire(priority, core)

    def _release_machine(self):
        return baselines.TicketRelease()


class TestAndSetLock(LockDiscipline):
    name = "SL"
    _num_words = baselines.TS_NUM_WORDS

    def _acquire_machine(self, priority, core):
        return baselines.TasAcquire(priority, core)

    def _release_machine(self):
        return baselines.TasRelease()


_DISCIPLINES = {
    "BPL": BatchedPriorityLock,
    "FL": TicketLock,
    "SL": TestAndSetLock,
}


def make_discipline(name: str, m: int, recorder=None, debug: bool = False) -> LockDiscipline:
    try:
        cls = _DISCIPLINES[name]
    except KeyError:
        raise ValueError(f"unknown discipline {name!r}; choose from {sorted(_DISCIPLINES)}")
    return cls(m, recorder=recorder, debug=debug)
