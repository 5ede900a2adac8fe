"""Baseline spinlocks: FIFO ticket lock and unordered test-and-set lock.

Both are encoded as the same kind of one-atomic-op-per-step machines as the
batched priority lock, so every driver (real threads, deterministic
schedules, exhaustive exploration) treats the three disciplines uniformly.
"""

from __future__ import annotations

DONE = -1

# Ticket lock words.
TK_REQUEST = 0
TK_RELEASE = 1
TK_NUM_WORDS = 2

TK_FAA = 0
TK_SPIN = 1


class TicketAcquire:
    """Take the next ticket, then spin until the release counter names it."""

    __slots__ = ("prio", "core", "pc", "ticket", "progressed")

    REGISTER_PC = TK_FAA
    reset_from = None

    def __init__(self, prio: int, core: int):
        self.prio = prio
        self.core = core
        self.pc = TK_FAA
        self.ticket = 0
        self.progressed = True

    def step(self, mem) -> bool:
        if self.pc == TK_FAA:
            self.ticket = mem.faa(TK_REQUEST, 1)
            self.pc = TK_SPIN
            return False
        if mem.load(TK_RELEASE) == self.ticket:
            self.pc = DONE
            return True
        self.progressed = False
        return False

    def ticket_value(self):
        return self.ticket

    def snapshot(self) -> tuple:
        return (self.pc, self.ticket)

    def restore(self, snap) -> None:
        self.pc, self.ticket = snap


class TicketRelease:
    """Pass the lock to the next ticket holder."""

    __slots__ = ("pc", "progressed")

    def __init__(self):
        self.pc = 0
        self.progressed = True

    def step(self, mem) -> bool:
        mem.inc(TK_RELEASE)
        self.pc = DONE
        return True

    def snapshot(self) -> tuple:
        return (self.pc,)

    def restore(self, snap) -> None:
        (self.pc,) = snap


# Test-and-set lock word.
TS_STATUS = 0
TS_NUM_WORDS = 1


class TasAcquire:
    """Spin on test-and-set until the prior value reads zero.

    No ordering of any kind: grant order among spinners is whatever the
    interleaving produces.
    """

    __slots__ = ("prio", "core", "pc", "progressed")

    REGISTER_PC = None
    reset_from = None

    def __init__(self, prio: int, core: int):
        self.prio = prio
        self.core = core
        self.pc = 0
        self.progressed = True

    def step(self, mem) -> bool:
        if mem.tas(TS_STATUS) == 0:
            self.pc = DONE
            return True
        self.progressed = False
        return False

    def ticket_value(self):
        return None

    def snapshot(self) -> tuple:
        return (self.pc,)

    def restore(self, snap) -> None:
        (self.pc,) = snap


class TasRelease:
    """Drop the status bit."""

    __slots__ = ("pc", "progressed")

    def __init__(self):
        self.pc = 0
        self.progressed = True

    def step(self, mem) -> bool:
        mem.store(TS_STATUS, 0)
        self.pc = DONE
        return True

    def snapshot(self) -> tuple:
        return (self.pc,)

    def restore(self, snap) -> None:
        (self.pc,) = snap
