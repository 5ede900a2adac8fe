"""Batched priority lock: state layout and acquire/release step machines.

The lock admits contenders in arrival batches and grants each batch in
priority order, so waiting is FIFO across batches (bounded bypass) and
priority-ordered within a batch.  State lives in seven 64-bit words:

* ``STATUS``        -- the actual lock bit, taken by test-and-set.
* ``NUM_WAITERS``   -- count of slow-path contenders; the fast path is open
  only while this is zero.
* ``CURR_BATCH``    -- split word: low ``k`` bits count members of the batch
  now forming, the high bits are the batch ID.  A slow-path contender takes
  a ticket with one fetch-and-add; releases clear the count and advance the
  ID, so everyone who faa'd during one hold shares a batch.
* ``BATCH_BARRIER`` / ``PRIORITY_BARRIER`` -- auction words.  Waiters bid the
  barrier down to the lowest batch ID, then the best (numerically lowest)
  priority inside that batch.  ``UMax`` is the idle sentinel.
* ``SETTLING0`` / ``SETTLING1`` -- per-core bid-in-progress bits.  A stage's
  outcome is stable only once its settling word reads zero.

The algorithm is encoded as program-counter step machines that perform
exactly one shared-word atomic operation per ``step`` call.  Real-thread
locks, deterministic schedule replay, and exhaustive interleaving
exploration all drive these same machines, so the verified encoding is the
shipped one.
"""

from __future__ import annotations

from .atomics import UMAX, WORD_BITS

# Word indices of one lock instance.
STATUS = 0
NUM_WAITERS = 1
CURR_BATCH = 2
BATCH_BARRIER = 3
PRIORITY_BARRIER = 4
SETTLING0 = 5
SETTLING1 = 6
NUM_WORDS = 7

#: Widest supported contender count: the settling words are single 64-bit
#: bitvectors with one bit per core.
MAX_CORES = 64


def initial_words() -> tuple:
    """Word values of an idle lock (barriers hold the all-ones sentinel)."""
    return (0, 0, 0, UMAX, UMAX, 0, 0)


def batch_field_width(m: int) -> int:
    """Bits reserved for the member count in CURR_BATCH: ceil(log2(m)).

    A batch forming under a holder has at most m-1 members, which fit in k
    bits.  A batch can reach m members when it forms around a free lock
    (an already-registered waiter diverts every arriving core to the slow
    path), and for power-of-two m the m-th ticket then carries into the
    ID field.  The carry is benign: it acts as one extra ID advance, IDs
    stay monotone, and every latched ticket read its pre-carry value.
    """
    if not 1 <= m <= MAX_CORES:
        raise ValueError(f"core count must be in 1..{MAX_CORES}, got {m}")
    k = (m - 1).bit_length()
    if k >= WORD_BITS:
        raise ValueError(f"batch field width {k} does not fit a word")
    return k


def next_batch_word(v: int, k: int, bits: int = WORD_BITS) -> int:
    """The CURR_BATCH value a release stores: count cleared, batch ID + 1.

    Computed on a local copy as ``(v AND NOT(2**k - 1)) + 2**k``; in-flight
    members of the closing batch already latched their ticket, so dropping
    the count bits is deliberate.
    """
    mask = (1 << k) - 1
    return ((v & ~mask) + (1 << k)) & ((1 << bits) - 1)


# Program counters of the acquire machine.  Names follow the stage
# structure: fast path, slow-path entry, settling stage 0 (batch auction),
# settling stage 1 (priority auction), final stage (guarded test-and-set).
FAST_READ_BATCH = 0
FAST_READ_WAITERS = 1
FAST_RESET_CAS = 2
FAST_TAS = 3
SLOW_INC = 4
SLOW_TICKET = 5
S0_SET = 6
S0_READ = 7
S0_CAS = 8
S0_SETTLE = 9
S0_DEFER = 10
S0_WAIT = 11
S0_RECHECK = 12
S1_SET = 13
S1_READ = 14
S1_CHECK = 15
S1_ABORT_CLEAR = 16
S1_ABORT_RESET = 17
S1_CAS = 18
S1_SETTLE = 19
S1_DEFER = 20
S1_WAIT = 21
FIN_CHECK_PRIO = 22
FIN_CHECK_BATCH = 23
FIN_ABORT_CLEAR = 24
FIN_TAS = 25
SLOW_DEC = 26
ACQ_CLEAR_PRIO = 27
ACQ_CLEAR_BATCH = 28
DONE = -1


class BplAcquire:
    """One in-flight acquire(priority, core): a resumable atomic-step program.

    ``step`` runs the next atomic operation and returns True once the lock
    is held.  ``progressed`` is False after a step that was a fruitless spin
    check, which is where drivers issue their pause hint.
    """

    __slots__ = ("prio", "core", "k", "pc", "prev", "batch", "slow",
                 "reset_from", "progressed")

    # Executing this pc registers the contender as a waiter (its ticket is
    # drawn); instrumented drivers anchor the bypass window here.
    REGISTER_PC = SLOW_TICKET

    def __init__(self, prio: int, core: int, k: int):
        self.prio = prio
        self.core = core
        self.k = k
        self.pc = FAST_READ_BATCH
        self.prev = 0
        self.batch = 0
        self.slow = False
        self.reset_from = None
        self.progressed = True

    def step(self, mem) -> bool:
        self.progressed = True
        pc = _ACQ_STEP[self.pc](self, mem)
        self.pc = pc
        return pc == DONE

    def ticket_value(self):
        """Batch ID this acquire settled under, or None for the fast path."""
        return self.batch if self.slow else None

    # -- fast path ---------------------------------------------------------

    def _fast_read_batch(self, mem):
        # CURR_BATCH must be read before NUM_WAITERS: slow-path contenders
        # increment NUM_WAITERS before taking their ticket, so a zero
        # NUM_WAITERS read below proves no ticket postdates this snapshot
        # and the reset CAS can only replace a quiescent word.
        self.prev = mem.load(CURR_BATCH)
        return FAST_READ_WAITERS

    def _fast_read_waiters(self, mem):
        if mem.load(NUM_WAITERS) == 0:
            return FAST_RESET_CAS
        return SLOW_INC

    def _fast_reset_cas(self, mem):
        # Opportunistically rewind the batch ID while the lock is quiet so
        # the ID field cannot creep toward overflow.  Failure means a ticket
        # was just taken; the result is deliberately ignored either way.
        if mem.cas(CURR_BATCH, self.prev, 0) and (self.prev >> self.k):
            self.reset_from = self.prev
        return FAST_TAS

    def _fast_tas(self, mem):
        if mem.tas(STATUS) == 0:
            return ACQ_CLEAR_PRIO
        return SLOW_INC

    # -- slow-path entry ---------------------------------------------------

    def _slow_inc(self, mem):
        mem.inc(NUM_WAITERS)
        return SLOW_TICKET

    def _slow_ticket(self, mem):
        self.slow = True
        self.batch = mem.faa(CURR_BATCH, 1) >> self.k
        return S0_SET

    # -- stage 0: batch auction --------------------------------------------

    def _s0_set(self, mem):
        mem.set_bit(SETTLING0, self.core)
        return S0_READ

    def _s0_read(self, mem):
        self.prev = mem.load(BATCH_BARRIER)
        # <= and not <: when the barrier already names our batch (lowered by
        # a peer) we must still CAS and join the settling handshake now,
        # instead of idling until the next acquisition re-opens the auction.
        if self.batch <= self.prev:
            return S0_CAS
        return S0_DEFER

    def _s0_cas(self, mem):
        if mem.cas(BATCH_BARRIER, self.prev, self.batch):
            return S0_SETTLE
        return S0_READ

    def _s0_settle(self, mem):
        mem.reset_bit(SETTLING0, self.core)
        return S0_WAIT

    def _s0_defer(self, mem):
        # An older batch holds the auction; withdraw the bid bit so its
        # round can close, and keep watching the barrier.
        mem.reset_bit(SETTLING0, self.core)
        self.progressed = False
        return S0_READ

    def _s0_wait(self, mem):
        if mem.load(SETTLING0) != 0:
            self.progressed = False
            return S0_WAIT
        return S0_RECHECK

    def _s0_recheck(self, mem):
        if mem.load(BATCH_BARRIER) != self.batch:
            return S0_SET
        return S1_SET

    # -- stage 1: priority auction -----------------------------------------

    def _s1_set(self, mem):
        mem.set_bit(SETTLING1, self.core)
        return S1_READ

    def _s1_read(self, mem):
        self.prev = mem.load(PRIORITY_BARRIER)
        return S1_CHECK

    def _s1_check(self, mem):
        # Re-validate the batch barrier before bidding: a fast contender
        # from a newer batch may have re-run the batch auction while we were
        # parked, and its priority must not mix into our round.
        if mem.load(BATCH_BARRIER) != self.batch:
            return S1_ABORT_CLEAR
        if self.prio <= self.prev:
            return S1_CAS
        return S1_DEFER

    def _s1_abort_clear(self, mem):
        mem.store(PRIORITY_BARRIER, UMAX)
        return S1_ABORT_RESET

    def _s1_abort_reset(self, mem):
        mem.reset_bit(SETTLING1, self.core)
        return S0_SET

    def _s1_cas(self, mem):
        if mem.cas(PRIORITY_BARRIER, self.prev, self.prio):
            return S1_SETTLE
        return S1_READ

    def _s1_settle(self, mem):
        mem.reset_bit(SETTLING1, self.core)
        return S1_WAIT

    def _s1_defer(self, mem):
        mem.reset_bit(SETTLING1, self.core)
        self.progressed = False
        return S1_READ

    def _s1_wait(self, mem):
        if mem.load(SETTLING1) != 0:
            self.progressed = False
            return S1_WAIT
        return FIN_CHECK_PRIO

    # -- final stage: guarded test-and-set -----------------------------------

    def _fin_check_prio(self, mem):
        if mem.load(PRIORITY_BARRIER) != self.prio:
            self.progressed = False
            return S1_SET
        return FIN_CHECK_BATCH

    def _fin_check_batch(self, mem):
        if mem.load(BATCH_BARRIER) != self.batch:
            return FIN_ABORT_CLEAR
        return FIN_TAS

    def _fin_abort_clear(self, mem):
        mem.store(PRIORITY_BARRIER, UMAX)
        return S0_SET

    def _fin_tas(self, mem):
        if mem.tas(STATUS) == 0:
            return SLOW_DEC
        # Equal-priority peers race here; the TAS arbitrates arbitrarily.
        self.progressed = False
        return FIN_CHECK_PRIO

    def _slow_dec(self, mem):
        mem.dec(NUM_WAITERS)
        return ACQ_CLEAR_PRIO

    # -- acquired: reopen the auctions ---------------------------------------

    def _acq_clear_prio(self, mem):
        # The priority barrier must fall before the batch barrier, so that a
        # parked stage-1 bid can never carry into the next batch's round.
        mem.store(PRIORITY_BARRIER, UMAX)
        return ACQ_CLEAR_BATCH

    def _acq_clear_batch(self, mem):
        mem.store(BATCH_BARRIER, UMAX)
        return DONE

    def snapshot(self) -> tuple:
        return (self.pc, self.prev, self.batch, self.slow)

    def restore(self, snap) -> None:
        self.pc, self.prev, self.batch, self.slow = snap


_ACQ_STEP = [
    BplAcquire._fast_read_batch,
    BplAcquire._fast_read_waiters,
    BplAcquire._fast_reset_cas,
    BplAcquire._fast_tas,
    BplAcquire._slow_inc,
    BplAcquire._slow_ticket,
    BplAcquire._s0_set,
    BplAcquire._s0_read,
    BplAcquire._s0_cas,
    BplAcquire._s0_settle,
    BplAcquire._s0_defer,
    BplAcquire._s0_wait,
    BplAcquire._s0_recheck,
    BplAcquire._s1_set,
    BplAcquire._s1_read,
    BplAcquire._s1_check,
    BplAcquire._s1_abort_clear,
    BplAcquire._s1_abort_reset,
    BplAcquire._s1_cas,
    BplAcquire._s1_settle,
    BplAcquire._s1_defer,
    BplAcquire._s1_wait,
    BplAcquire._fin_check_prio,
    BplAcquire._fin_check_batch,
    BplAcquire._fin_abort_clear,
    BplAcquire._fin_tas,
    BplAcquire._slow_dec,
    BplAcquire._acq_clear_prio,
    BplAcquire._acq_clear_batch,
]

# Release machine program counters.
REL_READ = 0
REL_STORE = 1
REL_RESET = 2


class BplRelease:
    """Release program: advance the batch word, then drop the status bit.

    No barrier is touched and no CAS is needed: only the holder runs this,
    and concurrent ticket takers cannot invalidate the ID advance because
    their count bits are cleared on purpose.
    """

    __slots__ = ("k", "pc", "val", "progressed")

    def __init__(self, k: int):
        self.k = k
        self.pc = REL_READ
        self.val = 0
        self.progressed = True

    def step(self, mem) -> bool:
        pc = self.pc
        if pc == REL_READ:
            self.val = mem.load(CURR_BATCH)
            self.pc = REL_STORE
        elif pc == REL_STORE:
            mem.store(CURR_BATCH, next_batch_word(self.val, self.k))
            self.pc = REL_RESET
        else:
            mem.store(STATUS, 0)
            self.pc = DONE
            return True
        return False

    def snapshot(self) -> tuple:
        return (self.pc, self.val)

    def restore(self, snap) -> None:
        self.pc, self.val = snap
