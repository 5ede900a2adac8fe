"""Deterministic execution of the lock machines: schedule replay and
exhaustive interleaving exploration.

Both facilities run the same step machines as the real-thread locks, one
atomic operation per scheduling step, in a single OS thread:

* ``ScheduleDriver`` replays a chosen schedule (scripted, round-robin, or
  seeded random with a bounded stall) over m virtual contenders and can
  record a trace.  Round-robin and bounded-stall schedules keep every
  contender progressing at a commensurate rate, which is exactly the
  premise under which the FIFO-across-batches bound is a theorem, so
  bypass/cardinality checks on these traces are hard gates.
* ``explore`` enumerates every reachable interleaving of small contender
  programs, asserting state invariants as it goes, and then analyzes the
  state graph for deadlocks and fair cycles.  A fair cycle is a strongly
  connected component in which every unfinished thread can keep stepping
  without the system ever completing; its absence proves every acquire
  returns under any fair scheduler within the explored bound.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import baselines, bpl
from .atomics import UMAX, PlainWords
from .trace import NO_REG, Trace, TraceRecorder

# Contender phases.
READY = 0
ACQ = 1
CS = 2
REL = 3
FINISHED = 4


def _make_bpl_acquire(prio, core, m):
    return bpl.BplAcquire(prio, core, bpl.batch_field_width(m))


def _make_bpl_release(m):
    return bpl.BplRelease(bpl.batch_field_width(m))


_SPECS = {
    "BPL": (bpl.NUM_WORDS, bpl.initial_words(), _make_bpl_acquire, _make_bpl_release),
    "FL": (baselines.TK_NUM_WORDS, (0, 0),
           lambda p, c, m: baselines.TicketAcquire(p, c),
           lambda m: baselines.TicketRelease()),
    "SL": (baselines.TS_NUM_WORDS, (0,),
           lambda p, c, m: baselines.TasAcquire(p, c),
           lambda m: baselines.TasRelease()),
}


def machine_spec(name: str):
    try:
        return _SPECS[name]
    except KeyError:
        raise ValueError(f"unknown discipline {name!r}; choose from {sorted(_SPECS)}")


class ScheduleDriver:
    """m virtual contenders over one lock, advanced one atomic step at a time.

    Each contender loops ``cycles`` times through: request, acquire steps,
    ``cs_ticks`` scheduling steps inside the critical section, release
    steps.  ``step(tid)`` advances one contender; schedules decide who goes
    next.  With ``record=True`` a trace is captured with the step counter as
    both clock and (via the shared counter) sequence, so runs are exactly
    reproducible.
    """

    def __init__(self, discipline: str, m: int, priorities=None, cycles=1,
                 cs_ticks: int = 0, record: bool = False, capacity: int | None = None):
        num_words, init_words, make_acq, make_rel = machine_spec(discipline)
        self.discipline = discipline
        self.m = m
        self.mem = PlainWords(num_words, init_words)
        self._make_acq = make_acq
        self._make_rel = make_rel
        self.priorities = list(priorities) if priorities is not None else [t + 1 for t in range(m)]
        if len(self.priorities) != m:
            raise ValueError("need one priority per contender")
        cyc = [cycles] * m if isinstance(cycles, int) else list(cycles)
        self.cycles_left = cyc
        self.cs_ticks = cs_ticks
        self.phase = [READY if c > 0 else FINISHED for c in cyc]
        self.machine = [None] * m
        self.cs_left = [0] * m
        self.ticks = 0
        self._last_ticket = None
        self._reg = [NO_REG] * m
        self.recorder = None
        if record:
            cap = capacity if capacity is not None else 4 * max(cyc) + 8
            self.recorder = TraceRecorder(m, capacity=cap, clock=lambda: self.ticks)

    # -- stepping ------------------------------------------------------------

    def runnable(self) -> list[int]:
        return [t for t in range(self.m) if self.phase[t] != FINISHED]

    def done(self) -> bool:
        return all(p == FINISHED for p in self.phase)

    def step(self, tid: int) -> None:
        ph = self.phase[tid]
        rec = self.recorder
        if ph == FINISHED:
            raise RuntimeError(f"contender {tid} already finished")
        if ph == READY:
            mach = self._make_acq(self.priorities[tid], tid, self.m)
            self.machine[tid] = mach
            self._reg[tid] = NO_REG
            if rec:
                rec.request(tid, self.priorities[tid])
            self.phase[tid] = ACQ
            ph = ACQ
            # fall through: the first atomic step lands in this tick
        if ph == ACQ:
            mach = self.machine[tid]
            registering = (rec is not None and self._reg[tid] == NO_REG
                           and mach.pc == mach.REGISTER_PC)
            finished = mach.step(self.mem)
            if registering:
                # Registration and checkpoint land in one scheduler tick, so
                # the measured window is exact in replayed schedules.
                self._reg[tid] = rec.checkpoint()
            if rec and mach.reset_from is not None:
                rec.batch_reset(tid, mach.reset_from)
                mach.reset_from = None
            if finished:
                if rec:
                    rec.acquire(tid, self.priorities[tid], mach.ticket_value(),
                                reg=self._reg[tid])
                self._enter_cs(tid, mach)
        elif ph == CS:
            self.cs_left[tid] -= 1
            if self.cs_left[tid] == 0:
                self._enter_release(tid)
        else:  # REL
            if self.machine[tid].step(self.mem):
                self.cycles_left[tid] -= 1
                self.machine[tid] = None
                self.phase[tid] = READY if self.cycles_left[tid] > 0 else FINISHED
        self.ticks += 1

    def _enter_cs(self, tid, acq_machine):
        self._last_ticket = acq_machine.ticket_value()
        if self.cs_ticks > 0:
            self.phase[tid] = CS
            self.cs_left[tid] = self.cs_ticks
        else:
            self._enter_release(tid)

    def _enter_release(self, tid):
        if self.recorder:
            self.recorder.release(tid, self.priorities[tid], self._last_ticket)
        self.machine[tid] = self._make_rel(self.m)
        self.phase[tid] = REL

    # -- schedules -------------------------------------------------------------

    def run(self, pick) -> None:
        """Run to completion; ``pick(driver)`` names the next contender."""
        while not self.done():
            self.step(pick(self))

    def run_round_robin(self) -> None:
        cursor = 0
        while not self.done():
            while self.phase[cursor % self.m] == FINISHED:
                cursor += 1
            self.step(cursor % self.m)
            cursor += 1

    def run_random(self, seed: int, max_stall: int | None = None) -> None:
        """Seeded random schedule with a bounded per-contender stall.

        Any runnable contender unscheduled for ``max_stall`` consecutive
        picks is forced, keeping progress rates commensurate (default bound
        2m), which preserves the FIFO-bound premise while still churning the
        interleavings.
        """
        bound = max_stall if max_stall is not None else 2 * self.m
        rng = random.Random(seed)
        starve = [0] * self.m
        while not self.done():
            live = self.runnable()
            forced = [t for t in live if starve[t] >= bound]
            tid = forced[0] if forced else rng.choice(live)
            for t in live:
                starve[t] += 1
            starve[tid] = 0
            self.step(tid)

    def trace(self) -> Trace:
        if self.recorder is None:
            raise RuntimeError("driver was not recording")
        return self.recorder.merge()

    # -- introspection (scripted tests) ---------------------------------------

    def words(self) -> tuple:
        return self.mem.snapshot()

    def acquire_pc(self, tid) -> int | None:
        if self.phase[tid] == ACQ:
            return self.machine[tid].pc
        return None

    def step_until(self, tid, pc, limit=10_000) -> None:
        """Advance one contender until its acquire machine sits at ``pc``."""
        for _ in range(limit):
            if self.phase[tid] == ACQ and self.machine[tid].pc == pc:
                return
            self.step(tid)
        raise RuntimeError(f"contender {tid} never reached pc {pc}")


# ---------------------------------------------------------------------------
# Exhaustive exploration
# ---------------------------------------------------------------------------

@dataclass
class ExploreReport:
    states: int
    transitions: int
    terminals: int
    capped: bool
    deadlocks: int
    livelock_sccs: int
    violations: list = field(default_factory=list)

    @property
    def every_acquire_completes(self) -> bool:
        """True iff all explored executions terminate under fair scheduling."""
        return (not self.capped and self.deadlocks == 0
                and self.livelock_sccs == 0 and self.terminals > 0
                and not self.violations)


class _Stepper:
    """Pure successor function over immutable explorer states."""

    def __init__(self, spec, m, priorities, cs_ticks):
        self.num_words, self.init_words, self.make_acq, self.make_rel = spec
        self.m = m
        self.priorities = priorities
        self.cs_ticks = cs_ticks

    def initial(self, cycles):
        threads = tuple((READY, c) if c > 0 else (FINISHED,) for c in cycles)
        return (self.init_words, threads)

    def successor(self, state, tid):
        words, threads = state
        ts = threads[tid]
        ph = ts[0]
        mem = PlainWords(0, words)
        if ph == READY:
            mach = self.make_acq(self.priorities[tid], tid, self.m)
            ts = (ACQ, ts[1], mach.snapshot())
            ph = ACQ
        if ph == ACQ:
            mach = self.make_acq(self.priorities[tid], tid, self.m)
            mach.restore(ts[2])
            if mach.step(mem):
                if self.cs_ticks > 0:
                    new_ts = (CS, ts[1], self.cs_ticks)
                else:
                    rel = self.make_rel(self.m)
                    new_ts = (REL, ts[1], rel.snapshot())
            else:
                new_ts = (ACQ, ts[1], mach.snapshot())
        elif ph == CS:
            left = ts[2] - 1
            if left > 0:
                new_ts = (CS, ts[1], left)
            else:
                rel = self.make_rel(self.m)
                new_ts = (REL, ts[1], rel.snapshot())
        else:  # REL
            rel = self.make_rel(self.m)
            rel.restore(ts[2])
            if rel.step(mem):
                cycles = ts[1] - 1
                new_ts = (READY, cycles) if cycles > 0 else (FINISHED,)
            else:
                new_ts = (REL, ts[1], rel.snapshot())
        new_threads = threads[:tid] + (new_ts,) + threads[tid + 1:]
        return (mem.snapshot(), new_threads)


def _check_bpl_state(m, words, threads) -> str | None:
    """Word-level invariants of the batched priority lock, exact forms."""
    status = words[bpl.STATUS]
    nw = words[bpl.NUM_WAITERS]
    acq_pcs = [ts[2][0] for ts in threads if ts[0] == ACQ]
    # A contender counts toward num_waiters from the step after its INC
    # until its DEC executes; those pcs are contiguous.
    expected_nw = sum(1 for pc in acq_pcs if bpl.SLOW_TICKET <= pc <= bpl.SLOW_DEC)
    if nw != expected_nw:
        return f"num_waiters {nw} but {expected_nw} contenders hold a ticket"
    if status == 1 and nw > m - 1 + sum(1 for pc in acq_pcs if pc == bpl.SLOW_DEC):
        return f"num_waiters {nw} exceeds bound with lock held"
    holders = sum(1 for ts in threads if ts[0] in (CS, REL))
    # A contender whose test-and-set already won but whose acquire has not
    # yet returned owns the lock just as surely as one inside the critical
    # section; those pcs sit past SLOW_DEC.
    post_tas = sum(1 for pc in acq_pcs if pc >= bpl.SLOW_DEC)
    if holders + post_tas > 1:
        return f"{holders + post_tas} contenders own the lock"
    if status == 0 and (holders or post_tas):
        return "status clear while a contender holds the lock"
    if status == 1 and not (holders or post_tas):
        return "status set with no holder"
    s0_ok = {bpl.S0_READ, bpl.S0_CAS, bpl.S0_SETTLE, bpl.S0_DEFER}
    s1_ok = {bpl.S1_READ, bpl.S1_CHECK, bpl.S1_ABORT_CLEAR, bpl.S1_ABORT_RESET,
             bpl.S1_CAS, bpl.S1_SETTLE, bpl.S1_DEFER}
    for tid, ts in enumerate(threads):
        pc = ts[2][0] if ts[0] == ACQ else None
        if words[bpl.SETTLING0] >> tid & 1 and pc not in s0_ok:
            return f"stage-0 settling bit of {tid} stuck (pc {pc})"
        if words[bpl.SETTLING1] >> tid & 1 and pc not in s1_ok:
            return f"stage-1 settling bit of {tid} stuck (pc {pc})"
    if not acq_pcs:
        if words[bpl.SETTLING0] or words[bpl.SETTLING1]:
            return "settling bits set with no acquire in flight"
        if words[bpl.BATCH_BARRIER] != UMAX or words[bpl.PRIORITY_BARRIER] != UMAX:
            return "barriers not at sentinel with no acquire in flight"
    return None


def explore(discipline: str, m: int, priorities=None, cycles=1, cs_ticks: int = 1,
            max_states: int = 2_000_000, spec=None) -> ExploreReport:
    """Enumerate all interleavings; check invariants; analyze fair cycles.

    ``spec`` overrides the discipline registry with a custom
    ``(num_words, init_words, make_acquire, make_release)`` tuple, which is
    how the test suite feeds deliberately broken locks through the same
    analysis to prove the detectors fire.

    When the state cap is hit, per-state invariants and deadlock checks
    still cover everything explored, but the fair-cycle analysis is
    skipped (a cycle cut by the cap is indistinguishable from an exit),
    so a capped report never claims livelock freedom.
    """
    priorities = list(priorities) if priorities is not None else [t + 1 for t in range(m)]
    cyc = [cycles] * m if isinstance(cycles, int) else list(cycles)
    stepper = _Stepper(spec if spec is not None else machine_spec(discipline),
                       m, priorities, cs_ticks)
    root = stepper.initial(cyc)
    ids = {root: 0}
    states = [root]
    adj: list[list] = [[]]
    stack = [0]
    violations = []
    deadlocks = 0
    terminals = 0
    capped = False
    is_bpl = discipline == "BPL" and spec is None

    if is_bpl:
        err = _check_bpl_state(m, root[0], root[1])
        if err:
            violations.append(f"initial: {err}")

    while stack:
        sid = stack.pop()
        state = states[sid]
        words, threads = state
        live = [t for t in range(len(threads)) if threads[t][0] != FINISHED]
        if not live:
            terminals += 1
            continue
        succs = adj[sid]
        suppressed = False
        for tid in live:
            nxt = stepper.successor(state, tid)
            nid = ids.get(nxt)
            if nid is None:
                if len(states) >= max_states:
                    # The state can step; its successors just fell past
                    # the cap.  Must not count as a deadlock below.
                    capped = True
                    suppressed = True
                    continue
                nid = len(states)
                ids[nxt] = nid
                states.append(nxt)
                adj.append([])
                stack.append(nid)
                if len(violations) < 20:
                    holders = sum(1 for ts in nxt[1] if ts[0] in (CS, REL))
                    if holders > 1:
                        violations.append(
                            f"state {nid}: {holders} contenders in the critical section")
                    elif is_bpl:
                        err = _check_bpl_state(m, nxt[0], nxt[1])
                        if err:
                            violations.append(f"state {nid}: {err}")
            succs.append((tid, nid))
        if not succs and not suppressed:
            deadlocks += 1

    livelocks = 0 if capped else _count_fair_sccs(states, adj)
    transitions = sum(len(a) for a in adj)
    return ExploreReport(len(states), transitions, terminals, capped,
                         deadlocks, livelocks, violations)


def _count_fair_sccs(states, adj) -> int:
    """Count SCCs in which every unfinished thread can step internally.

    Such a component admits an infinite fair execution that never
    completes: livelock.  If in every cycle some live thread has all its
    steps leaving the component, fairness forces an eventual exit, so the
    system terminates.
    """
    n = len(states)
    index = [0] * n          # 0 = unvisited; otherwise order+1
    low = [0] * n
    on = bytearray(n)
    comp = [-1] * n
    counter = 1
    ncomp = 0
    sstack: list[int] = []
    for start in range(n):
        if index[start]:
            continue
        work = [(start, 0)]
        while work:
            v, ei = work[-1]
            if ei == 0:
                index[v] = low[v] = counter
                counter += 1
                sstack.append(v)
                on[v] = 1
            if ei < len(adj[v]):
                work[-1] = (v, ei + 1)
                w = adj[v][ei][1]
                if not index[w]:
                    work.append((w, 0))
                elif on[w]:
                    if index[w] < low[v]:
                        low[v] = index[w]
            else:
                work.pop()
                if work:
                    pv = work[-1][0]
                    if low[v] < low[pv]:
                        low[pv] = low[v]
                if low[v] == index[v]:
                    while True:
                        w = sstack.pop()
                        on[w] = 0
                        comp[w] = ncomp
                        if w == v:
                            break
                    ncomp += 1
    # Inspect each component for internal steps per live thread.
    internal: dict[int, set] = {}
    size = [0] * ncomp
    for v in range(n):
        size[comp[v]] += 1
    self_loop = set()
    for v in range(n):
        for tid, w in adj[v]:
            if comp[v] == comp[w]:
                internal.setdefault(comp[v], set()).add(tid)
                if v == w:
                    self_loop.add(comp[v])
    bad = 0
    rep: dict[int, int] = {}
    for v in range(n):
        rep.setdefault(comp[v], v)
    for c, tids in internal.items():
        if size[c] == 1 and c not in self_loop:
            continue
        threads = states[rep[c]][1]
        live = {t for t in range(len(threads)) if threads[t][0] != FINISHED}
        if live and live <= tids:
            bad += 1
    return bad
