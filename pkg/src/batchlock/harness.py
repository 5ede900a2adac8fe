"""Multi-threaded benchmark harness for the lock disciplines.

Measures two things on the host machine: the uncontested cost of one
acquire/release pair, and delay distributions under contention with
Poisson think times and a fixed-length busy critical section.

Timing uses the monotonic nanosecond clock for both roles (fine-grained
cost and wall-clock delay).  The timer's own cost is measured at startup
by timing back-to-back reads and is subtracted from every cost sample;
it is never a hard-coded constant, since it is machine-specific.

Worker threads emulate dedicated cores as far as user space allows: one
thread per configured slot, optionally pinned, and all waiting is done
by spinning on the clock (yielding the interpreter, never sleeping),
so a waiter stays runnable the whole time.  The interpreter's thread
switch interval is lowered during the measurement window so a busy
critical section cannot monopolise the interpreter for its full length.
The OS can still preempt a thread mid-acquire; trace verification
excuses waits that contain such a quantum-scale gap rather than letting
scheduler noise masquerade as an ordering bug.
"""

from __future__ import annotations

import os
import sys
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .disciplines import make_discipline
from .trace import (
    check_batch_cardinality,
    check_bounded_bypass,
    check_mutual_exclusion,
    check_ticket_order,
)

DISCIPLINES = ("SL", "FL", "BPL")
SCHEMES = ("equal", "skewed")

DEFAULT_CS_NS = 70_000
DEFAULT_BUDGET = 80_000

# Interpreter switch interval during contended runs, and the matching
# stall excusal threshold for bypass verification: a wait that lost the
# interpreter for half a switch quantum or more was parked by the
# scheduler, not passed by the lock.
BENCH_SWITCH_S = 5e-5
STALL_EXCUSE_NS = int(BENCH_SWITCH_S * 1e9) // 2

PIN_ENV = "BATCHLOCK_PIN"

_pause = time.sleep


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    """One contended benchmark run.

    ``lam_frac`` sets the aggregate request rate as a fraction of the
    critical-section service rate; thread i runs at priority i + 1, so
    priorities are distinct over 1..m with thread 0 most urgent.
    """

    m: int
    discipline: str
    scheme: str
    lam_frac: float
    cs_ns: int = DEFAULT_CS_NS
    request_budget: int = DEFAULT_BUDGET
    rng_seed: int = 0
    pin: Optional[tuple] = None

    def __post_init__(self):
        bad = []
        if not 2 <= self.m <= 64:
            bad.append(f"m must be in 2..64, got {self.m}")
        if self.discipline not in DISCIPLINES:
            bad.append(f"discipline must be one of {DISCIPLINES}, "
                       f"got {self.discipline!r}")
        if self.scheme not in SCHEMES:
            bad.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 < self.lam_frac <= 1.0:
            bad.append("lam_frac must be in (0, 1]: requests cannot "
                       f"outpace service, got {self.lam_frac}")
        if self.cs_ns <= 0:
            bad.append(f"cs_ns must be positive, got {self.cs_ns}")
        if self.request_budget < 1:
            bad.append(f"request_budget must be >= 1, got {self.request_budget}")
        if self.pin is not None and len(self.pin) != self.m:
            bad.append(f"pin must map all {self.m} threads, got {self.pin!r}")
        if bad:
            raise ValueError("; ".join(bad))


def arrival_rates(cfg: BenchConfig) -> np.ndarray:
    """Per-thread request rates in requests per nanosecond.

    Equal scheme splits the aggregate evenly.  The skewed scheme gives
    thread i the ratio i + 1 of the aggregate (normalised by the ratio
    sum), so the most urgent thread requests least often.
    """
    lam_agg = cfg.lam_frac / cfg.cs_ns
    if cfg.scheme == "equal":
        return np.full(cfg.m, lam_agg / cfg.m)
    ratios = np.arange(1, cfg.m + 1, dtype=np.float64)
    return lam_agg * ratios / ratios.sum()


def default_pin_map(m: int) -> Optional[tuple]:
    """Thread-to-core map from the environment, or None for unpinned."""
    raw = os.environ.get(PIN_ENV)
    if raw is None:
        return None
    try:
        cores = tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise ValueError(f"{PIN_ENV} must be a comma-separated core list, "
                         f"got {raw!r}")
    if len(cores) != m:
        raise ValueError(f"{PIN_ENV} lists {len(cores)} cores but the run "
                         f"needs {m}")
    return cores


# ---------------------------------------------------------------------------
# Timer calibration and uncontested cost
# ---------------------------------------------------------------------------

def calibrate_timer_ns(pairs: int = 4096, clock=time.perf_counter_ns) -> int:
    """Median cost of one clock read, measured from back-to-back reads."""
    diffs = []
    for _ in range(pairs):
        a = clock()
        b = clock()
        if b < a:
            raise RuntimeError("clock is not monotonic; refusing to measure")
        diffs.append(b - a)
    diffs.sort()
    return diffs[len(diffs) // 2]


@dataclass(frozen=True)
class OverheadReport:
    """Cost distribution of one acquire/release pair, timer cost removed."""

    discipline: str
    samples: int
    timer_overhead_ns: int
    min_ns: float
    median_ns: float
    p999_ns: float
    max_ns: float
    cold_ns: float      # first-touch sample; included in max, flagged here

    def __post_init__(self):
        if not (self.min_ns <= self.median_ns <= self.p999_ns <= self.max_ns):
            raise ValueError("percentiles out of order")


def measure_uncontested(discipline: str, samples: int = 10_000) -> OverheadReport:
    """Time acquire+release pairs on a single thread with no contenders."""
    overhead = calibrate_timer_ns()
    lock = make_discipline(discipline, m=2)
    clock = time.perf_counter_ns
    durations = np.empty(samples, dtype=np.int64)
    for i in range(samples):
        t0 = clock()
        lock.acquire(1, 0)
        lock.release()
        t1 = clock()
        if t1 < t0:
            raise RuntimeError("clock is not monotonic; refusing to measure")
        durations[i] = t1 - t0 - overhead
    return OverheadReport(
        discipline=discipline,
        samples=samples,
        timer_overhead_ns=overhead,
        min_ns=float(durations.min()),
        median_ns=float(np.median(durations)),
        p999_ns=float(np.percentile(durations, 99.9)),
        max_ns=float(durations.max()),
        cold_ns=float(durations[0]))


OVERHEAD_CSV_COLUMNS = ("discipline", "min", "median", "p999", "max", "samples")

OVERHEAD_SCHEMA_LINE = "# schema: overhead/1"


def write_overhead_csv(reports, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        fh.write(OVERHEAD_SCHEMA_LINE + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(OVERHEAD_CSV_COLUMNS)
        for r in reports:
            writer.writerow([r.discipline, repr(r.min_ns), repr(r.median_ns),
                             repr(r.p999_ns), repr(r.max_ns), r.samples])


# ---------------------------------------------------------------------------
# Contended runs
# ---------------------------------------------------------------------------

class BenchSample(NamedTuple):
    thread: int
    priority: int
    t_request: int
    t_acquire: int
    t_release: int


class _Budget:
    """Request slots handed out one at a time; the run ends when the
    global completed count reaches the budget."""

    def __init__(self, total: int):
        self._lock = threading.Lock()
        self._left = total

    def take(self) -> bool:
        with self._lock:
            if self._left == 0:
                return False
            self._left -= 1
            return True


def _spin_until(clock, deadline: int) -> int:
    """Busy-wait on the clock; yields the interpreter while waiting."""
    now = clock()
    while now < deadline:
        _pause(0)
        now = clock()
    return now


def _worker(idx, cfg, lock, scale_ns, seed_seq, budget, gate, out, errors):
    try:
        if cfg.pin is not None:
            try:
                os.sched_setaffinity(0, {cfg.pin[idx]})
            except (AttributeError, OSError) as exc:
                raise RuntimeError(f"cannot pin thread {idx} to core "
                                   f"{cfg.pin[idx]}: {exc}")
        rng = np.random.default_rng(seed_seq)
        clock = time.perf_counter_ns
        priority = idx + 1
        samples = []
        # All threads line up before the first slot is taken; otherwise an
        # early starter could drain the budget before its peers exist.
        gate.wait()
        next_req = clock() + int(rng.exponential(scale_ns))
        while budget.take():
            t_req = _spin_until(clock, next_req)
            lock.acquire(priority, idx)
            t_acq = clock()
            cs_end = t_acq + cfg.cs_ns
            while clock() < cs_end:     # busy section: hold the core
                pass
            t_rel = clock()             # stamped inside the section
            lock.release()
            samples.append(BenchSample(idx, priority, t_req, t_acq, t_rel))
            next_req = clock() + int(rng.exponential(scale_ns))
        out[idx] = samples
    except BaseException as exc:         # surfaced by the driver
        errors[idx] = exc
        out[idx] = []
        gate.abort()                     # release peers parked at the gate


def run_contended(cfg: BenchConfig, recorder=None) -> list:
    """Run one contended benchmark; returns samples in grant order.

    With a recorder attached every acquisition also logs trace events
    for verification (at some cost; leave it off for delay measurement).
    """
    lock = make_discipline(cfg.discipline, cfg.m, recorder=recorder)
    rates = arrival_rates(cfg)
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.m)
    budget = _Budget(cfg.request_budget)
    gate = threading.Barrier(cfg.m)
    out = [None] * cfg.m
    errors = [None] * cfg.m
    threads = [
        threading.Thread(
            target=_worker,
            args=(i, cfg, lock, 1.0 / rates[i], seeds[i], budget, gate,
                  out, errors),
            name=f"bench-{cfg.discipline}-{i}",
            daemon=True)
        for i in range(cfg.m)
    ]
    prior_switch = sys.getswitchinterval()
    sys.setswitchinterval(BENCH_SWITCH_S)
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(prior_switch)
    failures = [e for e in errors if e is not None]
    if failures:
        raise failures[0]
    merged = [s for bucket in out for s in bucket]
    merged.sort(key=lambda s: s.t_acquire)
    return merged


def samples_to_trace(samples):
    """Column view of bench samples matching the metrics trace shape."""
    from types import SimpleNamespace
    arr = np.array(samples, dtype=np.int64).reshape(-1, 5)
    return SimpleNamespace(
        source=arr[:, 0],
        priority=arr[:, 1],
        t_request=arr[:, 2].astype(np.float64),
        t_start=arr[:, 3].astype(np.float64),
        t_complete=arr[:, 4].astype(np.float64))


# ---------------------------------------------------------------------------
# Trace verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    ok: bool
    issues: tuple
    bypass: object = None


def verify_trace(trace, m: int, discipline: str,
                 stall_threshold_ns: int = STALL_EXCUSE_NS,
                 bypass_gate: bool = True) -> Verdict:
    """Check a recorded run's ordering invariants for its discipline.

    Mutual exclusion is checked for every discipline.  FL additionally
    must grant in exact ticket (request) order.  BPL must keep every
    wait within m - 1 foreign grants, after excusing waits where the OS
    parked the waiter for a scheduler quantum, and batches may never
    exceed m members.

    The bypass bound presumes waiters and runners progress at
    commensurate rates.  Thread timing can only vouch for that when the
    critical section is long enough that a grant cycle cannot hide
    between two of the waiter's steps; with back-to-back zero-length
    sections a runner can lap a continuously-stepping waiter inside one
    scheduler quantum, which no per-step gap can reveal.  Callers
    verifying such a run should pass ``bypass_gate=False``: the report
    is still computed and attached, but overshoot is not an error.
    """
    issues = list(check_mutual_exclusion(trace))
    bypass = None
    if discipline == "FL":
        issues.extend(check_ticket_order(trace))
    elif discipline == "BPL":
        bypass = check_bounded_bypass(trace, m,
                                      stall_threshold_ns=stall_threshold_ns)
        if bypass_gate and bypass.violations:
            issues.append(f"bounded bypass: {bypass.violations} waits saw "
                          f"more than {m - 1} foreign grants "
                          f"(max {bypass.max_foreign})")
        issues.extend(check_batch_cardinality(trace, m, limit=m))
    return Verdict(ok=not issues, issues=tuple(issues), bypass=bypass)
