"""Deterministic discrete-event simulator of a bursty machine-repairman queue.

One server (the lock) serves m sources (the cores).  A burst generator
fires at exponentially distributed intervals and wakes a uniform random
subset of the currently idle sources; each woken source posts one request
and stays busy until that request completes, so no source ever has two
requests outstanding.  Service times are exponential.  The order in which
the server picks the next waiting request is the pluggable policy:

* ``FL``  - first come, first served (request time, then source index).
* ``PL``  - most urgent first (priority value, then request time, source).
* ``BPL`` - batched priority: requests are tagged with the batch counter
  open at their request time, the counter advances at every completion
  that leaves waiters pending, and grants order by (batch tag, priority).
  The real lock's fast path has no equivalent here; an idle-server grant
  simply starts service immediately and never joins a batch.

A run is a pure function of (config, seed).  Four independent RNG streams
(burst inter-arrival, burst size, source choice, service time) are split
from the seed, so for one seed the k-th granted service duration is the
same under every policy and policies stay directly comparable.
"""

from __future__ import annotations

import csv
from bisect import insort
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import NamedTuple

import numpy as np

VALID_SOURCE_COUNTS = (8, 16, 32, 64)
POLICY_NAMES = ("FL", "PL", "BPL")

# Batch tag value used in trace arrays for grants that carry no tag
# (FL and PL policies, and idle-server grants never tagged by them).
NO_TAG = -1

_EV_DONE = 0   # service completion; at equal times it precedes the burst,
_EV_BURST = 1  # so a same-instant arrival never sees a stale busy server.


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """One simulation cell.

    ``burst_fraction`` expresses the burst generator's rate as a fraction
    of the service rate (the sweep's x-axis), so configured values land in
    output tables exactly as written; the absolute rate is ``burst_rate``.
    ``request_budget`` defaults to 10000 completions per source.
    """

    m: int
    mean_burst_size: int
    burst_fraction: float
    policy: str
    rng_seed: int
    service_rate: float = 0.01
    request_budget: int | None = None

    def __post_init__(self):
        bad = []
        if self.m not in VALID_SOURCE_COUNTS:
            bad.append(f"m={self.m} not one of {VALID_SOURCE_COUNTS}")
        else:
            mbs = self.mean_burst_size
            power_of_two = isinstance(mbs, int) and mbs >= 1 and mbs & (mbs - 1) == 0
            if not power_of_two or mbs > self.m // 2:
                bad.append(f"mean_burst_size={mbs} must be a power of two"
                           f" <= m/2 ({self.m // 2})")
        if not 0.0 < self.burst_fraction <= 1.0:
            bad.append(f"burst_fraction={self.burst_fraction} outside (0, 1]")
        if self.service_rate <= 0.0:
            bad.append(f"service_rate={self.service_rate} must be positive")
        if self.policy not in POLICY_NAMES:
            bad.append(f"policy={self.policy!r} not one of {POLICY_NAMES}")
        if self.request_budget is None:
            object.__setattr__(self, "request_budget", 10_000 * self.m)
        if not (isinstance(self.request_budget, int) and self.request_budget > 0):
            bad.append(f"request_budget={self.request_budget} must be > 0")
        if not (isinstance(self.rng_seed, (int, np.integer)) and self.rng_seed >= 0):
            bad.append(f"rng_seed={self.rng_seed} must be a nonnegative integer")
        if bad:
            raise ValueError("invalid SimConfig: " + "; ".join(bad))

    @property
    def burst_rate(self) -> float:
        return self.burst_fraction * self.service_rate


# ---------------------------------------------------------------------------
# Ordering policies
# ---------------------------------------------------------------------------

class PendingRequest(NamedTuple):
    source: int
    priority: int
    t_req: float
    batch_tag: int | None


class _HeapPolicy:
    """Pending set held as a heap of grant-order key tuples."""

    def __init__(self):
        self._heap = []

    def __len__(self):
        return len(self._heap)

    def note_completion(self):
        """Hook called once per service completion, after the completed
        request left the pending set."""

    def pending(self) -> list:
        """Waiting requests in source order; the queue is not disturbed."""
        return sorted((self._unkey(e) for e in self._heap),
                      key=lambda r: r.source)

    def pop(self) -> PendingRequest:
        return self._unkey(heappop(self._heap))


class FifoPolicy(_HeapPolicy):
    """Earliest request first; same-instant ties keep submission order.

    The tie rule carries real weight: burst members share one request
    time, and a FIFO lock queues them in whatever order their sources
    reached it.  Sorting ties by source index instead would hand the
    baseline a hidden priority order, since source index encodes
    urgency, and erase exactly the within-burst disorder the batched
    policy exists to fix.
    """

    def __init__(self):
        super().__init__()
        self._seq = 0

    def add(self, source: int, priority: int, t_req: float):
        heappush(self._heap, (t_req, self._seq, source, priority))
        self._seq += 1

    @staticmethod
    def _unkey(entry):
        t_req, _, source, priority = entry
        return PendingRequest(source, priority, t_req, None)


class PriorityPolicy(_HeapPolicy):
    """Smallest priority value first; ties by request time, then source."""

    def add(self, source: int, priority: int, t_req: float):
        heappush(self._heap, (priority, t_req, source))

    @staticmethod
    def _unkey(entry):
        priority, t_req, source = entry
        return PendingRequest(source, priority, t_req, None)


class BatchedPolicy(_HeapPolicy):
    """Priority order inside a batch, arrival order across batches.

    A request's tag is the batch counter open at its request time; the
    counter advances at each completion that leaves waiters pending, so a
    request can never be passed by one that arrived after that boundary.
    After a full drain the counter keeps its value: no pending tags remain,
    so only the difference between successive tags matters, never the
    absolute value.
    """

    def __init__(self):
        super().__init__()
        self._batch = 0

    def add(self, source: int, priority: int, t_req: float):
        heappush(self._heap, (self._batch, priority, t_req, source))

    def note_completion(self):
        if self._heap:
            self._batch += 1

    @staticmethod
    def _unkey(entry):
        batch, priority, t_req, source = entry
        return PendingRequest(source, priority, t_req, batch)


_POLICIES = {"FL": FifoPolicy, "PL": PriorityPolicy, "BPL": BatchedPolicy}


def make_policy(name: str) -> _HeapPolicy:
    try:
        return _POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; expected one of "
                         f"{POLICY_NAMES}") from None


# ---------------------------------------------------------------------------
# Burst generation
# ---------------------------------------------------------------------------

def draw_burst(size_rng, choice_rng, idle_sources, mean_burst_size: int) -> list:
    """Pick the sources woken by one generator firing, in trigger order.

    The size is discrete uniform on {0 .. 2 * mean_burst_size} (midpoint =
    the configured mean) and is drawn at every firing, even when no source
    is idle, so the size stream is identical across policies.  When the
    draw exceeds the idle population the whole population is woken.  The
    returned order is the random trigger order, never sorted: it is the
    order in which same-instant requests hit the lock's queue.
    """
    size = int(size_rng.integers(0, 2 * mean_burst_size, endpoint=True))
    if size == 0 or not idle_sources:
        return []
    size = min(size, len(idle_sources))
    picked = choice_rng.choice(np.asarray(idle_sources), size=size, replace=False)
    return [int(s) for s in picked]


# ---------------------------------------------------------------------------
# Simulation runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimRequest:
    """One completed request; times are in simulated time units."""
    source: int
    priority: int
    t_request: float
    t_start: float
    t_complete: float
    batch_tag: int | None


@dataclass(frozen=True)
class SimTrace:
    """Completed requests of one run as parallel arrays, in grant order.

    The server is serial, so grant order, service order, and completion
    order coincide.  ``batch_tag`` is NO_TAG for untagged grants.

    Requests still waiting when the budget runs out are carried in the
    ``pending_*`` arrays together with ``t_horizon`` (the final
    completion time).  A policy that starves a source outright leaves
    its only evidence there: the wait observed so far, a lower bound on
    the delay the policy actually inflicts.
    """

    config: SimConfig
    source: np.ndarray
    priority: np.ndarray
    t_request: np.ndarray
    t_start: np.ndarray
    t_complete: np.ndarray
    batch_tag: np.ndarray
    pending_source: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    pending_t_request: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.float64))
    t_horizon: float = 0.0

    def __len__(self):
        return len(self.source)

    def requests(self) -> list:
        tags = [None if t == NO_TAG else int(t) for t in self.batch_tag]
        return [SimRequest(int(s), int(p), float(r), float(g), float(c), t)
                for s, p, r, g, c, t in zip(self.source, self.priority,
                                            self.t_request, self.t_start,
                                            self.t_complete, tags)]


def run_sim_trace(config: SimConfig) -> SimTrace:
    """Run one cell to its completion budget; pure in (config, seed)."""
    streams = np.random.SeedSequence(config.rng_seed).spawn(4)
    arrival_rng, size_rng, choice_rng, service_rng = map(np.random.default_rng,
                                                         streams)
    burst_scale = 1.0 / config.burst_rate
    service_scale = 1.0 / config.service_rate
    policy = make_policy(config.policy)
    budget = config.request_budget

    idle = list(range(config.m))         # kept sorted for stable draws
    serving = None                       # (PendingRequest, t_start)
    events = [(float(arrival_rng.exponential(burst_scale)), _EV_BURST)]
    src_out, prio_out, req_out, start_out, done_out, tag_out = \
        [], [], [], [], [], []

    def grant(now: float):
        req = policy.pop()
        duration = float(service_rng.exponential(service_scale))
        heappush(events, (now + duration, _EV_DONE))
        return req, now

    while True:
        t, kind = heappop(events)
        if kind == _EV_DONE:
            req, t_start = serving
            serving = None
            insort(idle, req.source)
            src_out.append(req.source)
            prio_out.append(req.priority)
            req_out.append(req.t_req)
            start_out.append(t_start)
            done_out.append(t)
            tag_out.append(NO_TAG if req.batch_tag is None else req.batch_tag)
            if len(src_out) == budget:
                break
            policy.note_completion()
            if len(policy):
                serving = grant(t)
        else:
            woken = draw_burst(size_rng, choice_rng, idle,
                               config.mean_burst_size)
            if woken:
                gone = set(woken)
                idle = [s for s in idle if s not in gone]
                for src in woken:
                    # source index fixes urgency: source 0 is priority 1
                    policy.add(source=src, priority=src + 1, t_req=t)
            if serving is None and len(policy):
                serving = grant(t)
            heappush(events,
                     (t + float(arrival_rng.exponential(burst_scale)),
                      _EV_BURST))

    waiting = policy.pending()
    return SimTrace(config,
                    np.asarray(src_out, dtype=np.int64),
                    np.asarray(prio_out, dtype=np.int64),
                    np.asarray(req_out, dtype=np.float64),
                    np.asarray(start_out, dtype=np.float64),
                    np.asarray(done_out, dtype=np.float64),
                    np.asarray(tag_out, dtype=np.int64),
                    pending_source=np.asarray([r.source for r in waiting],
                                              dtype=np.int64),
                    pending_t_request=np.asarray([r.t_req for r in waiting],
                                                 dtype=np.float64),
                    t_horizon=float(t))


def run_sim(config: SimConfig) -> list:
    """Completed requests of one run, in grant order."""
    return run_sim_trace(config).requests()


# ---------------------------------------------------------------------------
# Raw trace export
# ---------------------------------------------------------------------------

TRACE_CSV_COLUMNS = ("source", "priority", "t_request", "t_start",
                     "t_complete", "batch_tag", "policy", "seed")


def write_trace_csv(trace: SimTrace, path) -> None:
    """Write one run's completed requests; untagged grants leave the
    batch_tag field empty.  Floats use shortest round-trip form, so a
    rerun of the same (config, seed) reproduces the file byte for byte."""
    cfg = trace.config
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_COLUMNS)
        for s, p, r, g, c, tag in zip(trace.source, trace.priority,
                                      trace.t_request, trace.t_start,
                                      trace.t_complete, trace.batch_tag):
            writer.writerow([int(s), int(p), repr(float(r)), repr(float(g)),
                             repr(float(c)),
                             "" if tag == NO_TAG else int(tag),
                             cfg.policy, cfg.rng_seed])
