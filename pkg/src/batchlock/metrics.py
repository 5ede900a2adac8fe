"""Delay and priority-inversion metrics over completed-request traces.

A trace is any object with parallel arrays ``source``, ``priority``,
``t_request``, ``t_start`` and ``t_complete`` (the simulator's trace type
fits directly).  The server behind a trace is serial, so grant order is
total; every definition below is phrased against that order.

Delay is waiting time only (grant minus request), so an uncontested
request contributes zero.  The weighted mean assigns the lowest-priority
source weight 1, rising to m for the most urgent source: slowing an
urgent source hurts the figure m times more than slowing the least
urgent one.

An inversion instance pairs a waiting request R with one grant G that is
numerically lower priority (larger value) and whose whole service ran
inside R's wait.  "Inside" is strict on the left: a grant already in
service when R arrived, or issued at R's arrival instant, was decided
before R was visible and does not count (that blocker can be included
with ``include_in_service=True`` for sensitivity runs).  Counted this
way, a strict-priority policy with distinct priorities records exactly
zero instances, which pins the definition down.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np


# ---------------------------------------------------------------------------
# Delay aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayTable:
    """Per-source waiting-delay summary; arrays are indexed by source."""

    mean_delay: np.ndarray
    weight: np.ndarray
    requests: np.ndarray
    max_delay: float

    @property
    def highest_priority_delay(self) -> float:
        return float(self.mean_delay[0])


def build_delay_table(trace, m: int) -> DelayTable:
    """Aggregate a trace's waits per source; every source must appear.

    A trace may carry requests still waiting when it ended
    (``pending_source``, ``pending_t_request``, ``t_horizon``); their
    wait so far is pooled in as a right-censored observation.  Without
    that, a policy that starves a source would have no defined delay at
    all, when the truthful statement is "at least the whole horizon".
    """
    src = np.asarray(trace.source)
    delay = np.asarray(trace.t_start) - np.asarray(trace.t_request)
    pend_src = np.asarray(getattr(trace, "pending_source", ()), dtype=np.int64)
    if len(pend_src):
        pend_delay = (float(trace.t_horizon)
                      - np.asarray(trace.pending_t_request))
        src = np.concatenate([src, pend_src])
        delay = np.concatenate([delay, pend_delay])
    counts = np.bincount(src, minlength=m)
    if (counts == 0).any():
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"no completed requests for source(s) {missing}")
    sums = np.bincount(src, weights=delay, minlength=m)
    return DelayTable(mean_delay=sums / counts,
                      weight=np.arange(m, 0, -1),
                      requests=counts,
                      max_delay=float(delay.max()))


def weighted_mean_delay(table: DelayTable) -> float:
    w = np.asarray(table.weight, dtype=np.float64)
    return float(np.dot(w, table.mean_delay) / w.sum())


# ---------------------------------------------------------------------------
# Inversion counting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InversionReport:
    instances: int
    affected: int
    total_requests: int
    per_source_instances: np.ndarray
    per_source_affected: np.ndarray

    @property
    def affected_pct(self) -> float:
        if self.total_requests == 0:
            return 0.0
        return 100.0 * self.affected / self.total_requests


def _grant_order(trace):
    """Validate the serial-server shape and return grant-ordered arrays."""
    start = np.asarray(trace.t_start, dtype=np.float64)
    order = np.argsort(start, kind="stable")
    start = start[order]
    done = np.asarray(trace.t_complete, dtype=np.float64)[order]
    if np.any(done[:-1] > start[1:]):
        raise ValueError("malformed trace: service intervals overlap")
    req = np.asarray(trace.t_request, dtype=np.float64)[order]
    prio = np.asarray(trace.priority, dtype=np.int64)[order]
    src = np.asarray(trace.source, dtype=np.int64)[order]
    return src, prio, req, start, done


def _in_service_extra(prio, req, start, done):
    """Per-request count (0 or 1) charging the grant in service at arrival."""
    idx = np.searchsorted(start, req, side="right") - 1
    ok = idx >= 0
    blocker = np.where(ok, idx, 0)
    extra = ok & (done[blocker] > req) & (prio[blocker] > prio)
    return extra.astype(np.int64)


def count_inversions(trace, include_in_service: bool = False) -> InversionReport:
    """Count inversion instances with one pass per priority level."""
    src, prio, req, start, done = _grant_order(trace)
    n = len(src)
    lo = np.searchsorted(start, req, side="right")
    hi = np.searchsorted(start, start, side="left")
    instances = np.zeros(n, dtype=np.int64)
    for p in np.unique(prio):
        mask = prio == p
        worse = np.concatenate(([0], np.cumsum(prio > p)))
        instances[mask] = worse[hi[mask]] - worse[lo[mask]]
    if include_in_service:
        instances += _in_service_extra(prio, req, start, done)
    return _report(src, instances, n)


def count_inversions_reference(trace,
                               include_in_service: bool = False) -> InversionReport:
    """Quadratic reference: rescan the definition for every request."""
    src, prio, req, start, done = _grant_order(trace)
    n = len(src)
    instances = np.zeros(n, dtype=np.int64)
    for i in range(n):
        inside = (start > req[i]) & (done <= start[i]) & (prio > prio[i])
        count = int(np.count_nonzero(inside))
        if include_in_service:
            serving = (start <= req[i]) & (done > req[i]) & (prio > prio[i])
            count += int(np.count_nonzero(serving))
        instances[i] = count
    return _report(src, instances, n)


def _report(src, instances, n):
    m = int(src.max()) + 1 if n else 0
    per_inst = np.bincount(src, weights=instances, minlength=m).astype(np.int64)
    per_aff = np.bincount(src[instances > 0], minlength=m).astype(np.int64)
    return InversionReport(instances=int(instances.sum()),
                           affected=int(np.count_nonzero(instances)),
                           total_requests=n,
                           per_source_instances=per_inst,
                           per_source_affected=per_aff)


# ---------------------------------------------------------------------------
# Sweep-cell rows and normalization
# ---------------------------------------------------------------------------

RESULTS_CSV_COLUMNS = ("m", "mbs", "lam_frac", "policy", "seed",
                       "inversion_pct", "inversion_instances", "d_w",
                       "d_w_normalized", "d_highest_priority", "d_max")

RESULTS_SCHEMA_LINE = "# schema: results/1"


@dataclass
class CellResult:
    """One (config, seed, policy) cell of the sweep; one CSV row."""

    m: int
    mbs: int
    lam_frac: float
    policy: str
    seed: int
    inversion_pct: float
    inversion_instances: int
    d_w: float
    d_w_normalized: Optional[float] = None
    d_highest_priority: float = 0.0
    d_max: float = 0.0

    def cell_key(self):
        return (self.m, self.mbs, self.lam_frac, self.seed)


def cell_result(trace, include_in_service: bool = False) -> CellResult:
    """Aggregate one simulator trace into its sweep-cell row."""
    cfg = trace.config
    table = build_delay_table(trace, cfg.m)
    inv = count_inversions(trace, include_in_service=include_in_service)
    return CellResult(m=cfg.m, mbs=cfg.mean_burst_size,
                      lam_frac=cfg.burst_fraction, policy=cfg.policy,
                      seed=cfg.rng_seed,
                      inversion_pct=inv.affected_pct,
                      inversion_instances=inv.instances,
                      d_w=weighted_mean_delay(table),
                      d_highest_priority=table.highest_priority_delay,
                      d_max=table.max_delay)


def normalize(rows, baseline: str = "FL") -> None:
    """Fill d_w_normalized in place: each cell against the baseline policy
    of the identical (m, mbs, lam_frac, seed) cell."""
    base = {r.cell_key(): r.d_w for r in rows if r.policy == baseline}
    missing = sorted({r.cell_key() for r in rows} - set(base))
    if missing:
        raise ValueError(f"no {baseline} baseline for cell(s) {missing}")
    for r in rows:
        r.d_w_normalized = r.d_w / base[r.cell_key()]


def write_results_csv(rows, path) -> None:
    """Floats use shortest round-trip form; identical rows rewrite byte
    for byte."""
    with open(path, "w", newline="") as fh:
        fh.write(RESULTS_SCHEMA_LINE + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(RESULTS_CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                r.m, r.mbs, repr(float(r.lam_frac)), r.policy, r.seed,
                repr(float(r.inversion_pct)), r.inversion_instances,
                repr(float(r.d_w)),
                "" if r.d_w_normalized is None else repr(float(r.d_w_normalized)),
                repr(float(r.d_highest_priority)), repr(float(r.d_max)),
            ])


def read_results_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        schema = fh.readline().strip()
        if schema != RESULTS_SCHEMA_LINE:
            raise ValueError(f"unexpected schema line {schema!r}, "
                             f"want {RESULTS_SCHEMA_LINE!r}")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != RESULTS_CSV_COLUMNS:
            raise ValueError(f"unexpected results header {reader.fieldnames}")
        for rec in reader:
            rows.append(CellResult(
                m=int(rec["m"]), mbs=int(rec["mbs"]),
                lam_frac=float(rec["lam_frac"]), policy=rec["policy"],
                seed=int(rec["seed"]),
                inversion_pct=float(rec["inversion_pct"]),
                inversion_instances=int(rec["inversion_instances"]),
                d_w=float(rec["d_w"]),
                d_w_normalized=(None if rec["d_w_normalized"] == ""
                                else float(rec["d_w_normalized"])),
                d_highest_priority=float(rec["d_highest_priority"]),
                d_max=float(rec["d_max"])))
    return rows
