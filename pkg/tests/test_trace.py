"""Trace invariant checkers against hand-built event sequences.

Each checker gets a passing case and a deliberately broken case, so a
regression that silences a detector fails here rather than hiding whatever
it was supposed to catch.
"""

import itertools

from batchlock.trace import (
    KIND_ACQUIRE,
    TraceRecorder,
    check_batch_cardinality,
    check_batch_fifo,
    check_bounded_bypass,
    check_mutual_exclusion,
    check_ticket_order,
    priority_order_fraction,
)


def recorder(cores=4, capacity=64):
    tick = itertools.count()
    return TraceRecorder(cores, capacity=capacity, clock=lambda: next(tick))


def test_mutual_exclusion_clean():
    r = recorder()
    for core in (0, 1, 0):
        r.request(core, 1)
        r.acquire(core, 1, None)
        r.release(core, 1, None)
    assert check_mutual_exclusion(r.merge()) == []


def test_mutual_exclusion_tolerates_one_unreleased_tail():
    r = recorder()
    r.acquire(0, 1, None)
    r.release(0, 1, None)
    r.acquire(1, 1, None)
    assert check_mutual_exclusion(r.merge()) == []


def test_mutual_exclusion_flags_overlap():
    r = recorder()
    r.acquire(0, 1, None)
    r.acquire(1, 1, None)   # second owner before the first released
    r.release(0, 1, None)
    r.release(1, 1, None)
    problems = check_mutual_exclusion(r.merge())
    assert any("overlap" in p for p in problems)


def test_mutual_exclusion_flags_count_mismatch_and_drops():
    r = recorder(capacity=2)
    r.acquire(0, 1, None)
    r.release(0, 1, None)
    r.acquire(0, 1, None)
    r.release(0, 1, None)   # dropped: capacity is per core
    problems = check_mutual_exclusion(r.merge())
    assert any("dropped" in p for p in problems)


def test_bounded_bypass_counts_foreign_grants():
    r = recorder()
    r.request(0, 1)
    for _ in range(2):      # two grants pass core 0 while it waits
        r.request(1, 1)
        r.acquire(1, 1, None)
        r.release(1, 1, None)
    r.acquire(0, 1, None)
    r.release(0, 1, None)
    trace = r.merge()
    report = check_bounded_bypass(trace, m=2)
    assert report.max_foreign == 2
    assert report.violations == 1
    assert not report.clean
    assert check_bounded_bypass(trace, m=3).clean


def test_bounded_bypass_excuses_measured_stall():
    r = recorder()
    r.request(0, 1)
    for _ in range(2):
        r.request(1, 1)
        r.acquire(1, 1, None)
        r.release(1, 1, None)
    r.acquire(0, 1, None, stall=10_000_000)
    r.release(0, 1, None)
    report = check_bounded_bypass(r.merge(), m=2, stall_threshold_ns=1_000_000)
    assert report.violations == 0
    assert report.excused == 1
    assert report.stalled_waits == 1
    assert report.clean


def test_batch_cardinality_within_epoch():
    r = recorder()
    for core in (0, 1, 2):   # batch 0 granted to 3 cores, m-1 is 2
        r.acquire(core, 1, 0)
        r.release(core, 1, 0)
    assert check_batch_cardinality(r.merge(), m=3)
    assert check_batch_cardinality(r.merge(), m=4) == []


def test_batch_reset_marker_starts_new_epoch():
    r = recorder()
    r.acquire(0, 1, 0)
    r.release(0, 1, 0)
    r.acquire(1, 1, 0)
    r.release(1, 1, 0)
    r.batch_reset(2, 8)      # ID rewound; the next batch 0 is a new epoch
    r.acquire(2, 1, 0)
    r.release(2, 1, 0)
    trace = r.merge()
    assert check_batch_cardinality(trace, m=3) == []
    assert check_batch_fifo(trace) == []


def test_batch_fifo_flags_backward_grant():
    r = recorder()
    r.acquire(0, 1, 1)
    r.release(0, 1, 1)
    r.acquire(1, 1, 0)
    r.release(1, 1, 0)
    assert check_batch_fifo(r.merge())
    ok = recorder()
    ok.acquire(0, 1, 1)
    ok.release(0, 1, 1)
    ok.batch_reset(0, 16)
    ok.acquire(1, 1, 0)
    ok.release(1, 1, 0)
    assert check_batch_fifo(ok.merge()) == []


def test_fast_path_grants_are_outside_batch_checks():
    r = recorder()
    for core in (0, 1, 2):
        r.acquire(core, 1, None)   # fast path: no batch
        r.release(core, 1, None)
    trace = r.merge()
    assert check_batch_cardinality(trace, m=3) == []
    assert check_batch_fifo(trace) == []


def test_ticket_order_check():
    r = recorder()
    for i, core in enumerate((0, 1, 0)):
        r.acquire(core, 1, i)
    assert check_ticket_order(r.merge()) == []
    bad = recorder()
    bad.acquire(0, 1, 0)
    bad.acquire(1, 1, 2)
    bad.acquire(0, 1, 1)
    assert check_ticket_order(bad.merge())


def test_priority_order_fraction():
    r = recorder()
    r.acquire(0, 5, 0)
    r.acquire(1, 7, 0)      # ordered pair (5 then 7)
    r.acquire(2, 6, 0)      # unordered pair (7 then 6)
    trace = r.merge()
    assert priority_order_fraction(trace) == 0.5
    assert len(trace.of_kind(KIND_ACQUIRE)) == 3
