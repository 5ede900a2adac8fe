"""Metrics coverage: delay aggregation and inversion counting.

The weighted-delay examples are fixed arithmetic; inversion counting is
checked against hand-worked scripted traces and against an independent
quadratic reference that rescans the definition for every request.
"""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchlock.metrics import (
    DelayTable,
    build_delay_table,
    cell_result,
    count_inversions,
    count_inversions_reference,
    normalize,
    weighted_mean_delay,
    write_results_csv,
    read_results_csv,
    RESULTS_CSV_COLUMNS,
)
from batchlock.simqueue import SimConfig, run_sim_trace


def trace_of(rows):
    """rows: (source, priority, t_request, t_start, t_complete)."""
    cols = list(zip(*rows))
    return SimpleNamespace(
        source=np.array(cols[0], dtype=np.int64),
        priority=np.array(cols[1], dtype=np.int64),
        t_request=np.array(cols[2], dtype=np.float64),
        t_start=np.array(cols[3], dtype=np.float64),
        t_complete=np.array(cols[4], dtype=np.float64),
    )


def sim(policy, seed=2, frac=0.5, budget=2000, m=8, mbs=4):
    return run_sim_trace(SimConfig(m=m, mean_burst_size=mbs,
                                   burst_fraction=frac, policy=policy,
                                   rng_seed=seed, request_budget=budget))


# ---------------------------------------------------------------------------
# Weighted mean delay
# ---------------------------------------------------------------------------

def test_weighted_mean_delay_worked_example():
    table = DelayTable(mean_delay=np.array([2.0, 4.0, 6.0]),
                       weight=np.array([3, 2, 1]),
                       requests=np.array([5, 5, 5]),
                       max_delay=6.0)
    assert weighted_mean_delay(table) == pytest.approx(10.0 / 3.0)


def test_weighted_mean_delay_of_constant_is_constant():
    table = DelayTable(mean_delay=np.full(4, 7.5), weight=np.array([4, 3, 2, 1]),
                       requests=np.ones(4, dtype=int), max_delay=7.5)
    assert weighted_mean_delay(table) == pytest.approx(7.5)


def test_delay_table_from_trace():
    t = trace_of([
        (0, 1, 0.0, 2.0, 3.0),    # waited 2
        (1, 2, 0.0, 3.0, 4.0),    # waited 3
        (0, 1, 5.0, 9.0, 9.5),    # waited 4
    ])
    table = build_delay_table(t, m=2)
    assert table.mean_delay == pytest.approx([3.0, 3.0])
    assert list(table.weight) == [2, 1]
    assert list(table.requests) == [2, 1]
    assert table.max_delay == 4.0
    assert table.highest_priority_delay == pytest.approx(3.0)


def test_delay_table_requires_every_source():
    t = trace_of([(0, 1, 0.0, 1.0, 2.0)])
    with pytest.raises(ValueError, match="source"):
        build_delay_table(t, m=3)


def test_delay_table_pools_censored_pending_waits():
    # Source 0 completed waits 2 and 4; source 1 completed wait 1 and has
    # a request still waiting 9 at the horizon (20 - 11), pooled in.
    t = trace_of([
        (0, 1, 0.0, 2.0, 3.0),
        (1, 2, 3.0, 4.0, 6.0),
        (0, 1, 10.0, 14.0, 15.0),
    ])
    t.pending_source = np.array([1], dtype=np.int64)
    t.pending_t_request = np.array([11.0])
    t.t_horizon = 20.0
    table = build_delay_table(t, m=2)
    assert table.mean_delay == pytest.approx([3.0, 5.0])
    assert list(table.requests) == [2, 2]
    assert table.max_delay == pytest.approx(9.0)


def test_delay_table_covers_starved_source_only_via_pending():
    # Source 1 never completes anything; its one censored wait of 7
    # (12 - 5) is the only evidence, and it must suffice.
    t = trace_of([
        (0, 1, 0.0, 2.0, 3.0),
        (0, 1, 4.0, 6.0, 7.0),
    ])
    t.pending_source = np.array([1], dtype=np.int64)
    t.pending_t_request = np.array([5.0])
    t.t_horizon = 12.0
    table = build_delay_table(t, m=2)
    assert table.mean_delay == pytest.approx([2.0, 7.0])
    assert list(table.requests) == [2, 1]


def test_delay_table_still_fails_when_a_source_never_appears():
    t = trace_of([(0, 1, 0.0, 1.0, 2.0)])
    t.pending_source = np.array([1], dtype=np.int64)
    t.pending_t_request = np.array([0.5])
    t.t_horizon = 4.0
    with pytest.raises(ValueError, match=r"\[2\]"):
        build_delay_table(t, m=3)


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 10_000))
def test_weighted_mean_delay_bounded_by_extremes(seed):
    table = build_delay_table(sim("FL", seed=seed, budget=500), m=8)
    d_w = weighted_mean_delay(table)
    assert table.mean_delay.min() - 1e-12 <= d_w <= table.mean_delay.max() + 1e-12


def test_lowest_priority_source_has_weight_one():
    table = build_delay_table(sim("PL", budget=500), m=8)
    assert table.weight[-1] == 1 and table.weight[0] == 8


# ---------------------------------------------------------------------------
# Inversion counting: scripted traces
# ---------------------------------------------------------------------------

def test_fifo_reorder_records_one_instance():
    # The most urgent request arrives while a mid-priority request is in
    # service, then FIFO grants an earlier-queued lowest-priority request
    # ahead of it.  The in-service blocker is excluded; the reordered
    # grant counts once.
    t = trace_of([
        (1, 2, 0.0, 0.0, 10.0),
        (2, 3, 1.0, 10.0, 20.0),
        (0, 1, 2.0, 20.0, 22.0),
    ])
    rep = count_inversions(t)
    assert rep.instances == 1
    assert rep.affected == 1
    assert rep.affected_pct == pytest.approx(100.0 / 3.0)
    assert list(rep.per_source_instances) == [1, 0, 0]


def test_in_service_blocker_counts_only_behind_flag():
    t = trace_of([
        (1, 5, 0.0, 0.0, 10.0),
        (0, 1, 2.0, 10.0, 11.0),
    ])
    assert count_inversions(t).instances == 0
    rep = count_inversions(t, include_in_service=True)
    assert rep.instances == 1 and rep.affected == 1


def test_same_instant_grant_is_not_an_inversion():
    # A grant issued at the very instant the urgent request arrives was
    # decided before that request was visible.
    t = trace_of([
        (2, 9, 0.0, 2.0, 5.0),
        (0, 1, 2.0, 5.0, 6.0),
    ])
    assert count_inversions(t).instances == 0


def test_back_to_back_completion_still_counts():
    # The inverted grant completes exactly when the waiter starts.
    t = trace_of([
        (2, 9, 1.0, 2.0, 5.0),
        (0, 1, 1.5, 5.0, 6.0),
    ])
    rep = count_inversions(t)
    assert rep.instances == 1


def test_equal_priority_never_inverts():
    t = trace_of([
        (1, 4, 1.0, 2.0, 5.0),
        (0, 4, 1.5, 5.0, 6.0),
    ])
    assert count_inversions(t).instances == 0


def test_multiple_instances_for_one_waiter():
    t = trace_of([
        (3, 8, 1.0, 2.0, 3.0),
        (2, 9, 1.2, 3.0, 4.0),
        (1, 5, 1.4, 4.0, 5.0),
        (0, 1, 1.1, 5.0, 6.0),
    ])
    rep = count_inversions(t)
    # the priority-1 request is passed by grants of priority 8, 9 and 5;
    # the priority-5 waiter is passed by the 8 and the 9
    assert list(rep.per_source_instances) == [3, 2, 0, 0]
    assert rep.instances == 5
    assert rep.affected == 2


def test_overlapping_services_rejected():
    t = trace_of([
        (0, 1, 0.0, 0.0, 5.0),
        (1, 2, 0.0, 4.0, 6.0),
    ])
    with pytest.raises(ValueError, match="overlap"):
        count_inversions(t)


# ---------------------------------------------------------------------------
# Inversion counting: reference agreement and policy facts
# ---------------------------------------------------------------------------

@settings(deadline=None, max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(["FL", "PL", "BPL"]),
       st.sampled_from([0.05, 0.3, 1.0]), st.booleans())
def test_fast_counter_matches_reference(seed, policy, frac, blocker):
    t = sim(policy, seed=seed, frac=frac, budget=400)
    fast = count_inversions(t, include_in_service=blocker)
    ref = count_inversions_reference(t, include_in_service=blocker)
    assert fast.instances == ref.instances
    assert fast.affected == ref.affected
    assert np.array_equal(fast.per_source_instances, ref.per_source_instances)


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 1.0]))
def test_priority_policy_has_zero_inversions(seed, frac):
    rep = count_inversions(sim("PL", seed=seed, frac=frac, budget=800))
    assert rep.instances == 0
    assert rep.affected_pct == 0.0


def test_report_invariants_on_a_contended_trace():
    rep = count_inversions(sim("FL", frac=1.0, budget=3000))
    assert rep.instances >= rep.affected > 0
    assert 0.0 <= rep.affected_pct <= 100.0
    assert rep.per_source_instances.sum() == rep.instances
    assert rep.per_source_affected.sum() == rep.affected


# ---------------------------------------------------------------------------
# Cell rows, normalization, CSV round trip
# ---------------------------------------------------------------------------

def test_cell_result_fields_and_normalize():
    rows = [cell_result(sim(p, seed=5, frac=0.5, budget=2000)) for p in
            ("FL", "PL", "BPL")]
    normalize(rows)
    by_policy = {r.policy: r for r in rows}
    assert by_policy["FL"].d_w_normalized == pytest.approx(1.0)
    for p in ("PL", "BPL"):
        assert by_policy[p].d_w_normalized == pytest.approx(
            by_policy[p].d_w / by_policy["FL"].d_w)
    for r in rows:
        assert (r.m, r.mbs, r.lam_frac, r.seed) == (8, 4, 0.5, 5)


def test_normalize_requires_baseline_cell():
    rows = [cell_result(sim("PL", seed=5, budget=500))]
    with pytest.raises(ValueError, match="FL"):
        normalize(rows)


def test_normalize_worked_ratio():
    fl = cell_result(sim("FL", seed=9, budget=500))
    bpl = cell_result(sim("BPL", seed=9, budget=500))
    object.__setattr__(fl, "d_w", 100.0)
    object.__setattr__(bpl, "d_w", 84.0)
    normalize([fl, bpl])
    assert bpl.d_w_normalized == pytest.approx(0.84)


def test_results_csv_round_trip(tmp_path):
    rows = [cell_result(sim(p, seed=1, budget=600)) for p in ("FL", "BPL")]
    normalize(rows)
    path = tmp_path / "cells.csv"
    write_results_csv(rows, path)
    again = read_results_csv(path)
    assert len(again) == 2
    for a, b in zip(rows, again):
        for name in RESULTS_CSV_COLUMNS:
            x, y = getattr(a, name), getattr(b, name)
            assert x == pytest.approx(y) if isinstance(x, float) else x == y
    # byte-identical on rewrite
    first = path.read_bytes()
    write_results_csv(rows, path)
    assert path.read_bytes() == first
