"""End-to-end acceptance checks over the full artifact.

Each test gates one shipped property at its stated tolerance and prints
one PASS/FAIL line with the measured quantities (run with ``-s`` to see
the lines for passing checks too).  The heavy inputs (the simulation
sweep, the million-acquisition stress runs, the contended delay runs)
are produced once per session and shared by every check that reads a
different property off the same traces.

Budgets are sized for a small machine: the stress and contended runs
take a couple of minutes each on one core, and the sweep runs the full
64-source grid at ten thousand completions per source.
"""

from __future__ import annotations

import sys
import threading
import time
from types import SimpleNamespace

import numpy as np
import pytest

from batchlock.bpl import next_batch_word
from batchlock.disciplines import make_discipline
from batchlock.explore import explore
from batchlock.harness import (
    BenchConfig,
    measure_uncontested,
    run_contended,
    samples_to_trace,
    verify_trace,
)
from batchlock.metrics import (
    build_delay_table,
    cell_result,
    count_inversions,
    count_inversions_reference,
    weighted_mean_delay,
)
from batchlock.simqueue import SimConfig, run_sim_trace
from batchlock.trace import TraceRecorder


def _gate(label: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# Shared heavy inputs
# ---------------------------------------------------------------------------

GRID_M = 64
GRID_MBS = (8, 32)
GRID_FRACS = (0.01, 0.25, 1.0)
GRID_SEEDS = (101, 202, 303)
GRID_BUDGET = 10_000 * GRID_M
POLICIES = ("FL", "PL", "BPL")

STRESS_M = 4
STRESS_TOTAL = 1_000_000

DELAY_M = 8
DELAY_BUDGET = 80_000
DELAY_SEEDS = (11, 22, 33, 44, 55)


@pytest.fixture(scope="session")
def sim_grid():
    """Scalar summaries of every sweep cell, keyed (mbs, frac, policy, seed).

    Each cell keeps its result row plus, for the batched policy, the
    worst foreign-grant count seen by any wait and the largest number of
    waiters sharing one batch tag.  Traces are dropped as soon as those
    scalars are read off.
    """
    cells = {}
    for mbs in GRID_MBS:
        for frac in GRID_FRACS:
            for seed in GRID_SEEDS:
                for policy in POLICIES:
                    cfg = SimConfig(m=GRID_M, mean_burst_size=mbs,
                                    burst_fraction=frac, policy=policy,
                                    rng_seed=seed,
                                    request_budget=GRID_BUDGET)
                    trace = run_sim_trace(cfg)
                    row = cell_result(trace)
                    max_foreign = max_tag_waiters = 0
                    if policy == "BPL":
                        starts = np.sort(trace.t_start)
                        lo = np.searchsorted(starts, trace.t_request,
                                             side="right")
                        hi = np.searchsorted(starts, trace.t_start,
                                             side="left")
                        max_foreign = int((hi - lo).max())
                        waited = trace.t_start > trace.t_request
                        if waited.any():
                            _, counts = np.unique(trace.batch_tag[waited],
                                                  return_counts=True)
                            max_tag_waiters = int(counts.max())
                    cells[(mbs, frac, policy, seed)] = SimpleNamespace(
                        row=row,
                        max_foreign=max_foreign,
                        max_tag_waiters=max_tag_waiters)
    return cells


def _stress_run(name: str, m: int, total: int):
    """Drive back-to-back acquire/release cycles on real threads.

    Two independent detectors watch the run: a shared in-section depth
    counter that any overlap would push past one, and the merged event
    trace checked afterwards.  Sections are zero length, so the bypass
    bound's progress premise does not apply (a runner can lap a waiter
    inside one scheduler quantum); ordering and cardinality still gate.
    """
    per_thread = total // m
    rec = TraceRecorder(m, capacity=1 << 20)
    lock = make_discipline(name, m, recorder=rec)
    holders = [0]
    overlaps = [0] * m
    gate = threading.Barrier(m)

    def worker(idx):
        prio = idx + 1
        gate.wait()
        acquire, release = lock.acquire, lock.release
        for _ in range(per_thread):
            acquire(prio, idx)
            holders[0] += 1
            if holders[0] != 1:
                overlaps[idx] += 1
            holders[0] -= 1
            release()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True)
               for i in range(m)]
    prior = sys.getswitchinterval()
    sys.setswitchinterval(5e-5)
    t0 = time.perf_counter()
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(prior)
    elapsed = time.perf_counter() - t0
    trace = rec.merge()
    verdict = verify_trace(trace, m, name, bypass_gate=False)
    return SimpleNamespace(verdict=verdict,
                           overlaps=int(sum(overlaps)),
                           acquisitions=per_thread * m,
                           drops=trace.drops,
                           elapsed=elapsed)


@pytest.fixture(scope="session")
def stress_runs():
    return {name: _stress_run(name, STRESS_M, STRESS_TOTAL)
            for name in ("SL", "FL", "BPL")}


@pytest.fixture(scope="session")
def contended_delay_runs():
    """Per-seed (weighted mean delay, highest-priority mean delay) pairs."""
    out = {}
    for name in ("FL", "BPL"):
        per_seed = []
        for seed in DELAY_SEEDS:
            cfg = BenchConfig(m=DELAY_M, discipline=name, scheme="skewed",
                              lam_frac=1.0, request_budget=DELAY_BUDGET,
                              rng_seed=seed)
            table = build_delay_table(samples_to_trace(run_contended(cfg)),
                                      cfg.m)
            per_seed.append((weighted_mean_delay(table),
                             table.highest_priority_delay))
        out[name] = per_seed
    return out


# ---------------------------------------------------------------------------
# Invariant checks
# ---------------------------------------------------------------------------

def test_mutual_exclusion_under_stress(stress_runs):
    bad = []
    parts = []
    for name, run in stress_runs.items():
        overlap_issues = [i for i in run.verdict.issues if "overlap" in i]
        if run.overlaps or overlap_issues or run.drops:
            bad.append(f"{name}: probe={run.overlaps} trace={overlap_issues} "
                       f"drops={run.drops}")
        parts.append(f"{name} {run.acquisitions} acq in {run.elapsed:.0f}s")
    _gate("mutual exclusion, zero overlaps across a million acquisitions "
          "per discipline", not bad,
          "; ".join(parts) if not bad else "; ".join(bad))


def test_bounded_bypass_simulated_and_native(sim_grid):
    m = GRID_M
    worst = max((c.max_foreign, key) for key, c in sim_grid.items()
                if key[2] == "BPL")
    sim_ok = worst[0] <= m - 1

    native_issues = []
    native_notes = []
    for nm, seed in ((4, 3), (8, 1), (8, 2)):
        cfg = BenchConfig(m=nm, discipline="BPL", scheme="equal",
                          lam_frac=1.0, request_budget=3000, rng_seed=seed)
        rec = TraceRecorder(nm, capacity=1 << 16)
        run_contended(cfg, recorder=rec)
        verdict = verify_trace(rec.merge(), nm, "BPL")
        rep = verdict.bypass
        native_issues.extend(i for i in verdict.issues if "bypass" in i)
        native_notes.append(f"m={nm}/seed={seed}: {rep.waits} waits, "
                            f"max foreign {rep.max_foreign}, "
                            f"excused {rep.excused}")
    _gate("bounded bypass, no wait passed by more foreign grants than "
          "contenders minus one", sim_ok and not native_issues,
          f"simulated worst {worst[0]} of bound {m - 1} at cell "
          f"{worst[1][:2]}; native contended runs clean "
          f"({'; '.join(native_notes)})" if sim_ok and not native_issues
          else f"sim worst {worst} native {native_issues}")


def test_batch_cardinality_and_ticket_order(sim_grid, stress_runs):
    m = GRID_M
    worst = max((c.max_tag_waiters, key) for key, c in sim_grid.items()
                if key[2] == "BPL")
    sim_ok = worst[0] <= m - 1
    batch_issues = [i for i in stress_runs["BPL"].verdict.issues
                    if "batch" in i]
    ticket_issues = [i for i in stress_runs["FL"].verdict.issues
                     if "ticket" in i]
    ok = sim_ok and not batch_issues and not ticket_issues
    _gate("batch cardinality within bound and ticket order exact", ok,
          f"simulated worst {worst[0]} waiters of bound {m - 1} per tag; "
          f"native batches within step-level bound of {STRESS_M}; ticket "
          f"grant order exact over {stress_runs['FL'].acquisitions} "
          f"acquisitions" if ok
          else f"sim worst {worst} batch={batch_issues} "
               f"ticket={ticket_issues}")


def test_unlock_arithmetic_exhaustive_16bit():
    mismatches = 0
    for k in (1, 2, 3, 4):
        mask = (1 << k) - 1
        for v in range(1 << 16):
            expect = ((v & ~mask) + (1 << k)) & 0xFFFF
            if next_batch_word(v, k, bits=16) != expect:
                mismatches += 1
    _gate("unlock word arithmetic exhaustive over 16-bit space, k in 1..4",
          mismatches == 0, f"{4 * (1 << 16)} cases, {mismatches} mismatches")


def test_exploration_terminates_with_all_acquisitions_completing():
    issues = []
    notes = []
    for name in ("SL", "FL", "BPL"):
        for m in (2, 3, 4):
            if (name, m) == ("BPL", 4):
                continue
            rep = explore(name, m)
            notes.append(f"{name}/{m}: {rep.states}")
            if not rep.every_acquire_completes:
                issues.append(f"{name}/{m}: capped={rep.capped} "
                              f"deadlocks={rep.deadlocks} "
                              f"livelocks={rep.livelock_sccs} "
                              f"violations={rep.violations[:2]}")
    # The four-contender batched space exceeds this machine's memory, so
    # it runs to a state cap: invariants and deadlock-freedom gate on
    # everything explored, while livelock analysis comes from the
    # exhaustive smaller spaces (a cycle cut by the cap is
    # indistinguishable from an exit).
    capped = explore("BPL", 4, max_states=1_200_000)
    notes.append(f"BPL/4: {capped.states} (capped)")
    if capped.violations or capped.deadlocks:
        issues.append(f"BPL/4 within cap: deadlocks={capped.deadlocks} "
                      f"violations={capped.violations[:2]}")
    _gate("every explored interleaving keeps invariants and completes "
          "(2, 3, 4 threads)", not issues,
          "states " + ", ".join(notes) if not issues else "; ".join(issues))


def test_inversion_counts_match_brute_force_oracle(sim_grid):
    rng = np.random.default_rng(424242)
    mismatches = []
    pl_bad = []
    sizes = []
    for i in range(100):
        m = int(rng.choice([8, 16, 64]))
        mbs_options = [x for x in (1, 2, 4, 8, 16, 32) if x <= m // 2]
        mbs = int(rng.choice(mbs_options))
        frac = float(rng.choice([0.01, 0.05, 0.2, 0.5, 1.0]))
        policy = POLICIES[i % 3]
        budget = int(rng.integers(200, 10_001))
        cfg = SimConfig(m=m, mean_burst_size=mbs, burst_fraction=frac,
                        policy=policy, rng_seed=int(rng.integers(0, 2**31)),
                        request_budget=budget)
        trace = run_sim_trace(cfg)
        sizes.append(len(trace))
        for in_service in (False, True):
            fast = count_inversions(trace, include_in_service=in_service)
            ref = count_inversions_reference(trace,
                                             include_in_service=in_service)
            same = (fast.instances == ref.instances
                    and fast.affected == ref.affected
                    and np.array_equal(fast.per_source_instances,
                                       ref.per_source_instances)
                    and np.array_equal(fast.per_source_affected,
                                       ref.per_source_affected))
            if not same:
                mismatches.append((i, in_service))
        if policy == "PL":
            n = count_inversions(trace).instances
            if n:
                pl_bad.append((i, n))
    grid_pl = [(key, c.row.inversion_instances)
               for key, c in sim_grid.items()
               if key[2] == "PL" and c.row.inversion_instances]
    ok = not mismatches and not pl_bad and not grid_pl
    _gate("inversion counts equal the brute-force rescan on 100 random "
          "traces, and strict priority records zero", ok,
          f"trace sizes {min(sizes)}..{max(sizes)}, both counting modes; "
          f"all strict-priority traces at zero instances" if ok
          else f"mismatches={mismatches[:3]} pl={pl_bad[:3]} "
               f"grid_pl={grid_pl[:3]}")


# ---------------------------------------------------------------------------
# Simulation trend checks
# ---------------------------------------------------------------------------

def test_inversion_percentage_ordering_across_grid(sim_grid):
    order_bad = []
    for mbs in GRID_MBS:
        for frac in GRID_FRACS:
            for seed in GRID_SEEDS:
                fl = sim_grid[(mbs, frac, "FL", seed)].row.inversion_pct
                pl = sim_grid[(mbs, frac, "PL", seed)].row.inversion_pct
                bpl = sim_grid[(mbs, frac, "BPL", seed)].row.inversion_pct
                if not (pl <= bpl <= fl):
                    order_bad.append((mbs, frac, seed, pl, bpl, fl))
    gaps = [(sim_grid[(32, 0.01, "BPL", s)].row.inversion_pct
             - sim_grid[(32, 0.01, "PL", s)].row.inversion_pct)
            for s in GRID_SEEDS]
    close_ok = max(gaps) <= 10.0
    ok = not order_bad and close_ok
    _gate("inversion-affected ordering strict-priority <= batched <= fifo "
          "in every cell, and batched within 10 points of strict priority "
          "at the low-rate large-burst cell", ok,
          f"ordering holds in all {len(GRID_MBS) * len(GRID_FRACS) * len(GRID_SEEDS)} "
          f"cells; gaps at that cell {['%.2f' % g for g in gaps]}" if ok
          else f"order violations {order_bad[:3]}; gaps "
               f"{['%.2f' % g for g in gaps]} (bound 10.00)")


def test_weighted_delay_ratios_across_grid(sim_grid):
    over = []
    ratios = {}
    for mbs in GRID_MBS:
        for frac in GRID_FRACS:
            for seed in GRID_SEEDS:
                fl = sim_grid[(mbs, frac, "FL", seed)].row.d_w
                key = (mbs, frac, seed)
                ratios[key] = (sim_grid[(mbs, frac, "BPL", seed)].row.d_w / fl,
                               sim_grid[(mbs, frac, "PL", seed)].row.d_w / fl)
                if ratios[key][0] > 1.05:
                    over.append((key, ratios[key][0]))
    spikes = [(key, r) for key, (b, r) in ratios.items()
              if key[1] == max(GRID_FRACS) and r > 10.0
              and ratios[key][0] <= 1.05]
    worst_bpl = max(b for b, _ in ratios.values())
    ok = not over and bool(spikes)
    _gate("weighted delay of batched within 1.05 of fifo everywhere while "
          "strict priority exceeds 10x in a high-arrival cell", ok,
          f"worst batched/fifo {worst_bpl:.4f}; strict-priority/fifo up to "
          f"{max(r for _, r in spikes):.0f} in {len(spikes)} saturated "
          f"cells" if ok else f"over={over[:3]} spikes={spikes[:3]}")


# ---------------------------------------------------------------------------
# Native benchmark checks
# ---------------------------------------------------------------------------

def test_uncontested_overhead_ratio():
    sl = measure_uncontested("SL", samples=10_000)
    bpl = measure_uncontested("BPL", samples=10_000)
    ratio = bpl.median_ns / sl.median_ns
    _gate("uncontested acquire+release of batched lock within 5x of "
          "test-and-set", ratio <= 5.0,
          f"medians {bpl.median_ns:.0f}ns vs {sl.median_ns:.0f}ns, ratio "
          f"{ratio:.2f}, absolute gap {bpl.median_ns - sl.median_ns:.0f}ns")


def test_contended_skewed_delay_direction(contended_delay_runs):
    fl = contended_delay_runs["FL"]
    bpl = contended_delay_runs["BPL"]
    mean_dw = {k: float(np.mean([d for d, _ in v]))
               for k, v in (("FL", fl), ("BPL", bpl))}
    mean_dhp = {k: float(np.mean([h for _, h in v]))
                for k, v in (("FL", fl), ("BPL", bpl))}
    ratio = mean_dw["BPL"] / mean_dw["FL"]
    ok = ratio < 1.0 and mean_dhp["BPL"] < mean_dhp["FL"]
    _gate("contended skewed-rate run lowers weighted and highest-priority "
          "delay versus fifo", ok,
          f"weighted ratio {ratio:.3f} over {len(DELAY_SEEDS)} seeds; "
          f"highest-priority {mean_dhp['BPL']:.0f}ns vs "
          f"{mean_dhp['FL']:.0f}ns")
