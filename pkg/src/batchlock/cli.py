"""Command-line front end: sweeps, benchmarks, verification, summaries.

Experiments are declared in a TOML file with one table per mode; grid
axes are explicit lists and the sweep is their cartesian product, so an
experiment definition can be reviewed line by line.  Example::

    mode = "sim"

    [sim]
    m = [64]
    mean_burst_size = [8, 32]
    burst_fraction = [0.001, 0.01, 0.1, 1.0]
    policy = ["FL", "PL", "BPL"]
    seeds = [1, 2, 3]

Outputs land in the --out directory: ``results.csv`` (versioned header,
byte-identical when rerun with the same seeds), optional
``results.json`` mirror, and ``manifest.json`` recording the resolved
config, tool version and machine fingerprint.  Benchmark runs add
``overhead.csv``.  Exit codes: 0 ok, 1 invariant violation, 2 config
error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor

import tomli

from . import __version__, bpl
from .disciplines import make_discipline
from .explore import explore
from .harness import (
    BenchConfig,
    default_pin_map,
    measure_uncontested,
    run_contended,
    samples_to_trace,
    verify_trace,
    write_overhead_csv,
)
from .metrics import (
    CellResult,
    build_delay_table,
    cell_result,
    count_inversions,
    normalize,
    read_results_csv,
    weighted_mean_delay,
    write_results_csv,
)
from .simqueue import SimConfig, run_sim_trace
from .trace import TraceRecorder


class ConfigError(ValueError):
    """Bad experiment definition; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}")


def _section(config: dict, mode: str) -> dict:
    declared = config.get("mode")
    if declared is not None and declared != mode:
        raise ConfigError(f"config declares mode {declared!r} but the "
                          f"{mode!r} subcommand was invoked")
    stray = set(config) - {"mode", mode}
    if stray:
        raise ConfigError(f"unknown top-level keys {sorted(stray)}")
    if mode not in config:
        raise ConfigError(f"config is missing its [{mode}] section")
    body = config[mode]
    if not isinstance(body, dict):
        raise ConfigError(f"[{mode}] must be a table")
    return body


def _aslist(value):
    return list(value) if isinstance(value, list) else [value]


def _take(section: dict, known: dict) -> dict:
    """Pop known keys with defaults; reject anything left over."""
    out = {}
    body = dict(section)
    for key, default in known.items():
        out[key] = body.pop(key, default)
    if body:
        raise ConfigError(f"unknown keys in config section: {sorted(body)}")
    return out


_REQUIRED = object()


def _require(values: dict, section_name: str):
    missing = [k for k, v in values.items() if v is _REQUIRED]
    if missing:
        raise ConfigError(f"[{section_name}] is missing {sorted(missing)}")


def _seed_list(values: dict, override) -> list:
    seeds = _aslist(override.split(",") if isinstance(override, str)
                    else values["seeds"])
    try:
        seeds = [int(s) for s in seeds]
    except (TypeError, ValueError):
        raise ConfigError(f"seeds must be integers, got {seeds!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be distinct, got {seeds}")
    return seeds


# ---------------------------------------------------------------------------
# sim mode
# ---------------------------------------------------------------------------

def _sim_cells(section: dict, seeds_override) -> list:
    values = _take(section, {
        "m": _REQUIRED,
        "mean_burst_size": _REQUIRED,
        "burst_fraction": _REQUIRED,
        "policy": _REQUIRED,
        "seeds": _REQUIRED,
        "service_rate": 0.01,
        "request_budget": None,
    })
    _require(values, "sim")
    seeds = _seed_list(values, seeds_override)
    cells = []
    grid = itertools.product(_aslist(values["m"]),
                             _aslist(values["mean_burst_size"]),
                             _aslist(values["burst_fraction"]),
                             _aslist(values["policy"]),
                             seeds)
    for m, mbs, frac, policy, seed in grid:
        try:
            cells.append(SimConfig(m=m, mean_burst_size=mbs,
                                   burst_fraction=frac, policy=policy,
                                   rng_seed=seed,
                                   service_rate=values["service_rate"],
                                   request_budget=values["request_budget"]))
        except ValueError as exc:
            raise ConfigError(str(exc))
    if not cells:
        raise ConfigError("the sim grid is empty")
    return cells


def _sim_cell_row(cfg: SimConfig) -> CellResult:
    return cell_result(run_sim_trace(cfg))


def _write_failure_marker(out_dir: str, exc: BaseException) -> None:
    with open(os.path.join(out_dir, "FAILED"), "w") as fh:
        fh.write(f"run aborted: {exc!r}\n")


def _fingerprint() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "machine": platform.machine(),
        "cpus": os.cpu_count(),
    }


def _write_manifest(out_dir, mode, config, rows):
    manifest = {
        "version": __version__,
        "mode": mode,
        "config": config,
        "rows": rows,
        "fingerprint": _fingerprint(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_rows(rows, out_dir, fmt) -> None:
    write_results_csv(rows, os.path.join(out_dir, "results.csv"))
    if fmt == "json":
        from .metrics import RESULTS_CSV_COLUMNS
        data = [{col: getattr(r, col) for col in RESULTS_CSV_COLUMNS}
                for r in rows]
        with open(os.path.join(out_dir, "results.json"), "w") as fh:
            json.dump(data, fh, indent=2)
            fh.write("\n")


def _run_sim(args) -> int:
    config = _load_config(args.config)
    cells = _sim_cells(_section(config, "sim"), args.seeds)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    try:
        if args.threads > 1:
            with ProcessPoolExecutor(max_workers=args.threads) as pool:
                rows = list(pool.map(_sim_cell_row, cells))
        else:
            rows = [_sim_cell_row(cfg) for cfg in cells]
        if any(cfg.policy == "FL" for cfg in cells):
            normalize(rows)
    except BaseException as exc:
        _emit_rows(rows, args.out, args.format)   # flush partial results
        _write_failure_marker(args.out, exc)
        raise
    _emit_rows(rows, args.out, args.format)
    _write_manifest(args.out, "sim", config, len(rows))
    print(f"sim: {len(rows)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# bench mode
# ---------------------------------------------------------------------------

def _bench_cells(section: dict, seeds_override):
    values = _take(section, {
        "m": _REQUIRED,
        "discipline": _REQUIRED,
        "scheme": _REQUIRED,
        "lam_frac": _REQUIRED,
        "seeds": _REQUIRED,
        "cs_ns": 70_000,
        "request_budget": 80_000,
        "overhead_samples": 10_000,
        "pin": None,
    })
    _require(values, "bench")
    seeds = _seed_list(values, seeds_override)
    cells = []
    grid = itertools.product(_aslist(values["m"]),
                             _aslist(values["discipline"]),
                             _aslist(values["scheme"]),
                             _aslist(values["lam_frac"]),
                             seeds)
    for m, discipline, scheme, lam_frac, seed in grid:
        pin = values["pin"]
        try:
            if pin is None:
                pin = default_pin_map(m)
            cells.append(BenchConfig(m=m, discipline=discipline,
                                     scheme=scheme, lam_frac=lam_frac,
                                     cs_ns=values["cs_ns"],
                                     request_budget=values["request_budget"],
                                     rng_seed=seed,
                                     pin=tuple(pin) if pin else None))
        except ValueError as exc:
            raise ConfigError(str(exc))
    if not cells:
        raise ConfigError("the bench grid is empty")
    return cells, values["overhead_samples"]


def bench_cell_row(cfg: BenchConfig, samples) -> CellResult:
    """Aggregate one contended run into the shared results schema.

    The bench has no burst generator, so the burst-size column is 0.
    """
    trace = samples_to_trace(samples)
    table = build_delay_table(trace, cfg.m)
    inv = count_inversions(trace)
    return CellResult(m=cfg.m, mbs=0, lam_frac=cfg.lam_frac,
                      policy=cfg.discipline, seed=cfg.rng_seed,
                      inversion_pct=inv.affected_pct,
                      inversion_instances=inv.instances,
                      d_w=weighted_mean_delay(table),
                      d_highest_priority=table.highest_priority_delay,
                      d_max=table.max_delay)


def _run_bench(args) -> int:
    config = _load_config(args.config)
    cells, overhead_samples = _bench_cells(_section(config, "bench"),
                                           args.seeds)
    os.makedirs(args.out, exist_ok=True)
    disciplines = sorted({cfg.discipline for cfg in cells})
    rows = []
    try:
        reports = [measure_uncontested(d, samples=overhead_samples)
                   for d in disciplines]
        write_overhead_csv(reports, os.path.join(args.out, "overhead.csv"))
        for cfg in cells:                      # exclusive, never pooled
            rows.append(bench_cell_row(cfg, run_contended(cfg)))
        if "FL" in disciplines:
            normalize(rows)
    except BaseException as exc:
        _emit_rows(rows, args.out, args.format)
        _write_failure_marker(args.out, exc)
        raise
    _emit_rows(rows, args.out, args.format)
    _write_manifest(args.out, "bench", config, len(rows))
    print(f"bench: {len(reports)} overhead reports, {len(rows)} rows "
          f"-> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# verify mode
# ---------------------------------------------------------------------------

def _verify_settings(args) -> dict:
    defaults = {
        "m": 4,
        "stress_acquisitions": 20_000,
        "explore_threads": [2, 3],
        "explore_cycles": 1,
        "cs_ticks": 1,
    }
    if args.config is None:
        values = defaults
    else:
        values = _take(_section(_load_config(args.config), "verify"),
                       {k: v for k, v in defaults.items()})
    if args.quick:
        values = dict(values, stress_acquisitions=2_000,
                      explore_threads=[2])
    return values


def _verify_unlock_arithmetic() -> list:
    """Exhaustive 16-bit check of the batch-word advance identity."""
    issues = []
    for k in range(1, 5):
        mask = (1 << k) - 1
        for v in range(1 << 16):
            want = ((v & ~mask) + (1 << k)) & 0xFFFF
            got = bpl.next_batch_word(v, k, bits=16)
            if got != want:
                issues.append(f"next_batch_word({v}, {k}) = {got}, want {want}")
                break
    return issues


def _verify_exploration(threads, cycles, cs_ticks) -> list:
    issues = []
    for name in ("SL", "FL", "BPL"):
        for t in threads:
            rep = explore(name, t, cycles=cycles, cs_ticks=cs_ticks)
            if not rep.every_acquire_completes:
                issues.append(
                    f"{name} m={t}: deadlocks={rep.deadlocks} "
                    f"livelocks={rep.livelock_sccs} capped={rep.capped} "
                    f"violations={rep.violations[:3]}")
    return issues


def _verify_stress(name, m, acquisitions) -> list:
    """Back-to-back acquire/release cycles with the recorder attached.

    Sections here are zero-length, so a runner can lap a waiter inside
    one scheduler quantum; the bypass bound's progress premise does not
    survive that, hence ``bypass_gate=False``.  The contended phase
    gates the bound instead.
    """
    import threading
    per_thread = max(1, acquisitions // m)
    rec = TraceRecorder(m, capacity=1 << (per_thread * m * 3 + 64).bit_length())
    lock = make_discipline(name, m, recorder=rec)
    gate = threading.Barrier(m)

    def worker(idx):
        prio = idx + 1
        gate.wait()
        for _ in range(per_thread):
            lock.acquire(prio, idx)
            lock.release()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True)
               for i in range(m)]
    prior = sys.getswitchinterval()
    sys.setswitchinterval(5e-5)
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(prior)
    verdict = verify_trace(rec.merge(), m, name, bypass_gate=False)
    return list(verdict.issues)


def _verify_contended_bypass(m, budget) -> list:
    """Instrumented contended run; the bypass bound is a hard gate here.

    The default-length busy section dwarfs both the scheduler quantum
    and the stall-excusal threshold, so a wait that saw more grants
    than the bound allows without a quantum-scale gap is a real
    ordering failure, not timing noise.
    """
    cfg = BenchConfig(m=m, discipline="BPL", scheme="equal", lam_frac=1.0,
                      request_budget=budget, rng_seed=1)
    rec = TraceRecorder(m, capacity=1 << (budget * 4 + 64).bit_length())
    run_contended(cfg, recorder=rec)
    verdict = verify_trace(rec.merge(), m, "BPL")
    return list(verdict.issues)


def _run_verify(args) -> int:
    settings = _verify_settings(args)
    failures = 0

    def report(label, issues):
        nonlocal failures
        if issues:
            failures += 1
            print(f"FAIL {label}")
            for issue in issues[:5]:
                print(f"     {issue}")
        else:
            print(f"PASS {label}")

    report("unlock arithmetic (16-bit exhaustive, k=1..4)",
           _verify_unlock_arithmetic())
    threads = _aslist(settings["explore_threads"])
    report(f"interleavings explored to termination (threads {threads})",
           _verify_exploration(threads, settings["explore_cycles"],
                               settings["cs_ticks"]))
    for name in ("SL", "FL", "BPL"):
        issues = _verify_stress(name, settings["m"],
                                settings["stress_acquisitions"])
        report(f"{name} instrumented stress "
               f"({settings['stress_acquisitions']} acquisitions, "
               f"m={settings['m']})", issues)
    budget = max(200, settings["stress_acquisitions"] // 10)
    report(f"BPL bounded bypass under contention "
           f"({budget} requests, m={settings['m']})",
           _verify_contended_bypass(settings["m"], budget))
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# summarize mode
# ---------------------------------------------------------------------------

def _summarize_rows(paths) -> list:
    rows = []
    for path in paths:
        try:
            rows.extend(read_results_csv(path))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read results from {path}: {exc}")
    if not rows:
        raise ConfigError("no result rows in the given files")
    try:
        normalize(rows)
    except ValueError as exc:
        raise ConfigError(str(exc))
    return rows


_POLICY_ORDER = {"FL": 0, "PL": 1, "BPL": 2, "SL": 3}


def _summary_table(rows) -> str:
    cells = {}
    for r in rows:
        cells.setdefault((r.m, r.mbs, r.lam_frac, r.policy), []).append(r)
    header = (f"{'m':>3} {'mbs':>4} {'lam_frac':>9} {'policy':>6} "
              f"{'seeds':>5} {'d_w_norm':>9} {'min':>8} {'max':>8} "
              f"{'inv_pct':>8} {'d_hp':>12}")
    lines = [header, "-" * len(header)]
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2],
                                            _POLICY_ORDER.get(k[3], 9))):
        group = cells[key]
        norm = [r.d_w_normalized for r in group]
        inv = sum(r.inversion_pct for r in group) / len(group)
        d_hp = sum(r.d_highest_priority for r in group) / len(group)
        m, mbs, lam_frac, policy = key
        lines.append(f"{m:>3} {mbs:>4} {lam_frac:>9.4g} {policy:>6} "
                     f"{len(group):>5} {sum(norm) / len(norm):>9.4f} "
                     f"{min(norm):>8.4f} {max(norm):>8.4f} "
                     f"{inv:>8.3f} {d_hp:>12.4g}")
    return "\n".join(lines)


def _run_summarize(args) -> int:
    table = _summary_table(_summarize_rows(args.results))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "summary.txt")
        with open(path, "w") as fh:
            fh.write(table + "\n")
        print(f"summary -> {path}")
    print(table)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchlock",
        description="Run lock-discipline simulations, benchmarks and "
                    "verification suites.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run the simulation sweep from a config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seeds", help="comma-separated override of config seeds")
    sim.add_argument("--format", choices=("csv", "json"), default="csv")
    sim.add_argument("--threads", type=int, default=1,
                     help="worker processes for sim cells")

    bench = sub.add_parser("bench", help="run native benchmarks (exclusive)")
    bench.add_argument("--config", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--seeds", help="comma-separated override of config seeds")
    bench.add_argument("--format", choices=("csv", "json"), default="csv")

    verify = sub.add_parser("verify",
                            help="run invariant suites; exit 0 iff all hold")
    verify.add_argument("--config")
    verify.add_argument("--quick", action="store_true",
                        help="smaller bounds for a fast smoke check")

    summarize = sub.add_parser("summarize",
                               help="aggregate result CSVs into a table")
    summarize.add_argument("results", nargs="+")
    summarize.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "sim": _run_sim,
        "bench": _run_bench,
        "verify": _run_verify,
        "summarize": _run_summarize,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
