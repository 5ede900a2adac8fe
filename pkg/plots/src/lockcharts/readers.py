"""Readers for the versioned CSV files the measurement CLI emits.

The chart tool consumes only these published schemas; nothing here
imports from the measurement package, so the two install and run
independently.  Each reader checks the schema line and the header
before touching any row, and returns plain dicts with typed values.
"""

from __future__ import annotations

import csv

RESULTS_SCHEMA_LINE = "# schema: results/1"
RESULTS_COLUMNS = ("m", "mbs", "lam_frac", "policy", "seed",
                   "inversion_pct", "inversion_instances", "d_w",
                   "d_w_normalized", "d_highest_priority", "d_max")

OVERHEAD_SCHEMA_LINE = "# schema: overhead/1"
OVERHEAD_COLUMNS = ("discipline", "min", "median", "p999", "max", "samples")


class SchemaError(ValueError):
    """Input file does not carry the expected versioned schema."""


def _records(path: str, schema_line: str, columns: tuple):
    with open(path, newline="") as fh:
        found = fh.readline().strip()
        if found != schema_line:
            raise SchemaError(f"{path}: schema line {found!r}, "
                              f"want {schema_line!r}")
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        yield from reader


def read_results(paths) -> list:
    """Rows from one or more results CSVs, numeric fields coerced.

    ``d_w_normalized`` is None when the producing run had no baseline
    to normalize against (the column is empty in the file).
    """
    rows = []
    for path in paths:
        for rec in _records(path, RESULTS_SCHEMA_LINE, RESULTS_COLUMNS):
            rows.append({
                "m": int(rec["m"]),
                "mbs": int(rec["mbs"]),
                "lam_frac": float(rec["lam_frac"]),
                "policy": rec["policy"],
                "seed": int(rec["seed"]),
                "inversion_pct": float(rec["inversion_pct"]),
                "inversion_instances": int(rec["inversion_instances"]),
                "d_w": float(rec["d_w"]),
                "d_w_normalized": (None if rec["d_w_normalized"] == ""
                                   else float(rec["d_w_normalized"])),
                "d_highest_priority": float(rec["d_highest_priority"]),
                "d_max": float(rec["d_max"]),
            })
    return rows


def read_overhead(paths) -> list:
    rows = []
    for path in paths:
        for rec in _records(path, OVERHEAD_SCHEMA_LINE, OVERHEAD_COLUMNS):
            rows.append({
                "discipline": rec["discipline"],
                "min": float(rec["min"]),
                "median": float(rec["median"]),
                "p999": float(rec["p999"]),
                "max": float(rec["max"]),
                "samples": int(rec["samples"]),
            })
    return rows
