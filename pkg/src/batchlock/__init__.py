"""Batched priority lock with baselines, a queueing simulator for lock
disciplines, inversion/delay metrics, a measurement harness, and a CLI.

The lock algorithms are encoded once as atomic-step machines; real-thread
locks (``disciplines``), deterministic schedule replay and exhaustive
interleaving exploration (``explore``) all execute that one encoding.
"""

from .atomics import UMAX, WORD_BITS, PlainWords, ThreadedWords
from .disciplines import (
    BatchedPriorityLock,
    LockDiscipline,
    TestAndSetLock,
    Ticket,
    TicketLock,
    make_discipline,
)
from .explore import ExploreReport, ScheduleDriver, explore
from .metrics import (
    CellResult,
    DelayTable,
    InversionReport,
    build_delay_table,
    cell_result,
    count_inversions,
    normalize,
    weighted_mean_delay,
)
from .simqueue import SimConfig, SimRequest, SimTrace, run_sim, run_sim_trace
from .trace import Trace, TraceRecorder

__all__ = [
    "UMAX",
    "WORD_BITS",
    "PlainWords",
    "ThreadedWords",
    "BatchedPriorityLock",
    "LockDiscipline",
    "TestAndSetLock",
    "Ticket",
    "TicketLock",
    "make_discipline",
    "ExploreReport",
    "ScheduleDriver",
    "explore",
    "CellResult",
    "DelayTable",
    "InversionReport",
    "build_delay_table",
    "cell_result",
    "count_inversions",
    "normalize",
    "weighted_mean_delay",
    "SimConfig",
    "SimRequest",
    "SimTrace",
    "run_sim",
    "run_sim_trace",
    "Trace",
    "TraceRecorder",
]

__version__ = "0.1.0"
