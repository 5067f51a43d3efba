"""Transition-latency upper bounds for a fixed allocation.

After a mode-change request, the old mode's pending MD jobs must drain before
the new mode starts.  Per processor, two incomparable upper bounds on that
drain time exist:

* the largest period among the MD tasks placed there (every such job meets a
  deadline at most one period after the request), and
* the synchronous busy period seeded by one job of each placed MD task plus
  the recurring interference of the processor's MI tasks.

The platform-wide bound is the maximum over processors of the smaller of the
two bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .model import (
    MD,
    MI,
    Allocation,
    ModeSystem,
    Task,
    as_time,
    validate_allocation,
)


@dataclass(frozen=True)
class ProcessorLatency:
    """Per-processor latency bounds.

    ``period_bound`` and ``busy_bound`` are absent for a processor hosting no
    MD task (there is nothing to drain); ``busy_bound`` is also absent if the
    busy-period recurrence diverges.  ``effective`` is the minimum of the
    bounds that are present, or 0 when neither is.
    """

    processor: int
    period_bound: Optional[Fraction]
    busy_bound: Optional[Fraction]
    effective: Fraction


@dataclass(frozen=True)
class LatencyReport:
    """Latency bounds for one mode under one allocation, over all processors."""

    mode_id: str
    per_processor: tuple[ProcessorLatency, ...]
    platform_bound: Fraction


def max_period_bound(md_tasks: Iterable[Task]) -> Optional[Fraction]:
    """Largest period among a set of MD tasks; None for the empty set."""
    periods = []
    for task in md_tasks:
        if task.kind != MD:
            raise ValueError(f"task {task.id} is not mode-dependent")
        periods.append(task.period)
    return max(periods) if periods else None


def busy_period(md_wcet_sum, mi_tasks: Iterable[Task]) -> Optional[Fraction]:
    """Least fixed point of ``L = z + sum_j ceil(L / T_j) * C_j`` over the MI tasks.

    ``z`` is the summed execution demand of the MD jobs to drain.  Iteration
    starts at ``L = z`` and, because all values are exact rationals, terminates
    on exact equality.  Returns 0 for ``z = 0`` (nothing to drain) and None
    when the recurrence diverges, which happens exactly when the MI tasks
    alone saturate the processor (utilization >= 1) and ``z > 0``.
    """
    z = as_time(md_wcet_sum, what="md_wcet_sum")
    tasks = list(mi_tasks)
    for task in tasks:
        if task.kind != MI:
            raise ValueError(f"task {task.id} is not mode-independent")
    if z == 0:
        return Fraction(0)
    if sum((t.utilization for t in tasks), Fraction(0)) >= 1:
        return None
    current = z
    while True:
        nxt = z + sum((math.ceil(current / t.period) * t.wcet for t in tasks), Fraction(0))
        if nxt == current:
            return current
        current = nxt


def _effective(period_bound: Optional[Fraction], busy_bound: Optional[Fraction]) -> Fraction:
    present = [b for b in (period_bound, busy_bound) if b is not None]
    return min(present) if present else Fraction(0)


def analyze_allocation(system: ModeSystem, mode_id: str, allocation: Allocation) -> LatencyReport:
    """Per-processor and platform-wide latency bounds for a valid allocation.

    Only the given mode's MD tasks and the static MI tasks are read, so the
    report is independent of whatever runs in any subsequent mode.
    """
    if allocation.mode_id != mode_id:
        raise ValueError(f"allocation is for mode {allocation.mode_id!r}, not {mode_id!r}")
    validate_allocation(system, allocation)
    rows = []
    for p in system.processors:
        placed = [system.task(tid) for tid in allocation.tasks_on(p)]
        period_bound = max_period_bound(placed)
        busy = busy_period(sum((t.wcet for t in placed), Fraction(0)), system.mi_on(p)) if placed else None
        rows.append(
            ProcessorLatency(
                processor=p,
                period_bound=period_bound,
                busy_bound=busy,
                effective=_effective(period_bound, busy),
            )
        )
    return LatencyReport(
        mode_id=mode_id,
        per_processor=tuple(rows),
        platform_bound=max((row.effective for row in rows), default=Fraction(0)),
    )
