"""Exact-arithmetic data model for multimode partitioned real-time systems.

All time values (execution times, periods, deadlines, latencies) are
arbitrary-precision rationals, so every derived quantity -- utilizations,
utilization sums, busy-period fixed points -- is bit-exact.  Comparisons are
therefore free of epsilon tolerances; tests that are tight at equality (a
utilization bound met exactly, a transition deadline with zero slack) give
the correct verdict.

A system consists of ``m`` identical processors, a set of mode-independent
(MI) tasks statically bound to processors, and per-mode sets of
mode-dependent (MD) tasks whose placement is computed by the allocators.
Mode transitions follow a directed graph with no self-loops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

MI = "MI"
MD = "MD"


class SystemValidationError(ValueError):
    """Raised when an input system description violates a model invariant."""


class AllocationError(ValueError):
    """Raised when an MD-task-to-processor assignment is invalid for a mode."""


def parse_exact(value, *, what: str = "value") -> Fraction:
    """Convert an integer, decimal string, or fraction string to an exact rational.

    Floats are rejected: a decimal written as a float has already been rounded
    to binary and cannot be recovered exactly.  Use a string instead.
    """
    if isinstance(value, bool):
        raise SystemValidationError(f"{what}: expected a number, got a boolean")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise SystemValidationError(f"{what}: cannot parse {value!r} as an exact number") from exc
    if isinstance(value, float):
        raise SystemValidationError(
            f"{what}: floating-point input {value!r} is inexact; pass an integer or a decimal string"
        )
    raise SystemValidationError(f"{what}: unsupported number type {type(value).__name__}")


def as_time(value, *, what: str = "time value") -> Fraction:
    """Parse an exact, non-negative time value."""
    result = parse_exact(value, what=what)
    if result < 0:
        raise SystemValidationError(f"{what}: must be non-negative, got {result}")
    return result


def format_time(value: Optional[Fraction]) -> str:
    """Render a rational as ``p/q`` (or a plain integer when q == 1)."""
    return "--" if value is None else str(value)


@dataclass(frozen=True)
class Task:
    """One recurrent sporadic task with implicit deadline.

    Attributes:
        id: unique identifier.
        kind: ``"MI"`` (mode-independent) or ``"MD"`` (mode-dependent).
        wcet: worst-case execution time, > 0.
        period: minimal interval between successive releases, >= wcet.
        transition_deadline: for MD tasks only, the relative bound by which the
            task's first job must complete after a mode-change request entering
            its mode.  May be omitted, in which case the deadline check is
            reported as "unchecked".
        home_processor: for MI tasks only, the 1-based static processor binding.
    """

    id: str
    kind: str
    wcet: Fraction
    period: Fraction
    transition_deadline: Optional[Fraction] = None
    home_processor: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise SystemValidationError(f"task id must be a non-empty string, got {self.id!r}")
        if self.kind not in (MI, MD):
            raise SystemValidationError(f"task {self.id}: kind must be 'MI' or 'MD', got {self.kind!r}")
        if self.wcet <= 0:
            raise SystemValidationError(f"task {self.id}: wcet must be positive, got {self.wcet}")
        if self.period <= 0:
            raise SystemValidationError(f"task {self.id}: period must be positive, got {self.period}")
        if self.wcet > self.period:
            raise SystemValidationError(
                f"task {self.id}: wcet {self.wcet} exceeds period {self.period} (utilization > 1)"
            )
        if self.kind == MI:
            if self.home_processor is None:
                raise SystemValidationError(f"task {self.id}: MI tasks require a processor binding")
            if self.transition_deadline is not None:
                raise SystemValidationError(f"task {self.id}: MI tasks take no transition deadline")
        else:
            if self.home_processor is not None:
                raise SystemValidationError(
                    f"task {self.id}: MD tasks must not carry a static processor; allocation is computed"
                )

    @property
    def utilization(self) -> Fraction:
        """wcet / period, exact."""
        return self.wcet / self.period


@dataclass(frozen=True)
class Mode:
    """A mode: an identifier plus the set of MD tasks it runs."""

    id: str
    md_tasks: tuple[str, ...]


@dataclass(frozen=True)
class ModeGraph:
    """Directed mode-transition graph.

    Edge labels (worst-case transition delays) are never stored: the delay of a
    transition depends only on the source mode, so labels are always derived
    from the per-mode latency analysis.
    """

    modes: tuple[Mode, ...]
    edges: tuple[tuple[str, str], ...]

    def mode(self, mode_id: str) -> Mode:
        for mode in self.modes:
            if mode.id == mode_id:
                return mode
        raise SystemValidationError(f"unknown mode {mode_id!r}")

    def mode_ids(self) -> tuple[str, ...]:
        return tuple(mode.id for mode in self.modes)

    def predecessors(self, mode_id: str) -> tuple[str, ...]:
        self.mode(mode_id)
        return tuple(sorted({src for src, dst in self.edges if dst == mode_id}))

    def successors(self, mode_id: str) -> tuple[str, ...]:
        self.mode(mode_id)
        return tuple(sorted({dst for src, dst in self.edges if src == mode_id}))


@dataclass(frozen=True)
class ModeSystem:
    """A validated multimode system on ``processor_count`` identical processors.

    Immutable after construction; every derived accessor is a pure function,
    so instances may be shared freely across threads.
    """

    processor_count: int
    mi_tasks: tuple[Task, ...]
    md_tasks: tuple[Task, ...]
    mode_graph: ModeGraph
    _by_id: Mapping[str, Task] = field(repr=False, hash=False, compare=False, default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {t.id: t for t in self.mi_tasks + self.md_tasks})

    @property
    def processors(self) -> range:
        """1-based processor indices."""
        return range(1, self.processor_count + 1)

    def task(self, task_id: str) -> Task:
        try:
            return self._by_id[task_id]
        except KeyError:
            raise SystemValidationError(f"unknown task {task_id!r}") from None

    def mode(self, mode_id: str) -> Mode:
        return self.mode_graph.mode(mode_id)

    def mode_ids(self) -> tuple[str, ...]:
        return self.mode_graph.mode_ids()

    def md_tasks_of(self, mode_id: str) -> tuple[Task, ...]:
        return tuple(self.task(tid) for tid in self.mode(mode_id).md_tasks)

    def mi_on(self, processor: int) -> tuple[Task, ...]:
        return tuple(t for t in self.mi_tasks if t.home_processor == processor)

    def mi_utilization(self, processor: int) -> Fraction:
        return sum((t.utilization for t in self.mi_on(processor)), Fraction(0))


@dataclass(frozen=True)
class Allocation:
    """An assignment of one mode's MD tasks to processors (1-based indices)."""

    mode_id: str
    assignment: Mapping[str, int]

    def tasks_on(self, processor: int) -> tuple[str, ...]:
        return tuple(sorted(tid for tid, p in self.assignment.items() if p == processor))


@dataclass(frozen=True)
class UtilizationSummary:
    """Aggregate utilization figures for one mode (MI tasks plus the mode's MD tasks)."""

    mode_id: str
    u_sum: Fraction
    u_max: Fraction
    per_processor_mi: tuple[Fraction, ...]


@dataclass(frozen=True)
class DeadlineVerdict:
    """Outcome of a transition-deadline check for one MD task.

    ``checked`` is False when the task has no transition deadline; such a
    verdict passes vacuously and carries no slack.
    """

    task_id: str
    latency: Fraction
    passed: bool
    slack: Optional[Fraction]
    checked: bool


def _parse_task(raw: Mapping, index: int) -> Task:
    if not isinstance(raw, Mapping):
        raise SystemValidationError(f"tasks[{index}]: expected an object")
    allowed = {"id", "kind", "wcet", "period", "transition_deadline", "processor"}
    unknown = set(raw) - allowed
    if unknown:
        raise SystemValidationError(f"tasks[{index}]: unknown keys {sorted(unknown)}")
    for key in ("id", "kind", "wcet", "period"):
        if key not in raw:
            raise SystemValidationError(f"tasks[{index}]: missing required key {key!r}")
    task_id = raw["id"]
    if not isinstance(task_id, str):
        raise SystemValidationError(f"tasks[{index}]: id must be a string")
    deadline = raw.get("transition_deadline")
    processor = raw.get("processor")
    if processor is not None and (isinstance(processor, bool) or not isinstance(processor, int)):
        raise SystemValidationError(f"task {task_id}: processor must be an integer index")
    return Task(
        id=task_id,
        kind=raw["kind"],
        wcet=as_time(raw["wcet"], what=f"task {task_id} wcet"),
        period=as_time(raw["period"], what=f"task {task_id} period"),
        transition_deadline=None if deadline is None
        else as_time(deadline, what=f"task {task_id} transition_deadline"),
        home_processor=processor,
    )


def build_system(raw: Mapping) -> ModeSystem:
    """Validate a raw (already JSON-decoded) system description.

    Checks every structural invariant: unique ids, MI processor bindings in
    range, per-processor MI utilization at most 1, MD tasks belonging to
    exactly one mode, and a well-formed transition graph.
    """
    if not isinstance(raw, Mapping):
        raise SystemValidationError("system description must be an object")
    unknown = set(raw) - {"processors", "tasks", "modes", "transitions"}
    if unknown:
        raise SystemValidationError(f"unknown top-level keys {sorted(unknown)}")
    try:
        processor_count = raw["processors"]
        raw_tasks = raw["tasks"]
        raw_modes = raw["modes"]
        raw_transitions = raw["transitions"]
    except KeyError as exc:
        raise SystemValidationError(f"missing top-level key {exc.args[0]!r}") from None
    if isinstance(processor_count, bool) or not isinstance(processor_count, int) or processor_count < 1:
        raise SystemValidationError(f"processors: expected a positive integer, got {processor_count!r}")

    tasks: list[Task] = [_parse_task(t, i) for i, t in enumerate(raw_tasks)]
    seen_ids: set[str] = set()
    for task in tasks:
        if task.id in seen_ids:
            raise SystemValidationError(f"duplicate task id {task.id!r}")
        seen_ids.add(task.id)
    by_id = {t.id: t for t in tasks}

    mi_tasks = tuple(sorted((t for t in tasks if t.kind == MI), key=lambda t: t.id))
    md_tasks = tuple(sorted((t for t in tasks if t.kind == MD), key=lambda t: t.id))
    for task in mi_tasks:
        if not 1 <= task.home_processor <= processor_count:
            raise SystemValidationError(
                f"task {task.id}: processor {task.home_processor} outside 1..{processor_count}"
            )

    modes: list[Mode] = []
    mode_ids: set[str] = set()
    owner: dict[str, str] = {}
    for i, raw_mode in enumerate(raw_modes):
        if not isinstance(raw_mode, Mapping) or set(raw_mode) - {"id", "md_tasks"}:
            raise SystemValidationError(f"modes[{i}]: expected an object with keys id, md_tasks")
        mode_id = raw_mode.get("id")
        if not isinstance(mode_id, str) or not mode_id:
            raise SystemValidationError(f"modes[{i}]: id must be a non-empty string")
        if mode_id in mode_ids:
            raise SystemValidationError(f"duplicate mode id {mode_id!r}")
        mode_ids.add(mode_id)
        members = raw_mode.get("md_tasks", [])
        for tid in members:
            if tid not in by_id:
                raise SystemValidationError(f"mode {mode_id}: unknown task {tid!r}")
            if by_id[tid].kind != MD:
                raise SystemValidationError(f"mode {mode_id}: task {tid} is mode-independent")
            if tid in owner:
                raise SystemValidationError(
                    f"task {tid} belongs to both mode {owner[tid]} and mode {mode_id}"
                )
            owner[tid] = mode_id
        if len(set(members)) != len(members):
            raise SystemValidationError(f"mode {mode_id}: repeated task in md_tasks")
        modes.append(Mode(id=mode_id, md_tasks=tuple(sorted(members))))

    orphans = sorted(t.id for t in md_tasks if t.id not in owner)
    if orphans:
        raise SystemValidationError(f"MD tasks {orphans} belong to no mode")

    edges: list[tuple[str, str]] = []
    for i, raw_edge in enumerate(raw_transitions):
        if not isinstance(raw_edge, Sequence) or isinstance(raw_edge, str) or len(raw_edge) != 2:
            raise SystemValidationError(f"transitions[{i}]: expected a [source, destination] pair")
        src, dst = raw_edge
        if src not in mode_ids or dst not in mode_ids:
            raise SystemValidationError(f"transitions[{i}]: unknown mode in {raw_edge!r}")
        if src == dst:
            raise SystemValidationError(f"transitions[{i}]: self-loop on mode {src!r}")
        if (src, dst) in edges:
            raise SystemValidationError(f"transitions[{i}]: duplicate edge {src!r} -> {dst!r}")
        edges.append((src, dst))

    system = ModeSystem(
        processor_count=processor_count,
        mi_tasks=mi_tasks,
        md_tasks=md_tasks,
        mode_graph=ModeGraph(modes=tuple(modes), edges=tuple(edges)),
    )
    for p in system.processors:
        load = system.mi_utilization(p)
        if load > 1:
            raise SystemValidationError(
                f"processor {p}: mode-independent utilization {load} exceeds 1"
            )
    return system


def parse_system(text: str) -> ModeSystem:
    """Parse a JSON system file.  Decimal literals are read exactly (never as floats)."""
    try:
        raw = json.loads(text, parse_float=str)
    except json.JSONDecodeError as exc:
        raise SystemValidationError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return build_system(raw)


def load_system(path) -> ModeSystem:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_system(handle.read())


def utilization_summary(system: ModeSystem, mode_id: str) -> UtilizationSummary:
    """Total and maximum utilization over the tasks active in one mode.

    Active tasks are all MI tasks plus the mode's MD tasks.  An entirely empty
    mode reports ``u_max = 0``.
    """
    active = system.mi_tasks + system.md_tasks_of(mode_id)
    u_sum = sum((t.utilization for t in active), Fraction(0))
    u_max = max((t.utilization for t in active), default=Fraction(0))
    per_processor = tuple(system.mi_utilization(p) for p in system.processors)
    return UtilizationSummary(mode_id=mode_id, u_sum=u_sum, u_max=u_max, per_processor_mi=per_processor)


def check_transition_deadline(task: Task, latency) -> DeadlineVerdict:
    """Check that ``latency + period <= transition_deadline`` for an MD task.

    The verdict carries the slack (deadline - latency - period), which is
    negative exactly when the check fails.  Tasks without a transition
    deadline pass vacuously and are flagged unchecked.
    """
    if task.kind != MD:
        raise ValueError(f"task {task.id} is mode-independent; transition deadlines apply to MD tasks")
    latency = as_time(latency, what="latency")
    if task.transition_deadline is None:
        return DeadlineVerdict(task_id=task.id, latency=latency, passed=True, slack=None, checked=False)
    slack = task.transition_deadline - latency - task.period
    return DeadlineVerdict(task_id=task.id, latency=latency, passed=slack >= 0, slack=slack, checked=True)


def worst_predecessor_latency(
    system: ModeSystem, mode_id: str, latency_by_mode: Mapping[str, Fraction]
) -> Fraction:
    """Maximum transition latency over all predecessor modes of ``mode_id``.

    A mode with no incoming transitions is only ever entered at system start,
    so its worst entry latency is 0.
    """
    worst = Fraction(0)
    for pred in system.mode_graph.predecessors(mode_id):
        if pred not in latency_by_mode:
            raise ValueError(f"no latency provided for predecessor mode {pred!r}")
        worst = max(worst, as_time(latency_by_mode[pred], what=f"latency of mode {pred}"))
    return worst


def validate_allocation(system: ModeSystem, allocation: Allocation) -> None:
    """Check that an allocation covers the mode's MD tasks exactly once each and
    keeps every processor's total utilization at most 1."""
    mode = system.mode(allocation.mode_id)
    expected = set(mode.md_tasks)
    got = set(allocation.assignment)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        detail = []
        if missing:
            detail.append(f"unassigned tasks {missing}")
        if extra:
            detail.append(f"tasks not in mode: {extra}")
        raise AllocationError(f"allocation for mode {allocation.mode_id}: " + "; ".join(detail))
    loads = {p: system.mi_utilization(p) for p in system.processors}
    for tid in sorted(allocation.assignment):
        processor = allocation.assignment[tid]
        if isinstance(processor, bool) or not isinstance(processor, int) or processor not in loads:
            raise AllocationError(f"task {tid}: processor {processor!r} outside 1..{system.processor_count}")
        loads[processor] += system.task(tid).utilization
    for p, load in loads.items():
        if load > 1:
            raise AllocationError(
                f"allocation for mode {allocation.mode_id}: processor {p} utilization {load} exceeds 1"
            )
