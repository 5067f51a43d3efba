"""Discrete-event partitioned-EDF simulator for the synchronous mode-change protocol.

Each processor runs preemptive EDF over its resident jobs.  On a mode-change
request (MCR) the running mode's MD tasks stop releasing jobs; their pending
jobs drain to completion, and the instant the last one completes the
transition ends: the destination mode's MD tasks are enabled (and, under the
default release policy, released immediately).  MI tasks release periodically
throughout, undisturbed.

All timestamps are exact: every release, deadline, preemption and completion
instant is a rational combination of the input parameters, so the engine
rescales the whole scenario to a common integer time base, simulates in
integers, and converts back only when the trace is materialized.

Deterministic tie rules (they fix the trace byte-for-byte):
  * equal absolute deadlines are broken by task id, then job index;
  * a job released exactly at an MCR instant counts as pending (the release
    is processed before the request);
  * simultaneous trace events are ordered completion, transition bookkeeping,
    deadline check, release, MCR, then scheduler switches.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .model import (
    Allocation,
    ModeSystem,
    as_time,
    validate_allocation,
)
from .latency import analyze_allocation
from .offline import InfeasibleModeError, solve_optimal
from .online import first_fit_decreasing, latency_upper_bound, PlacementError

OFFLINE_TABLE = "offline-table"
ONLINE_FFD = "online-ffd"

# heap phases: processing order among same-instant queued events
_PHASE_DEADLINE = 0
_PHASE_RELEASE = 1
_PHASE_MCR = 2


class ScenarioError(ValueError):
    """Raised when a scenario description is inconsistent with its system."""


class SimulationError(RuntimeError):
    """Raised when a scenario cannot be executed (nested MCR, failed online placement)."""

    def __init__(self, message: str, time: Optional[Fraction] = None, task_id: Optional[str] = None):
        super().__init__(message)
        self.time = time
        self.task_id = task_id


@dataclass(frozen=True)
class Scenario:
    """One executable simulation scenario.

    ``release_offsets`` maps task ids to release instants relative to each
    enablement of the task (time 0 for MI tasks and the initial mode's MD
    tasks, the transition end for later modes); consecutive offsets must be at
    least one period apart.  After the listed releases the task continues
    strictly periodically.  ``static_tables`` holds the per-mode allocations
    used when ``allocation_source`` is "offline-table".
    """

    system: ModeSystem
    initial_mode: str
    allocation_source: str
    mcr_schedule: tuple[tuple[Fraction, str], ...]
    horizon: Fraction
    release_offsets: Mapping[str, tuple[Fraction, ...]] = field(default_factory=dict)
    static_tables: Optional[Mapping[str, Allocation]] = None


@dataclass(frozen=True)
class SweepSpec:
    """Directive to sweep a single MCR over a grid of request times."""

    from_mode: str
    to_mode: str
    step: Fraction
    allocation_source: str


@dataclass(frozen=True)
class SimEvent:
    time: Fraction
    processor: Optional[int]
    kind: str
    task: Optional[str]
    job: Optional[int]


@dataclass(frozen=True)
class TransitionCheck:
    """First-job transition-deadline record for one newly enabled MD task."""

    task_id: str
    mcr_time: Fraction
    absolute_deadline: Fraction
    first_completion: Optional[Fraction]
    ok: Optional[bool]


@dataclass(frozen=True)
class SimTrace:
    events: tuple[SimEvent, ...]
    observed_latencies: tuple[tuple[Fraction, Fraction], ...]
    transition_checks: tuple[TransitionCheck, ...]

    @property
    def job_deadline_misses(self) -> int:
        return sum(1 for e in self.events if e.kind == "deadline-miss")

    @property
    def deadline_miss_count(self) -> int:
        """Job deadline misses plus violated transition deadlines."""
        return self.job_deadline_misses + sum(1 for c in self.transition_checks if c.ok is False)

    def to_text(self) -> str:
        """Line-oriented trace: tab-separated event rows then a summary footer."""
        lines = []
        for e in self.events:
            lines.append(
                "\t".join(
                    (
                        str(e.time),
                        "-" if e.processor is None else str(e.processor),
                        e.kind,
                        "-" if e.task is None else e.task,
                        "-" if e.job is None else str(e.job),
                    )
                )
            )
        for mcr_time, latency in self.observed_latencies:
            lines.append(f"# latency\t{mcr_time}\t{latency}")
        for check in self.transition_checks:
            outcome = "-" if check.ok is None else ("ok" if check.ok else "MISS")
            completion = "-" if check.first_completion is None else str(check.first_completion)
            lines.append(
                f"# transition-deadline\t{check.task_id}\t{check.mcr_time}"
                f"\t{check.absolute_deadline}\t{completion}\t{outcome}"
            )
        lines.append(f"# deadline-misses\t{self.deadline_miss_count}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepResult:
    max_latency: Fraction
    at_time: Fraction
    points: int
    job_misses: int
    transition_misses: int

    @property
    def deadline_misses(self) -> int:
        return self.job_misses + self.transition_misses


def make_scenario(
    system: ModeSystem,
    initial_mode: str,
    allocation_source: str,
    mcrs: Sequence[tuple[object, str]],
    horizon,
    release_offsets: Optional[Mapping[str, Sequence[object]]] = None,
    static_tables: Optional[Mapping[str, Allocation]] = None,
) -> Scenario:
    """Validate scenario ingredients and, for static allocation, build the tables.

    Tables are computed (via the exact offline search) only for the modes the
    MCR schedule actually enters.
    """
    system.mode(initial_mode)
    if allocation_source not in (OFFLINE_TABLE, ONLINE_FFD):
        raise ScenarioError(
            f"allocation must be {OFFLINE_TABLE!r} or {ONLINE_FFD!r}, got {allocation_source!r}"
        )
    horizon = as_time(horizon, what="horizon")

    schedule: list[tuple[Fraction, str]] = []
    active = initial_mode
    previous = None
    for i, (raw_time, dest) in enumerate(mcrs):
        time = as_time(raw_time, what=f"mcrs[{i}].time")
        if previous is not None and time <= previous:
            raise ScenarioError(f"mcrs[{i}]: times must be strictly increasing")
        if time >= horizon:
            raise ScenarioError(f"mcrs[{i}]: time {time} is outside the horizon {horizon}")
        if (active, dest) not in system.mode_graph.edges:
            raise ScenarioError(f"mcrs[{i}]: no transition from mode {active!r} to {dest!r}")
        schedule.append((time, dest))
        previous = time
        active = dest

    offsets: dict[str, tuple[Fraction, ...]] = {}
    for task_id, raw_list in (release_offsets or {}).items():
        task = system.task(task_id)
        values = tuple(as_time(v, what=f"release offset of {task_id}") for v in raw_list)
        for earlier, later in zip(values, values[1:]):
            if later - earlier < task.period:
                raise ScenarioError(
                    f"release offsets of {task_id}: gap {later - earlier} below period {task.period}"
                )
        offsets[task_id] = values

    tables: Optional[dict[str, Allocation]] = None
    if allocation_source == OFFLINE_TABLE:
        tables = dict(static_tables or {})
        entered = [initial_mode] + [dest for _, dest in schedule]
        for mode_id in entered:
            if mode_id in tables:
                validate_allocation(system, tables[mode_id])
                continue
            try:
                tables[mode_id] = solve_optimal(system, mode_id).best_allocation
            except InfeasibleModeError as exc:
                raise ScenarioError(str(exc)) from exc

    return Scenario(
        system=system,
        initial_mode=initial_mode,
        allocation_source=allocation_source,
        mcr_schedule=tuple(schedule),
        horizon=horizon,
        release_offsets=offsets,
        static_tables=tables,
    )


def parse_scenario(text: str, system: ModeSystem) -> Union[Scenario, SweepSpec]:
    """Parse a JSON scenario file (decimal literals read exactly)."""
    try:
        raw = json.loads(text, parse_float=str)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, Mapping):
        raise ScenarioError("scenario description must be an object")
    allowed = {"initial_mode", "allocation", "horizon", "mcrs", "release_offsets", "sweep"}
    unknown = set(raw) - allowed
    if unknown:
        raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
    allocation_source = raw.get("allocation", OFFLINE_TABLE)

    if "sweep" in raw:
        if "mcrs" in raw:
            raise ScenarioError("a scenario may carry either 'sweep' or 'mcrs', not both")
        sweep = raw["sweep"]
        if not isinstance(sweep, Mapping) or set(sweep) - {"from_mode", "to_mode", "step"}:
            raise ScenarioError("sweep: expected an object with keys from_mode, to_mode, step")
        for key in ("from_mode", "to_mode", "step"):
            if key not in sweep:
                raise ScenarioError(f"sweep: missing key {key!r}")
        step = as_time(sweep["step"], what="sweep.step")
        if step <= 0:
            raise ScenarioError("sweep.step must be positive")
        if (sweep["from_mode"], sweep["to_mode"]) not in system.mode_graph.edges:
            raise ScenarioError(
                f"sweep: no transition from mode {sweep['from_mode']!r} to {sweep['to_mode']!r}"
            )
        if allocation_source not in (OFFLINE_TABLE, ONLINE_FFD):
            raise ScenarioError(f"allocation must be {OFFLINE_TABLE!r} or {ONLINE_FFD!r}")
        return SweepSpec(
            from_mode=sweep["from_mode"],
            to_mode=sweep["to_mode"],
            step=step,
            allocation_source=allocation_source,
        )

    for key in ("initial_mode", "horizon"):
        if key not in raw:
            raise ScenarioError(f"missing scenario key {key!r}")
    mcrs = []
    for i, entry in enumerate(raw.get("mcrs", [])):
        if not isinstance(entry, Mapping) or set(entry) != {"time", "to"}:
            raise ScenarioError(f"mcrs[{i}]: expected an object with keys time, to")
        mcrs.append((entry["time"], entry["to"]))
    return make_scenario(
        system,
        initial_mode=raw["initial_mode"],
        allocation_source=allocation_source,
        mcrs=mcrs,
        horizon=raw["horizon"],
        release_offsets=raw.get("release_offsets"),
    )


def load_scenario(path, system: ModeSystem) -> Union[Scenario, SweepSpec]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario(handle.read(), system)


def hyperperiod(tasks) -> Fraction:
    """Least common multiple of the tasks' periods (exact, works for rationals)."""
    periods = [t.period for t in tasks]
    if not periods:
        return Fraction(1)
    denom = math.lcm(*(p.denominator for p in periods))
    scaled = [int(p * denom) for p in periods]
    return Fraction(math.lcm(*scaled), denom)


class _TaskState:
    __slots__ = (
        "task", "wcet", "period", "offsets", "processor", "releasing",
        "activation", "enable_time", "offset_index", "last_release", "job_count",
    )

    def __init__(self, task, wcet: int, period: int, offsets: tuple[int, ...]):
        self.task = task
        self.wcet = wcet
        self.period = period
        self.offsets = offsets
        self.processor: Optional[int] = task.home_processor
        self.releasing = False
        self.activation = 0
        self.enable_time = 0
        self.offset_index = 0
        self.last_release: Optional[int] = None
        self.job_count = 0


class _Job:
    __slots__ = (
        "state", "index", "release", "deadline", "remaining",
        "processor", "started", "missed", "key",
    )

    def __init__(self, state: _TaskState, index: int, release: int):
        self.state = state
        self.index = index
        self.release = release
        self.deadline = release + state.period
        self.remaining = state.wcet
        self.processor = state.processor  # pinned at release; later re-placements do not move it
        self.started = False
        self.missed = False
        self.key = (self.deadline, state.task.id, index)


class _Engine:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        system = scenario.system
        self.system = system

        denominators = [scenario.horizon.denominator]
        for task in system.mi_tasks + system.md_tasks:
            denominators.append(task.wcet.denominator)
            denominators.append(task.period.denominator)
            if task.transition_deadline is not None:
                denominators.append(task.transition_deadline.denominator)
        for time, _ in scenario.mcr_schedule:
            denominators.append(time.denominator)
        for offsets in scenario.release_offsets.values():
            denominators.extend(v.denominator for v in offsets)
        self.scale = math.lcm(*denominators)

        def scaled(value: Fraction) -> int:
            return int(value * self.scale)

        self.horizon = scaled(scenario.horizon)
        self.states: dict[str, _TaskState] = {}
        for task in system.mi_tasks + system.md_tasks:
            offsets = tuple(scaled(v) for v in scenario.release_offsets.get(task.id, ()))
            self.states[task.id] = _TaskState(task, scaled(task.wcet), scaled(task.period), offsets)

        self.heap: list[tuple[int, int, int, object]] = []
        self._seq = 0
        self.ready: dict[int, list] = {p: [] for p in system.processors}
        self.running: dict[int, Optional[_Job]] = {p: None for p in system.processors}
        self.incomplete: set[_Job] = set()
        self.old_pending: set[_Job] = set()

        self.current_mode = scenario.initial_mode
        self.in_transition = False
        self.mcr_time = 0
        self.destination: Optional[str] = None

        self.events: list[tuple[int, Optional[int], str, Optional[str], Optional[int]]] = []
        self.latencies: list[tuple[int, int]] = []
        self.checks: list[dict] = []
        self._check_by_task_job: dict[tuple[str, int], dict] = {}

    # -- helpers ------------------------------------------------------------

    def _push(self, time: int, phase: int, payload: object) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (time, phase, self._seq, payload))

    def _emit(self, time: int, processor, kind: str, task, job) -> None:
        self.events.append((time, processor, kind, task, job))

    def _frac(self, value: int) -> Fraction:
        return Fraction(value, self.scale)

    def allocation_for(self, mode_id: str, time: int) -> Allocation:
        if self.scenario.allocation_source == OFFLINE_TABLE:
            return self.scenario.static_tables[mode_id]
        try:
            return first_fit_decreasing(self.system, mode_id)
        except PlacementError as exc:
            raise SimulationError(
                f"online placement failed at time {self._frac(time)}: {exc}",
                time=self._frac(time),
                task_id=exc.task_id,
            ) from exc

    # -- protocol actions ---------------------------------------------------

    def enable_mi(self) -> None:
        for task in self.system.mi_tasks:
            state = self.states[task.id]
            state.releasing = True
            self._schedule_first_release(state, 0)

    def enable_mode(self, mode_id: str, time: int, from_transition: bool) -> None:
        allocation = self.allocation_for(mode_id, time)
        for task in self.system.md_tasks_of(mode_id):
            state = self.states[task.id]
            state.processor = allocation.assignment[task.id]
            state.activation += 1
            state.releasing = True
            state.enable_time = time
            state.offset_index = 0
            state.last_release = None
            self._emit(time, state.processor, "enable", task.id, None)
            if from_transition and task.transition_deadline is not None:
                record = {
                    "task_id": task.id,
                    "mcr": self.mcr_time,
                    "absolute": self.mcr_time + int(task.transition_deadline * self.scale),
                    "completion": None,
                }
                self.checks.append(record)
                self._check_by_task_job[(task.id, state.job_count)] = record
            self._schedule_first_release(state, time)

    def _schedule_first_release(self, state: _TaskState, enable_time: int) -> None:
        first = enable_time + (state.offsets[0] if state.offsets else 0)
        state.offset_index = 1 if state.offsets else 0
        if first < self.horizon:
            self._push(first, _PHASE_RELEASE, (state, state.activation, first))

    def _schedule_next_release(self, state: _TaskState, current: int) -> None:
        if state.offset_index < len(state.offsets):
            nxt = state.enable_time + state.offsets[state.offset_index]
            state.offset_index += 1
        else:
            nxt = current + state.period
        if nxt < self.horizon:
            self._push(nxt, _PHASE_RELEASE, (state, state.activation, nxt))

    def do_release(self, state: _TaskState, time: int) -> None:
        job = _Job(state, state.job_count, time)
        state.job_count += 1
        state.last_release = time
        self.incomplete.add(job)
        self._emit(time, job.processor, "release", state.task.id, job.index)
        heapq.heappush(self.ready[job.processor], (job.key, job))
        if job.deadline < self.horizon:
            self._push(job.deadline, _PHASE_DEADLINE, job)
        self._schedule_next_release(state, time)

    def do_mcr(self, time: int, destination: str) -> None:
        if self.in_transition:
            raise SimulationError(
                f"mode-change request at {self._frac(time)} arrived during an ongoing transition",
                time=self._frac(time),
            )
        self._emit(time, None, "MCR", destination, None)
        self.in_transition = True
        self.mcr_time = time
        self.destination = destination
        old_ids = set(self.system.mode(self.current_mode).md_tasks)
        for task_id in sorted(old_ids):
            state = self.states[task_id]
            state.releasing = False
            self._emit(time, state.processor, "MD-disabled", task_id, None)
        self.old_pending = {j for j in self.incomplete if j.state.task.id in old_ids}
        self.maybe_end_transition(time)

    def maybe_end_transition(self, time: int) -> None:
        if not self.in_transition or self.old_pending:
            return
        self._emit(time, None, "transition-end", None, None)
        self.latencies.append((self.mcr_time, time - self.mcr_time))
        destination = self.destination
        self.in_transition = False
        self.destination = None
        self.enable_mode(destination, time, from_transition=True)
        self.current_mode = destination

    def complete_job(self, processor: int, job: _Job, time: int) -> None:
        self._emit(time, processor, "complete", job.state.task.id, job.index)
        self.incomplete.discard(job)
        self.old_pending.discard(job)
        record = self._check_by_task_job.get((job.state.task.id, job.index))
        if record is not None and record["completion"] is None:
            record["completion"] = time

    # -- main loop ----------------------------------------------------------

    def dispatch(self, time: int) -> None:
        for p in self.system.processors:
            queue = self.ready[p]
            current = self.running[p]
            if not queue:
                continue
            best_key, best = queue[0]
            if current is not None and current.key <= best_key:
                continue
            if current is not None:
                self._emit(time, p, "preempt", current.state.task.id, current.index)
                heapq.heappush(queue, (current.key, current))
            heapq.heappop(queue)
            self._emit(time, p, "start" if not best.started else "resume", best.state.task.id, best.index)
            best.started = True
            self.running[p] = best

    def process_instant(self, time: int) -> None:
        for p in self.system.processors:
            job = self.running[p]
            if job is not None and job.remaining == 0:
                self.running[p] = None
                self.complete_job(p, job, time)
        self.maybe_end_transition(time)
        while self.heap and self.heap[0][0] == time:
            _, phase, _, payload = heapq.heappop(self.heap)
            if phase == _PHASE_DEADLINE:
                job = payload
                if job.remaining > 0 and not job.missed:
                    job.missed = True
                    self._emit(time, job.processor, "deadline-miss", job.state.task.id, job.index)
            elif phase == _PHASE_RELEASE:
                state, activation, release_time = payload
                if state.releasing and state.activation == activation:
                    self.do_release(state, release_time)
            else:
                self.do_mcr(time, payload)
        self.dispatch(time)

    def execute(self) -> SimTrace:
        if self.horizon > 0:
            self.enable_mi()
            self.enable_mode(self.scenario.initial_mode, 0, from_transition=False)
            for mcr_time, destination in self.scenario.mcr_schedule:
                self._push(int(mcr_time * self.scale), _PHASE_MCR, destination)
            time = 0
            self.process_instant(0)
            while True:
                next_heap = self.heap[0][0] if self.heap else None
                next_completion = None
                for p in self.system.processors:
                    job = self.running[p]
                    if job is not None:
                        candidate = time + job.remaining
                        if next_completion is None or candidate < next_completion:
                            next_completion = candidate
                candidates = [t for t in (next_heap, next_completion) if t is not None]
                if not candidates:
                    break
                next_time = min(candidates)
                if next_time >= self.horizon:
                    break
                delta = next_time - time
                for p in self.system.processors:
                    job = self.running[p]
                    if job is not None:
                        job.remaining -= delta
                time = next_time
                self.process_instant(time)

        events = tuple(
            SimEvent(
                time=self._frac(t),
                processor=proc,
                kind=kind,
                task=task,
                job=job,
            )
            for t, proc, kind, task, job in self.events
        )
        checks = []
        for record in self.checks:
            completion = record["completion"]
            if completion is not None:
                ok = completion <= record["absolute"]
            elif record["absolute"] < self.horizon:
                ok = False  # the deadline passed inside the window without a completion
            else:
                ok = None
            checks.append(
                TransitionCheck(
                    task_id=record["task_id"],
                    mcr_time=self._frac(record["mcr"]),
                    absolute_deadline=self._frac(record["absolute"]),
                    first_completion=None if completion is None else self._frac(completion),
                    ok=ok,
                )
            )
        return SimTrace(
            events=events,
            observed_latencies=tuple(
                (self._frac(at), self._frac(latency)) for at, latency in self.latencies
            ),
            transition_checks=tuple(checks),
        )


def run(scenario: Scenario) -> SimTrace:
    """Execute one scenario and return its exact event trace."""
    return _Engine(scenario).execute()


def sweep_mcr(
    system: ModeSystem,
    allocation_source: str,
    mode_pair: tuple[str, str],
    mcr_time_grid: Iterable,
) -> SweepResult:
    """Run one scenario per grid point (single MCR source -> destination) and
    report the maximum observed transition latency and where it occurred.

    The per-run horizon is derived from the applicable analytical bound, with
    margin; a transition outlasting it would itself disprove the bound and is
    reported as an error.
    """
    source, destination = mode_pair
    if (source, destination) not in system.mode_graph.edges:
        raise ScenarioError(f"no transition from mode {source!r} to {destination!r}")

    tables = None
    if allocation_source == OFFLINE_TABLE:
        tables = {mode_id: solve_optimal(system, mode_id).best_allocation
                  for mode_id in (source, destination)}
        bound = analyze_allocation(system, source, tables[source]).platform_bound
    else:
        bound = latency_upper_bound(system, source)
    active = system.mi_tasks + system.md_tasks_of(source) + system.md_tasks_of(destination)
    margin = max((t.period for t in active), default=Fraction(1)) + 1

    best: Optional[tuple[Fraction, Fraction]] = None
    points = 0
    job_misses = 0
    transition_misses = 0
    for raw_time in mcr_time_grid:
        mcr_time = as_time(raw_time, what="sweep grid point")
        scenario = make_scenario(
            system,
            initial_mode=source,
            allocation_source=allocation_source,
            mcrs=[(mcr_time, destination)],
            horizon=mcr_time + bound + margin,
            static_tables=tables,
        )
        trace = run(scenario)
        if not trace.observed_latencies:
            raise SimulationError(
                f"transition requested at {mcr_time} did not complete within the analytical bound"
            )
        latency = trace.observed_latencies[0][1]
        job_misses += trace.job_deadline_misses
        transition_misses += sum(1 for c in trace.transition_checks if c.ok is False)
        points += 1
        if best is None or latency > best[0]:
            best = (latency, mcr_time)
    if best is None:
        raise ScenarioError("empty MCR time grid")
    return SweepResult(
        max_latency=best[0],
        at_time=best[1],
        points=points,
        job_misses=job_misses,
        transition_misses=transition_misses,
    )


def run_sweep(system: ModeSystem, spec: SweepSpec) -> SweepResult:
    """Sweep with step ``spec.step`` over one hyperperiod of the source mode's tasks."""
    active = system.mi_tasks + system.md_tasks_of(spec.from_mode)
    end = hyperperiod(active)
    grid = []
    point = Fraction(0)
    while point < end:
        grid.append(point)
        point += spec.step
    return sweep_mcr(system, spec.allocation_source, (spec.from_mode, spec.to_mode), grid)
