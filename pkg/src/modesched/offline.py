"""Latency-optimal static allocation of a mode's MD tasks, plus MILP export.

``solve_optimal`` performs an exact branch-and-bound search over task-to-
processor assignments: tasks are branched in decreasing-utilization order, and
each node is bounded from below by the platform latency of the tasks placed so
far (the per-processor bounds only grow as more tasks are added, so that value
never overestimates a completion).  The search proves optimality; among
equally optimal allocations the assignment vector that is lexicographically
smallest in task-id order is returned, so results are reproducible.

``export_milp`` emits the same optimization as a mixed-integer linear program
in CPLEX LP text format, for independent verification with any external
solver.  The in-repo search never calls a solver itself.
"""

from __future__ import annotations

import decimal
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional

from .model import Allocation, ModeSystem, as_time
from .latency import analyze_allocation, busy_period
from .online import transition_bound_detail


class InfeasibleModeError(ValueError):
    """No utilization-feasible assignment of the mode's MD tasks exists."""

    def __init__(self, mode_id: str, task_id: str):
        super().__init__(
            f"mode {mode_id}: no feasible allocation; search stuck placing task {task_id}"
        )
        self.mode_id = mode_id
        self.task_id = task_id


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of the exact allocation search for one mode."""

    mode_id: str
    best_allocation: Allocation
    optimal_latency: Fraction
    explored_nodes: int
    proof_of_optimality: bool


class _SearchState:
    """Mutable per-processor accumulators shared by the two search phases."""

    def __init__(self, system: ModeSystem):
        self.system = system
        self.processors = list(system.processors)
        self.mi_sets = {p: system.mi_on(p) for p in self.processors}
        self.util = {p: system.mi_utilization(p) for p in self.processors}
        self.demand = {p: Fraction(0) for p in self.processors}
        self.max_period = {p: Fraction(0) for p in self.processors}
        self.effective = {p: Fraction(0) for p in self.processors}
        self.signature = {
            p: tuple(sorted((t.wcet, t.period) for t in self.mi_sets[p])) for p in self.processors
        }
        self._busy_cache: dict[tuple[int, Fraction], Fraction] = {}

    def busy(self, processor: int, demand: Fraction) -> Fraction:
        key = (processor, demand)
        value = self._busy_cache.get(key)
        if value is None:
            value = busy_period(demand, self.mi_sets[processor])
            # utilization feasibility guarantees convergence whenever demand > 0
            self._busy_cache[key] = value
        return value

    def place(self, task, processor: int) -> tuple[Fraction, Fraction]:
        saved = (self.max_period[processor], self.effective[processor])
        self.util[processor] += task.utilization
        self.demand[processor] += task.wcet
        self.max_period[processor] = max(self.max_period[processor], task.period)
        self.effective[processor] = min(
            self.max_period[processor], self.busy(processor, self.demand[processor])
        )
        return saved

    def unplace(self, task, processor: int, saved: tuple[Fraction, Fraction]) -> None:
        self.util[processor] -= task.utilization
        self.demand[processor] -= task.wcet
        self.max_period[processor], self.effective[processor] = saved

    def bound(self) -> Fraction:
        return max(self.effective.values())


def solve_optimal(system: ModeSystem, mode_id: str) -> OptimizationResult:
    """Allocation of the mode's MD tasks minimizing the platform latency bound.

    Raises InfeasibleModeError when some MD task fits on no processor in any
    completion, naming the first task at which the search got stuck.
    """
    md_tasks = system.md_tasks_of(mode_id)
    if not md_tasks:
        allocation = Allocation(mode_id=mode_id, assignment={})
        report = analyze_allocation(system, mode_id, allocation)
        return OptimizationResult(
            mode_id=mode_id,
            best_allocation=allocation,
            optimal_latency=report.platform_bound,
            explored_nodes=1,
            proof_of_optimality=True,
        )

    order = sorted(md_tasks, key=lambda t: (-t.utilization, t.id))
    state = _SearchState(system)
    explored = 0
    best: Optional[Fraction] = None
    deepest = 0

    def search(index: int) -> None:
        nonlocal explored, best, deepest
        deepest = max(deepest, index)
        if index == len(order):
            value = state.bound()
            if best is None or value < best:
                best = value
            return
        task = order[index]
        tried_empty_signatures = set()
        for p in state.processors:
            if state.util[p] + task.utilization > 1:
                continue
            if state.demand[p] == 0:
                # identical-MI processors with no MD yet are interchangeable
                if state.signature[p] in tried_empty_signatures:
                    continue
                tried_empty_signatures.add(state.signature[p])
            saved = state.place(task, p)
            explored += 1
            if best is None or state.bound() < best:
                search(index + 1)
            state.unplace(task, p, saved)

    search(0)
    if best is None:
        raise InfeasibleModeError(mode_id, order[deepest].id)

    # Reconstruct the lexicographically smallest witness in task-id order:
    # fix each task on the lowest processor index from which the optimum is
    # still reachable.
    limit = best
    id_order = sorted(md_tasks, key=lambda t: t.id)
    state = _SearchState(system)

    def completable(remaining: list) -> bool:
        nonlocal explored
        if state.bound() > limit:
            return False
        if not remaining:
            return True
        task = remaining[0]
        for p in state.processors:
            if state.util[p] + task.utilization > 1:
                continue
            saved = state.place(task, p)
            explored += 1
            ok = state.bound() <= limit and completable(remaining[1:])
            state.unplace(task, p, saved)
            if ok:
                return True
        return False

    assignment: dict[str, int] = {}
    for i, task in enumerate(id_order):
        rest = sorted(id_order[i + 1:], key=lambda t: (-t.utilization, t.id))
        for p in state.processors:
            if state.util[p] + task.utilization > 1:
                continue
            saved = state.place(task, p)
            explored += 1
            if state.bound() <= limit and completable(rest):
                assignment[task.id] = p
                break
            state.unplace(task, p, saved)
        else:
            raise AssertionError("optimal value was proven attainable")

    allocation = Allocation(mode_id=mode_id, assignment=assignment)
    report = analyze_allocation(system, mode_id, allocation)
    return OptimizationResult(
        mode_id=mode_id,
        best_allocation=allocation,
        optimal_latency=report.platform_bound,
        explored_nodes=explored,
        proof_of_optimality=True,
    )


# --------------------------------------------------------------------------
# MILP document and LP-format export
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintRow:
    """One linear row: sum of (variable, coefficient) terms, a sense, and a constant."""

    name: str
    terms: tuple[tuple[str, Fraction], ...]
    sense: str  # "<=" or "="
    rhs: Fraction

    def evaluate(self, values: Mapping[str, Fraction]) -> bool:
        total = sum((coef * values.get(var, Fraction(0)) for var, coef in self.terms), Fraction(0))
        return total == self.rhs if self.sense == "=" else total <= self.rhs


@dataclass(frozen=True)
class MilpDocument:
    """The allocation optimization as a mixed-integer linear program.

    Variables follow the fixed naming protocol ``y_<processor>_<task>``
    (binary placement), ``p_<processor>`` (binary bound selector),
    ``x_<task>`` (integer job count of an MI task inside the busy period) and
    ``L`` (the continuous objective).
    """

    mode_id: str
    big_m: Fraction
    objective: str
    constraints: tuple[ConstraintRow, ...]
    binary_variables: tuple[str, ...]
    integer_variables: tuple[str, ...]
    continuous_variables: tuple[str, ...]
    integer_upper_bounds: tuple[tuple[str, int], ...]

    @property
    def constraint_count(self) -> int:
        return len(self.constraints)

    @property
    def binary_count(self) -> int:
        return len(self.binary_variables)

    def violated_rows(self, values: Mapping[str, Fraction]) -> tuple[str, ...]:
        """Names of constraint rows the given assignment violates (exact arithmetic)."""
        return tuple(row.name for row in self.constraints if not row.evaluate(values))

    def to_lp(self) -> str:
        return _render_lp(self)


def _decimal_12(value: Fraction) -> tuple[str, bool]:
    """Render a rational as a decimal capped at 12 significant digits.

    Returns the text and whether it is exact.  Integers are always exact.
    """
    if value.denominator == 1:
        return str(value.numerator), True
    with decimal.localcontext() as ctx:
        ctx.prec = 12
        approx = decimal.Decimal(value.numerator) / decimal.Decimal(value.denominator)
    text = format(approx, "f")
    return text, Fraction(text) == value


def _lp_names(raw_ids) -> dict[str, str]:
    """Map task ids to LP-safe, collision-free name fragments."""
    mapping: dict[str, str] = {}
    used: set[str] = set()
    for raw in raw_ids:
        safe = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in raw) or "task"
        candidate = safe
        suffix = 2
        while candidate in used:
            candidate = f"{safe}_{suffix}"
            suffix += 1
        used.add(candidate)
        mapping[raw] = candidate
    return mapping


def default_big_m(system: ModeSystem, mode_id: str) -> Fraction:
    """Default disjunction constant: summed execution time of the mode's tasks
    plus the largest period in the system."""
    mode_tasks = system.mi_tasks + system.md_tasks_of(mode_id)
    total_wcet = sum((t.wcet for t in mode_tasks), Fraction(0))
    max_period = max(t.period for t in system.mi_tasks + system.md_tasks)
    return total_wcet + max_period


def _max_attainable_latency(system: ModeSystem, mode_id: str) -> Fraction:
    """Strict upper envelope of every latency value a feasible assignment can reach."""
    md = system.md_tasks_of(mode_id)
    worst = max((t.period for t in md), default=Fraction(0))
    for row in transition_bound_detail(system, mode_id):
        worst = max(worst, row.latency)
    return worst


def export_milp(system: ModeSystem, mode_id: str, big_m=None) -> MilpDocument:
    """Emit the allocation MILP for one mode.

    Rows: one assignment equality per MD task; per processor a utilization
    row, one busy-period-end row per resident MI task, and the disjunctive
    pair selecting the smaller of the two latency bounds (period bound rows
    per MD task, one busy-bound row), relaxed by the big-M constant.

    ``big_m`` must strictly exceed every attainable latency value; the default
    is checked the same way a caller-supplied value is.
    """
    system.mode(mode_id)
    hv = default_big_m(system, mode_id) if big_m is None else as_time(big_m, what="big_m")
    attainable = _max_attainable_latency(system, mode_id)
    if hv <= attainable:
        raise ValueError(
            f"big_m {hv} does not strictly dominate attainable latency {attainable}"
        )

    md = sorted(system.md_tasks_of(mode_id), key=lambda t: t.id)
    names = _lp_names([t.id for t in md] + [t.id for t in system.mi_tasks])
    rows: list[ConstraintRow] = []

    for task in md:
        rows.append(
            ConstraintRow(
                name=f"assign_{names[task.id]}",
                terms=tuple((f"y_{p}_{names[task.id]}", Fraction(1)) for p in system.processors),
                sense="=",
                rhs=Fraction(1),
            )
        )
    for p in system.processors:
        if md:
            rows.append(
                ConstraintRow(
                    name=f"util_{p}",
                    terms=tuple((f"y_{p}_{names[t.id]}", t.utilization) for t in md),
                    sense="<=",
                    rhs=1 - system.mi_utilization(p),
                )
            )
        mi_here = system.mi_on(p)
        demand_terms = [(f"y_{p}_{names[t.id]}", t.wcet) for t in md]
        demand_terms += [(f"x_{names[t.id]}", t.wcet) for t in mi_here]
        for ender in mi_here:
            merged = dict(demand_terms)
            var = f"x_{names[ender.id]}"
            merged[var] = merged[var] - ender.period
            rows.append(
                ConstraintRow(
                    name=f"end_{p}_{names[ender.id]}",
                    terms=tuple(merged.items()),
                    sense="<=",
                    rhs=Fraction(0),
                )
            )
        rows.append(
            ConstraintRow(
                name=f"sel2_{p}",
                terms=tuple(demand_terms) + (("L", Fraction(-1)), (f"p_{p}", hv)),
                sense="<=",
                rhs=hv,
            )
        )
        for task in md:
            rows.append(
                ConstraintRow(
                    name=f"sel1_{p}_{names[task.id]}",
                    terms=(
                        (f"y_{p}_{names[task.id]}", task.period),
                        ("L", Fraction(-1)),
                        (f"p_{p}", -hv),
                    ),
                    sense="<=",
                    rhs=Fraction(0),
                )
            )

    binaries = tuple(f"y_{p}_{names[t.id]}" for p in system.processors for t in md) + tuple(
        f"p_{p}" for p in system.processors
    )
    integers = tuple(f"x_{names[t.id]}" for t in system.mi_tasks)
    upper_bounds = tuple(
        (f"x_{names[t.id]}", math.ceil(hv / t.period)) for t in system.mi_tasks
    )
    return MilpDocument(
        mode_id=mode_id,
        big_m=hv,
        objective="L",
        constraints=tuple(rows),
        binary_variables=binaries,
        integer_variables=integers,
        continuous_variables=("L",),
        integer_upper_bounds=upper_bounds,
    )


def _render_terms(terms) -> tuple[str, bool]:
    parts: list[str] = []
    exact = True
    for var, coef in terms:
        if coef == 0:
            continue
        magnitude, is_exact = _decimal_12(abs(coef))
        exact = exact and is_exact
        body = var if magnitude == "1" else f"{magnitude} {var}"
        if not parts:
            parts.append(body if coef > 0 else f"- {body}")
        else:
            parts.append(f"+ {body}" if coef > 0 else f"- {body}")
    return " ".join(parts) if parts else "0", exact


def _render_lp(doc: MilpDocument) -> str:
    lines: list[str] = []
    body: list[str] = []
    rounded = False
    body.append("Minimize")
    body.append(f" obj: {doc.objective}")
    body.append("Subject To")
    for row in doc.constraints:
        terms, terms_exact = _render_terms(row.terms)
        rhs, rhs_exact = _decimal_12(row.rhs)
        rounded = rounded or not terms_exact or not rhs_exact
        body.append(f" {row.name}: {terms} {row.sense} {rhs}")
    body.append("Bounds")
    for var, upper in doc.integer_upper_bounds:
        body.append(f" 0 <= {var} <= {upper}")
    if doc.binary_variables:
        body.append("Binary")
        for var in doc.binary_variables:
            body.append(f" {var}")
    if doc.integer_variables:
        body.append("General")
        for var in doc.integer_variables:
            body.append(f" {var}")
    body.append("End")

    hv_text, hv_exact = _decimal_12(doc.big_m)
    rounded = rounded or not hv_exact
    lines.append(f"\\ transition-latency allocation program, mode {doc.mode_id}")
    lines.append(f"\\ disjunction constant HV = {hv_text}")
    if rounded:
        lines.append(
            "\\ warning: some coefficients were rounded to 12 significant digits and are not exact"
        )
    lines.extend(body)
    return "\n".join(lines) + "\n"


def incumbent_values(system: ModeSystem, mode_id: str, allocation: Allocation) -> dict[str, Fraction]:
    """Variable assignment realizing a given allocation inside the exported program.

    Placement binaries come from the allocation, each MI task's job count from
    the fixed point of its processor's busy period, each selector binary from
    whichever latency bound is smaller there, and the objective from the
    platform bound.
    """
    report = analyze_allocation(system, mode_id, allocation)
    names = _lp_names([t.id for t in system.md_tasks_of(mode_id)] + [t.id for t in system.mi_tasks])
    values: dict[str, Fraction] = {"L": report.platform_bound}
    for task in system.md_tasks_of(mode_id):
        for p in system.processors:
            values[f"y_{p}_{names[task.id]}"] = Fraction(1 if allocation.assignment[task.id] == p else 0)
    for row in report.per_processor:
        busy = row.busy_bound if row.busy_bound is not None else Fraction(0)
        if row.period_bound is None or (row.busy_bound is not None and row.busy_bound < row.period_bound):
            selector = Fraction(1)
        else:
            selector = Fraction(0)
        values[f"p_{row.processor}"] = selector
        for mi_task in system.mi_on(row.processor):
            values[f"x_{names[mi_task.id]}"] = Fraction(math.ceil(busy / mi_task.period))
    return values
