import itertools
import math
import re
from fractions import Fraction
from pathlib import Path

import pytest

import modesched as ms

SAMPLES = Path(__file__).resolve().parent.parent / "samples"

# two-mode, two-processor reference system used throughout the regression suite
CASE_STUDY = {
    "processors": 2,
    "tasks": [
        {"id": "tau1", "kind": "MI", "wcet": 10, "period": 30, "processor": 1},
        {"id": "tau2", "kind": "MI", "wcet": 20, "period": 60, "processor": 1},
        {"id": "tau3", "kind": "MI", "wcet": 15, "period": 90, "processor": 2},
        {"id": "tau4", "kind": "MI", "wcet": 20, "period": 100, "processor": 2},
        {"id": "tau5", "kind": "MD", "wcet": 7, "period": 40, "transition_deadline": 150},
        {"id": "tau6", "kind": "MD", "wcet": 1, "period": 10, "transition_deadline": 100},
        {"id": "tau7", "kind": "MD", "wcet": 1, "period": 20, "transition_deadline": 150},
        {"id": "tau8", "kind": "MD", "wcet": 2, "period": 30, "transition_deadline": 200},
        {"id": "tau9", "kind": "MD", "wcet": 3, "period": 25, "transition_deadline": 200},
        {"id": "tau10", "kind": "MD", "wcet": 50, "period": 100, "transition_deadline": 150},
    ],
    "modes": [
        {"id": "mode1", "md_tasks": ["tau5", "tau6", "tau7", "tau8", "tau9"]},
        {"id": "mode2", "md_tasks": ["tau10"]},
    ],
    "transitions": [["mode1", "mode2"], ["mode2", "mode1"]],
}


def case_study_raw(deadline_tau10=150):
    raw = {
        "processors": 2,
        "tasks": [dict(t) for t in CASE_STUDY["tasks"]],
        "modes": [{"id": m["id"], "md_tasks": list(m["md_tasks"])} for m in CASE_STUDY["modes"]],
        "transitions": [list(e) for e in CASE_STUDY["transitions"]],
    }
    for task in raw["tasks"]:
        if task["id"] == "tau10":
            task["transition_deadline"] = deadline_tau10
    return raw


@pytest.fixture(scope="session")
def case_study():
    return ms.build_system(CASE_STUDY)


@pytest.fixture(scope="session")
def handover_system():
    return ms.load_system(SAMPLES / "two_proc_handover.json")


@pytest.fixture(scope="session")
def handover_trace(handover_system):
    scenario = ms.load_scenario(SAMPLES / "handover_mcr7.json", handover_system)
    return ms.run(scenario)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def brute_force_optimal(system, mode_id):
    """Minimum platform bound over every utilization-feasible assignment, or None."""
    md = system.md_tasks_of(mode_id)
    best = None
    for combo in itertools.product(system.processors, repeat=len(md)):
        allocation = ms.Allocation(mode_id=mode_id, assignment={t.id: p for t, p in zip(md, combo)})
        try:
            ms.validate_allocation(system, allocation)
        except ms.AllocationError:
            continue
        bound = ms.analyze_allocation(system, mode_id, allocation).platform_bound
        if best is None or bound < best:
            best = bound
    return best


def knapsack_brute(items, capacity):
    """Exhaustive 0-1 knapsack value: items are (wcet, utilization) pairs."""
    if not items:
        return Fraction(0)
    wcet, util = items[0]
    skip = knapsack_brute(items[1:], capacity)
    if util <= capacity:
        return max(skip, wcet + knapsack_brute(items[1:], capacity - util))
    return skip


def busy_period_candidates(z, mi_tasks, upper):
    """All points z + sum(k_j * C_j) with k_j in 0..ceil(upper/T_j)+1, sorted."""
    ranges = [range(0, math.ceil(upper / t.period) + 2) for t in mi_tasks]
    points = set()
    for ks in itertools.product(*ranges):
        points.add(z + sum((k * t.wcet for k, t in zip(ks, mi_tasks)), Fraction(0)))
    return sorted(points)


def busy_period_oracle(z, mi_tasks, upper):
    """Least fixed point by scanning candidate points, fully independent of the iteration."""
    for point in busy_period_candidates(z, mi_tasks, upper):
        if point < z:
            continue
        if point == z + sum((math.ceil(point / t.period) * t.wcet for t in mi_tasks), Fraction(0)):
            return point
    return None


def execution_intervals(trace, processor=None, task=None, job=None):
    """(begin, end) execution intervals reconstructed from start/resume/preempt/complete events."""
    intervals = []
    open_since = {}
    for event in trace.events:
        if processor is not None and event.processor != processor:
            continue
        if task is not None and event.task != task:
            continue
        if job is not None and event.job != job:
            continue
        key = (event.processor, event.task, event.job)
        if event.kind in ("start", "resume"):
            open_since[key] = event.time
        elif event.kind in ("preempt", "complete") and key in open_since:
            intervals.append((open_since.pop(key), event.time))
    return sorted(intervals)


def drain_instant(trace):
    """First instant at which every job released strictly earlier has completed.

    Completions are emitted before same-instant releases, so walking the event
    list in order finds the end of the initial busy period even when the next
    one starts back-to-back.
    """
    pending = 0
    for event in trace.events:
        if event.kind == "release":
            pending += 1
        elif event.kind == "complete":
            pending -= 1
            if pending == 0:
                return event.time
    return Fraction(0)


_SENSE_SPLIT = re.compile(r"\s(<=|>=|=)\s")


def parse_lp_document(text):
    """Parse an LP file into rows, binaries, generals, and integer bounds."""
    rows = []
    binaries = []
    generals = []
    upper_bounds = {}
    section = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("\\"):
            continue
        if stripped in ("Minimize", "Maximize", "Subject To", "Bounds", "Binary", "General", "End"):
            section = stripped
            continue
        if section == "Binary":
            binaries.append(stripped)
        elif section == "General":
            generals.append(stripped)
        elif section == "Bounds":
            low, var, high = re.fullmatch(r"(\S+) <= (\S+) <= (\S+)", stripped).groups()
            assert Fraction(low) == 0
            upper_bounds[var] = Fraction(high)
        elif section == "Subject To":
            name, rest = stripped.split(":", 1)
            lhs, sense, rhs = _SENSE_SPLIT.split(rest.strip(), maxsplit=1)
            terms = {}
            sign = 1
            coefficient = None
            for token in lhs.split():
                if token == "+":
                    sign = 1
                elif token == "-":
                    sign = -1
                else:
                    try:
                        coefficient = Fraction(token)
                    except ValueError:
                        terms[token] = terms.get(token, Fraction(0)) + sign * (
                            coefficient if coefficient is not None else Fraction(1)
                        )
                        sign = 1
                        coefficient = None
            rows.append((name.strip(), terms, sense, Fraction(rhs)))
    return {"rows": rows, "binaries": binaries, "generals": generals, "upper_bounds": upper_bounds}


def parse_lp_rows(text):
    """Parse the Subject To section of an LP file into (name, {var: coef}, sense, rhs)."""
    return parse_lp_document(text)["rows"]


def solve_lp_text(text):
    """Feed a parsed LP document to an external mixed-integer solver (HiGHS).

    Independent of the in-repo search: everything is reconstructed from the
    exported text alone.  Returns the solver's optimal objective value.
    """
    import numpy as np
    from scipy.optimize import Bounds, LinearConstraint, milp

    doc = parse_lp_document(text)
    variables = sorted(
        {var for _, terms, _, _ in doc["rows"] for var in terms}
        | set(doc["binaries"]) | set(doc["generals"]) | {"L"}
    )
    index = {var: i for i, var in enumerate(variables)}
    objective = np.zeros(len(variables))
    objective[index["L"]] = 1.0
    integrality = np.zeros(len(variables))
    lower = np.zeros(len(variables))
    upper = np.full(len(variables), np.inf)
    for var in doc["binaries"]:
        integrality[index[var]] = 1
        upper[index[var]] = 1.0
    for var in doc["generals"]:
        integrality[index[var]] = 1
    for var, bound in doc["upper_bounds"].items():
        upper[index[var]] = float(bound)
    matrix = np.zeros((len(doc["rows"]), len(variables)))
    low = np.zeros(len(doc["rows"]))
    high = np.zeros(len(doc["rows"]))
    for r, (_, terms, sense, rhs) in enumerate(doc["rows"]):
        for var, coefficient in terms.items():
            matrix[r, index[var]] = float(coefficient)
        high[r] = float(rhs)
        low[r] = float(rhs) if sense == "=" else -np.inf
    result = milp(
        c=objective,
        constraints=LinearConstraint(matrix, low, high),
        integrality=integrality,
        bounds=Bounds(lower, upper),
    )
    assert result.success, result.message
    return result.fun


# ---------------------------------------------------------------------------
# randomized system generation (seeded by the caller)
# ---------------------------------------------------------------------------

PERIOD_POOL = (2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 24, 30)


def random_system(rng, m_max=3, max_tasks=8, md_heavy=False, ff_mi=False):
    """A small random two-mode system with integer parameters <= 30.

    Per-processor MI utilization is kept at most 1 by construction; MD demand
    may or may not be allocatable (callers wanting feasible systems filter).
    With ``ff_mi`` the MI tasks are themselves placed first-fit, which keeps
    the combined placement reachable by a first-fit ordering -- the premise of
    the utilization feasibility guarantee.
    """
    processors = rng.randint(1, m_max)
    total = rng.randint(2, max_tasks)
    mi_count = rng.randint(0, min(3, total - 1))
    tasks = []
    spare = {p: Fraction(1) for p in range(1, processors + 1)}
    for i in range(mi_count):
        period = rng.choice(PERIOD_POOL)
        wcet = rng.randint(1, period)
        utilization = Fraction(wcet, period)
        if ff_mi:
            p = next((q for q in spare if utilization <= spare[q]), None)
        else:
            p = rng.randint(1, processors)
            ceiling = min(period, int(spare[p] * period))
            if ceiling < 1:
                continue
            wcet = rng.randint(1, ceiling)
            utilization = Fraction(wcet, period)
        if p is None:
            continue
        spare[p] -= utilization
        tasks.append({"id": f"mi{i + 1}", "kind": "MI", "wcet": wcet, "period": period, "processor": p})
    md_ids = []
    for i in range(total - mi_count):
        period = rng.choice(PERIOD_POOL)
        top = period if md_heavy else max(1, period // 2)
        wcet = rng.randint(1, top)
        task_id = f"md{i + 1}"
        tasks.append({"id": task_id, "kind": "MD", "wcet": wcet, "period": period})
        md_ids.append(task_id)
    first = sorted(tid for tid in md_ids if rng.random() < 0.5)
    second = sorted(tid for tid in md_ids if tid not in first)
    raw = {
        "processors": processors,
        "tasks": tasks,
        "modes": [
            {"id": "alpha", "md_tasks": first},
            {"id": "beta", "md_tasks": second},
        ],
        "transitions": [["alpha", "beta"], ["beta", "alpha"]],
    }
    return ms.build_system(raw)
