from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import modesched as ms
from conftest import case_study_raw


def test_case_study_structure(case_study):
    assert case_study.processor_count == 2
    assert [t.id for t in case_study.mi_on(1)] == ["tau1", "tau2"]
    assert [t.id for t in case_study.mi_on(2)] == ["tau3", "tau4"]
    assert case_study.mode("mode1").md_tasks == ("tau5", "tau6", "tau7", "tau8", "tau9")
    assert case_study.mode("mode2").md_tasks == ("tau10",)
    assert case_study.mi_utilization(1) == Fraction(2, 3)
    assert case_study.mi_utilization(2) == Fraction(11, 30)
    assert case_study.task("tau5").utilization == Fraction(7, 40)


def test_utilization_summary_mode1(case_study):
    summary = ms.utilization_summary(case_study, "mode1")
    assert summary.u_sum == Fraction("1.545")
    assert summary.u_max == Fraction(1, 3)
    assert summary.per_processor_mi == (Fraction(2, 3), Fraction(11, 30))


def test_utilization_summary_mode2(case_study):
    summary = ms.utilization_summary(case_study, "mode2")
    assert summary.u_sum == Fraction(23, 15)
    assert summary.u_max == Fraction(1, 2)


def test_utilization_summary_empty_system():
    system = ms.build_system(
        {"processors": 1, "tasks": [], "modes": [{"id": "only", "md_tasks": []}], "transitions": []}
    )
    summary = ms.utilization_summary(system, "only")
    assert summary.u_sum == 0
    assert summary.u_max == 0
    assert summary.per_processor_mi == (Fraction(0),)


def test_utilization_summary_unknown_mode(case_study):
    with pytest.raises(ms.SystemValidationError):
        ms.utilization_summary(case_study, "mode3")


def test_decimal_strings_parse_exactly():
    raw = case_study_raw()
    raw["tasks"][0]["wcet"] = "10.00"
    raw["tasks"][4]["wcet"] = "7"
    system = ms.build_system(raw)
    assert system.task("tau1").wcet == 10
    assert ms.utilization_summary(system, "mode1").u_sum == Fraction(309, 200)


def test_floats_rejected():
    raw = case_study_raw()
    raw["tasks"][0]["wcet"] = 10.0
    with pytest.raises(ms.SystemValidationError, match="inexact"):
        ms.build_system(raw)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda r: r["tasks"].append(dict(r["tasks"][0])), "duplicate task id"),
        (lambda r: r["modes"][1]["md_tasks"].append("tau5"), "belongs to both"),
        (lambda r: r["tasks"][0].pop("processor"), "require a processor"),
        (lambda r: r["tasks"][0].update(wcet=0), "must be positive"),
        (lambda r: r["tasks"][0].update(period=0), "must be positive"),
        (lambda r: r["tasks"][4].update(wcet=41), "exceeds period"),
        (lambda r: r["tasks"][4].update(processor=1), "must not carry a static processor"),
        (lambda r: r["tasks"][0].update(transition_deadline=5), "no transition deadline"),
        (lambda r: r["tasks"][0].update(processor=3), "outside 1..2"),
        (lambda r: r["transitions"].append(["mode1", "mode1"]), "self-loop"),
        (lambda r: r["transitions"].append(["mode1", "mode9"]), "unknown mode"),
        (lambda r: r["transitions"].append(["mode1", "mode2"]), "duplicate edge"),
        (lambda r: r["modes"][0]["md_tasks"].append("tau1"), "mode-independent"),
        (lambda r: r["modes"][0]["md_tasks"].remove("tau5"), "belong to no mode"),
    ],
)
def test_build_system_rejections(mutate, match):
    raw = case_study_raw()
    mutate(raw)
    with pytest.raises(ms.SystemValidationError, match=match):
        ms.build_system(raw)


def test_mi_overload_rejected():
    # 0.525 + 0.525 = 1.05 on processor 1
    raw = {
        "processors": 1,
        "tasks": [
            {"id": "a", "kind": "MI", "wcet": 21, "period": 40, "processor": 1},
            {"id": "b", "kind": "MI", "wcet": 21, "period": 40, "processor": 1},
        ],
        "modes": [{"id": "m", "md_tasks": []}],
        "transitions": [],
    }
    with pytest.raises(ms.SystemValidationError, match="exceeds 1"):
        ms.build_system(raw)


def test_zero_md_modes_valid():
    system = ms.build_system(
        {
            "processors": 2,
            "tasks": [{"id": "a", "kind": "MI", "wcet": 1, "period": 2, "processor": 1}],
            "modes": [{"id": "m1", "md_tasks": []}, {"id": "m2", "md_tasks": []}],
            "transitions": [["m1", "m2"]],
        }
    )
    assert system.md_tasks_of("m1") == ()


def test_check_transition_deadline_boundaries(case_study):
    tau10 = case_study.task("tau10")
    passing = ms.check_transition_deadline(tau10, 40)
    assert passing.passed and passing.slack == 10 and passing.checked
    tight = ms.check_transition_deadline(tau10, 50)
    assert tight.passed and tight.slack == 0
    failing = ms.check_transition_deadline(tau10, 51)
    assert not failing.passed and failing.slack == -1


def test_check_transition_deadline_unchecked():
    task = ms.Task(id="x", kind="MD", wcet=Fraction(1), period=Fraction(5))
    verdict = ms.check_transition_deadline(task, 1000)
    assert verdict.passed and not verdict.checked and verdict.slack is None


def test_check_transition_deadline_rejects_mi(case_study):
    with pytest.raises(ValueError):
        ms.check_transition_deadline(case_study.task("tau1"), 1)


@settings(max_examples=60, deadline=None)
@given(
    deadline=st.integers(min_value=1, max_value=500),
    period=st.integers(min_value=1, max_value=100),
    latency=st.fractions(min_value=0, max_value=500),
    smaller=st.fractions(min_value=0, max_value=1),
)
def test_deadline_check_monotone(deadline, period, latency, smaller):
    task = ms.Task(
        id="t", kind="MD", wcet=Fraction(1, 2), period=Fraction(period) + 1,
        transition_deadline=Fraction(deadline),
    )
    if ms.check_transition_deadline(task, latency).passed:
        assert ms.check_transition_deadline(task, latency * smaller).passed


@settings(max_examples=80, deadline=None)
@given(
    num=st.integers(min_value=1, max_value=10**6),
    den=st.integers(min_value=1, max_value=10**6),
)
def test_utilization_exact_for_bounded_denominators(num, den):
    wcet = Fraction(num, den)
    period = wcet + Fraction(num, den)  # utilization exactly 1/2
    task = ms.Task(id="t", kind="MD", wcet=wcet, period=period)
    assert task.utilization == Fraction(1, 2)
    assert sum([task.utilization] * 3, Fraction(0)) == Fraction(3, 2)


def four_mode_graph():
    return ms.build_system(
        {
            "processors": 1,
            "tasks": [],
            "modes": [{"id": f"mode{i}", "md_tasks": []} for i in (1, 2, 3, 4)],
            "transitions": [
                ["mode1", "mode2"],
                ["mode2", "mode3"],
                ["mode2", "mode4"],
                ["mode3", "mode4"],
                ["mode4", "mode1"],
            ],
        }
    )


def test_worst_predecessor_latency_over_graph():
    system = four_mode_graph()
    latencies = {"mode1": Fraction(3), "mode2": Fraction(11), "mode3": Fraction(9), "mode4": Fraction(2)}
    assert system.mode_graph.predecessors("mode4") == ("mode2", "mode3")
    assert ms.worst_predecessor_latency(system, "mode4", latencies) == 11
    assert ms.worst_predecessor_latency(system, "mode1", latencies) == 2
    # mode with no incoming edges
    lone = ms.build_system(
        {
            "processors": 1,
            "tasks": [],
            "modes": [{"id": "a", "md_tasks": []}, {"id": "b", "md_tasks": []}],
            "transitions": [["a", "b"]],
        }
    )
    assert ms.worst_predecessor_latency(lone, "a", {}) == 0


def test_worst_predecessor_latency_cycle(case_study):
    assert ms.worst_predecessor_latency(case_study, "mode1", {"mode2": Fraction(85)}) == 85


def test_worst_predecessor_latency_missing_entry():
    system = four_mode_graph()
    with pytest.raises(ValueError, match="no latency provided"):
        ms.worst_predecessor_latency(system, "mode4", {"mode2": Fraction(1)})


def test_validate_allocation(case_study):
    good = ms.Allocation("mode1", {"tau5": 1, "tau6": 1, "tau7": 1, "tau8": 2, "tau9": 2})
    ms.validate_allocation(case_study, good)
    with pytest.raises(ms.AllocationError, match="unassigned"):
        ms.validate_allocation(case_study, ms.Allocation("mode1", {"tau5": 1}))
    with pytest.raises(ms.AllocationError, match="not in mode"):
        ms.validate_allocation(
            case_study,
            ms.Allocation("mode1", {"tau5": 1, "tau6": 1, "tau7": 1, "tau8": 2, "tau9": 2, "tau10": 2}),
        )
    with pytest.raises(ms.AllocationError, match="outside"):
        ms.validate_allocation(
            case_study,
            ms.Allocation("mode1", {"tau5": 3, "tau6": 1, "tau7": 1, "tau8": 2, "tau9": 2}),
        )
    # tau10 (U=1/2) overloads processor 1 (MI 2/3)
    with pytest.raises(ms.AllocationError, match="exceeds 1"):
        ms.validate_allocation(case_study, ms.Allocation("mode2", {"tau10": 1}))


def test_tasks_are_immutable(case_study):
    task = case_study.task("tau5")
    with pytest.raises(AttributeError):
        task.wcet = Fraction(1)
