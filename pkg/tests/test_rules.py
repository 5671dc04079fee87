import random
from fractions import Fraction

import pytest

from helpers import (random_instance, ref_add1, ref_greedy_av, ref_greedy_cost, ref_mes, ref_phragmen)
from pbrobust.core import TieBreak, is_exhaustive, make_instance
from pbrobust.rules import (Completion, Rule, RuleSpec, Utility, greedy_av, greedy_cost, mes,
                            phragmen, run_rule)


def three_projects():
    # scores a=3, b=2, c=1
    return make_instance({"a": 2, "b": 2, "c": 1}, [["a", "b", "c"], ["a", "b"], ["a"]], 3)


def test_greedy_av_skips_what_does_not_fit():
    out = greedy_av(three_projects())
    assert out.order == ("a", "c")
    assert out.total_cost == 3
    assert [s.price_info["score"] for s in out.trace] == [3, 1]


def test_greedy_av_budget_dominates():
    inst = three_projects().with_budget(5)
    assert greedy_av(inst).selected == {"a", "b", "c"}


def test_greedy_av_funds_unapproved_projects():
    inst = make_instance({"x": 1, "y": 1}, [[]], 1)
    assert greedy_av(inst).order == ("x",)


def test_greedy_av_cheaper_first():
    inst = make_instance({"a": 3, "b": 1, "c": 2}, [["a", "b", "c"]], 3)
    assert greedy_av(inst, TieBreak.ORDER).order == ("a",)
    assert greedy_av(inst, TieBreak.CHEAPER_FIRST).order == ("b", "c")


def test_greedy_cost_prefers_ratio():
    inst = make_instance({"a": 2, "b": 1}, [["a", "b"]] * 3 + [["a"]], 1)
    out = greedy_cost(inst)
    assert out.order == ("b",)
    assert out.trace[0].price_info["ratio"] == 3


def test_greedy_cost_zero_scores_in_order():
    inst = make_instance({"q": 1, "p": 1}, [[]], 2)
    assert greedy_cost(inst).order == ("q", "p")


def test_greedy_cost_unit_costs_equal_greedy_av():
    rng = random.Random(5)
    for _ in range(100):
        inst = random_instance(rng, m_max=7, n_max=6, unit=True)
        assert greedy_cost(inst).order == greedy_av(inst).order


def test_phragmen_two_voters():
    inst = make_instance({"a": 1, "b": 2}, [["a"], ["b"]], 3)
    out = phragmen(inst)
    assert out.order == ("a", "b")
    assert [s.price_info["time"] for s in out.trace] == [1, 2]
    assert out.trace[1].price_info["payments"] == ((1, Fraction(2)),)


def test_phragmen_single_event_and_unapproved():
    inst = make_instance({"x": 3, "y": 1}, [["x"], ["x"], ["x"], ["x"]], 10)
    out = phragmen(inst)
    assert out.order == ("x",)
    assert out.trace[0].price_info["time"] == Fraction(3, 4)


def test_mes_approval_example():
    inst = make_instance([("c", 2), ("a", 1)], [["a", "c"], ["c"]], 4)
    out = mes(inst, Utility.APPROVAL)
    assert out.order == ("c", "a")
    c, a = out.trace
    assert c.price_info["q"] == 1 and a.price_info["q"] == 1
    assert c.price_info["payments"] == ((0, 2, 1), (1, 2, 1))
    assert a.price_info["payments"] == ((0, 1, 1),)


def test_mes_cost_single_voter_follows_order():
    inst = make_instance({"a": 3, "b": 4, "c": 2, "d": 1}, [["b", "c", "d"]], 6)
    out = mes(inst, Utility.COST)
    assert out.order == ("b", "c")
    assert all(s.price_info["q"] == 1 for s in out.trace)


def test_mes_never_funds_unapproved():
    inst = make_instance({"a": 1, "z": 1}, [["a"], ["a"]], 10)
    assert mes(inst).selected == {"a"}


@pytest.mark.parametrize("name,ref", [
    ("greedy-av", ref_greedy_av),
    ("greedy-av@cheaper-first", lambda i: ref_greedy_av(i, cheaper_first=True)),
    ("greedy-cost", ref_greedy_cost),
    ("phragmen", ref_phragmen),
    ("mes-apr", lambda i: ref_mes(i, approval_utility=True)),
    ("mes-cost", ref_mes),
])
def test_rules_match_reference(name, ref):
    spec = RuleSpec.parse(name)
    rng = random.Random(hash(name) % 1000)
    for _ in range(150):
        inst = random_instance(rng, m_max=7, n_max=8, cost_max=9, budget_max=25, density=0.4)
        assert list(run_rule(inst, spec).order) == ref(inst), (name, inst.approvals, inst.costs)


def test_mes_trace_invariants():
    rng = random.Random(9)
    for _ in range(100):
        inst = random_instance(rng, m_max=8, n_max=10, cost_max=9, budget_max=30)
        for utility in Utility:
            out = mes(inst, utility)
            qs = [s.price_info["q"] for s in out.trace]
            assert qs == sorted(qs)
            for s in out.trace:
                pays = s.price_info["payments"]
                assert sum(p for _, _, p in pays) == inst.project(s.project_id).cost
                assert all(0 < p <= b for _, b, p in pays)


def test_completions_keep_exhaustive_outcomes():
    inst = make_instance({"a": 1, "b": 1}, [["a", "b"], ["a", "b"]], 2)
    base = run_rule(inst, RuleSpec("mes-cost"))
    for comp in Completion:
        assert run_rule(inst, RuleSpec("mes-cost", completion=comp)).selected == base.selected


def test_add1_greedyav_extends_outcome():
    inst = make_instance({"x": 1, "y": 1, "z": 2}, [["y"], [], ["x", "y", "z"], ["y", "z"]], 2)
    base = mes(inst)
    assert base.order == ("y",) and not is_exhaustive(inst, base.selected)
    add1 = run_rule(inst, RuleSpec("mes-cost", completion="add1"))
    assert add1.order == ("y",)
    assert add1.meta["add1_stop"] == "exceeded" and add1.meta["add1_increments"] == 166
    out = run_rule(inst, RuleSpec("mes-cost", completion="add1-greedyav"))
    assert out.order == ("y", "x")
    assert [s.phase for s in out.trace] == ["add1", "greedy-av"]
    assert [s.step_index for s in out.trace] == [0, 1]


def test_add1_matches_reference():
    rng = random.Random(13)
    for _ in range(40):
        inst = random_instance(rng, m_max=5, n_max=5, cost_max=9, budget_max=20)
        assert list(run_rule(inst, RuleSpec("mes-cost", completion="add1")).order) == \
            ref_add1(inst)


def test_add1_stays_within_budget():
    rng = random.Random(11)
    for _ in range(60):
        inst = random_instance(rng, m_max=6, n_max=6, cost_max=9, budget_max=20)
        out = run_rule(inst, RuleSpec("mes-cost", completion="add1"))
        assert out.total_cost <= inst.budget
        assert out.meta["add1_stop"] in {"exhaustive", "exceeded", "cap"}


def test_epsilon_is_exhaustive():
    rng = random.Random(12)
    for _ in range(60):
        inst = random_instance(rng, m_max=6, n_max=6, cost_max=9, budget_max=20)
        out = run_rule(inst, RuleSpec("mes-apr", completion="epsilon"))
        assert out.total_cost <= inst.budget
        assert is_exhaustive(inst, out.selected, include_unapproved=True)


def test_rulespec_parse_and_validation():
    spec = RuleSpec.parse("mes-cost:add1-greedyav")
    assert spec.rule is Rule.MES_COST and spec.completion is Completion.ADD1_GREEDY_AV
    assert spec.label == "mes-cost:add1-greedyav"
    assert RuleSpec.parse("greedy-av@cheaper-first").tiebreak is TieBreak.CHEAPER_FIRST
    with pytest.raises(ValueError):
        RuleSpec("greedy-av", completion="add1")
    with pytest.raises(ValueError):
        RuleSpec("phragmen", tiebreak="cheaper-first")
    with pytest.raises(ValueError):
        RuleSpec.parse("borda")
