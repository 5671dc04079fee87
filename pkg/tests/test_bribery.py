import random
from fractions import Fraction
from math import comb

import pytest

from helpers import random_instance
from pbrobust import bribery as br
from pbrobust.bribery import BriberyQuery, GadgetSpec
from pbrobust.core import TieBreak, make_instance
from pbrobust.rules import RuleSpec, run_rule

GAV = RuleSpec("greedy-av")
GAV_CHEAP = RuleSpec("greedy-av", "cheaper-first")
COUNTERS = [
    lambda i, q, tb: br.count_bruteforce(i, RuleSpec("greedy-av", tb), q),
    br.count_greedyav_signature_dp,
    br.count_greedyav_ordering_dp,
]


def one_voter():
    # p before a in the tie order; the voter approves only a
    return make_instance({"p": 1, "a": 1}, [["a"]], 1)


@pytest.mark.parametrize("counter", COUNTERS + [br.count_greedyav_unit_cost])
def test_one_voter_count_is_two(counter):
    assert counter(one_voter(), BriberyQuery("p", 1), TieBreak.ORDER) == 2


def test_one_voter_probability_is_one():
    assert br.funding_probability_exact(one_voter(), GAV, BriberyQuery("p", 1)) == 1


def test_symmetric_instance_probability_half():
    inst = make_instance({"a": 1, "p": 1}, [["a", "p"]], 1)
    for solver in ("brute", "sig-dp", "order-dp", "unit-dp"):
        prob = br.funding_probability_exact(inst, GAV, BriberyQuery("p", 1), solver=solver)
        assert prob == Fraction(1, 2)


@pytest.mark.parametrize("counter", COUNTERS)
def test_radius_zero_matches_initial_outcome(counter):
    rng = random.Random(1)
    for _ in range(30):
        inst = random_instance(rng)
        for proj in inst.projects:
            won = proj.id in run_rule(inst, GAV).selected
            assert counter(inst, BriberyQuery(proj.id, 0), TieBreak.ORDER) == int(won)


@pytest.mark.parametrize("counter", COUNTERS)
def test_target_always_wins(counter):
    inst = make_instance({"p": 1, "a": 1}, [["p"], ["p", "a"]], 2)
    assert counter(inst, BriberyQuery("p", 1), TieBreak.ORDER) == inst.m * inst.n


@pytest.mark.parametrize("counter", COUNTERS)
def test_unaffordable_target_never_wins(counter):
    inst = make_instance({"a": 1, "p": 9}, [["p"], ["a"]], 8)
    for r in range(4):
        assert counter(inst, BriberyQuery("p", r), TieBreak.ORDER) == 0


def test_ordering_dp_single_project():
    inst = make_instance({"p": 2}, [["p"], [], ["p"], []], 3)
    for r in range(5):
        assert br.count_greedyav_ordering_dp(inst, BriberyQuery("p", r)) == comb(4, r)


def test_unit_dp_budget_dominates():
    inst = make_instance({"a": 1, "b": 1, "p": 1}, [["a"], ["b"]], 3)
    for r in range(7):
        assert br.count_greedyav_unit_cost(inst, BriberyQuery("p", r)) == comb(6, r)


def test_unit_dp_names_offending_project():
    inst = make_instance({"a": 1, "big": 4, "p": 1}, [["a"]], 2)
    with pytest.raises(ValueError, match="big"):
        br.count_greedyav_unit_cost(inst, BriberyQuery("p", 1))


def test_count_small_random_agreement():
    rng = random.Random(2)
    for _ in range(60):
        inst = random_instance(rng, m_max=4, n_max=3)
        tb = rng.choice(list(TieBreak))
        q = BriberyQuery(rng.choice(inst.projects).id, rng.randint(0, 3),
                         rng.choice(list(br.Semantics)))
        if q.semantics is br.Semantics.EXACTLY_R and q.radius > inst.m * inst.n:
            continue
        want = br.count_bruteforce(inst, RuleSpec("greedy-av", tb), q)
        assert br.count_greedyav_signature_dp(inst, q, tb) == want
        assert br.count_greedyav_ordering_dp(inst, q, tb) == want


def test_at_most_is_sum_of_exactly():
    rng = random.Random(3)
    inst = random_instance(rng, m_max=4, n_max=3, m_min=3, n_min=2)
    p = inst.projects[-1].id
    total = sum(br.count(inst, GAV, BriberyQuery(p, r), solver="brute") for r in range(4))
    assert br.count(inst, GAV, BriberyQuery(p, 3, "at-most"), solver="sig-dp") == total
    assert br.flip_set_total(inst, BriberyQuery(p, 3, "at-most")) == \
        sum(comb(inst.m * inst.n, r) for r in range(4))


def test_decide_examples():
    winner = make_instance({"p": 1, "a": 5}, [["p"], ["a"]], 3)
    assert br.decide(winner, GAV, BriberyQuery("p", 0))
    loser = make_instance({"p": 9, "a": 1}, [["p"], ["p"]], 8)
    assert not br.decide(loser, GAV, BriberyQuery("p", 3, "at-most"), solver="brute")
    assert not br.decide_greedyav_cheaper_first(loser, BriberyQuery("p", 3, "at-most"))


def test_xp_cheapest_fully_approved_target():
    inst = make_instance({"a": 3, "p": 1, "b": 2}, [["a", "p"], ["p", "b"]], 3)
    assert br.decide_greedyav_cheaper_first(inst, BriberyQuery("p", 0, "at-most"))


def test_xp_unbounded_radius_equals_any_pattern():
    rng = random.Random(4)
    for _ in range(40):
        inst = random_instance(rng, m_max=3, n_max=2)
        q = BriberyQuery(inst.projects[0].id, inst.m * inst.n, "at-most")
        assert br.decide_greedyav_cheaper_first(inst, q) == br.decide_bruteforce(inst, GAV_CHEAP, q)


def test_xp_requires_matching_query():
    inst = one_voter()
    with pytest.raises(ValueError):
        br.decide(inst, GAV, BriberyQuery("p", 1, "at-most"), solver="xp")
    with pytest.raises(ValueError):
        br.decide(inst, GAV_CHEAP, BriberyQuery("p", 1), solver="xp")
    with pytest.raises(ValueError):
        br.count(inst, GAV_CHEAP, BriberyQuery("p", 1), solver="xp")


def test_refusals_report_sizes():
    inst = make_instance({f"c{j}": 1 + j for j in range(6)}, [["c1"]] * 6, 5)
    with pytest.raises(br.EnumerationCapExceeded) as err:
        br.count_bruteforce(inst, GAV, BriberyQuery("c0", 4), cap=1000)
    assert err.value.required == comb(36, 4) and err.value.cap == 1000
    with pytest.raises(br.GuardExceeded):
        br.count_greedyav_signature_dp(inst, BriberyQuery("c0", 2), max_cells=100)
    with pytest.raises(br.GuardExceeded):
        br.count_greedyav_ordering_dp(inst, BriberyQuery("c0", 2), max_m=5)


def test_radius_out_of_range():
    with pytest.raises(ValueError):
        br.count_bruteforce(one_voter(), GAV, BriberyQuery("p", 3))
    with pytest.raises(ValueError):
        BriberyQuery("p", -1)


def test_pick_solver():
    unit = one_voter()
    priced = make_instance({"p": 2, "a": 1}, [["a"]], 2)
    assert br.pick_solver(unit, GAV, BriberyQuery("p", 1)) == "unit-dp"
    assert br.pick_solver(priced, GAV, BriberyQuery("p", 1)) == "sig-dp"
    assert br.pick_solver(priced, RuleSpec("phragmen"), BriberyQuery("p", 1)) == "brute"
    assert br.pick_solver(priced, GAV_CHEAP, BriberyQuery("p", 1, "at-most"), "decide") == "xp"
    wide = make_instance({f"c{j}": 2 for j in range(16)}, [["c1"]] * 2, 5)
    assert br.pick_solver(wide, GAV, BriberyQuery("c0", 2)) == "brute"


def test_other_rules_use_brute_force():
    inst = make_instance({"p": 2, "a": 1}, [["a"], ["p"]], 2)
    q = BriberyQuery("p", 1)
    assert br.count(inst, RuleSpec("phragmen"), q) == br.count_bruteforce(inst, RuleSpec("phragmen"), q)
    with pytest.raises(ValueError):
        br.count(inst, RuleSpec("phragmen"), q, solver="sig-dp")


# subset-sum gadgets

@pytest.mark.parametrize("U,t,k,expected", [
    ((2, 3, 5), 5, 2, True),
    ((1, 2, 3), 3, 2, True),
    ((2, 4, 6), 5, 2, False),
])
def test_gadget_examples(U, t, k, expected):
    inst, p, r = br.gen_subset_sum_gadget(GadgetSpec(U, t, k))
    assert inst.m == len(U) + (2 * k + 1) + (k + 1) + 1
    assert inst.n == 1 and r == k
    assert br.decide_bruteforce(inst, GAV, BriberyQuery(p, r, "at-most")) is expected
    assert br.sized_subset_sum(U, t, k) is expected


def test_gadget_witness_adds_x_approvals():
    inst, p, r = br.gen_subset_sum_gadget(GadgetSpec((2, 3, 5), 5, 2))
    bribed = inst
    from pbrobust.core import flip
    for x in ("x1", "x2"):  # 2 + 3 = 5
        bribed = flip(bribed, "v1", x)
    assert p in run_rule(bribed, GAV).selected
    assert p not in run_rule(inst, GAV).selected


def test_normalize_gadget():
    g = br.normalize_gadget(GadgetSpec((1, 2), 3, 1))
    shift = 1 + 3 + 3
    assert g == GadgetSpec((1 + shift, 2 + shift), 3 + shift, 1)
    with pytest.raises(ValueError):
        GadgetSpec((1, 2), 3, 3)
    with pytest.raises(ValueError):
        br.gen_subset_sum_gadget(GadgetSpec((1, 2), 50, 2))
