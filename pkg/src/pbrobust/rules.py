"""Budgeting rules: GreedyAV, GreedyCost, Phragmén, MES and MES completions.

All money arithmetic is exact (``fractions.Fraction``). Voters whose balances
coincide are kept in shared balance classes, so a round of Phragmén or MES
costs one ``bincount`` per project plus rational arithmetic over the distinct
balances only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import Instance, Outcome, SelectionStep, TieBreak, is_exhaustive, tie_positions

ADD1_MAX_INCREMENTS = 500
EPSILON_FLOOR = Fraction(1, 2**50)
EPSILON_REL_WIDTH = Fraction(1, 10**9)


class Rule(str, enum.Enum):
    GREEDY_AV = "greedy-av"
    GREEDY_COST = "greedy-cost"
    PHRAGMEN = "phragmen"
    MES_APR = "mes-apr"
    MES_COST = "mes-cost"


class Completion(str, enum.Enum):
    NONE = "none"
    ADD1 = "add1"
    ADD1_GREEDY_AV = "add1-greedyav"
    EPSILON = "epsilon"
    GREEDY_AV = "greedyav"


class Utility(str, enum.Enum):
    APPROVAL = "approval"
    COST = "cost"


MES_RULES = (Rule.MES_APR, Rule.MES_COST)


@dataclass(frozen=True)
class RuleSpec:
    rule: Rule
    tiebreak: TieBreak = TieBreak.ORDER
    completion: Completion = Completion.NONE

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "tiebreak", TieBreak(self.tiebreak))
        object.__setattr__(self, "completion", Completion(self.completion))
        if self.completion is not Completion.NONE and self.rule not in MES_RULES:
            raise ValueError(f"completion {self.completion.value} needs an MES rule")
        if self.tiebreak is TieBreak.CHEAPER_FIRST and self.rule not in (
                Rule.GREEDY_AV, Rule.GREEDY_COST):
            raise ValueError(f"{self.rule.value} supports order-based tie-breaking only")

    @property
    def label(self) -> str:
        text = self.rule.value
        if self.tiebreak is TieBreak.CHEAPER_FIRST:
            text += "@cheaper-first"
        if self.completion is not Completion.NONE:
            text += ":" + self.completion.value
        return text

    @classmethod
    def parse(cls, text: str) -> "RuleSpec":
        """Parse ``rule[@cheaper-first][:completion]``, e.g. ``mes-cost:add1-greedyav``."""
        rule, _, completion = text.strip().partition(":")
        rule, _, tiebreak = rule.partition("@")
        return cls(Rule(rule), TieBreak(tiebreak or "order"),
                   Completion(completion or "none"))


# ---------------------------------------------------------------- greedy rules

def _greedy_pass(instance: Instance, order: Iterable[int], left: int, skip=(),
                 phase: str = "", info=None, start: int = 0) -> list[SelectionStep]:
    steps = []
    costs = instance.costs
    for j in order:
        if j in skip:
            continue
        if costs[j] <= left:
            left -= costs[j]
            price = info(j) if info else {}
            steps.append(SelectionStep(instance.projects[j].id, start + len(steps), price, phase))
    return steps


def greedy_av(instance: Instance, tiebreak: TieBreak = TieBreak.ORDER) -> Outcome:
    """Consider projects by decreasing approval score and fund whatever still fits.

    Projects without approvals are considered too (they come last).
    """
    scores = instance.scores().tolist()
    pos = tie_positions(instance, tiebreak)
    order = sorted(range(instance.m), key=lambda j: (-scores[j], pos[j]))
    steps = _greedy_pass(instance, order, instance.budget, phase="greedy-av",
                         info=lambda j: {"score": scores[j]})
    return Outcome.from_steps(instance, steps)


def greedy_cost(instance: Instance, tiebreak: TieBreak = TieBreak.ORDER) -> Outcome:
    """Greedy by approval-to-cost ratio (exact), ties broken by ``tiebreak``."""
    scores = instance.scores().tolist()
    costs = instance.costs
    pos = tie_positions(instance, tiebreak)
    ratio = [Fraction(scores[j], costs[j]) for j in range(instance.m)]
    order = sorted(range(instance.m), key=lambda j: (-ratio[j], pos[j]))
    steps = _greedy_pass(instance, order, instance.budget, phase="greedy-cost",
                         info=lambda j: {"score": scores[j], "ratio": ratio[j]})
    return Outcome.from_steps(instance, steps)


# ------------------------------------------------------------ balance classes

class _Balances:
    """Voter balances stored as one class index per voter plus a value table."""

    def __init__(self, n: int, initial: Fraction):
        self.cls = np.zeros(n, dtype=np.intp)
        self.values: list[Fraction] = [initial]
        self._index = {initial: 0}

    def class_of(self, value: Fraction) -> int:
        k = self._index.get(value)
        if k is None:
            k = len(self.values)
            self.values.append(value)
            self._index[value] = k
        return k

    def counts(self, voters: np.ndarray) -> np.ndarray:
        return np.bincount(self.cls[voters], minlength=len(self.values))

    def move(self, voters: np.ndarray, mapping: dict[int, int]):
        if not mapping:
            return
        table = np.arange(len(self.values), dtype=np.intp)
        for old, new in mapping.items():
            table[old] = new
        self.cls[voters] = table[self.cls[voters]]


def _supporters(instance: Instance) -> list[np.ndarray]:
    matrix = instance.matrix
    return [np.flatnonzero(matrix[:, j]) for j in range(instance.m)]


# ------------------------------------------------------------------ Phragmén

def phragmen(instance: Instance, *, audit: bool = True) -> Outcome:
    """Sequential Phragmén for PB with exact purchase times.

    Voters earn money at unit rate; a project is bought as soon as its
    supporters jointly hold its cost. Balances are tracked as "time of last
    reset", so a voter's balance at time t is t minus that time.
    """
    costs = instance.costs
    supp = _supporters(instance)
    pos = tie_positions(instance)
    resets = _Balances(instance.n, Fraction(0))
    budget_left = instance.budget
    eligible = [j for j in range(instance.m) if len(supp[j]) and costs[j] <= budget_left]
    cache: dict[int, Fraction] = {}
    now = Fraction(0)
    steps = []
    while eligible:
        best = None
        for j in eligible:
            t = cache.get(j)
            if t is None:
                counts = resets.counts(supp[j])
                reset_sum = sum(int(c) * resets.values[k] for k, c in enumerate(counts) if c)
                t = (costs[j] + reset_sum) / len(supp[j])
                cache[j] = t
            if best is None or (t, pos[j]) < (best[0], pos[best[1]]):
                best = (t, j)
        t, j = best
        assert t >= now
        now = t
        price = {"time": t}
        if audit:
            price["payments"] = tuple(
                (int(v), now - resets.values[resets.cls[v]]) for v in supp[j])
        new = resets.class_of(now)
        resets.move(supp[j], {k: new for k in range(len(resets.values)) if k != new})
        mask = np.zeros(instance.n, dtype=bool)
        mask[supp[j]] = True
        budget_left -= costs[j]
        steps.append(SelectionStep(instance.projects[j].id, len(steps), price, "phragmen"))
        eligible = [d for d in eligible if d != j and costs[d] <= budget_left]
        for d in eligible:
            if d in cache and mask[supp[d]].any():
                del cache[d]
    return Outcome.from_steps(instance, steps)


# ----------------------------------------------------------------------- MES

def _min_q(cost: int, groups: list[tuple[Fraction, int, Fraction]]):
    """Smallest q with sum(count * min(balance, u*q)) == cost, or None.

    ``groups`` holds (balance, count, utility) with utility > 0.
    """
    groups = sorted(groups, key=lambda g: g[0] / g[2])
    paid = Fraction(0)
    rate = sum(c * u for _, c, u in groups)
    for b, c, u in groups:
        q = (cost - paid) / rate
        if q * u <= b:
            return q
        paid += c * b
        rate -= c * u
    return None


def mes(instance: Instance, utility_mode: Utility = Utility.COST, *, audit: bool = True,
        endowment_budget: Fraction | int | None = None,
        epsilon: Fraction | None = None, phase: str = "mes") -> Outcome:
    """Method of Equal Shares with approval or cost utilities.

    ``endowment_budget`` overrides the budget used for the initial endowments
    (the Add1 completion raises it). With ``epsilon`` set, non-approvers value
    a project at ``epsilon`` times the approvers' utility.
    """
    utility_mode = Utility(utility_mode)
    n, costs = instance.n, instance.costs
    endow_total = Fraction(instance.budget if endowment_budget is None else endowment_budget)
    bal = _Balances(n, endow_total / n)
    supp = _supporters(instance)
    non_supp = None
    if epsilon is not None:
        epsilon = Fraction(epsilon)
        matrix = instance.matrix
        non_supp = [np.flatnonzero(~matrix[:, j]) for j in range(instance.m)]
    util = [Fraction(1) if utility_mode is Utility.APPROVAL else Fraction(c) for c in costs]
    pos = tie_positions(instance)
    if epsilon is None:
        candidates = [j for j in range(instance.m) if len(supp[j])]
    else:
        candidates = list(range(instance.m))
    cache: dict[int, Fraction] = {}
    steps = []
    last_q = None
    while candidates:
        best = None
        alive = []
        for j in candidates:
            q = cache.get(j)
            if q is None:
                groups = [(bal.values[k], int(c), util[j])
                          for k, c in enumerate(bal.counts(supp[j])) if c]
                if non_supp is not None and epsilon > 0:
                    groups += [(bal.values[k], int(c), epsilon * util[j])
                               for k, c in enumerate(bal.counts(non_supp[j])) if c]
                money = sum(b * c for b, c, _ in groups)
                if money < costs[j]:
                    continue  # balances never grow back
                q = _min_q(costs[j], groups)
                cache[j] = q
            alive.append(j)
            if best is None or (q, pos[j]) < (best[0], pos[best[1]]):
                best = (q, j)
        candidates = alive
        if best is None:
            break
        q, j = best
        assert last_q is None or q >= last_q
        last_q = q
        payers = [(supp[j], util[j])]
        if non_supp is not None and epsilon > 0:
            payers.append((non_supp[j], epsilon * util[j]))
        records = []
        touched = np.zeros(n, dtype=bool)
        for voters, u in payers:
            cap = u * q
            mapping = {}
            counts = bal.counts(voters)
            for k, c in enumerate(counts):
                if not c:
                    continue
                b = bal.values[k]
                pay = b if b < cap else cap
                if pay:
                    mapping[k] = bal.class_of(b - pay)
            if audit:
                for v in voters.tolist():
                    b = bal.values[bal.cls[v]]
                    pay = b if b < cap else cap
                    if pay:
                        records.append((v, b, pay))
            bal.move(voters, mapping)
            if mapping:
                touched[voters] = True
        price = {"q": q}
        if audit:
            records.sort()
            price["payments"] = tuple(records)
        steps.append(SelectionStep(instance.projects[j].id, len(steps), price, phase))
        candidates = [d for d in candidates if d != j]
        for d in candidates:
            if d in cache and (non_supp is not None or touched[supp[d]].any()):
                del cache[d]
    return Outcome.from_steps(instance, steps)


# --------------------------------------------------------------- completions

def _renumber(steps, phase=None):
    return [SelectionStep(s.project_id, i, s.price_info, phase or s.phase)
            for i, s in enumerate(steps)]


def _greedy_fill(instance: Instance, steps: list[SelectionStep]) -> list[SelectionStep]:
    chosen = {instance.project_index(s.project_id) for s in steps}
    left = instance.budget - sum(instance.costs[j] for j in chosen)
    scores = instance.scores().tolist()
    pos = tie_positions(instance)
    order = sorted(range(instance.m), key=lambda j: (-scores[j], pos[j]))
    return _greedy_pass(instance, order, left, skip=chosen, phase="greedy-av",
                        info=lambda j: {"score": scores[j]}, start=len(steps))


def _mes_add1(instance: Instance, utility: Utility, audit: bool):
    budget = instance.budget
    best = mes(instance, utility, audit=audit)
    k_best, stop = 0, "cap"
    if is_exhaustive(instance, best.selected):
        return best, {"add1_increments": 0, "add1_stop": "exhaustive"}
    for k in range(1, ADD1_MAX_INCREMENTS + 1):
        out = mes(instance, utility, audit=audit, phase="add1",
                  endowment_budget=Fraction(budget * (100 + k), 100))
        if out.total_cost > budget:
            stop = "exceeded"
            break
        best, k_best = out, k
        if is_exhaustive(instance, out.selected):
            stop = "exhaustive"
            break
    return best, {"add1_increments": k_best, "add1_stop": stop}


def _mes_epsilon(instance: Instance, utility: Utility, audit: bool):
    raw = mes(instance, utility, audit=audit)
    if is_exhaustive(instance, raw.selected, include_unapproved=True):
        return raw, {"epsilon": Fraction(0)}

    def run(eps):
        out = mes(instance, utility, audit=audit, epsilon=eps, phase="epsilon")
        return out, is_exhaustive(instance, out.selected, include_unapproved=True)

    # doubling search from the floor, then bisection to a relative width
    eps = EPSILON_FLOOR
    out, ok = run(eps)
    lo = Fraction(0)
    while not ok and eps < 1:
        lo, eps = eps, min(eps * 2, Fraction(1))
        out, ok = run(eps)
    if not ok:
        return out, {"epsilon": eps, "epsilon_exhaustive": False}
    hi, best = eps, out
    while hi - lo > EPSILON_REL_WIDTH * hi and lo > 0:
        mid = (lo + hi) / 2
        out, ok = run(mid)
        if ok:
            hi, best = mid, out
        else:
            lo = mid
    return best, {"epsilon": hi}


def run_rule(instance: Instance, spec: RuleSpec, *, audit: bool = True) -> Outcome:
    """Evaluate ``spec`` on ``instance``; ``audit=False`` skips per-voter payment records."""
    rule = spec.rule
    if rule is Rule.GREEDY_AV:
        return greedy_av(instance, spec.tiebreak)
    if rule is Rule.GREEDY_COST:
        return greedy_cost(instance, spec.tiebreak)
    if rule is Rule.PHRAGMEN:
        return phragmen(instance, audit=audit)
    utility = Utility.APPROVAL if rule is Rule.MES_APR else Utility.COST
    completion = spec.completion
    if completion is Completion.NONE:
        return mes(instance, utility, audit=audit)
    meta = {"completion": completion.value}
    if completion in (Completion.ADD1, Completion.ADD1_GREEDY_AV):
        base, info = _mes_add1(instance, utility, audit)
        meta.update(info)
    elif completion is Completion.EPSILON:
        base, info = _mes_epsilon(instance, utility, audit)
        meta.update(info)
    else:
        base = mes(instance, utility, audit=audit)
    steps = _renumber(base.trace)
    if completion in (Completion.ADD1_GREEDY_AV, Completion.GREEDY_AV):
        steps += _greedy_fill(instance, steps)
    return Outcome.from_steps(instance, steps, meta)
