"""Random instance generators and slow, independent reference implementations.

The reference rules work voter by voter with plain Fractions and share no
code with the package beyond the Instance container.
"""

import random
from fractions import Fraction

from pbrobust.core import make_instance


def random_instance(rng: random.Random, m_max=5, n_max=4, cost_max=8, budget_max=20,
                    density=0.5, unit=False, m_min=1, n_min=1):
    m = rng.randint(m_min, m_max)
    n = rng.randint(n_min, n_max)
    costs = {f"c{j}": 1 if unit else rng.randint(1, cost_max) for j in range(m)}
    approvals = [[c for c in costs if rng.random() < density] for _ in range(n)]
    budget = rng.randint(0 if unit else 1, m if unit else budget_max)
    return make_instance(costs, approvals, budget)


def ranked(instance):
    return sorted(range(instance.m), key=lambda j: instance.projects[j].tiebreak_rank)


def ref_greedy(instance, key):
    left = instance.budget
    chosen = []
    for j in sorted(range(instance.m), key=key):
        if instance.costs[j] <= left:
            left -= instance.costs[j]
            chosen.append(instance.projects[j].id)
    return chosen


def ref_greedy_av(instance, cheaper_first=False):
    scores = [sum(1 for ballot in instance.approvals if p.id in ballot) for p in instance.projects]

    def key(j):
        p = instance.projects[j]
        return (-scores[j], p.cost, p.tiebreak_rank) if cheaper_first else (-scores[j], p.tiebreak_rank)
    return ref_greedy(instance, key)


def ref_greedy_cost(instance):
    scores = [sum(1 for ballot in instance.approvals if p.id in ballot) for p in instance.projects]
    return ref_greedy(instance, lambda j: (-Fraction(scores[j], instance.costs[j]),
                                           instance.projects[j].tiebreak_rank))


def ref_phragmen(instance):
    """Simulate the money-earning process: every voter earns 1 per time unit."""
    supporters = {p.id: [i for i, b in enumerate(instance.approvals) if p.id in b]
                  for p in instance.projects}
    balance = [Fraction(0)] * instance.n
    now = Fraction(0)
    left = instance.budget
    chosen = []
    while True:
        best = None
        for p in instance.projects:
            s = supporters[p.id]
            if p.id in chosen or not s or p.cost > left:
                continue
            have = sum(balance[i] for i in s)
            wait = max(Fraction(0), (p.cost - have) / len(s))
            key = (now + wait, p.tiebreak_rank)
            if best is None or key < best[0]:
                best = (key, p)
        if best is None:
            return chosen
        (t, _), p = best
        for i in range(instance.n):
            balance[i] += t - now
        for i in supporters[p.id]:
            balance[i] = Fraction(0)
        now = t
        left -= p.cost
        chosen.append(p.id)


def ref_mes(instance, approval_utility=False, endowment=None):
    """Equal shares, one voter at a time; q found by scanning payment breakpoints."""
    n = instance.n
    total = Fraction(instance.budget if endowment is None else endowment)
    balance = [total / n] * n
    chosen = []
    while True:
        best = None
        for p in instance.projects:
            if p.id in chosen:
                continue
            s = [i for i, b in enumerate(instance.approvals) if p.id in b]
            if not s or sum(balance[i] for i in s) < p.cost:
                continue
            u = Fraction(1) if approval_utility else Fraction(p.cost)
            # candidate q: the k poorest supporters pay everything they have
            bs = sorted(balance[i] for i in s)
            q = None
            for k in range(len(bs)):
                cand = (p.cost - sum(bs[:k])) / (u * (len(bs) - k))
                if cand * u <= bs[k] and (k == 0 or cand * u >= bs[k - 1]):
                    q = cand
                    break
            assert q is not None
            key = (q, p.tiebreak_rank)
            if best is None or key < best[0]:
                best = (key, p, s, u)
        if best is None:
            return chosen
        (q, _), p, s, u = best
        for i in s:
            balance[i] -= min(balance[i], u * q)
        chosen.append(p.id)


def ref_exhaustive(instance, chosen):
    left = instance.budget - sum(instance.project(p).cost for p in chosen)
    approved = set().union(*instance.approvals)
    return all(p.cost > left for p in instance.projects if p.id in approved and p.id not in chosen)


def ref_add1(instance):
    """Raise the endowment by 1% steps; keep the last outcome that fits the budget,
    stopping early once an outcome is exhaustive."""
    best = ref_mes(instance)
    for k in range(1, 501):
        if ref_exhaustive(instance, best):
            break
        out = ref_mes(instance, endowment=Fraction(instance.budget * (100 + k), 100))
        if sum(instance.project(p).cost for p in out) > instance.budget:
            break
        best = out
    return best
