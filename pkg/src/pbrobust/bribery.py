"""Exact decision and counting for Flip-Bribery.

A flip toggles one (voter, project) approval. Counting uses "exactly r"
semantics: a way is an r-subset of voter-project pairs, so the funding
probability after r uniformly random flips is count / C(mn, r).

Table entries in the dynamic programs count flip sets, so they are bounded
by max_{r' <= r} C(mn, r'); int64 arrays are used when that bound is safe
and Python integers (object arrays) otherwise.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Sequence

import numpy as np

from .core import Instance, Project, TieBreak, tie_positions
from .rules import Rule, RuleSpec, greedy_av, run_rule

DEFAULT_ENUMERATION_CAP = 2_000_000
DEFAULT_SIGNATURE_CELLS = 20_000_000
DEFAULT_ORDERING_MAX_M = 8


class Semantics(str, enum.Enum):
    EXACTLY_R = "exactly"
    AT_MOST_R = "at-most"


class RefusalError(RuntimeError):
    """A guard or enumeration cap stopped the computation."""


class EnumerationCapExceeded(RefusalError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"brute force needs {required} rule evaluations, cap is {cap}")
        self.required = required
        self.cap = cap


class GuardExceeded(RefusalError):
    pass


@dataclass(frozen=True)
class BriberyQuery:
    target: str
    radius: int
    semantics: Semantics = Semantics.EXACTLY_R

    def __post_init__(self):
        object.__setattr__(self, "semantics", Semantics(self.semantics))
        if self.radius < 0:
            raise ValueError("radius must be non-negative")


def _check_query(instance: Instance, query: BriberyQuery) -> int:
    p = instance.project_index(query.target)
    if query.semantics is Semantics.EXACTLY_R and query.radius > instance.m * instance.n:
        raise ValueError(f"radius {query.radius} exceeds the {instance.m * instance.n} "
                         "voter-project pairs")
    return p


def _radii(instance: Instance, query: BriberyQuery) -> range:
    if query.semantics is Semantics.EXACTLY_R:
        return range(query.radius, query.radius + 1)
    return range(0, min(query.radius, instance.m * instance.n) + 1)


def flip_set_total(instance: Instance, query: BriberyQuery) -> int:
    """Number of flip sets the query ranges over (the probability denominator)."""
    mn = instance.m * instance.n
    return sum(comb(mn, r) for r in _radii(instance, query))


# ------------------------------------------------------------- brute force

def _flip_sets(mn: int, radii) -> "itertools.chain":
    return itertools.chain.from_iterable(itertools.combinations(range(mn), r) for r in radii)


def _wins(instance: Instance, spec: RuleSpec, p_id: str, flat: np.ndarray, combo) -> bool:
    flipped = flat.copy()
    if combo:
        flipped[list(combo)] ^= True
    inst = instance.with_matrix(flipped.reshape(instance.matrix.shape))
    return p_id in run_rule(inst, spec, audit=False).selected


def count_bruteforce(instance: Instance, spec: RuleSpec, query: BriberyQuery,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> int:
    """Count flip sets after which ``spec`` funds the target, by enumeration."""
    _check_query(instance, query)
    required = flip_set_total(instance, query)
    if required > cap:
        raise EnumerationCapExceeded(required, cap)
    flat = instance.matrix.reshape(-1)
    mn = instance.m * instance.n
    return sum(_wins(instance, spec, query.target, flat, combo)
               for combo in _flip_sets(mn, _radii(instance, query)))


def decide_bruteforce(instance: Instance, spec: RuleSpec, query: BriberyQuery,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """Is there a flip set (of the query's size) after which the target is funded?"""
    _check_query(instance, query)
    required = flip_set_total(instance, query)
    if required > cap:
        raise EnumerationCapExceeded(required, cap)
    flat = instance.matrix.reshape(-1)
    mn = instance.m * instance.n
    return any(_wins(instance, spec, query.target, flat, combo)
               for combo in _flip_sets(mn, _radii(instance, query)))


# ------------------------------------------------------------ shared tables

def _count_dtype(instance: Instance, r: int):
    mn = instance.m * instance.n
    bound = max(comb(mn, k) for k in range(r + 1))
    # sums of up to a few thousand bounded terms must also stay in range
    return np.int64 if bound < 2**52 else object


def flip_ways(n: int, approvals: int, flips: int, final: int) -> int:
    """Ways to apply ``flips`` flips to one project so it ends with ``final`` approvals."""
    twice_added = final - approvals + flips
    if twice_added < 0 or twice_added % 2:
        return 0
    added = twice_added // 2
    removed = flips - added
    if added > n - approvals or removed < 0 or removed > approvals:
        return 0
    return comb(n - approvals, added) * comb(approvals, removed)


def _flip_table(n: int, approvals: int, r: int, dtype) -> np.ndarray:
    """Array [final approvals, flips] of flip_ways values."""
    table = np.zeros((n + 1, r + 1), dtype=dtype)
    for s in range(n + 1):
        for x in range(r + 1):
            table[s, x] = flip_ways(n, approvals, x, s)
    return table


def _suffix(arr: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(arr, axis), axis=axis), axis)


def _convolve_flips(left: np.ndarray, table: np.ndarray, r: int) -> np.ndarray:
    """out[s, k] = sum_x left[s, k - x] * table[s, x]."""
    out = np.zeros_like(left)
    for x in range(r + 1):
        out[:, x:] += left[:, :r + 1 - x] * table[:, x:x + 1]
    return out


def _per_radius(instance, query, fn) -> int:
    return sum(fn(r) for r in _radii(instance, query))


# ----------------------------------------------------- signature-function DP

def count_greedyav_signature_dp(instance: Instance, query: BriberyQuery,
                                tiebreak: TieBreak = TieBreak.ORDER,
                                max_cells: int = DEFAULT_SIGNATURE_CELLS) -> int:
    """Count successful flip sets for GreedyAV in O*(3^m).

    A signature assigns every project 0 (not yet considered), 1 (considered
    and funded) or 2 (considered, too expensive). For each signature ``sig``,
    last-considered project ``c`` with final score ``l`` and flip count ``k``,
    the table holds the number of flip sets on the projects of ``sig`` that
    make a GreedyAV run restricted to them realise ``sig`` ending with ``c``.
    """
    p = _check_query(instance, query)
    m, n = instance.m, instance.n
    r_max = max(_radii(instance, query))
    cells = 3**m * m * (n + 2) * (r_max + 1)
    if cells > max_cells:
        raise GuardExceeded(f"signature DP needs {cells} table cells (m={m}, n={n}, "
                            f"r={r_max}), guard is {max_cells}")
    dtype = _count_dtype(instance, r_max)
    costs, budget = instance.costs, instance.budget
    pos = tie_positions(instance, tiebreak)
    scores = instance.scores().tolist()
    flips = [_flip_table(n, scores[j], r_max, dtype) for j in range(m)]
    pow3 = [3**j for j in range(m)]

    n_sigs = 3**m
    digits = [None] * n_sigs
    spent = [0] * n_sigs
    suffix: list[np.ndarray | None] = [None] * n_sigs
    full_total = np.zeros(r_max + 1, dtype=dtype)
    for sig in range(1, n_sigs):
        d = []
        rest = sig
        for _ in range(m):
            d.append(rest % 3)
            rest //= 3
        digits[sig] = d
        members = [j for j in range(m) if d[j]]
        spent[sig] = sum(costs[j] for j in members if d[j] == 1)
        table = np.zeros((m, n + 2, r_max + 1), dtype=dtype)
        for c in members:
            prev = sig - d[c] * pow3[c]
            fits = spent[prev] + costs[c] <= budget
            if fits != (d[c] == 1):
                continue  # signature contradicts the budget
            if prev == 0:
                table[c, :n + 1] = flips[c]
                continue
            ahead = np.zeros((n + 1, r_max + 1), dtype=dtype)
            before = suffix[prev]
            for other in members:
                if other == c:
                    continue
                # an earlier project may tie with c only if it wins the tie-break
                t = 0 if pos[other] < pos[c] else 1
                ahead += before[other, t:t + n + 1]
            table[c, :n + 1] = _convolve_flips(ahead, flips[c], r_max)
        suffix[sig] = _suffix(table, axis=1)
        if len(members) == m and d[p] == 1:
            full_total += table.sum(axis=(0, 1))
    return sum(int(full_total[r]) for r in _radii(instance, query))


# ---------------------------------------------------------------- ordering DP

def count_greedyav_ordering_dp(instance: Instance, query: BriberyQuery,
                               tiebreak: TieBreak = TieBreak.ORDER,
                               max_m: int = DEFAULT_ORDERING_MAX_M) -> int:
    """Count successful flip sets for GreedyAV by enumerating consideration orders.

    Orders are explored depth-first, so memory stays polynomial. For a prefix
    c_1..c_i the table row f[s, k] counts k-flip sets on those projects that
    leave c_i with s approvals and make GreedyAV consider them in that order.
    Prefixes where the target is reached but rejected are pruned.
    """
    p = _check_query(instance, query)
    m, n = instance.m, instance.n
    if m > max_m:
        raise GuardExceeded(f"ordering DP enumerates {m}! orders, guard is m <= {max_m}")
    r_max = max(_radii(instance, query))
    dtype = _count_dtype(instance, r_max)
    costs = instance.costs
    pos = tie_positions(instance, tiebreak)
    scores = instance.scores().tolist()
    flips = [_flip_table(n, scores[j], r_max, dtype) for j in range(m)]
    total = np.zeros(r_max + 1, dtype=dtype)

    def extend(f, last, remaining, left, got_p):
        nonlocal total
        if not remaining:
            if got_p:
                total += f.sum(axis=0)
            return
        for c in remaining:
            selected = costs[c] <= left
            if c == p and not selected:
                continue
            if f is None:
                g = flips[c]
            else:
                t = 1 if pos[c] < pos[last] else 0
                shifted = np.zeros_like(f)
                shifted[:n + 1 - t] = _suffix(f, axis=0)[t:]
                g = _convolve_flips(shifted, flips[c], r_max)
                if not g.any():
                    continue
            extend(g, c, [d for d in remaining if d != c],
                   left - costs[c] if selected else left, got_p or c == p)

    extend(None, None, list(range(m)), instance.budget, False)
    return sum(int(total[r]) for r in _radii(instance, query))


# --------------------------------------------------------------- unit costs

def count_greedyav_unit_cost(instance: Instance, query: BriberyQuery,
                             tiebreak: TieBreak = TieBreak.ORDER) -> int:
    """Polynomial-time count for GreedyAV when every project costs 1.

    With ``l`` final approvals for the target, a table over the other projects
    tracks (flips used, number of projects considered ahead of the target);
    the target is funded iff fewer than B projects are ahead of it.
    """
    p = _check_query(instance, query)
    for proj in instance.projects:
        if proj.cost != 1:
            raise ValueError(f"unit-cost DP needs unit costs; project {proj.id!r} "
                             f"costs {proj.cost}")
    m, n, budget = instance.m, instance.n, instance.budget
    if budget >= m:
        return sum(comb(m * n, r) for r in _radii(instance, query))
    if budget == 0:
        return 0
    r_max = max(_radii(instance, query))
    dtype = _count_dtype(instance, r_max)
    pos = tie_positions(instance, tiebreak)
    scores = instance.scores().tolist()
    others = [j for j in range(m) if j != p]
    flips = {j: _flip_table(n, scores[j], r_max, dtype) for j in range(m)}
    total = np.zeros(r_max + 1, dtype=dtype)
    for target_score in range(n + 1):
        ahead_by = np.zeros((r_max + 1, len(others) + 1), dtype=dtype)
        ahead_by[0, 0] = 1
        for c in others:
            # c is ahead iff it ends with more approvals, or equally many and wins the tie
            threshold = target_score + (0 if pos[c] < pos[p] else 1)
            ahead = flips[c][threshold:].sum(axis=0)
            behind = flips[c][:threshold].sum(axis=0)
            nxt = np.zeros_like(ahead_by)
            for x in range(r_max + 1):
                nxt[x:, :] += ahead_by[:r_max + 1 - x, :] * behind[x]
                nxt[x:, 1:] += ahead_by[:r_max + 1 - x, :-1] * ahead[x]
            ahead_by = nxt
        funded = ahead_by[:, :budget].sum(axis=1)
        own = flips[p][target_score]
        for x in range(r_max + 1):
            total[x:] += own[x] * funded[:r_max + 1 - x]
    return sum(int(total[r]) for r in _radii(instance, query))


# --------------------------------------------- cheaper-first decision (XP in n)

def decide_greedyav_cheaper_first(instance: Instance, query: BriberyQuery) -> bool:
    """Decide at-most-r Flip-Bribery for GreedyAV with cheaper-first ties.

    For r < n every flip set of size <= r is tried. Otherwise the target
    gets every missing approval, and the remaining flips each remove one
    approval from the most expensive all-approved project that would be
    considered before the target.
    """
    p = _check_query(instance, query)
    m, n, r = instance.m, instance.n, query.radius
    target = query.target
    if r < n:
        flat = instance.matrix.reshape(-1)
        for size in range(min(r, m * n) + 1):
            for combo in itertools.combinations(range(m * n), size):
                flipped = flat.copy()
                if combo:
                    flipped[list(combo)] ^= True
                inst = instance.with_matrix(flipped.reshape(n, m))
                if target in greedy_av(inst, TieBreak.CHEAPER_FIRST).selected:
                    return True
        return False
    matrix = instance.matrix.copy()
    left = r - int((~matrix[:, p]).sum())
    matrix[:, p] = True
    pos = tie_positions(instance, TieBreak.CHEAPER_FIRST)
    costs = instance.costs
    while left > 0:
        full = matrix.all(axis=0)
        blockers = [j for j in range(m) if j != p and full[j] and pos[j] < pos[p]]
        if not blockers:
            break
        j = max(blockers, key=lambda c: (costs[c], pos[c]))
        matrix[0, j] = False
        left -= 1
    return target in greedy_av(instance.with_matrix(matrix), TieBreak.CHEAPER_FIRST).selected


# ------------------------------------------------------------ solver dispatch

SOLVERS = ("auto", "brute", "sig-dp", "order-dp", "unit-dp", "xp")


def _is_greedy_av(spec: RuleSpec) -> bool:
    return spec.rule is Rule.GREEDY_AV


def _require_greedy_av(spec: RuleSpec, solver: str):
    if not _is_greedy_av(spec):
        raise ValueError(f"solver {solver} only supports greedy-av, got {spec.label}")


def pick_solver(instance: Instance, spec: RuleSpec, query: BriberyQuery,
                mode: str = "count") -> str:
    if mode == "decide" and _is_greedy_av(spec) and spec.tiebreak is TieBreak.CHEAPER_FIRST \
            and query.semantics is Semantics.AT_MOST_R:
        return "xp"
    if _is_greedy_av(spec):
        if all(c == 1 for c in instance.costs):
            return "unit-dp"
        r = max(_radii(instance, query))
        if 3**instance.m * instance.m * (instance.n + 2) * (r + 1) <= DEFAULT_SIGNATURE_CELLS:
            return "sig-dp"
    return "brute"


def count(instance: Instance, spec: RuleSpec, query: BriberyQuery,
          solver: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> int:
    if solver == "auto":
        solver = pick_solver(instance, spec, query)
    if solver == "brute":
        return count_bruteforce(instance, spec, query, cap=cap)
    if solver == "xp":
        raise ValueError("the xp solver only decides, it does not count")
    _require_greedy_av(spec, solver)
    if solver == "sig-dp":
        return count_greedyav_signature_dp(instance, query, spec.tiebreak)
    if solver == "order-dp":
        return count_greedyav_ordering_dp(instance, query, spec.tiebreak)
    if solver == "unit-dp":
        return count_greedyav_unit_cost(instance, query, spec.tiebreak)
    raise ValueError(f"unknown solver {solver!r}")


def decide(instance: Instance, spec: RuleSpec, query: BriberyQuery,
           solver: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    if solver == "auto":
        solver = pick_solver(instance, spec, query, mode="decide")
    if solver == "brute":
        return decide_bruteforce(instance, spec, query, cap=cap)
    if solver == "xp":
        _require_greedy_av(spec, solver)
        if spec.tiebreak is not TieBreak.CHEAPER_FIRST:
            raise ValueError("the xp solver requires cheaper-first tie-breaking")
        if query.semantics is not Semantics.AT_MOST_R:
            raise ValueError("the xp solver decides at-most-r queries")
        return decide_greedyav_cheaper_first(instance, query)
    return count(instance, spec, query, solver=solver, cap=cap) > 0


def funding_probability_exact(instance: Instance, spec: RuleSpec, query: BriberyQuery,
                              solver: str = "auto",
                              cap: int = DEFAULT_ENUMERATION_CAP) -> Fraction:
    """Probability that the target is funded after uniformly random flips."""
    return Fraction(count(instance, spec, query, solver=solver, cap=cap),
                    flip_set_total(instance, query))


# ------------------------------------------------------- subset-sum gadgets

@dataclass(frozen=True)
class GadgetSpec:
    U: tuple[int, ...]
    t: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "U", tuple(int(u) for u in self.U))
        if not self.U or any(u < 1 for u in self.U):
            raise ValueError("U must be a non-empty list of positive integers")
        if not 1 <= self.k <= len(self.U):
            raise ValueError("k must lie in 1..|U|")
        if self.t < 1:
            raise ValueError("target t must be positive")


def normalize_gadget(spec: GadgetSpec) -> GadgetSpec:
    """Shift every element by S = 1 + t + sum(U) so only k-subsets can reach t."""
    shift = 1 + spec.t + sum(spec.U)
    return GadgetSpec(tuple(u + shift for u in spec.U), spec.t + spec.k * shift, spec.k)


def sized_subset_sum(U: Sequence[int], t: int, k: int) -> bool:
    return any(sum(c) == t for c in itertools.combinations(U, k))


def gen_subset_sum_gadget(spec: GadgetSpec) -> tuple[Instance, str, int]:
    """Single-voter GreedyAV instance where p can be funded with <= k flips
    iff k elements of U sum to t."""
    norm = normalize_gadget(spec)
    U, t, k = norm.U, norm.t, norm.k
    T = 3 * sum(U)
    if 3 * t > T:
        raise ValueError(f"gadget needs t <= T/3 after normalisation (t={t}, T={T}); "
                         "the subset-sum instance is trivially negative")
    costs = [(f"x{i + 1}", T + u) for i, u in enumerate(U)]
    costs += [(f"y{i + 1}", T) for i in range(2 * k + 1)]
    costs += [(f"d{i + 1}", T - t + 1) for i in range(k + 1)]
    costs += [("p", T - t)]
    projects = [Project(pid, c, rank) for rank, (pid, c) in enumerate(costs)]
    approved = [pid for pid, _ in costs if not pid.startswith("x")]
    instance = Instance(projects, ["v1"], [approved], k * T + T)
    return instance, "p", k
