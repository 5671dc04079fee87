"""Monte-Carlo robustness of PB outcomes under resampling noise.

Each (voter, project) approval is kept with probability 1 - phi and redrawn
otherwise; a redrawn approval is set with probability p_i for voter i. One
uniform draw per cell decides both events: u < phi * p_i approves,
phi * p_i <= u < phi disapproves, anything else keeps the old value.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .core import Instance
from .rules import RuleSpec, run_rule

ABOVE_GRID = "above-grid"


class PConvention(str, enum.Enum):
    EXPECTATION_PRESERVING = "expectation-preserving"  # p_i = |A(v_i)| / m
    LITERAL_INVERSE = "literal-inverse"  # p_i = 1 / |A(v_i)|


def default_grid(step: Fraction = Fraction(1, 100), top: Fraction = Fraction(1, 4)):
    return tuple(step * i for i in range(int(top / step) + 1))


@dataclass(frozen=True)
class NoiseConfig:
    phi_grid: tuple[Fraction, ...] = field(default_factory=default_grid)
    samples_per_phi: int = 100
    master_seed: int = 0
    p_convention: PConvention = PConvention.EXPECTATION_PRESERVING

    def __post_init__(self):
        grid = tuple(Fraction(x) for x in self.phi_grid)
        object.__setattr__(self, "phi_grid", grid)
        object.__setattr__(self, "p_convention", PConvention(self.p_convention))
        if not grid:
            raise ValueError("phi grid is empty")
        if any(not 0 <= x <= 1 for x in grid):
            raise ValueError("phi values must lie in [0, 1]")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValueError("phi grid must be strictly increasing")
        if self.samples_per_phi < 1:
            raise ValueError("samples_per_phi must be positive")

    @classmethod
    def high_res(cls, master_seed: int = 0, **kw) -> "NoiseConfig":
        return cls(default_grid(Fraction(1, 10_000)), 1000, master_seed, **kw)

    def to_json(self) -> dict:
        return {
            "phi_grid": [_phi_text(x) for x in self.phi_grid],
            "samples_per_phi": self.samples_per_phi,
            "master_seed": self.master_seed,
            "p_convention": self.p_convention.value,
        }


def _phi_text(phi: Fraction) -> str:
    return repr(float(phi))


# ------------------------------------------------------------------- noise

def approval_probabilities(sizes: np.ndarray, m: int,
                           convention: PConvention = PConvention.EXPECTATION_PRESERVING):
    """Per-voter redraw approval probability; empty ballots get 0."""
    sizes = np.asarray(sizes, dtype=float)
    if PConvention(convention) is PConvention.EXPECTATION_PRESERVING:
        return sizes / m
    with np.errstate(divide="ignore"):
        return np.where(sizes > 0, 1.0 / np.maximum(sizes, 1), 0.0)


def resample_vote(approval_set: Iterable[str], all_projects: Sequence[str], phi,
                  rng: np.random.Generator,
                  convention: PConvention = PConvention.EXPECTATION_PRESERVING) -> frozenset:
    """Resample one ballot; draws one uniform per project in ``all_projects`` order."""
    approved = frozenset(approval_set)
    p_i = float(approval_probabilities([len(approved)], len(all_projects), convention)[0])
    phi = float(phi)
    draws = rng.random(len(all_projects))
    out = set()
    for c, u in zip(all_projects, draws):
        if u < phi * p_i or (u >= phi and c in approved):
            out.add(c)
    return frozenset(out)


def resample_matrix(matrix: np.ndarray, phi, rng: np.random.Generator,
                    convention: PConvention = PConvention.EXPECTATION_PRESERVING) -> np.ndarray:
    """Resample every ballot; row i uses the i-th block of m draws from ``rng``."""
    n, m = matrix.shape
    phi = float(phi)
    if phi == 0:
        return matrix
    p = approval_probabilities(matrix.sum(axis=1), m, convention)
    u = rng.random((n, m))
    redraw = u < phi
    return np.where(redraw, u < (phi * p)[:, None], matrix)


def sample_rng(master_seed: int, phi_index: int, sample_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed & (2**64 - 1), spawn_key=(phi_index, sample_index))
    return np.random.Generator(np.random.PCG64(seq))


# ------------------------------------------------------------------ reports

@dataclass(frozen=True)
class FundingCurve:
    project_id: str
    counts: tuple[int, ...]
    samples: int
    initial_funded: bool

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(c / self.samples for c in self.counts)


@dataclass
class RobustnessReport:
    instance_id: str
    rule_spec: RuleSpec
    config: NoiseConfig
    project_ids: tuple[str, ...]
    costs: tuple[int, ...]
    initial: tuple[str, ...]
    funded_counts: np.ndarray  # (phi, project) number of samples funding the project
    identical: tuple[int, ...]
    kept_total: tuple[int, ...]
    kept_cost_total: tuple[int, ...]

    @property
    def samples(self) -> int:
        return self.config.samples_per_phi

    @property
    def curves(self) -> list[FundingCurve]:
        initial = set(self.initial)
        return [FundingCurve(pid, tuple(int(c) for c in self.funded_counts[:, j]), self.samples,
                             pid in initial)
                for j, pid in enumerate(self.project_ids)]

    def curve(self, project_id: str) -> FundingCurve:
        j = self.project_ids.index(project_id)
        return FundingCurve(project_id, tuple(int(c) for c in self.funded_counts[:, j]),
                            self.samples, project_id in self.initial)

    @property
    def identity_rate(self) -> list[float]:
        return [k / self.samples for k in self.identical]

    @property
    def kept_fraction(self) -> list[float]:
        size = len(self.initial)
        if size == 0:
            return [1.0] * len(self.identical)
        return [k / (size * self.samples) for k in self.kept_total]

    @property
    def kept_budget_fraction(self) -> list[float]:
        spent = sum(self.costs[self.project_ids.index(pid)] for pid in self.initial)
        if spent == 0:
            return [1.0] * len(self.identical)
        return [k / (spent * self.samples) for k in self.kept_cost_total]

    @property
    def least_robust_project(self) -> str | None:
        """Initially funded project with the lowest funding probability at the largest phi."""
        if not self.initial:
            return None
        last = self.funded_counts[-1]
        # initial is in tie-break order, so min() keeps the earliest on ties
        return min(self.initial, key=lambda pid: last[self.project_ids.index(pid)])

    @property
    def least_robust_probability(self) -> list[float | None]:
        pid = self.least_robust_project
        if pid is None:
            return [None] * len(self.identical)
        return list(self.curve(pid).probabilities)

    @property
    def min_funded_probability(self) -> list[float | None]:
        if not self.initial:
            return [None] * len(self.identical)
        cols = [self.project_ids.index(pid) for pid in self.initial]
        return [int(row[cols].min()) / self.samples for row in self.funded_counts]

    @property
    def threshold(self):
        return winner_threshold(self)

    def to_json(self) -> dict:
        threshold = self.threshold
        return {
            "software": {"name": "pbrobust", "version": __version__},
            "instance_id": self.instance_id,
            "rule": self.rule_spec.label,
            "config": self.config.to_json(),
            "initial_outcome": list(self.initial),
            "threshold": threshold if threshold == ABOVE_GRID else _phi_text(threshold),
            "least_robust_project": self.least_robust_project,
            "aggregates": [
                {"phi": _phi_text(phi), "identity_rate": ir, "kept_fraction": kf,
                 "kept_budget_fraction": kb, "least_robust_funded_probability": lr,
                 "min_funded_probability": mn}
                for phi, ir, kf, kb, lr, mn in zip(
                    self.config.phi_grid, self.identity_rate, self.kept_fraction,
                    self.kept_budget_fraction, self.least_robust_probability,
                    self.min_funded_probability)
            ],
            "curves": [
                {"project_id": c.project_id, "initially_funded": c.initial_funded,
                 "counts": list(c.counts), "probabilities": list(c.probabilities)}
                for c in self.curves
            ],
        }


def _outcome_row(instance: Instance, selected) -> np.ndarray:
    row = np.zeros(instance.m, dtype=bool)
    for pid in selected:
        row[instance.project_index(pid)] = True
    return row


def run_experiment(instance: Instance, spec: RuleSpec, config: NoiseConfig | None = None,
                   *, instance_id: str = "", workers: int = 1) -> RobustnessReport:
    """Estimate funding probabilities for every project at every grid value of phi.

    Sample s at grid index k uses its own stream seeded from
    (master_seed, k, s), so results do not depend on scheduling.
    """
    config = config or NoiseConfig()
    base = run_rule(instance, spec, audit=False)
    w0 = _outcome_row(instance, base.selected)
    costs = np.array(instance.costs, dtype=object)
    ranked = sorted(range(instance.m), key=lambda j: instance.projects[j].tiebreak_rank)
    initial = tuple(instance.projects[j].id for j in ranked if w0[j])

    def sample(k: int, s: int) -> np.ndarray:
        phi = config.phi_grid[k]
        if phi == 0:
            return w0
        rng = sample_rng(config.master_seed, k, s)
        noisy = resample_matrix(instance.matrix, phi, rng, config.p_convention)
        return _outcome_row(instance, run_rule(instance.with_matrix(noisy), spec,
                                               audit=False).selected)

    n_phi = len(config.phi_grid)
    funded = np.zeros((n_phi, instance.m), dtype=np.int64)
    identical, kept, kept_cost = [], [], []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(n_phi):
            cells = range(config.samples_per_phi)
            rows = (pool.map(lambda s: sample(k, s), cells) if pool
                    else (sample(k, s) for s in cells))
            same = kept_k = kept_cost_k = 0
            for row in rows:
                funded[k] += row
                same += bool(np.array_equal(row, w0))
                both = row & w0
                kept_k += int(both.sum())
                kept_cost_k += int(costs[both].sum()) if both.any() else 0
            identical.append(same)
            kept.append(kept_k)
            kept_cost.append(kept_cost_k)
    finally:
        if pool:
            pool.shutdown()
    return RobustnessReport(instance_id, spec, config, tuple(p.id for p in instance.projects),
                            instance.costs, initial, funded, tuple(identical), tuple(kept),
                            tuple(kept_cost))


def winner_threshold(report: RobustnessReport):
    """Smallest grid phi at which a strict majority of samples changes the outcome."""
    for phi, same in zip(report.config.phi_grid, report.identical):
        if 2 * same < report.samples:
            return phi
    return ABOVE_GRID


def threshold_from_rates(phi_grid: Sequence, identity_rate: Sequence[float]):
    for phi, rate in zip(phi_grid, identity_rate):
        if rate < 0.5:
            return phi
    return ABOVE_GRID


# ---------------------------------------------------------------- typology

class ProjectType(str, enum.Enum):
    ROBUST = "robust"
    DECLINING = "declining"
    PLATEAU = "plateau"
    RECOVERING = "recovering"


def classify_project(curve: FundingCurve | Sequence[float],
                     initially_funded: bool | None = None) -> ProjectType:
    """Sort a funding curve into one of the non-robustness types.

    Curves of initially unfunded projects are mirrored (1 - p) first, so the
    thresholds always speak about the probability that the initial decision
    still holds. Curves that dip but end above the plateau band without a
    recovery of at least 0.15 are counted as declining.
    """
    if isinstance(curve, FundingCurve):
        probs, funded = list(curve.probabilities), curve.initial_funded
    else:
        probs, funded = list(curve), initially_funded
        if funded is None:
            funded = probs[0] >= 0.5
    held = probs if funded else [1 - x for x in probs]
    if min(held) >= 0.9:
        return ProjectType.ROBUST
    tail = held[-math.ceil(len(held) / 3):]
    tail_mean = sum(tail) / len(tail)
    if tail_mean < 0.35:
        return ProjectType.DECLINING
    if tail_mean <= 0.65:
        return ProjectType.PLATEAU
    lowest = min(range(len(held)), key=held.__getitem__)
    if held[-1] - held[lowest] >= 0.15:
        return ProjectType.RECOVERING
    return ProjectType.DECLINING


# ------------------------------------------------------------ feature tables

PROJECT_FEATURES = ("approvals", "cost", "ratio")


def instance_features(instance: Instance) -> dict:
    approvals = int(instance.matrix.sum())
    return {
        "n_voters": instance.n,
        "n_projects": instance.m,
        "budget": instance.budget,
        "avg_approvals_per_voter": approvals / instance.n,
        "voters_per_project": instance.n / instance.m,
    }


def feature_table(instances: Mapping[str, Instance], reports: Sequence[RobustnessReport]):
    """Instance-level rows (features and threshold) and rows for the initially
    funded projects with the lowest/highest approvals, cost and ratio."""
    instance_rows, project_rows = [], []
    for rep in reports:
        inst = instances[rep.instance_id]
        threshold = rep.threshold
        row = {"instance": rep.instance_id, "rule": rep.rule_spec.label}
        row.update(instance_features(inst))
        row["threshold"] = threshold if threshold == ABOVE_GRID else _phi_text(threshold)
        instance_rows.append(row)
        if not rep.initial:
            continue
        scores = inst.scores()
        values = {}
        for pid in rep.initial:
            j = inst.project_index(pid)
            a, c = int(scores[j]), inst.costs[j]
            values[pid] = {"approvals": a, "cost": c, "ratio": Fraction(a, c)}
        for feat in PROJECT_FEATURES:
            for extreme, pick in (("min", min), ("max", max)):
                pid = pick(rep.initial, key=lambda x: values[x][feat])
                value = values[pid][feat]
                project_rows.append({
                    "instance": rep.instance_id, "rule": rep.rule_spec.label,
                    "feature": feat, "extreme": extreme, "project_id": pid,
                    "value": float(value) if isinstance(value, Fraction) else value,
                    "probabilities": list(rep.curve(pid).probabilities),
                })
    return instance_rows, project_rows


# ---------------------------------------------------------------- exporters

def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def curves_csv(report: RobustnessReport) -> str:
    rows = []
    for k, phi in enumerate(report.config.phi_grid):
        for c in report.curves:
            rows.append([_phi_text(phi), c.project_id, _cell(c.counts[k] / c.samples),
                         _cell(c.initial_funded)])
    return _csv(rows, ["phi", "project_id", "funding_probability", "initially_funded"])


def aggregates_csv(report: RobustnessReport) -> str:
    rows = [[_phi_text(phi), _cell(ir), _cell(kf), _cell(kb), _cell(lr)]
            for phi, ir, kf, kb, lr in zip(report.config.phi_grid, report.identity_rate,
                                           report.kept_fraction, report.kept_budget_fraction,
                                           report.least_robust_probability)]
    return _csv(rows, ["phi", "identity_rate", "kept_fraction", "kept_budget_fraction",
                       "least_robust_funded_probability"])


def report_json(report: RobustnessReport) -> str:
    return json.dumps(report.to_json(), indent=2) + "\n"


def feature_csvs(instance_rows: list[dict], project_rows: list[dict],
                 phi_grid: Sequence) -> tuple[str, str]:
    inst_header = ["instance", "rule", "n_voters", "n_projects", "budget",
                   "avg_approvals_per_voter", "voters_per_project", "threshold"]
    first = _csv(([_cell(r[h]) for h in inst_header] for r in instance_rows), inst_header)
    proj_header = ["instance", "rule", "feature", "extreme", "project_id", "value"]
    phi_cols = [f"p@{_phi_text(phi)}" for phi in phi_grid]
    second = _csv(([_cell(r[h]) for h in proj_header] + [_cell(p) for p in r["probabilities"]]
                   for r in project_rows), proj_header + phi_cols)
    return first, second
