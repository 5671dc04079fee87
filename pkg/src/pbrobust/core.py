"""Domain model for approval-based participatory budgeting instances."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class TieBreak(str, enum.Enum):
    ORDER = "order"
    CHEAPER_FIRST = "cheaper-first"


@dataclass(frozen=True)
class Project:
    id: str
    cost: int
    tiebreak_rank: int

    def __post_init__(self):
        if not isinstance(self.cost, (int, np.integer)) or isinstance(self.cost, bool):
            raise TypeError(f"cost of project {self.id!r} must be an integer")
        if self.cost < 1:
            raise ValueError(f"project {self.id!r} has non-positive cost {self.cost}")
        if self.tiebreak_rank < 0:
            raise ValueError(f"project {self.id!r} has negative tie-break rank")


class Instance:
    """An immutable PB instance.

    Approvals are held as a read-only boolean matrix with one row per voter
    and one column per project (in the order of ``projects``). The project
    list order is only a storage order; tie-breaking uses ``tiebreak_rank``.
    """

    __slots__ = ("projects", "voters", "budget", "_matrix", "_pidx", "_vidx",
                 "_costs", "_approvals", "_hash")

    def __init__(self, projects: Sequence[Project], voters: Sequence[str],
                 approvals: Sequence[Iterable[str]], budget: int):
        projects = tuple(projects)
        voters = tuple(str(v) for v in voters)
        if len(approvals) != len(voters):
            raise ValueError("need exactly one approval set per voter")
        pidx = {p.id: j for j, p in enumerate(projects)}
        matrix = np.zeros((len(voters), len(projects)), dtype=bool)
        for i, ballot in enumerate(approvals):
            ballot = list(ballot)
            if len(set(ballot)) != len(ballot):
                raise ValueError(f"voter {voters[i]!r} approves a project twice")
            for pid in ballot:
                if pid not in pidx:
                    raise KeyError(f"voter {voters[i]!r} approves unknown project {pid!r}")
                matrix[i, pidx[pid]] = True
        self._init(projects, voters, matrix, budget, validate=True)

    def _init(self, projects, voters, matrix, budget, validate):
        object.__setattr__(self, "projects", projects)
        object.__setattr__(self, "voters", voters)
        object.__setattr__(self, "budget", int(budget))
        if matrix.flags.writeable:
            matrix = matrix.copy()
            matrix.flags.writeable = False
        object.__setattr__(self, "_matrix", matrix)
        object.__setattr__(self, "_costs", tuple(int(p.cost) for p in projects))
        object.__setattr__(self, "_pidx", None)
        object.__setattr__(self, "_vidx", None)
        object.__setattr__(self, "_approvals", None)
        object.__setattr__(self, "_hash", None)
        if validate:
            self._validate()

    def _validate(self):
        m, n = len(self.projects), len(self.voters)
        if m < 1:
            raise ValueError("instance needs at least one project")
        if n < 1:
            raise ValueError("instance needs at least one voter")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if len({p.id for p in self.projects}) != m:
            raise ValueError("duplicate project id")
        if len(set(self.voters)) != n:
            raise ValueError("duplicate voter id")
        if sorted(p.tiebreak_rank for p in self.projects) != list(range(m)):
            raise ValueError("tie-break ranks must form the range 0..m-1")
        if self._matrix.shape != (n, m) or self._matrix.dtype != bool:
            raise ValueError(f"approval matrix must be boolean with shape {(n, m)}")

    def __setattr__(self, name, value):
        raise AttributeError("Instance is immutable")

    @classmethod
    def from_matrix(cls, projects: Sequence[Project], voters: Sequence[str],
                    matrix: np.ndarray, budget: int) -> "Instance":
        obj = cls.__new__(cls)
        obj._init(tuple(projects), tuple(str(v) for v in voters),
                  np.asarray(matrix, dtype=bool), budget, validate=True)
        return obj

    def with_matrix(self, matrix: np.ndarray) -> "Instance":
        """Same projects, voters and budget with a different approval matrix.

        No validation beyond the shape check; used on hot paths.
        """
        if matrix.shape != self._matrix.shape:
            raise ValueError("approval matrix shape mismatch")
        obj = Instance.__new__(Instance)
        obj._init(self.projects, self.voters, matrix, self.budget, validate=False)
        object.__setattr__(obj, "_pidx", self._pidx)
        object.__setattr__(obj, "_vidx", self._vidx)
        return obj

    def with_budget(self, budget: int) -> "Instance":
        obj = Instance.__new__(Instance)
        obj._init(self.projects, self.voters, self._matrix, budget, validate=False)
        if budget < 0:
            raise ValueError("budget must be non-negative")
        return obj

    @property
    def m(self) -> int:
        return len(self.projects)

    @property
    def n(self) -> int:
        return len(self.voters)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def costs(self) -> tuple[int, ...]:
        return self._costs

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(p.tiebreak_rank for p in self.projects)

    @property
    def approvals(self) -> tuple[frozenset[str], ...]:
        if self._approvals is None:
            ids = [p.id for p in self.projects]
            sets = tuple(frozenset(ids[j] for j in np.flatnonzero(row)) for row in self._matrix)
            object.__setattr__(self, "_approvals", sets)
        return self._approvals

    def project_index(self, project_id: str) -> int:
        if self._pidx is None:
            object.__setattr__(self, "_pidx", {p.id: j for j, p in enumerate(self.projects)})
        try:
            return self._pidx[project_id]
        except KeyError:
            raise KeyError(f"unknown project {project_id!r}") from None

    def voter_index(self, voter_id: str) -> int:
        if self._vidx is None:
            object.__setattr__(self, "_vidx", {v: i for i, v in enumerate(self.voters)})
        try:
            return self._vidx[voter_id]
        except KeyError:
            raise KeyError(f"unknown voter {voter_id!r}") from None

    def project(self, project_id: str) -> Project:
        return self.projects[self.project_index(project_id)]

    def scores(self) -> np.ndarray:
        return self._matrix.sum(axis=0)

    def cost_of(self, project_ids: Iterable[str]) -> int:
        return sum(self._costs[self.project_index(pid)] for pid in project_ids)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.projects == other.projects and self.voters == other.voters
                and self.budget == other.budget
                and np.array_equal(self._matrix, other._matrix))

    def __hash__(self):
        if self._hash is None:
            h = hash((self.projects, self.voters, self.budget, self._matrix.tobytes()))
            object.__setattr__(self, "_hash", h)
        return self._hash

    def __repr__(self):
        return f"Instance(m={self.m}, n={self.n}, budget={self.budget})"

    def __reduce__(self):
        return (Instance.from_matrix,
                (self.projects, self.voters, np.array(self._matrix), self.budget))


def make_instance(costs: Mapping[str, int] | Sequence[tuple[str, int]],
                  approvals: Sequence[Iterable[str]], budget: int,
                  voters: Sequence[str] | None = None) -> Instance:
    """Build an instance whose tie-break order is the order of ``costs``."""
    items = list(costs.items()) if isinstance(costs, Mapping) else list(costs)
    projects = [Project(pid, int(c), r) for r, (pid, c) in enumerate(items)]
    if voters is None:
        voters = [f"v{i + 1}" for i in range(len(approvals))]
    return Instance(projects, voters, approvals, budget)


def tie_positions(instance: Instance, tiebreak: TieBreak = TieBreak.ORDER) -> list[int]:
    """Position of every project in the effective tie-break order (0 = preferred)."""
    tiebreak = TieBreak(tiebreak)
    if tiebreak is TieBreak.ORDER:
        keys = [p.tiebreak_rank for p in instance.projects]
    else:
        keys = [(p.cost, p.tiebreak_rank) for p in instance.projects]
    order = sorted(range(instance.m), key=keys.__getitem__)
    pos = [0] * instance.m
    for k, j in enumerate(order):
        pos[j] = k
    return pos


@dataclass(frozen=True)
class SelectionStep:
    project_id: str
    step_index: int
    price_info: Mapping[str, Any] = field(default_factory=dict)
    phase: str = ""


@dataclass(frozen=True)
class Outcome:
    selected: frozenset[str]
    trace: tuple[SelectionStep, ...]
    total_cost: int
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def order(self) -> tuple[str, ...]:
        return tuple(step.project_id for step in self.trace)

    @classmethod
    def from_steps(cls, instance: Instance, steps: Sequence[SelectionStep],
                   meta: Mapping[str, Any] | None = None) -> "Outcome":
        ids = [s.project_id for s in steps]
        return cls(frozenset(ids), tuple(steps), instance.cost_of(ids), dict(meta or {}))


def approval_score(instance: Instance, project_id: str) -> int:
    return int(instance.matrix[:, instance.project_index(project_id)].sum())


def flip(instance: Instance, voter_id: str, project_id: str) -> Instance:
    """Toggle one voter's approval of one project, returning a new instance."""
    i, j = instance.voter_index(voter_id), instance.project_index(project_id)
    matrix = instance.matrix.copy()
    matrix[i, j] = not matrix[i, j]
    return instance.with_matrix(matrix)


def is_exhaustive(instance: Instance, selected: Iterable[str],
                  include_unapproved: bool = False) -> bool:
    selected = set(selected)
    left = instance.budget - instance.cost_of(selected)
    scores = instance.scores()
    for j, p in enumerate(instance.projects):
        if p.id in selected:
            continue
        if not include_unapproved and scores[j] == 0:
            continue
        if p.cost <= left:
            return False
    return True
