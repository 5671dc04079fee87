"""Reading and writing Pabulib ``.pb`` files (approval ballots only)."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from .core import Instance, Project

SECTIONS = ("META", "PROJECTS", "VOTES")


class PabulibError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@dataclass
class PabulibFile:
    meta: dict[str, str]
    instance: Instance
    project_columns: list[str] = field(default_factory=lambda: ["project_id", "cost"])
    vote_columns: list[str] = field(default_factory=lambda: ["voter_id", "vote"])
    extra_project_columns: dict[str, dict[str, str]] = field(default_factory=dict)
    extra_vote_columns: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def from_instance(cls, instance: Instance, meta: dict[str, str] | None = None):
        full = {"description": "", "vote_type": "approval", "budget": str(instance.budget)}
        full.update(meta or {})
        return cls(full, instance)


def _rows(lines: list[tuple[int, str]]):
    reader = csv.reader([text for _, text in lines], delimiter=";")
    for (lineno, _), row in zip(lines, reader):
        yield lineno, row


def _integer(text: str, lineno: int, name: str, floor: bool = False) -> int:
    try:
        value = Decimal(text.strip().replace(",", "."))
    except InvalidOperation:
        raise PabulibError(f"not a number: {text!r}", lineno, name) from None
    if not value.is_finite():
        raise PabulibError(f"not a finite number: {text!r}", lineno, name)
    if floor:
        return math.floor(value)
    if value != value.to_integral_value():
        raise PabulibError(f"non-integer value {text!r}", lineno, name)
    return int(value)


def parse_pabulib(text: str) -> PabulibFile:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if stripped.upper() in SECTIONS and ";" not in stripped:
            current = stripped.upper()
            if current in sections:
                raise PabulibError(f"duplicate section {current}", lineno)
            sections[current] = []
            continue
        if not stripped:
            continue
        if current is None:
            raise PabulibError("content before the META section", lineno)
        sections[current].append((lineno, raw))
    for name in SECTIONS:
        if name not in sections:
            raise PabulibError(f"missing section {name}")
        if not sections[name]:
            raise PabulibError(f"section {name} has no header line")

    meta: dict[str, str] = {}
    for lineno, row in list(_rows(sections["META"]))[1:]:
        if not row:
            continue
        key = row[0].strip()
        meta[key] = ";".join(row[1:]).strip()
    if "budget" not in meta:
        raise PabulibError("META has no budget", field="budget")
    meta_line = next((ln for ln, row in _rows(sections["META"]) if row and row[0].strip() == "budget"), None)
    budget = _integer(meta["budget"], meta_line, "budget", floor=True)
    if budget < 0:
        raise PabulibError("negative budget", meta_line, "budget")
    vote_type = meta.get("vote_type", "approval").strip()
    if vote_type != "approval":
        raise PabulibError(f"unsupported vote_type {vote_type!r} (only approval)", field="vote_type")

    proj_rows = list(_rows(sections["PROJECTS"]))
    header_line, header = proj_rows[0]
    header = [h.strip() for h in header]
    for col in ("project_id", "cost"):
        if col not in header:
            raise PabulibError(f"PROJECTS header lacks column {col}", header_line, col)
    projects, extra_projects = [], {}
    for lineno, row in proj_rows[1:]:
        if len(row) != len(header):
            raise PabulibError(f"expected {len(header)} fields, got {len(row)}", lineno)
        record = dict(zip(header, row))
        pid = record["project_id"].strip()
        if pid in extra_projects:
            raise PabulibError(f"duplicate project id {pid!r}", lineno, "project_id")
        cost = _integer(record["cost"], lineno, "cost")
        if cost < 1:
            raise PabulibError(f"non-positive cost {cost}", lineno, "cost")
        projects.append(Project(pid, cost, len(projects)))
        extra_projects[pid] = {k: v for k, v in record.items() if k not in ("project_id", "cost")}
    if not projects:
        raise PabulibError("no projects")
    pidx = {p.id: j for j, p in enumerate(projects)}

    vote_rows = list(_rows(sections["VOTES"]))
    header_line, vheader = vote_rows[0]
    vheader = [h.strip() for h in vheader]
    for col in ("voter_id", "vote"):
        if col not in vheader:
            raise PabulibError(f"VOTES header lacks column {col}", header_line, col)
    voters, extra_votes, ballots = [], {}, []
    for lineno, row in vote_rows[1:]:
        if len(row) != len(vheader):
            raise PabulibError(f"expected {len(vheader)} fields, got {len(row)}", lineno)
        record = dict(zip(vheader, row))
        vid = record["voter_id"].strip()
        if vid in extra_votes:
            raise PabulibError(f"duplicate voter id {vid!r}", lineno, "voter_id")
        ballot = [x.strip() for x in record["vote"].split(",") if x.strip()]
        for pid in ballot:
            if pid not in pidx:
                raise PabulibError(f"vote references unknown project {pid!r}", lineno, "vote")
        if len(set(ballot)) != len(ballot):
            raise PabulibError("vote lists a project twice", lineno, "vote")
        voters.append(vid)
        ballots.append([pidx[pid] for pid in ballot])
        extra_votes[vid] = {k: v for k, v in record.items() if k not in ("voter_id", "vote")}
    if not voters:
        raise PabulibError("no voters")
    matrix = np.zeros((len(voters), len(projects)), dtype=bool)
    for i, ballot in enumerate(ballots):
        matrix[i, ballot] = True
    instance = Instance.from_matrix(projects, voters, matrix, budget)
    return PabulibFile(meta, instance, header, vheader, extra_projects, extra_votes)


def write_pabulib(pb: PabulibFile) -> str:
    """Serialise deterministically: LF line endings, ';' separators,
    projects in tie-break order, voters in their original order."""
    out = io.StringIO()
    writer = csv.writer(out, delimiter=";", lineterminator="\n")
    inst = pb.instance
    out.write("META\n")
    writer.writerow(["key", "value"])
    for key, value in pb.meta.items():
        writer.writerow([key, value])
    out.write("PROJECTS\n")
    writer.writerow(pb.project_columns)
    for proj in sorted(inst.projects, key=lambda p: p.tiebreak_rank):
        extra = pb.extra_project_columns.get(proj.id, {})
        core = {"project_id": proj.id, "cost": str(proj.cost)}
        writer.writerow([core[c] if c in core else extra.get(c, "") for c in pb.project_columns])
    out.write("VOTES\n")
    writer.writerow(pb.vote_columns)
    ranked = sorted(range(inst.m), key=lambda j: inst.projects[j].tiebreak_rank)
    for i, vid in enumerate(inst.voters):
        row = inst.matrix[i]
        vote = ",".join(inst.projects[j].id for j in ranked if row[j])
        extra = pb.extra_vote_columns.get(vid, {})
        core = {"voter_id": vid, "vote": vote}
        writer.writerow([core[c] if c in core else extra.get(c, "") for c in pb.vote_columns])
    return out.getvalue()


def read_pabulib(path: str | Path) -> PabulibFile:
    return parse_pabulib(Path(path).read_text(encoding="utf-8-sig"))


def save_pabulib(pb: PabulibFile, path: str | Path) -> None:
    Path(path).write_text(write_pabulib(pb), encoding="utf-8")
