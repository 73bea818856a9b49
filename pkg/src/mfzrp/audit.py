"""Structured pass/fail records for numerical inequality checks."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class AuditEntry:
    """One verified relation ``lhs <relation> rhs`` with its margin.

    ``margin`` is oriented so that nonnegative means the relation holds:
    ``rhs - lhs`` for ``<=``, ``lhs - rhs`` for ``>=``, ``-|lhs - rhs|``
    for ``==``.  ``passed`` is ``margin >= -tol`` at construction time.
    """

    name: str
    lhs: float
    rhs: float
    relation: str
    margin: float
    passed: bool
    detail: str = ""


def check(name: str, lhs: float, relation: str, rhs: float,
          tol: float = 0.0, detail: str = "") -> AuditEntry:
    """Build an AuditEntry for ``lhs relation rhs`` with tolerance ``tol``."""
    if relation == "<=":
        margin = rhs - lhs
    elif relation == ">=":
        margin = lhs - rhs
    elif relation == "==":
        margin = -abs(lhs - rhs)
    else:
        raise ValueError(f"unknown relation {relation!r}")
    # inf on the favourable side passes; NaN always fails
    if margin != margin:
        passed = False
    else:
        passed = bool(margin >= -tol)
    return AuditEntry(name=name, lhs=float(lhs), rhs=float(rhs),
                      relation=relation, margin=float(margin),
                      passed=passed, detail=detail)


@dataclass
class AuditReport:
    """Ordered collection of audit entries with serialization helpers."""

    entries: list[AuditEntry] = field(default_factory=list)

    def add(self, entry: AuditEntry) -> AuditEntry:
        self.entries.append(entry)
        return entry

    def extend(self, other: "AuditReport") -> None:
        self.entries.extend(other.entries)

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[AuditEntry]:
        return [e for e in self.entries if not e.passed]

    def to_rows(self) -> list[dict]:
        return [
            {"name": e.name, "lhs": e.lhs, "rhs": e.rhs,
             "relation": e.relation, "margin": e.margin, "pass": e.passed}
            for e in self.entries
        ]

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps({"entries": self.to_rows(),
                           "all_passed": self.all_passed},
                          indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "lhs", "rhs", "relation", "margin", "pass"])
        for e in self.entries:
            writer.writerow([e.name, repr(e.lhs), repr(e.rhs), e.relation,
                             repr(e.margin), e.passed])
        return buf.getvalue()

    def summary_lines(self) -> list[str]:
        lines = []
        for e in self.entries:
            status = "PASS" if e.passed else "FAIL"
            lines.append(f"[{status}] {e.name}: {e.lhs:.6g} {e.relation} "
                         f"{e.rhs:.6g} (margin {e.margin:.3g})")
        return lines
