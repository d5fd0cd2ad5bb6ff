"""Encoding of cleaned cases as single-letter state strings.

Each maximal run of same-state residence becomes one code letter, so a
string like ``AFIFE`` reads: admitted, intensive care, an intervention in
the operating room, intensive care again, then a cardiology ward.
Catheterization and intervention events map to their own pseudo-states
regardless of which department hosts them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, NamedTuple

from .eventlog import BOUNDARY_KINDS, ClinicalCase, EventLogError


class CodeMapError(ValueError):
    """Raised when a case references a department missing from the map."""


@dataclass(frozen=True)
class CodeMap:
    """Department-to-letter encoding table.

    ``departments`` maps department names to single uppercase letters
    (several departments may share a letter). ``cc_code`` and ``or_code``
    are the pseudo-states for catheterization and intervention events.
    Discharge is a terminal marker and is never encoded.
    """

    departments: Mapping[str, str]
    cc_code: str = "C"
    or_code: str = "I"
    admission_code: str = "A"

    def __post_init__(self):
        for dept, code in self.departments.items():
            if len(code) != 1 or not code.isupper():
                raise CodeMapError(f"code for {dept!r} must be one uppercase letter, got {code!r}")
        for name, code in (("cc_code", self.cc_code), ("or_code", self.or_code)):
            if len(code) != 1 or not code.isupper():
                raise CodeMapError(f"{name} must be one uppercase letter, got {code!r}")
        if self.cc_code == self.or_code:
            raise CodeMapError("cc_code and or_code must differ")
        if self.admission_code not in self.departments.values():
            raise CodeMapError(f"admission_code {self.admission_code!r} not present in department map")

    @property
    def alphabet(self) -> str:
        letters = set(self.departments.values()) | {self.cc_code, self.or_code}
        return "".join(sorted(letters))


DEFAULT_CODE_MAP = CodeMap(
    departments={
        "AD": "A",
        "IC#1": "F",
        "IC#2": "F",
        "SD#1": "I",
        "SD#2": "I",
        "OR": "I",
        "CC": "C",
        "CD#1": "E",
        "CD#2": "D",
        "OD": "N",
    }
)


class Features(NamedTuple):
    los_feat: int  # number of encoded states
    noc: int       # catheterization states
    nos: int       # intervention states


@dataclass
class PathwaySequence:
    """A case rendered as its state-code string with residence intervals."""

    case_id: str
    codes: str
    state_times: list[tuple[datetime, datetime]] = field(default_factory=list)
    cc_code: str = "C"
    or_code: str = "I"

    def __post_init__(self):
        if not self.codes:
            raise EventLogError(f"case {self.case_id!r}: empty code string")
        for a, b in zip(self.codes, self.codes[1:]):
            if a == b:
                raise EventLogError(f"case {self.case_id!r}: consecutive identical codes in {self.codes!r}")

    @property
    def features(self) -> Features:
        return Features(
            los_feat=len(self.codes),
            noc=self.codes.count(self.cc_code),
            nos=self.codes.count(self.or_code),
        )


def features(seq: PathwaySequence) -> Features:
    return seq.features


def _event_state(event, code_map: CodeMap) -> str:
    if event.kind == "surgery_cc":
        return code_map.cc_code
    if event.kind == "surgery_pci":
        return code_map.or_code
    try:
        return code_map.departments[event.department]
    except KeyError:
        raise CodeMapError(
            f"case {event.case_id!r}: department {event.department!r} not in code map"
        ) from None


def encode(case: ClinicalCase, code_map: CodeMap = DEFAULT_CODE_MAP) -> PathwaySequence:
    """Encode a cleaned case as a state string with per-state intervals.

    Consecutive events in the same state collapse into one code. A
    movement event that lands exactly on a same-time surgery in the same
    department is the handoff into that procedure and adopts its
    pseudo-state (so an inferred transfer into the catheterization lab
    does not create a spurious department state).
    """
    if not case.events:
        raise EventLogError(f"case {case.case_id!r}: no events")
    encodable = [e for e in case.events if e.kind != "discharge"]
    if not encodable:
        raise EventLogError(f"case {case.case_id!r}: only discharge events")
    for a, b in zip(case.events, case.events[1:]):
        if b.timestamp < a.timestamp:
            raise EventLogError(f"case {case.case_id!r}: events not sorted; clean first")

    states: list[tuple[str, datetime]] = []
    for i, ev in enumerate(encodable):
        nxt = encodable[i + 1] if i + 1 < len(encodable) else None
        if (
            ev.kind in BOUNDARY_KINDS
            and nxt is not None
            and nxt.timestamp == ev.timestamp
            and nxt.department == ev.department
            and nxt.kind in ("surgery_cc", "surgery_pci")
        ):
            state = _event_state(nxt, code_map)
        else:
            state = _event_state(ev, code_map)
        states.append((state, ev.timestamp))

    codes: list[str] = []
    enters: list[datetime] = []
    for state, ts in states:
        if not codes or codes[-1] != state:
            codes.append(state)
            enters.append(ts)

    end = case.events[-1].timestamp
    state_times = [
        (enters[i], enters[i + 1] if i + 1 < len(enters) else end)
        for i in range(len(enters))
    ]
    return PathwaySequence(
        case_id=case.case_id,
        codes="".join(codes),
        state_times=state_times,
        cc_code=code_map.cc_code,
        or_code=code_map.or_code,
    )


def encode_all(cases: Iterable[ClinicalCase], code_map: CodeMap = DEFAULT_CODE_MAP) -> list[PathwaySequence]:
    return [encode(c, code_map) for c in cases]


def sequences_to_csv(seqs: Iterable[PathwaySequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case_id", "codes", "los_feat", "noc", "nos"])
    for s in seqs:
        f = s.features
        writer.writerow([s.case_id, s.codes, f.los_feat, f.noc, f.nos])
    return buf.getvalue()
