"""Ingestion, cleaning and synthesis of timestamped clinical event logs.

The wire format is a UTF-8 CSV with header
``case_id,timestamp,department,event_kind,attrs`` where ``timestamp`` is
ISO-8601 with a trailing ``Z`` (second resolution) and ``attrs`` is a
URL-encoded ``k=v;k=v`` string (possibly empty).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Mapping
from urllib.parse import quote, unquote

import numpy as np

log = logging.getLogger(__name__)

EVENT_KINDS = (
    "entrance",
    "transfer",
    "checkup",
    "test",
    "surgery_cc",
    "surgery_pci",
    "discharge",
    "other",
)

#: Event kinds that explicitly mark entry into a department.
BOUNDARY_KINDS = frozenset({"entrance", "transfer"})

SURGERY_KINDS = frozenset({"surgery_cc", "surgery_pci"})

CSV_HEADER = ["case_id", "timestamp", "department", "event_kind", "attrs"]

#: Fixed origin for synthetic logs; keeps synthesis free of wall-clock state.
SYNTH_EPOCH = datetime(2014, 1, 1, tzinfo=timezone.utc)


class EventLogError(ValueError):
    """Raised for malformed input rows or invalid log structures."""


def parse_timestamp(text: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise EventLogError(f"bad timestamp {text!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _encode_attrs(attrs: Mapping[str, str]) -> str:
    return ";".join(
        f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in sorted(attrs.items())
    )


def _decode_attrs(text: str) -> dict[str, str]:
    attrs: dict[str, str] = {}
    if not text:
        return attrs
    for part in text.split(";"):
        key, sep, value = part.partition("=")
        if not sep or not key:
            raise EventLogError(f"bad attrs field {text!r}")
        attrs[unquote(key)] = unquote(value)
    return attrs


@dataclass(frozen=True)
class RawEvent:
    """One timestamped record of a patient's stay."""

    case_id: str
    timestamp: datetime
    department: str
    kind: str
    attrs: Mapping[str, str] = field(default_factory=dict)

    def replace(self, **changes) -> "RawEvent":
        data = {
            "case_id": self.case_id,
            "timestamp": self.timestamp,
            "department": self.department,
            "kind": self.kind,
            "attrs": self.attrs,
        }
        data.update(changes)
        return RawEvent(**data)


@dataclass
class ClinicalCase:
    """All events of one patient, ordered as ingested (or cleaned).

    ``cleaning_flags`` records which repair heuristics touched the case;
    it is provenance metadata and excluded from equality so that cases
    survive a CSV round-trip unchanged.
    """

    case_id: str
    events: list[RawEvent]
    cleaning_flags: set[str] = field(default_factory=set, compare=False)

    @property
    def arrival(self) -> datetime:
        return self.events[0].timestamp

    @property
    def span_hours(self) -> float:
        return (self.events[-1].timestamp - self.events[0].timestamp).total_seconds() / 3600.0


@dataclass
class CleanReport:
    cases: int
    resorted_fraction: float
    reconstructed_fraction: float
    dropped: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "cases": self.cases,
                "resorted_fraction": self.resorted_fraction,
                "reconstructed_fraction": self.reconstructed_fraction,
                "dropped": self.dropped,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CleanReport":
        d = json.loads(text)
        return cls(d["cases"], d["resorted_fraction"], d["reconstructed_fraction"], d["dropped"])


# ---------------------------------------------------------------------------
# Ingestion / serialization
# ---------------------------------------------------------------------------

def ingest(source: str | Path | IO[str] | Iterable[str]) -> list[ClinicalCase]:
    """Read the event-log CSV and group rows into cases.

    Rows are grouped by ``case_id`` preserving their file order within each
    case; no cleaning is applied. Unknown event kinds map to ``other``.
    Exact duplicate rows are dropped with a logged count. Malformed rows
    raise :class:`EventLogError` naming the row number.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _ingest_lines(fh)
    return _ingest_lines(source)


def _ingest_lines(lines: Iterable[str]) -> list[ClinicalCase]:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        return []
    if [h.strip() for h in header] != CSV_HEADER:
        raise EventLogError(f"bad header {header!r}, expected {CSV_HEADER!r}")

    cases: dict[str, ClinicalCase] = {}
    seen: set[tuple] = set()
    duplicates = 0
    for row_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise EventLogError(f"row {row_no}: expected 5 fields, got {len(row)}")
        case_id, ts_text, department, kind, attrs_text = (f.strip() for f in row)
        if not case_id:
            raise EventLogError(f"row {row_no}: empty case_id")
        try:
            ts = parse_timestamp(ts_text)
            attrs = _decode_attrs(attrs_text)
        except EventLogError as exc:
            raise EventLogError(f"row {row_no}: {exc}") from None
        if kind not in EVENT_KINDS:
            kind = "other"
        if not department and kind != "discharge":
            raise EventLogError(f"row {row_no}: empty department for kind {kind!r}")
        key = (case_id, ts_text, department, kind, attrs_text)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        event = RawEvent(case_id, ts, department, kind, attrs)
        if case_id not in cases:
            cases[case_id] = ClinicalCase(case_id, [])
        cases[case_id].events.append(event)
    if duplicates:
        log.warning("ingest: dropped %d exact duplicate rows", duplicates)
    return list(cases.values())


def serialize(cases: Iterable[ClinicalCase]) -> str:
    """Render cases back into the event-log CSV format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for case in cases:
        for ev in case.events:
            writer.writerow(
                [
                    case.case_id,
                    format_timestamp(ev.timestamp),
                    ev.department,
                    ev.kind,
                    _encode_attrs(ev.attrs),
                ]
            )
    return buf.getvalue()


def write_csv(cases: Iterable[ClinicalCase], path: str | Path) -> None:
    Path(path).write_text(serialize(cases), encoding="utf-8")


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

def clean(cases: Iterable[ClinicalCase]) -> tuple[list[ClinicalCase], CleanReport]:
    """Repair case event lists so downstream encoding is well defined.

    Per case: events are stably sorted by timestamp; a missing leading
    entrance event is synthesized at the first timestamp; discharges that
    are not the final event are removed; and whenever consecutive events
    sit in different departments with no entrance/transfer between them an
    inferred transfer is inserted at the later event's timestamp. Cases
    with no events are dropped. Idempotent: cleaning a cleaned list is a
    no-op.
    """
    kept: list[ClinicalCase] = []
    dropped = 0
    resorted = 0
    reconstructed = 0
    for case in cases:
        if not case.events:
            dropped += 1
            continue
        flags = set(case.cleaning_flags)
        events = sorted(case.events, key=lambda e: e.timestamp)
        if [id(e) for e in events] != [id(e) for e in case.events]:
            flags.add("resorted")

        events, repaired = _repair_structure(events)
        if repaired:
            flags.add("reconstructed")

        if "resorted" in flags:
            resorted += 1
        if "reconstructed" in flags:
            reconstructed += 1
        kept.append(ClinicalCase(case.case_id, events, flags))

    n = len(kept)
    report = CleanReport(
        cases=n,
        resorted_fraction=resorted / n if n else 0.0,
        reconstructed_fraction=reconstructed / n if n else 0.0,
        dropped=dropped,
    )
    return kept, report


def _repair_structure(events: list[RawEvent]) -> tuple[list[RawEvent], bool]:
    repaired = False

    # Discharges inherit the previous department when theirs is empty.
    out: list[RawEvent] = []
    last_dept = ""
    for ev in events:
        if ev.kind == "discharge" and not ev.department and last_dept:
            ev = ev.replace(department=last_dept)
        if ev.department:
            last_dept = ev.department
        out.append(ev)
    events = out

    # A discharge must be the last event; earlier ones are spurious.
    if any(e.kind == "discharge" for e in events[:-1]):
        events = [e for i, e in enumerate(events) if e.kind != "discharge" or i == len(events) - 1]
        repaired = True

    if events[0].kind != "entrance":
        first = events[0]
        synth = RawEvent(first.case_id, first.timestamp, first.department, "entrance", {"inferred": "entrance"})
        events = [synth] + events
        repaired = True

    # Insert inferred transfers at unexplained department changes.
    out = [events[0]]
    for ev in events[1:]:
        prev = out[-1]
        if ev.department and prev.department and ev.department != prev.department and ev.kind not in BOUNDARY_KINDS:
            out.append(
                RawEvent(ev.case_id, ev.timestamp, ev.department, "transfer", {"inferred": "transfer"})
            )
            repaired = True
        out.append(ev)
    return out, repaired


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

#: Default mapping from state code letters to synthetic department names.
LETTER_DEPARTMENTS = {
    "A": "AD",
    "F": "IC#1",
    "I": "OR",
    "C": "CC",
    "E": "CD#1",
    "D": "CD#2",
    "N": "OD",
}

DEFAULT_SURGERY_MINUTES = (43.92, 28.71)


@dataclass(frozen=True)
class SynthTemplate:
    """One generating pathway: a state string, a sampling weight and
    per-state length-of-stay parameters (mean, sd) in hours."""

    codes: str
    weight: float
    los_hours: Mapping[str, tuple[float, float]]

    def validate(self, letters: Mapping[str, str]) -> None:
        if not self.codes:
            raise EventLogError("empty template")
        if self.weight < 0:
            raise EventLogError(f"negative weight for template {self.codes!r}")
        for a, b in zip(self.codes, self.codes[1:]):
            if a == b:
                raise EventLogError(f"template {self.codes!r} has a repeated state")
        for ch in self.codes:
            if ch not in letters:
                raise EventLogError(f"template letter {ch!r} has no department mapping")
            if ch not in self.los_hours:
                raise EventLogError(f"template {self.codes!r} lacks LoS parameters for {ch!r}")
            if self.los_hours[ch][0] <= 0:
                raise EventLogError(f"template {self.codes!r}: LoS mean for {ch!r} must be > 0")


@dataclass
class SynthSpec:
    """Parameters of the synthetic event-log generator."""

    n_cases: int
    templates: list[SynthTemplate]
    p_insert: float = 0.0
    p_delete: float = 0.0
    p_swap: float = 0.0
    daily_mean: float = 1.57
    daily_sd: float = 1.48
    hour_weights: list[float] = field(default_factory=lambda: [1.0] * 24)
    seed: int = 0
    start: datetime = SYNTH_EPOCH
    surgery_minutes: tuple[float, float] = DEFAULT_SURGERY_MINUTES
    letter_departments: Mapping[str, str] = field(default_factory=lambda: dict(LETTER_DEPARTMENTS))
    cc_letter: str = "C"
    or_letter: str = "I"

    def validate(self) -> None:
        if self.n_cases < 0:
            raise EventLogError("n_cases must be >= 0")
        if not self.templates:
            raise EventLogError("at least one template required")
        for p, name in ((self.p_insert, "p_insert"), (self.p_delete, "p_delete"), (self.p_swap, "p_swap")):
            if not 0.0 <= p <= 1.0:
                raise EventLogError(f"{name} must be in [0, 1]")
        if sum(t.weight for t in self.templates) <= 0:
            raise EventLogError("template weights must sum to > 0")
        if len(self.hour_weights) != 24 or min(self.hour_weights) < 0 or sum(self.hour_weights) <= 0:
            raise EventLogError("hour_weights must be 24 nonnegative values with positive sum")
        if self.daily_mean <= 0:
            raise EventLogError("daily_mean must be > 0")
        for t in self.templates:
            t.validate(self.letter_departments)


def _lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    # Moment matching: the generated values have the requested mean and sd.
    var = math.log(1.0 + (sd / mean) ** 2) if sd > 0 else 0.0
    mu = math.log(mean) - var / 2.0
    return mu, math.sqrt(var)


def _daily_counts(rng: np.random.Generator, mean: float, sd: float, n_days: int) -> np.ndarray:
    # Negative binomial preserves the requested mean exactly and matches the
    # sd when overdispersed; Poisson otherwise (sd then follows the mean).
    var = sd * sd
    if var > mean:
        r = mean * mean / (var - mean)
        p = r / (r + mean)
        return rng.negative_binomial(r, p, size=n_days)
    return rng.poisson(mean, size=n_days)


def _mutate(codes: str, rng: np.random.Generator, spec: SynthSpec, alphabet: str) -> str:
    out: list[str] = []
    for ch in codes:
        if spec.p_delete and rng.random() < spec.p_delete:
            pass
        elif spec.p_swap and rng.random() < spec.p_swap:
            out.append(alphabet[int(rng.integers(len(alphabet)))])
        else:
            out.append(ch)
        if spec.p_insert and rng.random() < spec.p_insert:
            out.append(alphabet[int(rng.integers(len(alphabet)))])
    if not out:
        out.append(codes[0])
    return "".join(out)


def synthesize(spec: SynthSpec) -> tuple[list[ClinicalCase], dict[str, int]]:
    """Generate a synthetic event log plus the generating-template index
    of every case. Deterministic for a fixed seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    weights = np.array([t.weight for t in spec.templates], dtype=float)
    weights = weights / weights.sum()
    hour_p = np.array(spec.hour_weights, dtype=float)
    hour_p = hour_p / hour_p.sum()
    alphabet = "".join(sorted(set("".join(t.codes for t in spec.templates))))
    surg_mu, surg_sigma = _lognormal_params(*spec.surgery_minutes)

    cases: list[ClinicalCase] = []
    truth: dict[str, int] = {}
    day = 0
    while len(cases) < spec.n_cases:
        count = int(_daily_counts(rng, spec.daily_mean, spec.daily_sd, 1)[0])
        count = min(count, spec.n_cases - len(cases))
        arrivals = []
        for _ in range(count):
            hour = int(rng.choice(24, p=hour_p))
            second = int(rng.integers(3600))
            arrivals.append(day * 86400 + hour * 3600 + second)
        for offset in sorted(arrivals):
            case_id = f"S{len(cases):06d}"
            tpl_idx = int(rng.choice(len(spec.templates), p=weights))
            tpl = spec.templates[tpl_idx]
            codes = _mutate(tpl.codes, rng, spec, alphabet)
            events = _expand_codes(case_id, codes, tpl, spec, rng,
                                   spec.start + timedelta(seconds=offset),
                                   surg_mu, surg_sigma)
            cases.append(ClinicalCase(case_id, events))
            truth[case_id] = tpl_idx
        day += 1
    return cases, truth


def _los_params(ch: str, tpl: SynthTemplate, spec: SynthSpec) -> tuple[float, float]:
    # Noise can insert a letter the sampled template has no parameters
    # for; borrow them from the first template that knows the letter.
    if ch in tpl.los_hours:
        return tpl.los_hours[ch]
    for other in spec.templates:
        if ch in other.los_hours:
            return other.los_hours[ch]
    return (24.0, 12.0)


def _expand_codes(case_id, codes, tpl, spec, rng, arrival, surg_mu, surg_sigma):
    events: list[RawEvent] = []
    t = arrival
    dept = ""
    for pos, ch in enumerate(codes):
        dept = spec.letter_departments[ch]
        kind = "entrance" if pos == 0 else "transfer"
        events.append(RawEvent(case_id, t, dept, kind, {}))
        if ch == spec.cc_letter or ch == spec.or_letter:
            dur = float(rng.lognormal(surg_mu, surg_sigma))
            surgery = "surgery_cc" if ch == spec.cc_letter else "surgery_pci"
            events.append(RawEvent(case_id, t, dept, surgery, {"duration_min": f"{dur:.2f}"}))
        mean, sd = _los_params(ch, tpl, spec)
        mu, sigma = _lognormal_params(mean, sd)
        los_h = float(rng.lognormal(mu, sigma))
        t = t + timedelta(seconds=max(1, round(los_h * 3600.0)))
    events.append(RawEvent(case_id, t, dept, "discharge", {}))
    return events
