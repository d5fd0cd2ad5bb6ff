"""Pathway templates, alignment, flow graphs and simulation distributions.

A cluster's member strings are aligned against its template (a reference
state string) by a maximum-cardinality, leftmost embedding, which turns
every visit into a *positioned state* ``letter@position``. Letters that
do not embed become off-template nodes ``letter~p`` attached after
template position ``p``. The per-cluster flow graph, the transition
matrices and the empirical length-of-stay pools that drive the simulator
are all built on these positioned states.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .eventlog import ClinicalCase
from .pathway import PathwaySequence

log = logging.getLogger(__name__)

START = "START"
END = "END"

BASIC_STATES = ("AD", "CD", "IC", "OR", "CC", "AD_OD")

#: Department name -> coarse basic state used by the class-blind model.
DEFAULT_BASIC_MAP = {
    "AD": "AD",
    "IC#1": "IC",
    "IC#2": "IC",
    "CD#1": "CD",
    "CD#2": "CD",
    "CC": "CC",
    "OR": "OR",
}


class ModelError(ValueError):
    pass


def matched_node(letter: str, position: int) -> str:
    return f"{letter}@{position}"


def off_template_node(letter: str, after_position: int) -> str:
    return f"{letter}~{after_position}"


def node_letter(node: str) -> str:
    return node[0]


def is_off_template(node: str) -> bool:
    return "~" in node


@dataclass(frozen=True)
class Template:
    cluster: int
    codes: str
    source: str  # "config" | "medoid_fallback"

    def __post_init__(self):
        if not self.codes:
            raise ModelError(f"cluster {self.cluster}: empty template")


@dataclass
class AlignedSequence:
    """Embedding of a member string into its cluster template.

    ``pairs`` lists the matched letters with their template positions
    (strictly increasing); ``unmatched`` lists leftover letters with the
    template position after which they occur (-1 for a leading leftover).
    """

    case_id: str
    pairs: list[tuple[str, int]]
    unmatched: list[tuple[str, int]]
    codes: str

    def compact(self) -> str:
        return "".join(f"{ch}{pos}" for ch, pos in self.pairs)

    def node_path(self) -> list[str]:
        """Positioned-state node per sequence position, in order."""
        path: list[str] = []
        pi = 0
        ui = 0
        last_pos = -1
        for ch in self.codes:
            if pi < len(self.pairs) and self.pairs[pi][0] == ch:
                pos = self.pairs[pi][1]
                path.append(matched_node(ch, pos))
                last_pos = pos
                pi += 1
            else:
                path.append(off_template_node(ch, last_pos))
                ui += 1
        if pi != len(self.pairs) or ui != len(self.unmatched):
            raise ModelError(f"case {self.case_id!r}: inconsistent alignment")
        return path


def _lcs_suffix_table(seq: str, tmpl: str) -> list[list[int]]:
    n, m = len(seq), len(tmpl)
    L = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row = L[i]
        below = L[i + 1]
        ci = seq[i]
        for j in range(m - 1, -1, -1):
            if ci == tmpl[j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = below[j] if below[j] >= row[j + 1] else row[j + 1]
    return L


def align(codes: str, template: Template | str, case_id: str = "") -> AlignedSequence:
    """Embed ``codes`` into the template, maximizing the number of matched
    letters and, among maximum embeddings, taking the leftmost one
    (lexicographically smallest tuple of template positions)."""
    tmpl = template.codes if isinstance(template, Template) else template
    if not codes or not tmpl:
        raise ModelError("align requires nonempty sequence and template")
    L = _lcs_suffix_table(codes, tmpl)
    n, m = len(codes), len(tmpl)

    pairs: list[tuple[str, int]] = []
    matched_idx: list[int] = []
    i = j = 0
    need = L[0][0]
    while need > 0:
        found = None
        for p in range(j, m):
            c = tmpl[p]
            for i2 in range(i, n):
                if codes[i2] == c and L[i2 + 1][p + 1] >= need - 1:
                    found = (i2, p)
                    break
            if found:
                break
        i2, p = found
        pairs.append((tmpl[p], p))
        matched_idx.append(i2)
        i, j = i2 + 1, p + 1
        need -= 1

    unmatched: list[tuple[str, int]] = []
    matched_set = set(matched_idx)
    last_pos = -1
    mi = 0
    for idx, ch in enumerate(codes):
        if idx in matched_set:
            last_pos = pairs[mi][1]
            mi += 1
        else:
            unmatched.append((ch, last_pos))
    return AlignedSequence(case_id=case_id, pairs=pairs, unmatched=unmatched, codes=codes)


def derive_templates(
    model,
    overrides: Mapping[int, str] | None = None,
    alphabet: str | None = None,
) -> list[Template]:
    """One template per non-discarded cluster: the configured override if
    present, otherwise the cluster medoid."""
    overrides = overrides or {}
    templates = []
    for idx in model.active_clusters():
        if idx in overrides:
            codes = overrides[idx]
            if alphabet is not None:
                bad = sorted(set(codes) - set(alphabet))
                if bad:
                    raise ModelError(f"template override for cluster {idx} uses letters outside the alphabet: {bad}")
            templates.append(Template(cluster=idx, codes=codes, source="config"))
        else:
            templates.append(Template(cluster=idx, codes=model.medoids[idx], source="medoid_fallback"))
    return templates


# ---------------------------------------------------------------------------
# Flow graphs
# ---------------------------------------------------------------------------

@dataclass
class CPGraph:
    cluster: int
    template: str
    nodes: list[str]
    edges: dict[tuple[str, str], int]
    bold: set[tuple[str, str]]
    member_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "cluster": self.cluster,
                "template": self.template,
                "member_count": self.member_count,
                "nodes": self.nodes,
                "edges": [
                    {"from": u, "to": v, "flow": f, "bold": (u, v) in self.bold}
                    for (u, v), f in sorted(self.edges.items())
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CPGraph":
        d = json.loads(text)
        edges = {}
        bold = set()
        for e in d["edges"]:
            key = (e["from"], e["to"])
            edges[key] = int(e["flow"])
            if e["bold"]:
                bold.add(key)
        return cls(
            cluster=int(d["cluster"]),
            template=d["template"],
            nodes=list(d["nodes"]),
            edges=edges,
            bold=bold,
            member_count=int(d["member_count"]),
        )

    def to_dot(self) -> str:
        lines = [f"digraph cp_{self.cluster} {{", "  rankdir=LR;", "  node [shape=ellipse];"]
        name = {n: f'"{n}"' for n in self.nodes}
        for (u, v), f in sorted(self.edges.items()):
            style = " penwidth=2.5 style=bold" if (u, v) in self.bold else ""
            lines.append(f'  {name[u]} -> {name[v]} [label="{f}"{style}];')
        lines.append("}")
        return "\n".join(lines)


def build_cp_graph(
    alignments: Sequence[AlignedSequence],
    template: Template,
    bold_coverage: float = 0.70,
) -> CPGraph:
    """Overlay every member's positioned-state path into one flow graph.

    Edge flows count traversals. Complete paths are ranked by frequency
    (ties lexicographic) and accumulated until they jointly cover at
    least ``bold_coverage`` of the members; edges on those paths are
    bold, except edges touching off-template nodes.
    """
    if not alignments:
        raise ModelError(f"cluster {template.cluster}: no alignments to build a graph from")
    edges: Counter = Counter()
    paths: Counter = Counter()
    nodes: set[str] = {START, END}
    for al in alignments:
        path = [START] + al.node_path() + [END]
        nodes.update(path)
        paths[tuple(path)] += 1
        for u, v in zip(path, path[1:]):
            edges[(u, v)] += 1

    total = len(alignments)
    bold: set[tuple[str, str]] = set()
    covered = 0
    for path, count in sorted(paths.items(), key=lambda kv: (-kv[1], kv[0])):
        if covered >= bold_coverage * total - 1e-9:
            break
        covered += count
        for u, v in zip(path, path[1:]):
            if not is_off_template(u) and not is_off_template(v):
                bold.add((u, v))
    return CPGraph(
        cluster=template.cluster,
        template=template.codes,
        nodes=sorted(nodes),
        edges=dict(edges),
        bold=bold,
        member_count=total,
    )


def flow_conservation_ok(graph: CPGraph) -> bool:
    inflow: Counter = Counter()
    outflow: Counter = Counter()
    for (u, v), f in graph.edges.items():
        outflow[u] += f
        inflow[v] += f
    for node in graph.nodes:
        if node in (START, END):
            continue
        if inflow[node] != outflow[node]:
            return False
    return outflow[START] == graph.member_count and inflow[END] == graph.member_count


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass
class FlowDistributions:
    """Everything the simulator samples from, fitted empirically.

    Pools are raw observed samples (length of stay in hours, procedure
    durations in minutes) used by bootstrap resampling. Transition rows
    are frequencies over positioned states plus END; the background model
    uses the coarse basic states instead.
    """

    hour_pdf: list[float]
    daily_count: dict[int, float]
    cluster_cat: dict[int, float]
    los_pools: dict[int, dict[str, list[float]]]
    service_pools: dict[int, dict[str, list[float]]]
    transitions: dict[int, dict[str, dict[str, float]]]
    background_transition: dict[str, dict[str, float]]
    background_los_pools: dict[str, list[float]]
    background_service_pools: dict[str, list[float]]
    cc_code: str = "C"
    or_code: str = "I"
    lognormal_los: bool = False  # sample LoS from a moment-matched lognormal instead of the pool

    def to_json(self) -> str:
        return json.dumps(
            {
                "hour_pdf": self.hour_pdf,
                "daily_count": {str(k): v for k, v in self.daily_count.items()},
                "cluster_cat": {str(k): v for k, v in self.cluster_cat.items()},
                "los_pools": {str(c): pools for c, pools in self.los_pools.items()},
                "service_pools": {str(c): pools for c, pools in self.service_pools.items()},
                "transitions": {str(c): rows for c, rows in self.transitions.items()},
                "background_transition": self.background_transition,
                "background_los_pools": self.background_los_pools,
                "background_service_pools": self.background_service_pools,
                "cc_code": self.cc_code,
                "or_code": self.or_code,
                "lognormal_los": self.lognormal_los,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "FlowDistributions":
        d = json.loads(text)
        return cls(
            hour_pdf=[float(x) for x in d["hour_pdf"]],
            daily_count={int(k): float(v) for k, v in d["daily_count"].items()},
            cluster_cat={int(k): float(v) for k, v in d["cluster_cat"].items()},
            los_pools={int(c): {n: list(map(float, p)) for n, p in pools.items()}
                       for c, pools in d["los_pools"].items()},
            service_pools={int(c): {n: list(map(float, p)) for n, p in pools.items()}
                           for c, pools in d["service_pools"].items()},
            transitions={int(c): {u: {v: float(q) for v, q in row.items()} for u, row in rows.items()}
                         for c, rows in d["transitions"].items()},
            background_transition={u: {v: float(q) for v, q in row.items()}
                                   for u, row in d["background_transition"].items()},
            background_los_pools={s: list(map(float, p)) for s, p in d["background_los_pools"].items()},
            background_service_pools={s: list(map(float, p)) for s, p in d["background_service_pools"].items()},
            cc_code=d["cc_code"],
            or_code=d["or_code"],
            lognormal_los=bool(d.get("lognormal_los", False)),
        )

    def queueing_node(self, node: str, background: bool) -> bool:
        if background:
            return node in ("CC", "OR")
        return node_letter(node) in (self.cc_code, self.or_code)

    def validate(self) -> None:
        if len(self.hour_pdf) != 24 or abs(sum(self.hour_pdf) - 1.0) > 1e-9:
            raise ModelError("hour_pdf must hold 24 weights summing to 1")
        if self.daily_count and abs(sum(self.daily_count.values()) - 1.0) > 1e-9:
            raise ModelError("daily_count must sum to 1")
        if self.cluster_cat and abs(sum(self.cluster_cat.values()) - 1.0) > 1e-9:
            raise ModelError("cluster_cat must sum to 1")
        for cluster, rows in self.transitions.items():
            _validate_chain(rows, f"cluster {cluster}")
            for state in rows:
                if state == START:
                    continue
                pool = self.los_pools.get(cluster, {}).get(state)
                if not pool:
                    raise ModelError(f"cluster {cluster}: state {state} has an empty LoS pool")
                if self.queueing_node(state, background=False):
                    if not self.service_pools.get(cluster, {}).get(state):
                        raise ModelError(f"cluster {cluster}: state {state} has an empty service pool")
        if self.background_transition:
            _validate_chain(self.background_transition, "background")
            for state in self.background_transition:
                if state == START:
                    continue
                if not self.background_los_pools.get(state):
                    raise ModelError(f"background state {state} has an empty LoS pool")
                if state in ("CC", "OR") and not self.background_service_pools.get(state):
                    raise ModelError(f"background state {state} has an empty service pool")


def _validate_chain(rows: Mapping[str, Mapping[str, float]], label: str) -> None:
    for state, row in rows.items():
        total = sum(row.values())
        if abs(total - 1.0) > 1e-9:
            raise ModelError(f"{label}: transition row for {state} sums to {total}, not 1")
    # END must be reachable from every state (reverse reachability from END).
    reaches_end = {END}
    changed = True
    while changed:
        changed = False
        for state, row in rows.items():
            if state in reaches_end:
                continue
            if any(q > 0 and v in reaches_end for v, q in row.items()):
                reaches_end.add(state)
                changed = True
    missing = sorted(set(rows) - reaches_end)
    if missing:
        raise ModelError(f"{label}: END unreachable from states {missing}")


def _hours(delta) -> float:
    return delta.total_seconds() / 3600.0


def _surgery_letter(kind: str, cc_code: str, or_code: str) -> str:
    return cc_code if kind == "surgery_cc" else or_code


def basic_state_runs(case: ClinicalCase, basic_map: Mapping[str, str] | None = None):
    """Collapse a case into coarse basic-state runs with intervals."""
    basic_map = DEFAULT_BASIC_MAP if basic_map is None else basic_map
    encodable = [e for e in case.events if e.kind != "discharge"]
    if not encodable:
        return []
    states = []
    for idx, ev in enumerate(encodable):
        nxt = encodable[idx + 1] if idx + 1 < len(encodable) else None
        if (
            ev.kind in ("entrance", "transfer")
            and nxt is not None
            and nxt.timestamp == ev.timestamp
            and nxt.department == ev.department
            and nxt.kind in ("surgery_cc", "surgery_pci")
        ):
            ev = nxt
        if ev.kind == "surgery_cc":
            state = "CC"
        elif ev.kind == "surgery_pci":
            state = "OR"
        else:
            state = basic_map.get(ev.department, "AD_OD")
        states.append((state, encodable[idx].timestamp))
    runs = []
    for state, ts in states:
        if not runs or runs[-1][0] != state:
            runs.append((state, ts))
    end = case.events[-1].timestamp
    return [
        (state, enter, runs[i + 1][1] if i + 1 < len(runs) else end)
        for i, (state, enter) in enumerate(runs)
    ]


def _normalize_counts(counts: Mapping, keys=None) -> dict:
    total = sum(counts.values())
    keys = counts.keys() if keys is None else keys
    return {k: counts[k] / total for k in keys if counts.get(k, 0) > 0}


def _position_for_surgery(seq: PathwaySequence, letter: str, ts) -> int | None:
    for p, ch in enumerate(seq.codes):
        if ch != letter:
            continue
        enter, leave = seq.state_times[p]
        if enter <= ts <= leave:
            return p
    return None


def fit_distributions(
    cases: Sequence[ClinicalCase],
    sequences: Sequence[PathwaySequence],
    model,
    graphs: Sequence[CPGraph],
    basic_map: Mapping[str, str] | None = None,
    los_by_department: bool = False,
) -> FlowDistributions:
    """Fit every empirical distribution the simulator needs.

    Arrival-hour and per-day-count histograms come from all cases (days
    with zero arrivals inside the observation span are counted).
    Positioned-state transition rows, LoS pools and procedure-duration
    pools are fitted per non-discarded cluster; the basic-state
    background model is fitted over the whole corpus.
    """
    if not cases:
        raise ModelError("no cases to fit on")
    seq_by_id = {s.case_id: s for s in sequences}
    graph_by_cluster = {g.cluster: g for g in graphs}
    cc_code = sequences[0].cc_code if sequences else "C"
    or_code = sequences[0].or_code if sequences else "I"

    hour_counts = [0] * 24
    day_counts: Counter = Counter()
    for case in cases:
        arr = case.arrival
        hour_counts[arr.hour] += 1
        day_counts[arr.date()] += 1
    span_start = min(day_counts)
    span_end = max(day_counts)
    n_days = (span_end - span_start).days + 1
    per_day: Counter = Counter()
    for count in day_counts.values():
        per_day[count] += 1
    per_day[0] += n_days - len(day_counts)
    daily_count = {int(k): v / n_days for k, v in sorted(per_day.items()) if v > 0}

    sizes = model.sizes()
    active = model.active_clusters()
    cluster_cat = _normalize_counts({c: sizes[c] for c in active})

    los_pools: dict[int, dict[str, list[float]]] = {c: {} for c in active}
    service_pools: dict[int, dict[str, list[float]]] = {c: {} for c in active}
    trans_counts: dict[int, Counter] = {c: Counter() for c in active}
    bg_los: dict[str, list[float]] = {}
    bg_service: dict[str, list[float]] = {}
    bg_trans: Counter = Counter()

    for case in cases:
        runs = basic_state_runs(case, basic_map)
        prev = START
        for state, enter, leave in runs:
            bg_los.setdefault(state, []).append(_hours(leave - enter))
            bg_trans[(prev, state)] += 1
            prev = state
        bg_trans[(prev, END)] += 1
        for ev in case.events:
            if ev.kind in ("surgery_cc", "surgery_pci") and "duration_min" in ev.attrs:
                state = "CC" if ev.kind == "surgery_cc" else "OR"
                bg_service.setdefault(state, []).append(float(ev.attrs["duration_min"]))

        cluster = model.assignment.get(case.case_id)
        if cluster not in graph_by_cluster:
            continue
        seq = seq_by_id.get(case.case_id)
        if seq is None:
            raise ModelError(f"case {case.case_id!r} has no encoded sequence")
        graph = graph_by_cluster[cluster]
        path = align(seq.codes, graph.template, seq.case_id).node_path()
        prev = START
        for p, node in enumerate(path):
            enter, leave = seq.state_times[p]
            los_pools[cluster].setdefault(node, []).append(_hours(leave - enter))
            trans_counts[cluster][(prev, node)] += 1
            prev = node
        trans_counts[cluster][(prev, END)] += 1
        for ev in case.events:
            if ev.kind in ("surgery_cc", "surgery_pci") and "duration_min" in ev.attrs:
                letter = _surgery_letter(ev.kind, cc_code, or_code)
                p = _position_for_surgery(seq, letter, ev.timestamp)
                if p is None:
                    log.debug("case %s: surgery at %s matches no %s state", case.case_id, ev.timestamp, letter)
                    continue
                service_pools[cluster].setdefault(path[p], []).append(float(ev.attrs["duration_min"]))

    if los_by_department:
        for cluster in active:
            by_letter: dict[str, list[float]] = {}
            for node, pool in los_pools[cluster].items():
                by_letter.setdefault(node_letter(node), []).extend(pool)
            los_pools[cluster] = {node: by_letter[node_letter(node)] for node in los_pools[cluster]}

    transitions = {c: _rows_from_counts(trans_counts[c]) for c in active}
    background_transition = _rows_from_counts(bg_trans)

    dist = FlowDistributions(
        hour_pdf=[c / len(cases) for c in hour_counts],
        daily_count=daily_count,
        cluster_cat=cluster_cat,
        los_pools=los_pools,
        service_pools=service_pools,
        transitions=transitions,
        background_transition=background_transition,
        background_los_pools=bg_los,
        background_service_pools=bg_service,
        cc_code=cc_code,
        or_code=or_code,
    )
    dist.validate()
    return dist


def _rows_from_counts(counts: Counter) -> dict[str, dict[str, float]]:
    rows: dict[str, Counter] = {}
    for (u, v), c in counts.items():
        rows.setdefault(u, Counter())[v] += c
    return {
        u: {v: c / sum(row.values()) for v, c in sorted(row.items())}
        for u, row in sorted(rows.items())
    }


def sample_arrivals(
    dist: FlowDistributions,
    day_index: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> list[float]:
    """Arrival instants (hours from simulation start) for one day.

    The day's count is drawn from the fitted per-day distribution and
    scaled as ``floor(s*n) + Bernoulli(frac(s*n))``, which preserves the
    expected count exactly; times are i.i.d. inverse-CDF draws from the
    hour histogram with uniform jitter inside the hour.
    """
    if not dist.daily_count:
        return []
    counts = sorted(dist.daily_count)
    cdf = np.cumsum([dist.daily_count[c] for c in counts])
    idx = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(counts) - 1)
    raw = counts[idx]
    scaled = scale * raw
    n = int(scaled) + (1 if rng.random() < scaled - int(scaled) else 0)
    if n <= 0:
        return []
    hour_cdf = np.cumsum(dist.hour_pdf)
    times = []
    for _ in range(n):
        hour = int(np.searchsorted(hour_cdf, rng.random() * hour_cdf[-1], side="right"))
        hour = min(hour, 23)
        times.append(day_index * 24.0 + hour + rng.random())
    return sorted(times)
