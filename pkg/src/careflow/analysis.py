"""Goodness-of-fit and queueing statistics for simulated vs observed flow.

The fit metric is the exact two-sample Kolmogorov-Smirnov statistic on
total length of stay; the class-aware simulation is compared against the
class-blind baseline through the relative reduction of that statistic.
Queue behavior per what-if cell is summarized as five-number boxplot
statistics over replications.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

CellKey = tuple[int, float]  # (number of angiography facilities, background scale)


class AnalysisError(ValueError):
    pass


def ks_statistic(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Exact sup-distance between the two empirical CDFs, evaluated over
    the merged support."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise AnalysisError("ks_statistic requires nonempty samples")
    support = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, support, side="right") / a.size
    cdf_b = np.searchsorted(b, support, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def qq_points(
    observed: Sequence[float],
    simulated: Sequence[float],
    percentiles: Iterable[float] = range(1, 100),
) -> list[tuple[float, float]]:
    """Pairs of empirical quantiles (linear interpolation) per percentile."""
    obs = np.asarray(observed, dtype=float)
    sim = np.asarray(simulated, dtype=float)
    if obs.size == 0 or sim.size == 0:
        raise AnalysisError("qq_points requires nonempty samples")
    pcts = list(percentiles)
    if any(p <= 0 or p >= 100 for p in pcts):
        raise AnalysisError("percentiles must lie in (0, 100)")
    q_obs = np.percentile(obs, pcts, method="linear")
    q_sim = np.percentile(sim, pcts, method="linear")
    return [(float(o), float(s)) for o, s in zip(q_obs, q_sim)]


def five_number(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise AnalysisError("five_number requires nonempty input")
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return tuple(float(x) for x in q)


@dataclass
class EvalReport:
    ks_class_aware: float
    ks_baseline: float
    ks_reduction: float
    qq_points: list[tuple[float, float]]
    queue_summary: dict[CellKey, dict[str, tuple[float, float, float, float, float]]]
    top_clusters: list[int] | None = None
    coverage: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "ks_class_aware": self.ks_class_aware,
                "ks_baseline": self.ks_baseline,
                "ks_reduction": self.ks_reduction,
                "qq_points": [[o, s] for o, s in self.qq_points],
                "queue_summary": {
                    f"{servers}|{scale}": {stat: list(v) for stat, v in stats.items()}
                    for (servers, scale), stats in sorted(self.queue_summary.items())
                },
                "top_clusters": self.top_clusters,
                "coverage": self.coverage,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        queue = {}
        for key, stats in d["queue_summary"].items():
            servers, scale = key.split("|")
            queue[(int(servers), float(scale))] = {s: tuple(v) for s, v in stats.items()}
        return cls(
            ks_class_aware=d["ks_class_aware"],
            ks_baseline=d["ks_baseline"],
            ks_reduction=d["ks_reduction"],
            qq_points=[(o, s) for o, s in d["qq_points"]],
            queue_summary=queue,
            top_clusters=d.get("top_clusters"),
            coverage=d.get("coverage"),
        )

    def qq_csv(self, percentiles: Iterable[float] = range(1, 100)) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["percentile", "obs", "sim"])
        for p, (o, s) in zip(percentiles, self.qq_points):
            w.writerow([p, repr(o), repr(s)])
        return buf.getvalue()

    def queue_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["servers", "scale", "stat", "min", "q1", "med", "q3", "max"])
        for (servers, scale), stats in sorted(self.queue_summary.items()):
            for stat, values in sorted(stats.items()):
                w.writerow([servers, scale, stat] + [repr(v) for v in values])
        return buf.getvalue()


def _pooled_target_los(
    cells: Mapping[CellKey, Sequence[Sequence[Mapping]]],
    top_clusters: set[int] | None,
) -> list[float]:
    los: list[float] = []
    for reps in cells.values():
        for patients in reps:
            for p in patients:
                if p.get("flow") != "target":
                    continue
                if top_clusters is not None and p.get("cluster") not in top_clusters:
                    continue
                los.append(float(p["total_los"]))
    return los


def _queue_stats(cells: Mapping[CellKey, Sequence[Sequence[Mapping]]]):
    out = {}
    for cell, reps in sorted(cells.items()):
        pct, wait = [], []
        for patients in reps:
            n = len(patients)
            if n == 0:
                pct.append(0.0)
                wait.append(0.0)
                continue
            waited = sum(1 for p in patients if float(p.get("wait_total", 0.0)) > 0)
            pct.append(100.0 * waited / n)
            wait.append(sum(float(p.get("wait_total", 0.0)) for p in patients) / n)
        out[cell] = {
            "pct_queued": five_number(pct),
            "mean_wait": five_number(wait),
        }
    return out


def compare(
    observed_los: Sequence[float],
    class_aware: Mapping[CellKey, Sequence[Sequence[Mapping]]],
    baseline: Mapping[CellKey, Sequence[Sequence[Mapping]]],
    top_clusters: Sequence[int] | None = None,
    observed_clusters: Sequence[int] | None = None,
    cluster_sizes: Mapping[int, int] | None = None,
    percentiles: Iterable[float] = range(1, 100),
) -> EvalReport:
    """Score both simulation arms against the observed LoS sample.

    ``class_aware`` and ``baseline`` map scenario cells to per-replication
    lists of patient records (dicts); the two grids must coincide. Target
    LoS is pooled across replications and cells. When ``top_clusters`` is
    given, simulated class-aware patients and (via ``observed_clusters``)
    the observed sample are restricted to those clusters; the baseline
    has no classes, so it is never filtered. Queue summaries are reported
    for the class-aware arm.
    """
    if not observed_los:
        raise AnalysisError("observed sample is empty")
    if not class_aware or not baseline:
        raise AnalysisError("both result sets are required")
    if set(class_aware) != set(baseline):
        raise AnalysisError(
            f"scenario grids differ: {sorted(class_aware)} vs {sorted(baseline)}"
        )

    top: set[int] | None = None
    coverage = None
    obs = [float(x) for x in observed_los]
    if top_clusters is not None:
        top = set(int(c) for c in top_clusters)
        if observed_clusters is not None:
            if len(observed_clusters) != len(obs):
                raise AnalysisError("observed_clusters must align with observed_los")
            obs = [x for x, c in zip(obs, observed_clusters) if c in top]
            if not obs:
                raise AnalysisError("no observed cases left after top-cluster filtering")
        if cluster_sizes:
            total = sum(cluster_sizes.values())
            coverage = sum(cluster_sizes.get(c, 0) for c in top) / total if total else None

    sim_class = _pooled_target_los(class_aware, top)
    sim_base = _pooled_target_los(baseline, None)
    if not sim_class or not sim_base:
        raise AnalysisError("simulated target flow is empty")

    ks_class = ks_statistic(obs, sim_class)
    ks_base = ks_statistic(obs, sim_base)
    reduction = (ks_base - ks_class) / ks_base if ks_base > 0 else 0.0

    return EvalReport(
        ks_class_aware=ks_class,
        ks_baseline=ks_base,
        ks_reduction=reduction,
        qq_points=qq_points(obs, sim_class, percentiles),
        queue_summary=_queue_stats(class_aware),
        top_clusters=sorted(top) if top is not None else None,
        coverage=coverage,
    )
