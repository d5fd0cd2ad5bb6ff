"""Deterministic discrete-event simulation of patient flow.

Two generators emit daily arrivals: the target flow walks per-cluster
positioned-state transition matrices, the background flow walks the
coarse basic-state matrix. Patients entering a catheterization or
intervention state request one unit of the shared angiography resource
(FIFO, fixed capacity), hold it for a sampled procedure duration, then
sit out the rest of their sampled state time off-resource. Arrivals stop
at the horizon and the run drains until every patient has left.

The simulation clock is in fractional hours from the start of day 0.
Every replication is reproducible: replication ``r`` of a scenario uses
an independent counter-based random stream derived from
``(base_seed, r)``, and calendar ties resolve by a fixed priority order
(resource release, then patient advance, then resource request, then
arrival) plus insertion sequence.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cpmodel import END, START, FlowDistributions, ModelError, sample_arrivals

PRIO_RELEASE = 0
PRIO_ADVANCE = 1
PRIO_REQUEST = 2
PRIO_ARRIVAL = 3


class SimulationError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    """One cell of the what-if grid."""

    horizon_days: int = 60
    n_angiography: int = 3
    background_scale: float = 1.0
    target_scale: float = 1.0
    replications: int = 100
    base_seed: int = 42
    warmup_days: int = 0
    use_pathway_classes: bool = True   # False = class-blind baseline for the target flow
    background_competes: bool = True   # background patients also occupy the resource

    def __post_init__(self):
        if self.horizon_days < 1:
            raise SimulationError("horizon_days must be >= 1")
        if self.n_angiography < 1:
            raise SimulationError("n_angiography must be >= 1")
        if self.background_scale < 0 or self.target_scale < 0:
            raise SimulationError("flow scales must be >= 0")
        if self.replications < 1:
            raise SimulationError("replications must be >= 1")


@dataclass
class PatientRecord:
    patient_id: str
    flow: str                     # "target" | "background"
    cluster: int | None
    arrival: float
    trajectory: list[tuple[str, float, float]] = field(default_factory=list)
    waits: list[float] = field(default_factory=list)
    total_los: float = 0.0
    completed: bool = False

    @property
    def wait_total(self) -> float:
        return sum(self.waits)

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "flow": self.flow,
            "cluster": self.cluster,
            "arrival": self.arrival,
            "trajectory": [[n, e, l] for n, e, l in self.trajectory],
            "waits": self.waits,
            "wait_total": self.wait_total,
            "total_los": self.total_los,
            "completed": self.completed,
        }


@dataclass
class SimResult:
    scenario: ScenarioConfig
    replication: int
    seed: int
    patients: list[PatientRecord]
    resource_trace: list[tuple[float, int, int]]  # (time, holders, queue length)
    counters: dict[str, int]

    def summary(self) -> dict:
        pats = self.patients
        waited = sum(1 for p in pats if p.wait_total > 0)
        return {
            "replication": self.replication,
            "seed": self.seed,
            "n_angiography": self.scenario.n_angiography,
            "background_scale": self.scenario.background_scale,
            "generated": self.counters["generated"],
            "completed": self.counters["completed"],
            "in_system_at_end": self.counters["in_system_at_end"],
            "queued_count": self.counters["queued_count"],
            "pct_queued": 100.0 * waited / len(pats) if pats else 0.0,
            "mean_wait": sum(p.wait_total for p in pats) / len(pats) if pats else 0.0,
            "max_holders": max((h for _, h, _ in self.resource_trace), default=0),
        }

    def patient_lines(self):
        for p in self.patients:
            d = p.to_dict()
            d["replication"] = self.replication
            yield json.dumps(d, sort_keys=True)

    def trace_csv(self) -> str:
        lines = ["time,holders,queue_len"]
        lines += [f"{t:.6f},{h},{q}" for t, h, q in self.resource_trace]
        return "\n".join(lines) + "\n"


def replication_rng(base_seed: int, replication: int) -> np.random.Generator:
    """Independent counter-based stream for one replication."""
    return np.random.Generator(np.random.Philox(key=base_seed).jumped(replication))


class _Resource:
    __slots__ = ("capacity", "holders", "queue", "trace")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.holders = 0
        self.queue: deque = deque()  # FIFO of (patient, request time)
        self.trace: list[tuple[float, int, int]] = [(0.0, 0, 0)]

    def record(self, now: float) -> None:
        self.trace.append((now, self.holders, len(self.queue)))


class _Patient:
    __slots__ = (
        "record", "node", "node_enter", "los", "service", "release_at",
    )

    def __init__(self, record: PatientRecord):
        self.record = record
        self.node = START
        self.node_enter = 0.0
        self.los = 0.0
        self.service = 0.0
        self.release_at = 0.0


class _Sim:
    def __init__(self, dists: FlowDistributions, scenario: ScenarioConfig, rng: np.random.Generator):
        self.dists = dists
        self.scenario = scenario
        self.rng = rng
        self.now = 0.0
        self._seq = 0
        self._heap: list = []
        self._last_time = 0.0
        self.resource = _Resource(scenario.n_angiography)
        self.patients: list[_Patient] = []
        self.completed = 0
        # transition rows with sampling arrays precomputed per state
        self._rows_target = {
            c: {u: _row_sampler(row) for u, row in rows.items()}
            for c, rows in dists.transitions.items()
        }
        self._rows_background = {u: _row_sampler(row) for u, row in dists.background_transition.items()}
        self._cluster_ids = sorted(dists.cluster_cat)
        self._cluster_cdf = np.cumsum([dists.cluster_cat[c] for c in self._cluster_ids]) if self._cluster_ids else None
        self._lognormal_params: dict[int, tuple[float, float]] = {}

    # -- calendar ----------------------------------------------------------
    def schedule(self, time: float, priority: int, fn, arg) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, priority, self._seq, fn, arg))

    def run(self) -> None:
        while self._heap:
            time, priority, seq, fn, arg = heapq.heappop(self._heap)
            if time < self._last_time:
                raise SimulationError(f"clock went backwards: {time} after {self._last_time}")
            self._last_time = time
            self.now = time
            fn(arg)

    # -- sampling ----------------------------------------------------------
    def _sample_pool(self, pool: list[float]) -> float:
        return pool[int(self.rng.integers(len(pool)))]

    def _sample_los(self, pool: list[float]) -> float:
        if not self.dists.lognormal_los:
            return self._sample_pool(pool)
        key = id(pool)
        params = self._lognormal_params.get(key)
        if params is None:
            arr = np.asarray(pool, dtype=float)
            mean = float(arr.mean())
            sd = float(arr.std())
            if mean <= 0 or sd <= 0:
                params = (mean, 0.0)  # degenerate pool: constant draw
            else:
                var = np.log(1.0 + (sd / mean) ** 2)
                params = (np.log(mean) - var / 2.0, float(np.sqrt(var)))
            self._lognormal_params[key] = params
        mu, sigma = params
        if sigma == 0.0:
            return max(mu, 0.0)
        return float(self.rng.lognormal(mu, sigma))

    def _draw_cluster(self) -> int:
        u = self.rng.random() * self._cluster_cdf[-1]
        return self._cluster_ids[min(int(np.searchsorted(self._cluster_cdf, u, side="right")),
                                     len(self._cluster_ids) - 1)]

    def _next_node(self, patient: _Patient) -> str:
        if patient.record.flow == "background" or not self.scenario.use_pathway_classes:
            sampler = self._rows_background.get(patient.node)
        else:
            sampler = self._rows_target[patient.record.cluster].get(patient.node)
        if sampler is None:
            raise SimulationError(f"no transition row for state {patient.node!r}")
        states, cdf = sampler
        u = self.rng.random() * cdf[-1]
        return states[min(int(np.searchsorted(cdf, u, side="right")), len(states) - 1)]

    def _pools(self, patient: _Patient) -> tuple[dict, dict]:
        if patient.record.flow == "background" or not self.scenario.use_pathway_classes:
            return self.dists.background_los_pools, self.dists.background_service_pools
        cluster = patient.record.cluster
        return self.dists.los_pools[cluster], self.dists.service_pools[cluster]

    # -- events ------------------------------------------------------------
    def on_arrival(self, patient: _Patient) -> None:
        self.enter_state(patient, self._next_node(patient))

    def enter_state(self, patient: _Patient, node: str) -> None:
        if node == END:
            rec = patient.record
            rec.completed = True
            rec.total_los = self.now - rec.arrival
            self.completed += 1
            return
        patient.node = node
        patient.node_enter = self.now
        los_pools, service_pools = self._pools(patient)
        patient.los = self._sample_los(los_pools[node])
        is_background = patient.record.flow == "background"
        queueing = self.dists.queueing_node(node, background=is_background or not self.scenario.use_pathway_classes)
        if queueing and (not is_background or self.scenario.background_competes):
            patient.service = self._sample_pool(service_pools[node]) / 60.0
            self.schedule(self.now, PRIO_REQUEST, self.on_request, patient)
        else:
            self.schedule(self.now + patient.los, PRIO_ADVANCE, self.on_advance, patient)

    def on_request(self, patient: _Patient) -> None:
        res = self.resource
        res.queue.append((patient, self.now))
        self._grant()

    def _grant(self) -> None:
        res = self.resource
        granted = False
        while res.queue and res.holders < res.capacity:
            patient, requested = res.queue.popleft()
            res.holders += 1
            granted = True
            patient.record.waits.append(self.now - requested)
            patient.release_at = self.now + patient.service
            # state ends after the procedure plus any residual stay
            state_end = self.now + max(patient.los, patient.service)
            self.schedule(patient.release_at, PRIO_RELEASE, self.on_release, patient)
            self.schedule(state_end, PRIO_ADVANCE, self.on_advance, patient)
        if granted or res.queue:
            res.record(self.now)

    def on_release(self, patient: _Patient) -> None:
        res = self.resource
        res.holders -= 1
        res.record(self.now)
        self._grant()

    def on_advance(self, patient: _Patient) -> None:
        patient.record.trajectory.append((patient.node, patient.node_enter, self.now))
        self.enter_state(patient, self._next_node(patient))


def _row_sampler(row: dict[str, float]) -> tuple[list[str], np.ndarray]:
    states = sorted(row)
    cdf = np.cumsum([row[s] for s in states])
    return states, cdf


def run_replication(
    dists: FlowDistributions,
    scenario: ScenarioConfig,
    replication: int,
    graphs: Sequence = (),
) -> SimResult:
    """Simulate one replication to full drain.

    ``graphs``, when given, are cross-checked against the fitted
    transition states before simulating.
    """
    dists.validate()
    for graph in graphs or ():
        fitted = set(dists.transitions.get(graph.cluster, ())) | {START}
        missing = [n for n in graph.nodes if n not in fitted and n != END]
        if missing:
            raise ModelError(f"cluster {graph.cluster}: graph states {missing} missing from fitted transitions")
    if scenario.target_scale > 0 and scenario.use_pathway_classes and not dists.cluster_cat:
        raise ModelError("no clusters fitted; cannot generate a class-aware target flow")
    if (scenario.background_scale > 0 or not scenario.use_pathway_classes) and not dists.background_transition:
        raise ModelError("background flow requested but no background model fitted")

    rng = replication_rng(scenario.base_seed, replication)
    sim = _Sim(dists, scenario, rng)
    generated = 0
    for day in range(scenario.horizon_days):
        for flow, scale in (("target", scenario.target_scale), ("background", scenario.background_scale)):
            if scale <= 0:
                continue
            for t in sample_arrivals(dists, day, rng, scale=scale):
                cluster = None
                if flow == "target" and scenario.use_pathway_classes:
                    cluster = sim._draw_cluster()
                record = PatientRecord(
                    patient_id=f"r{replication}_{flow[0]}{generated:06d}",
                    flow=flow,
                    cluster=cluster,
                    arrival=t,
                )
                patient = _Patient(record)
                sim.patients.append(patient)
                sim.schedule(t, PRIO_ARRIVAL, sim.on_arrival, patient)
                generated += 1
    sim.run()

    records = [p.record for p in sim.patients]
    counters = {
        "generated": generated,
        "completed": sim.completed,
        "in_system_at_end": generated - sim.completed,
        "queued_count": sum(1 for r in records if r.wait_total > 0),
    }
    return SimResult(
        scenario=scenario,
        replication=replication,
        seed=scenario.base_seed,
        patients=records,
        resource_trace=sim.resource.trace,
        counters=counters,
    )


def run_scenario(
    dists: FlowDistributions,
    scenario: ScenarioConfig,
    jobs: int = 1,
    graphs: Sequence = (),
) -> list[SimResult]:
    """All replications of a scenario, ordered by replication index.

    Replications are independent (each has its own random stream), so the
    result is identical whether they run serially or in parallel.
    """
    reps = range(scenario.replications)
    if jobs and jobs > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=jobs)(
            delayed(run_replication)(dists, scenario, r, graphs) for r in reps
        )
    return [run_replication(dists, scenario, r, graphs) for r in reps]
