"""Edit-distance clustering of pathway strings.

The clusterer is k-medoids (PAM with greedy BUILD initialization and
best-improvement SWAP), run on a distance matrix over the distinct
strings with multiplicity weights: corpora of short state strings are
dominated by duplicates, so this is where virtually all the cost is
saved. The number of clusters is chosen by minimizing a cluster-validity
ratio (mean distance to own medoid over the minimum medoid separation).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

#: Clusters smaller than this are flagged as discarded (kept, not deleted).
MIN_CLUSTER_SIZE = 5


class ClusterError(ValueError):
    pass


def levenshtein(a: str, b: str) -> int:
    """Minimal number of single-character insertions, deletions and
    substitutions turning ``a`` into ``b``."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    if la < lb:  # iterate over the longer string, keep the short row
        a, b, la, lb = b, a, lb, la
    prev = list(range(lb + 1))
    cur = [0] * (lb + 1)
    for i in range(1, la + 1):
        cur[0] = i
        ca = a[i - 1]
        for j in range(1, lb + 1):
            up = prev[j] + 1
            left = cur[j - 1] + 1
            diag = prev[j - 1] + (ca != b[j - 1])
            cur[j] = up if up < left else left
            if diag < cur[j]:
                cur[j] = diag
        prev, cur = cur, prev
    return prev[lb]


def distance_matrix(strings: Sequence[str]) -> np.ndarray:
    n = len(strings)
    D = np.zeros((n, n), dtype=float)
    for i in range(n):
        si = strings[i]
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = levenshtein(si, strings[j])
    return D


@dataclass
class ClusterModel:
    k: int
    medoids: list[str]
    assignment: dict[str, int]
    cv_curve: list[tuple[int, float]] = field(default_factory=list)
    discarded: list[int] = field(default_factory=list)

    def sizes(self) -> dict[int, int]:
        out = {i: 0 for i in range(self.k)}
        for c in self.assignment.values():
            out[c] += 1
        return out

    def active_clusters(self) -> list[int]:
        return [i for i in range(self.k) if i not in self.discarded]

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "medoids": self.medoids,
                "cv_curve": [[int(k), float(r)] for k, r in self.cv_curve],
                "assignment": self.assignment,
                "discarded": self.discarded,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        d = json.loads(text)
        return cls(
            k=d["k"],
            medoids=list(d["medoids"]),
            assignment={k: int(v) for k, v in d["assignment"].items()},
            cv_curve=[(int(k), float(r)) for k, r in d["cv_curve"]],
            discarded=[int(i) for i in d["discarded"]],
        )


def _distinct_weighted(seqs) -> tuple[list[str], np.ndarray, list[str], list[str]]:
    ids: list[str] = []
    codes: list[str] = []
    for s in seqs:
        ids.append(s.case_id)
        codes.append(s.codes)
    distinct = sorted(set(codes))
    index = {c: i for i, c in enumerate(distinct)}
    weights = np.zeros(len(distinct), dtype=float)
    for c in codes:
        weights[index[c]] += 1.0
    return distinct, weights, ids, codes


def _pam(D: np.ndarray, w: np.ndarray, k: int, max_swaps: int = 1000) -> tuple[list[int], np.ndarray]:
    """Greedy BUILD then best-improvement SWAP until no single medoid swap
    reduces the weighted total distance. Fully deterministic; exact cost
    ties are broken by the lowest candidate index."""
    n = D.shape[0]
    totals = (w[None, :] * D).sum(axis=1)
    medoids = [int(np.argmin(totals))]
    nearest = D[medoids[0]].copy()
    while len(medoids) < k:
        gain = (w[None, :] * np.maximum(nearest[None, :] - D, 0.0)).sum(axis=1)
        gain[medoids] = -np.inf
        m = int(np.argmax(gain))
        medoids.append(m)
        nearest = np.minimum(nearest, D[m])

    for _ in range(max_swaps):
        med = np.array(medoids)
        dmat = D[med]
        order = np.argsort(dmat, axis=0, kind="stable")
        nearest_idx = order[0]
        cols = np.arange(n)
        nearest_d = dmat[nearest_idx, cols]
        second_d = dmat[order[1], cols] if k > 1 else np.full(n, np.inf)
        best_delta = -1e-9
        best_swap = None
        for mi in range(k):
            # distance each point would see if medoid mi were removed
            alt = np.where(nearest_idx == mi, second_d, nearest_d)
            delta = (w[None, :] * (np.minimum(D, alt[None, :]) - nearest_d[None, :])).sum(axis=1)
            delta[med] = np.inf
            h = int(np.argmin(delta))
            if delta[h] < best_delta:
                best_delta = float(delta[h])
                best_swap = (mi, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]

    med = np.array(sorted(medoids))
    assign = np.argmin(D[med], axis=0)  # argmin takes the lowest index on ties
    return [int(m) for m in med], assign


def _total_cost(D: np.ndarray, w: np.ndarray, medoids: Sequence[int], assign: np.ndarray) -> float:
    med = np.array(medoids)
    return float((w * D[med[assign], np.arange(D.shape[0])]).sum())


def validity_ratio(
    D: np.ndarray,
    w: np.ndarray,
    medoids: Sequence[int],
    assign: np.ndarray,
    unweighted: bool = False,
) -> float | None:
    """Cluster-validity ratio: mean member-to-own-medoid distance divided
    by the minimum pairwise medoid distance. Lower is better. Returns
    ``None`` when undefined (no medoid pairs, or zero mean distance)."""
    med = np.array(medoids)
    intra = D[med[assign], np.arange(D.shape[0])]
    weights = np.ones_like(w) if unweighted else w
    mean_intra = float((weights * intra).sum() / weights.sum())
    if mean_intra <= 0:
        return None
    k = len(medoids)
    pairs = [D[medoids[i], medoids[j]] for i in range(k) for j in range(i + 1, k)]
    if not pairs:
        return None
    separation = float(min(pairs))
    if separation <= 0:
        return None
    return mean_intra / separation


def _build_model(distinct, assign, medoid_idx, ids, codes, min_cluster_size, cv_curve, k) -> ClusterModel:
    code_to_cluster = {c: int(assign[i]) for i, c in enumerate(distinct)}
    assignment = {cid: code_to_cluster[c] for cid, c in zip(ids, codes)}
    model = ClusterModel(
        k=k,
        medoids=[distinct[m] for m in medoid_idx],
        assignment=assignment,
        cv_curve=cv_curve,
        discarded=[],
    )
    sizes = model.sizes()
    model.discarded = sorted(i for i, n in sizes.items() if n < min_cluster_size)
    return model


def kmedoids(seqs, k: int, seed: int = 0, min_cluster_size: int = MIN_CLUSTER_SIZE) -> ClusterModel:
    """Cluster pathway sequences around ``k`` medoid strings.

    ``seed`` is accepted for interface stability; the BUILD+SWAP procedure
    is deterministic with index-order tie-breaking, so it has no effect.
    """
    distinct, w, ids, codes = _distinct_weighted(seqs)
    if k < 1:
        raise ClusterError("k must be >= 1")
    if k > len(distinct):
        raise ClusterError(f"k={k} exceeds the {len(distinct)} distinct sequences")
    D = distance_matrix(distinct)
    medoid_idx, assign = _pam(D, w, k)
    return _build_model(distinct, assign, medoid_idx, ids, codes, min_cluster_size, [], k)


def select_k(
    seqs,
    krange: Iterable[int],
    seed: int = 0,
    min_cluster_size: int = MIN_CLUSTER_SIZE,
    cv_unweighted: bool = False,
) -> ClusterModel:
    """Run k-medoids over ``krange`` and keep the k with the lowest
    validity ratio (ties break toward the smallest k). k values whose
    ratio is undefined are skipped with a warning; at least one must
    survive."""
    ks = sorted(set(int(k) for k in krange))
    if not ks:
        raise ClusterError("empty krange")
    distinct, w, ids, codes = _distinct_weighted(seqs)
    for k in ks:
        if k < 1 or k > len(distinct):
            raise ClusterError(f"k={k} invalid for {len(distinct)} distinct sequences")
    D = distance_matrix(distinct)

    curve: list[tuple[int, float]] = []
    best: tuple[float, int, list[int], np.ndarray] | None = None
    for k in ks:
        medoid_idx, assign = _pam(D, w, k)
        ratio = validity_ratio(D, w, medoid_idx, assign, unweighted=cv_unweighted)
        if ratio is None:
            log.warning("select_k: validity ratio undefined for k=%d, skipped", k)
            continue
        curve.append((k, ratio))
        if best is None or ratio < best[0] - 1e-12:
            best = (ratio, k, medoid_idx, assign)
    if best is None:
        raise ClusterError("validity ratio undefined for every k in range")
    _, k, medoid_idx, assign = best
    return _build_model(distinct, assign, medoid_idx, ids, codes, min_cluster_size, curve, k)
