import json

import numpy as np
import pytest

from careflow.analysis import (
    AnalysisError,
    EvalReport,
    compare,
    five_number,
    ks_statistic,
    qq_points,
)


def ks_brute_force(a, b):
    """Evaluate both ECDFs at every sample point; keep the largest gap."""
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


# -- ks_statistic -----------------------------------------------------------------

def test_ks_identical_samples_zero():
    assert ks_statistic([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_ks_disjoint_supports_one():
    assert ks_statistic([1, 2], [10, 11]) == 1.0


def test_ks_known_value_against_brute_force():
    a, b = [1, 2, 3, 4], [3, 4, 5, 6]
    assert ks_brute_force(a, b) == 0.5
    assert ks_statistic(a, b) == 0.5


def test_ks_matches_brute_force_on_random_samples():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=rng.integers(2, 40)).tolist()
        b = rng.normal(loc=rng.uniform(-1, 1), size=rng.integers(2, 40)).tolist()
        assert ks_statistic(a, b) == pytest.approx(ks_brute_force(a, b), abs=1e-12)


def test_ks_symmetric_and_monotone_invariant():
    rng = np.random.default_rng(1)
    a = rng.exponential(size=30).tolist()
    b = rng.exponential(2.0, size=25).tolist()
    assert ks_statistic(a, b) == ks_statistic(b, a)
    fa = [np.log1p(x) * 3 + 1 for x in a]  # strictly increasing transform
    fb = [np.log1p(x) * 3 + 1 for x in b]
    assert ks_statistic(fa, fb) == pytest.approx(ks_statistic(a, b), abs=1e-12)


def test_ks_empty_sample_rejected():
    with pytest.raises(AnalysisError):
        ks_statistic([], [1.0])


def test_ks_matches_scipy():
    from scipy.stats import ks_2samp

    rng = np.random.default_rng(2)
    a = rng.normal(size=200)
    b = rng.normal(0.3, 1.2, size=150)
    assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)


# -- qq_points ---------------------------------------------------------------------

def test_qq_identical_samples_on_diagonal():
    xs = list(np.random.default_rng(3).exponential(size=200))
    for o, s in qq_points(xs, xs):
        assert o == pytest.approx(s, abs=1e-12)


def test_qq_shift_equivariance():
    xs = list(np.random.default_rng(4).normal(size=300))
    shifted = [x + 2.5 for x in xs]
    for o, s in qq_points(xs, shifted):
        assert s - o == pytest.approx(2.5, abs=1e-9)


def test_qq_monotone_in_both_coordinates():
    rng = np.random.default_rng(5)
    pts = qq_points(rng.gamma(2, size=500), rng.gamma(3, size=400))
    for (o1, s1), (o2, s2) in zip(pts, pts[1:]):
        assert o2 >= o1 and s2 >= s1


def test_qq_rejects_bad_percentiles():
    with pytest.raises(AnalysisError):
        qq_points([1, 2], [1, 2], [0])
    with pytest.raises(AnalysisError):
        qq_points([1, 2], [1, 2], [100])


def test_five_number_ordering():
    rng = np.random.default_rng(6)
    v = rng.normal(size=101)
    mn, q1, med, q3, mx = five_number(v)
    assert mn <= q1 <= med <= q3 <= mx
    assert mn == v.min() and mx == v.max()
    assert med == pytest.approx(np.median(v))


# -- compare -----------------------------------------------------------------------

def _patient(los, wait=0.0, flow="target", cluster=0):
    return {"flow": flow, "cluster": cluster, "total_los": los, "wait_total": wait}


def _cells(los_lists):
    return {(3, 1.0): [[_patient(x) for x in rep] for rep in los_lists]}


def test_compare_self_comparison_zero_reduction():
    obs = [10.0, 20.0, 30.0, 40.0]
    cells = _cells([[10.0, 20.0], [30.0, 40.0]])
    report = compare(obs, cells, cells)
    assert report.ks_class_aware == report.ks_baseline
    assert report.ks_reduction == 0.0


def test_compare_detects_improvement():
    rng = np.random.default_rng(7)
    obs = rng.exponential(30, 400).tolist()
    good = {(3, 1.0): [[_patient(x) for x in rng.exponential(30, 200)]]}
    bad = {(3, 1.0): [[_patient(x) for x in rng.exponential(60, 200)]]}
    report = compare(obs, good, bad)
    assert report.ks_class_aware < report.ks_baseline
    assert 0 < report.ks_reduction <= 1


def test_compare_mismatched_grids_rejected():
    obs = [1.0, 2.0]
    a = _cells([[1.0]])
    b = {(4, 1.0): [[_patient(1.0)]]}
    with pytest.raises(AnalysisError, match="grids"):
        compare(obs, a, b)


def test_compare_top_cluster_filtering_and_coverage():
    obs = [10.0, 11.0, 50.0, 52.0]
    obs_clusters = [0, 0, 1, 1]
    cells_class = {(3, 1.0): [[_patient(10.5, cluster=0), _patient(51.0, cluster=1)]]}
    cells_base = {(3, 1.0): [[_patient(30.0, cluster=None), _patient(33.0, cluster=None)]]}
    report = compare(
        obs, cells_class, cells_base,
        top_clusters=[0],
        observed_clusters=obs_clusters,
        cluster_sizes={0: 58, 1: 42},
    )
    assert report.top_clusters == [0]
    assert report.coverage == pytest.approx(0.58)
    # observed restricted to cluster 0 (10, 11); class sim restricted to 10.5
    assert report.ks_class_aware == ks_statistic([10.0, 11.0], [10.5])


def test_compare_queue_summary_five_numbers():
    reps = []
    for waits in ([0.0, 1.0], [0.0, 0.0], [2.0, 2.0]):
        reps.append([_patient(10.0, wait=w) for w in waits])
    cells = {(2, 0.5): reps}
    report = compare([10.0, 20.0], cells, cells)
    stats = report.queue_summary[(2, 0.5)]
    assert stats["pct_queued"] == (0.0, 25.0, 50.0, 75.0, 100.0)
    assert stats["mean_wait"][0] == 0.0 and stats["mean_wait"][4] == 2.0


def test_eval_report_json_roundtrip_and_csv():
    obs = [10.0, 20.0, 30.0]
    cells = _cells([[12.0, 25.0]])
    report = compare(obs, cells, cells)
    again = EvalReport.from_json(report.to_json())
    assert again == report
    qq = report.qq_csv()
    assert qq.splitlines()[0] == "percentile,obs,sim"
    assert len(qq.splitlines()) == 100
    queue = report.queue_csv()
    assert queue.splitlines()[0] == "servers,scale,stat,min,q1,med,q3,max"
    assert "2" not in queue.splitlines()[0]
    data = json.loads(report.to_json())
    assert "ks_reduction" in data
