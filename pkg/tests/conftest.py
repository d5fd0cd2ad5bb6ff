import numpy as np
import pytest

from careflow.pathway import PathwaySequence

# The published single-patient trajectory: hospital entrance, intensive
# care, catheterization hosted by a surgery department, wards, a PCI, and
# discharge. 29 data rows; department boundaries are deliberately partly
# implicit so cleaning has work to do.
TABLE2_ROWS = [
    ("2014-01-01T18:43:00Z", "AD", "entrance", ""),
    ("2014-01-01T19:22:00Z", "IC#2", "transfer", ""),
    ("2014-01-01T19:22:00Z", "IC#2", "checkup", ""),
    ("2014-01-01T20:00:00Z", "IC#2", "test", ""),
    ("2014-01-01T23:18:00Z", "SD#1", "surgery_cc", "duration_min=38.50"),
    ("2014-01-02T09:00:00Z", "IC#2", "test", ""),
    ("2014-01-02T11:34:00Z", "IC#2", "checkup", ""),
    ("2014-01-02T11:44:00Z", "IC#2", "checkup", ""),
    ("2014-01-03T10:35:00Z", "IC#2", "checkup", ""),
    ("2014-01-06T14:02:00Z", "CD#1", "checkup", ""),
    ("2014-01-06T15:00:00Z", "CD#1", "test", ""),
    ("2014-01-09T17:15:00Z", "CD#1", "checkup", ""),
    ("2014-01-10T11:30:00Z", "CD#1", "checkup", ""),
    ("2014-01-10T12:00:00Z", "CD#1", "test", ""),
    ("2014-01-13T11:23:00Z", "CD#2", "checkup", ""),
    ("2014-01-14T09:58:00Z", "CD#2", "checkup", ""),
    ("2014-01-15T09:20:00Z", "CD#2", "checkup", ""),
    ("2014-01-16T09:32:00Z", "CD#2", "checkup", ""),
    ("2014-01-16T13:03:00Z", "SD#1", "surgery_pci", "duration_min=51.25"),
    ("2014-01-16T13:39:00Z", "IC#1", "checkup", ""),
    ("2014-01-17T09:16:00Z", "CD#1", "transfer", ""),
    ("2014-01-17T11:38:00Z", "CD#1", "checkup", ""),
    ("2014-01-17T12:00:00Z", "CD#1", "test", ""),
    ("2014-01-20T09:54:00Z", "CD#1", "checkup", ""),
    ("2014-01-21T10:43:00Z", "CD#1", "checkup", ""),
    ("2014-01-22T09:47:00Z", "CD#1", "checkup", ""),
    ("2014-01-23T09:21:00Z", "CD#1", "checkup", ""),
    ("2014-01-23T10:00:00Z", "CD#1", "test", ""),
    ("2014-01-24T11:57:00Z", "CD#1", "discharge", ""),
]


def table2_csv() -> str:
    lines = ["case_id,timestamp,department,event_kind,attrs"]
    for ts, dept, kind, attrs in TABLE2_ROWS:
        lines.append(f"P1,{ts},{dept},{kind},{attrs}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def table2():
    return table2_csv()


def make_seqs(codes_list):
    """Wrap plain strings as minimal pathway sequences for clustering."""
    return [PathwaySequence(case_id=f"c{i:04d}", codes=c) for i, c in enumerate(codes_list)]


def planted_corpus(templates, weights, n, noise, seed):
    """Noisy strings drawn from weighted templates, plus true labels."""
    rng = np.random.default_rng(seed)
    alphabet = sorted(set("".join(templates)))
    p = np.array(weights, dtype=float)
    p /= p.sum()
    labels = [int(x) for x in rng.choice(len(templates), size=n, p=p)]
    strings = []
    for lab in labels:
        out = []
        for ch in templates[lab]:
            if rng.random() < noise:
                pass
            elif rng.random() < noise:
                out.append(alphabet[int(rng.integers(len(alphabet)))])
            else:
                out.append(ch)
            if rng.random() < noise:
                out.append(alphabet[int(rng.integers(len(alphabet)))])
        # encoded pathway strings are run-collapsed, mirror that here
        collapsed = []
        for ch in out or [templates[lab][0]]:
            if not collapsed or collapsed[-1] != ch:
                collapsed.append(ch)
        strings.append("".join(collapsed))
    return strings, labels


def adjusted_rand_index(a, b) -> float:
    """Independent contingency-table implementation used as an oracle."""
    from collections import Counter

    n = len(a)
    assert n == len(b)
    joint = Counter(zip(a, b))
    rows = Counter(a)
    cols = Counter(b)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = sum(comb2(c) for c in joint.values())
    sum_a = sum(comb2(c) for c in rows.values())
    sum_b = sum(comb2(c) for c in cols.values())
    expected = sum_a * sum_b / comb2(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)
