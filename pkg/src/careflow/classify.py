"""CART-style decision tree over the three pathway features.

Features are, in fixed split order: the encoded-sequence length, the
number of catheterization states and the number of intervention states.
Leaves hold class-frequency probability vectors over the non-discarded
cluster indices. Splits test ``feature <= threshold``; the ``<=`` branch
is the left child.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

FEATURE_NAMES = ("los_feat", "noc", "nos")


class ClassifyError(ValueError):
    pass


@dataclass
class TreeNode:
    n: int
    feature: str | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    probs: dict[int, float] | None = None  # leaves only

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTree:
    root: TreeNode
    labels: list[int]
    max_depth: int
    min_leaf: int

    def predict(self, features: Sequence[float] | Mapping[str, float]) -> dict[int, float]:
        """Class-probability vector (over all labels) at the reached leaf."""
        vec = _as_vector(features)
        node = self.root
        while not node.is_leaf:
            idx = FEATURE_NAMES.index(node.feature)
            node = node.left if vec[idx] <= node.threshold else node.right
        return {label: node.probs.get(label, 0.0) for label in self.labels}

    def depth(self) -> int:
        def d(node):
            if node.is_leaf:
                return 0
            return 1 + max(d(node.left), d(node.right))
        return d(self.root)

    def leaves(self) -> list[TreeNode]:
        out = []
        def walk(node):
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)
        walk(self.root)
        return out

    def to_json(self) -> str:
        def enc(node):
            if node.is_leaf:
                return {"n": node.n, "probs": {str(k): v for k, v in sorted(node.probs.items())}}
            return {
                "n": node.n,
                "feature": node.feature,
                "threshold": node.threshold,
                "le": enc(node.left),
                "gt": enc(node.right),
            }
        return json.dumps(
            {
                "labels": self.labels,
                "max_depth": self.max_depth,
                "min_leaf": self.min_leaf,
                "root": enc(self.root),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        d = json.loads(text)

        def dec(obj):
            if "feature" in obj:
                return TreeNode(
                    n=obj["n"],
                    feature=obj["feature"],
                    threshold=obj["threshold"],
                    left=dec(obj["le"]),
                    right=dec(obj["gt"]),
                )
            return TreeNode(n=obj["n"], probs={int(k): float(v) for k, v in obj["probs"].items()})

        return cls(
            root=dec(d["root"]),
            labels=[int(x) for x in d["labels"]],
            max_depth=d["max_depth"],
            min_leaf=d["min_leaf"],
        )

    def to_dot(self) -> str:
        lines = ["digraph tree {", "  node [shape=box];"]
        counter = [0]

        def walk(node):
            nid = counter[0]
            counter[0] += 1
            if node.is_leaf:
                label = "\\n".join(f"#{k}: {v:.2f}" for k, v in sorted(node.probs.items()) if v > 0)
                lines.append(f'  n{nid} [label="{label or "empty"}\\nn={node.n}"];')
            else:
                lines.append(f'  n{nid} [label="{node.feature} <= {node.threshold:g}\\nn={node.n}"];')
                lid = walk(node.left)
                rid = walk(node.right)
                lines.append(f'  n{nid} -> n{lid} [label="yes"];')
                lines.append(f'  n{nid} -> n{rid} [label="no"];')
            return nid

        walk(self.root)
        lines.append("}")
        return "\n".join(lines)


def _as_vector(features) -> tuple[float, float, float]:
    if isinstance(features, Mapping):
        return tuple(float(features[name]) for name in FEATURE_NAMES)
    vec = tuple(float(x) for x in features)
    if len(vec) != 3:
        raise ClassifyError(f"expected 3 features {FEATURE_NAMES}, got {len(vec)}")
    return vec


def _gini(counts: dict[int, int], total: int) -> float:
    if total == 0:
        return 0.0
    return 1.0 - sum((c / total) ** 2 for c in counts.values())


def train(
    samples: Iterable[tuple[Sequence[float] | Mapping[str, float], int]],
    max_depth: int = 6,
    min_leaf: int = 5,
) -> DecisionTree:
    """Grow a binary Gini-impurity tree.

    Candidate thresholds are midpoints between adjacent distinct feature
    values; a split is admissible only if both children keep at least
    ``min_leaf`` samples. Equal-impurity candidates resolve by feature
    order then lowest threshold, which makes training deterministic.
    """
    data = [(_as_vector(f), int(label)) for f, label in samples]
    if not data:
        raise ClassifyError("no training samples")
    labels = sorted({label for _, label in data})

    def leaf(rows) -> TreeNode:
        counts: dict[int, int] = {}
        for _, label in rows:
            counts[label] = counts.get(label, 0) + 1
        n = len(rows)
        return TreeNode(n=n, probs={label: counts.get(label, 0) / n for label in labels})

    def best_split(rows):
        n = len(rows)
        counts: dict[int, int] = {}
        for _, label in rows:
            counts[label] = counts.get(label, 0) + 1
        parent = _gini(counts, n)
        if parent == 0.0:
            return None
        best = None  # (impurity, feature index, threshold)
        for fi in range(3):
            rows_sorted = sorted(rows, key=lambda r: r[0][fi])
            left_counts: dict[int, int] = {}
            for i in range(n - 1):
                label = rows_sorted[i][1]
                left_counts[label] = left_counts.get(label, 0) + 1
                v, nv = rows_sorted[i][0][fi], rows_sorted[i + 1][0][fi]
                if v == nv:
                    continue
                nl = i + 1
                nr = n - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                right_counts = {k: counts[k] - left_counts.get(k, 0) for k in counts}
                imp = (nl / n) * _gini(left_counts, nl) + (nr / n) * _gini(right_counts, nr)
                if imp >= parent - 1e-12:
                    continue
                thr = (v + nv) / 2.0
                if best is None or imp < best[0] - 1e-12:
                    best = (imp, fi, thr)
        return best

    def grow(rows, depth) -> TreeNode:
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return leaf(rows)
        choice = best_split(rows)
        if choice is None:
            return leaf(rows)
        _, fi, thr = choice
        left_rows = [r for r in rows if r[0][fi] <= thr]
        right_rows = [r for r in rows if r[0][fi] > thr]
        node = TreeNode(n=len(rows), feature=FEATURE_NAMES[fi], threshold=thr)
        node.left = grow(left_rows, depth + 1)
        node.right = grow(right_rows, depth + 1)
        return node

    return DecisionTree(root=grow(data, 0), labels=labels, max_depth=max_depth, min_leaf=min_leaf)
