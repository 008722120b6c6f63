"""Partition comparison metrics for disentanglement.

``scaled_vi``
    ``1 - VI(X; Y) / log2(n)`` with ``VI = H(X, Y) - I(X; Y)`` in bits.
``ari``
    Adjusted Rand index from the contingency table.
``one_to_one``
    Percentage of elements covered by the best one-to-one cluster pairing.
``exact_match_prf``
    Precision, recall and F1 of clusters reproduced exactly, ignoring
    singleton clusters on both sides.
"""

from dataclasses import dataclass
from math import comb, log2

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import InputError

REPORT_KEYS = ("vi", "ari", "one_to_one", "p", "r", "f1")


class Partition:
    """Disjoint non-empty clusters covering a universe of ids."""

    def __init__(self, clusters):
        clusters = [frozenset(c) for c in clusters]
        universe = set()
        for c in clusters:
            if not c:
                raise InputError("empty cluster")
            if universe & c:
                raise InputError("clusters overlap")
            universe |= c
        self.clusters = sorted(clusters, key=lambda c: min(c))
        self.universe = frozenset(universe)

    @classmethod
    def from_labels(cls, labels):
        """Build from a mapping ``id -> cluster label``."""
        groups = {}
        for uid, lab in labels.items():
            groups.setdefault(lab, set()).add(uid)
        return cls(groups.values())

    def labels(self):
        return {uid: k for k, c in enumerate(self.clusters) for uid in c}

    def __len__(self):
        return len(self.clusters)

    def __eq__(self, other):
        return isinstance(other, Partition) and set(self.clusters) == set(other.clusters)

    def __hash__(self):
        return hash(frozenset(self.clusters))

    def __repr__(self):
        return "Partition(" + repr([sorted(c) for c in self.clusters]) + ")"


@dataclass
class ContingencyTable:
    counts: np.ndarray  # n_ij
    rows: np.ndarray  # a_i
    cols: np.ndarray  # b_j
    n: int


def _check_universe(X, Y):
    if X.universe != Y.universe:
        raise InputError("partitions cover different element sets")


def contingency(X, Y):
    _check_universe(X, Y)
    lx, ly = X.labels(), Y.labels()
    counts = np.zeros((len(X), len(Y)), dtype=np.int64)
    for uid in X.universe:
        counts[lx[uid], ly[uid]] += 1
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), int(counts.sum()))


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def variation_of_information(X, Y):
    """VI in bits."""
    t = contingency(X, Y)
    if t.n == 0:
        return 0.0
    hx, hy = _entropy(t.rows, t.n), _entropy(t.cols, t.n)
    hxy = _entropy(t.counts.ravel(), t.n)
    mi = hx + hy - hxy
    return max(hxy - mi, 0.0)


def scaled_vi(X, Y):
    t_n = len(X.universe)
    _check_universe(X, Y)
    if t_n <= 1:
        return 1.0
    return 1.0 - variation_of_information(X, Y) / log2(t_n)


def ari(X, Y):
    t = contingency(X, Y)
    total = comb(t.n, 2)
    if total == 0:
        return 1.0
    index = sum(comb(int(v), 2) for v in t.counts.ravel())
    sum_a = sum(comb(int(v), 2) for v in t.rows)
    sum_b = sum(comb(int(v), 2) for v in t.cols)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # only reachable when both are all-singletons or both one cluster
        return 1.0
    return (index - expected) / (max_index - expected)


def one_to_one(X, Y):
    t = contingency(X, Y)
    if t.n == 0:
        return 100.0
    r, c = linear_sum_assignment(t.counts, maximize=True)
    return 100.0 * t.counts[r, c].sum() / t.n


def exact_match_prf(pred, gold):
    """``(P, R, F1)`` over non-singleton clusters; empty denominators give 0."""
    _check_universe(pred, gold)
    p_set = {c for c in pred.clusters if len(c) > 1}
    g_set = {c for c in gold.clusters if len(c) > 1}
    correct = len(p_set & g_set)
    p = correct / len(p_set) if p_set else 0.0
    r = correct / len(g_set) if g_set else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def evaluate_partitions(pred, gold):
    p, r, f1 = exact_match_prf(pred, gold)
    return {
        "vi": scaled_vi(pred, gold),
        "ari": ari(pred, gold),
        "one_to_one": one_to_one(pred, gold),
        "p": p,
        "r": r,
        "f1": f1,
    }


def evaluate_all(pred_links, gold_links):
    """Cluster both link sets and compute every metric.

    Keys are always, in order, ``vi`` (scaled, higher is better), ``ari``,
    ``one_to_one`` (percent), ``p``, ``r``, ``f1``.
    """
    from .pipeline import cluster

    pred, gold = cluster(pred_links), cluster(gold_links)
    if pred.universe != gold.universe:
        raise InputError("predicted and gold links cover different utterances")
    return evaluate_partitions(pred, gold)


def format_report(report):
    """Aligned two-column table; ``vi`` is the scaled similarity (1 - VI/log2 n)."""
    lines = ["metric      value", "----------  ----------"]
    for key in REPORT_KEYS:
        lines.append(f"{key:<10}  {report[key]:10.4f}")
    return "\n".join(lines)
