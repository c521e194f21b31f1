"""Clustering metrics and the k-means baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .em_engine import InitFailure, kmeans_plus_plus, make_rng
from .model import as_points, hard_assign


class ShapeMismatch(ValueError):
    pass


def match_columns(w_a, w_b) -> np.ndarray:
    """Greedy column matching of ``w_a`` onto ``w_b`` by hard-assignment overlap.

    Returns ``perm`` such that ``w_a[:, perm]`` lines up with ``w_b``. The
    largest remaining overlap count is matched first; ties go to the lowest
    (column of b, column of a) pair.
    """
    w_a, w_b = np.asarray(w_a), np.asarray(w_b)
    k = w_a.shape[1]
    ha, hb = hard_assign(w_a), hard_assign(w_b)
    overlap = np.zeros((k, k), dtype=np.int64)  # [b column, a column]
    np.add.at(overlap, (hb, ha), 1)
    perm = np.full(k, -1, dtype=np.intp)
    free_b, free_a = set(range(k)), set(range(k))
    while free_b:
        best = max(
            ((overlap[j, i], -j, -i) for j in sorted(free_b) for i in sorted(free_a)),
        )
        j, i = -best[1], -best[2]
        perm[j] = i
        free_b.discard(j)
        free_a.discard(i)
    return perm


def membership_error(w_a, w_b) -> float:
    """Relative Frobenius distance ||w_a - w_b|| / ||w_b|| after label matching."""
    w_a, w_b = np.asarray(w_a, dtype=float), np.asarray(w_b, dtype=float)
    if w_a.shape != w_b.shape:
        raise ShapeMismatch(f"{w_a.shape} vs {w_b.shape}")
    aligned = w_a[:, match_columns(w_a, w_b)]
    return float(np.linalg.norm(aligned - w_b) / np.linalg.norm(w_b))


def majority_labels(assignments, labels) -> dict[int, int]:
    """Most frequent true label per cluster; ties go to the smallest label."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    out = {}
    for c in np.unique(assignments):
        vals, counts = np.unique(labels[assignments == c], return_counts=True)
        out[int(c)] = int(vals[np.argmax(counts)])
    return out


def classification_error(assignments, labels) -> float:
    """Fraction of points whose cluster's majority label differs from their own."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if assignments.shape != labels.shape:
        raise ShapeMismatch("assignments and labels differ in length")
    major = majority_labels(assignments, labels)
    predicted = np.array([major[int(c)] for c in assignments])
    return float(np.mean(predicted != labels))


@dataclass
class ConfusionTable:
    """Counts indexed by (predicted majority label, true label)."""

    predicted: list[int]
    truth: list[int]
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"predicted": self.predicted, "truth": self.truth, "counts": self.counts.tolist()}

    def format(self) -> str:
        width = max(6, max(len(str(v)) for v in self.counts.ravel()) + 1)
        head = "pred\\true".ljust(10) + "".join(str(t).rjust(width) for t in self.truth)
        lines = [head]
        for p, row in zip(self.predicted, self.counts):
            lines.append(str(p).ljust(10) + "".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines)


def confusion_matrix(assignments, labels) -> ConfusionTable:
    """Clusters sharing a majority label are summed into one row."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    major = majority_labels(assignments, labels)
    predicted = sorted(set(major.values()))
    truth = sorted(int(v) for v in np.unique(labels))
    row_of = {p: i for i, p in enumerate(predicted)}
    col_of = {t: j for j, t in enumerate(truth)}
    counts = np.zeros((len(predicted), len(truth)), dtype=np.int64)
    for c, t in zip(assignments, labels):
        counts[row_of[major[int(c)]], col_of[int(t)]] += 1
    return ConfusionTable(predicted, truth, counts)


class KMeansResult(NamedTuple):
    centers: np.ndarray
    assignments: np.ndarray
    iterations: int
    wcss_trace: list


def _nearest(pts, centers):
    d2 = np.empty((pts.shape[0], centers.shape[0]))
    for c, center in enumerate(centers):
        d2[:, c] = np.sum((pts - center) ** 2, axis=1)
    assign = np.argmin(d2, axis=1)
    return assign, d2[np.arange(pts.shape[0]), assign]


def kmeans(data, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds.

    Stops once no center moves more than ``tol``. An empty cluster is
    reseeded at the point farthest from its current center.
    """
    pts = as_points(data)
    if k > pts.shape[0]:
        raise InitFailure(f"K={k} exceeds N={pts.shape[0]}")
    centers = pts[kmeans_plus_plus(pts, k, make_rng(seed))].copy()
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        assign, d2 = _nearest(pts, centers)
        trace.append(float(d2.sum()))
        new = centers.copy()
        for c in range(k):
            members = assign == c
            if np.any(members):
                new[c] = pts[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                new[c] = pts[far]
                d2[far] = 0.0
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    assign, d2 = _nearest(pts, centers)
    trace.append(float(d2.sum()))
    return KMeansResult(centers, assign, it, trace)
