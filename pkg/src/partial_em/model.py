"""Data containers shared by the EM engine, the policies and the CLI."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gaussian import Covariance, GaussianComponent, cholesky_regularized

ROW_SUM_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12


@dataclass
class Dataset:
    """N x d observations with optional integer ground-truth labels.

    An empty dataset (N == 0) is representable so loaders can report it;
    fitting rejects it.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError(f"points must be an N x d matrix, got shape {pts.shape}")
        if pts.shape[1] < 1:
            raise ValueError("points need at least one column")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite entries")
        self.points = pts
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (pts.shape[0],):
                raise ValueError(
                    f"labels length {labels.shape} does not match N={pts.shape[0]}"
                )
            self.labels = labels.astype(np.int64)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.points[idx], labels)


def as_points(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    pts = np.asarray(data, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


@dataclass
class MixtureModel:
    """Weights (K,), means (K, d) and one factorized Covariance per component."""

    weights: np.ndarray
    means: np.ndarray
    covariances: list[Covariance]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        k = self.weights.shape[0]
        if k < 1:
            raise ValueError("a mixture needs at least one component")
        if self.means.shape[0] != k or len(self.covariances) != k:
            raise ValueError("weights, means and covariances disagree on K")
        if np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(float(np.sum(self.weights)) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"mixture weights sum to {np.sum(self.weights)!r}, not 1")
        d = self.means.shape[1]
        if any(c.dim != d for c in self.covariances):
            raise ValueError("all components must share dimension d")

    @classmethod
    def from_arrays(cls, weights, means, covariances, ridge: float = 0.0, diagonal=False):
        covs = [cholesky_regularized(c, ridge, diagonal) for c in np.asarray(covariances, dtype=float)]
        return cls(weights, means, covs)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means[k], self.covariances[k], float(self.weights[k]))
            for k in range(self.k)
        ]

    def covariance_array(self) -> np.ndarray:
        return np.stack([c.matrix for c in self.covariances])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariance_array().tolist(),
        }


def check_membership(w: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Raise ValueError unless ``w`` is row-stochastic."""
    w = np.asarray(w)
    if w.ndim != 2:
        raise ValueError("membership matrix must be N x K")
    if np.any(w < 0) or np.any(w > 1 + tol):
        raise ValueError("membership entries must lie in [0, 1]")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > tol):
        raise ValueError("membership rows must sum to 1")


def hard_assign(w) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest component index."""
    return np.argmax(np.asarray(w), axis=1)


def write_membership_csv(path, w) -> None:
    w = np.asarray(w, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_id"] + [f"w_{k}" for k in range(w.shape[1])])
        for n, row in enumerate(w):
            writer.writerow([n] + [format(v, ".17g") for v in row])


def read_membership_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "point_id":
        raise ValueError("membership CSV must start with a point_id column")
    return np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(
        len(body), len(header) - 1
    )


@dataclass
class ActiveState:
    """Per-point (current cluster, consecutive-count) bookkeeping.

    ``cluster`` is -1 and ``streak`` is 0 for points never assigned yet.
    """

    cluster: np.ndarray
    streak: np.ndarray
    active: np.ndarray

    @classmethod
    def fresh(cls, n: int) -> "ActiveState":
        return cls(
            np.full(n, -1, dtype=np.int32),
            np.zeros(n, dtype=np.int32),
            np.ones(n, dtype=bool),
        )

    def packed(self) -> np.ndarray:
        """The (cluster, streak) pairs as one byte each, for K, tau <= 255."""
        if np.any(self.cluster > 254) or np.any(self.streak > 255):
            raise OverflowError("cluster index or streak does not fit in one byte")
        out = np.empty((self.cluster.shape[0], 2), dtype=np.uint8)
        out[:, 0] = np.where(self.cluster < 0, 255, self.cluster)
        out[:, 1] = self.streak
        return out


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    ACTIVE_SET_EMPTY = "ActiveSetEmpty"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class RunReport:
    iterations: int
    termination: Termination
    final_model: MixtureModel
    loglik_trace: list[float] = field(default_factory=list)
    f_trace: list[float] = field(default_factory=list)
    density_evals: int = 0
    loglik_density_evals: int = 0
    active_counts: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    reinit_events: list[dict] = field(default_factory=list)
    param_trace: list[dict] = field(default_factory=list)
    active_sets: list[np.ndarray] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "iterations": self.iterations,
            "termination": self.termination.value,
            "loglik_trace": list(map(float, self.loglik_trace)),
            "f_trace": list(map(float, self.f_trace)),
            "active_counts": list(map(int, self.active_counts)),
            "density_evals": int(self.density_evals),
            "loglik_density_evals": int(self.loglik_density_evals),
            "wall_time_secs": float(self.wall_time),
            "seed": int(self.seed),
            "model": self.final_model.to_dict(),
            "config_echo": self.config_echo,
            "reinit_events": self.reinit_events,
        }
        if self.metrics:
            out["metrics"] = self.metrics
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)
