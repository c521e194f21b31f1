"""E-step, M-step, likelihood/F evaluators and the (partial) EM fitting loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gaussian import cholesky_regularized, log_density, log_sum_exp
from .model import (
    ActiveState,
    Dataset,
    MixtureModel,
    RunReport,
    Termination,
    as_points,
    hard_assign,
)
from .policies import ActiveSetPolicy, FullPolicy

log = logging.getLogger(__name__)

DEFAULT_RIDGE_FRACTION = 1e-6
CHUNK_SIZE = 1024
_EMPTY_EPS_FACTOR = 10.0


class InitFailure(ValueError):
    pass


class EmptyComponent(RuntimeError):
    pass


@dataclass
class FitConfig:
    tol: float = 1e-6
    max_iter: int = 500
    # None -> 1e-6 * trace(global covariance) / d
    ridge: Optional[float] = None
    seed: int = 0
    init: str = "kmeans++"
    covariance: str = "full"
    threads: int = 1
    record_f: bool = False
    record_models: bool = False
    record_active_sets: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.init not in ("kmeans++", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.covariance not in ("full", "diag"):
            raise ValueError(f"unknown covariance type {self.covariance!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def resolve_ridge(self, points: np.ndarray) -> float:
        if self.ridge is not None:
            return float(self.ridge)
        return DEFAULT_RIDGE_FRACTION * _mean_variance(points)


class EvalCounter:
    """Counts Gaussian density evaluations, E-step and likelihood separately."""

    def __init__(self):
        self.estep = 0
        self.loglik = 0


def _mean_variance(points: np.ndarray) -> float:
    v = float(np.mean(np.var(points, axis=0))) if points.shape[0] > 1 else 0.0
    return v if v > 0 else 1.0


def _chunks(n: int, size: int = CHUNK_SIZE):
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def _map_chunks(fn, slices, threads: int):
    # chunk boundaries never depend on the worker count, so results are bit-identical
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


def log_joint(points, model: MixtureModel) -> np.ndarray:
    """(n, K) matrix of log pi_k + log N(x_n | mu_k, Sigma_k)."""
    pts = as_points(points)
    out = np.empty((pts.shape[0], model.k))
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    for k, comp in enumerate(model.components):
        out[:, k] = log_w[k] + log_density(pts, comp)
    return out


def e_step(data, model: MixtureModel, subset=None, w=None, counter=None, threads: int = 1):
    """Refresh the membership rows of ``subset`` (all points when None).

    Returns a new N x K matrix: rows in ``subset`` hold the posterior under
    ``model``, every other row is copied unchanged from ``w`` (zeros when
    ``w`` is None).
    """
    pts = as_points(data)
    n = pts.shape[0]
    idx = np.arange(n) if subset is None else np.asarray(subset, dtype=np.intp)
    out = np.zeros((n, model.k)) if w is None else np.array(w, dtype=float, copy=True)
    sub = pts[idx]

    def work(sl):
        lj = log_joint(sub[sl], model)
        return np.exp(lj - log_sum_exp(lj, axis=1)[:, None])

    rows = _map_chunks(work, _chunks(idx.shape[0]), threads)
    if rows:
        out[idx] = np.concatenate(rows)
    if counter is not None:
        counter.estep += idx.shape[0] * model.k
    return out


def observed_loglik(data, model: MixtureModel, counter=None, threads: int = 1) -> float:
    """sum_n log sum_k pi_k N(x_n | mu_k, Sigma_k)."""
    pts = as_points(data)
    per_point = _map_chunks(
        lambda sl: log_sum_exp(log_joint(pts[sl], model), axis=1),
        _chunks(pts.shape[0]),
        threads,
    )
    if counter is not None:
        counter.loglik += pts.shape[0] * model.k
    return float(np.sum(np.concatenate(per_point)))


def f_function(data, model: MixtureModel, q) -> float:
    """Jensen lower bound sum_n (E_q[log p(x_n, z_n)] + H(q_n)), with 0 log 0 = 0."""
    q = np.asarray(q, dtype=float)
    lj = log_joint(data, model)
    pos = q > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, q * (lj - np.log(np.where(pos, q, 1.0))), 0.0)
    return float(np.sum(terms))


def converged(prev_loglik: float, cur_loglik: float, n: int, tol: float) -> bool:
    return abs(cur_loglik - prev_loglik) / n < tol


def m_step(
    data,
    w,
    ridge: float,
    *,
    diagonal: bool = False,
    threads: int = 1,
    on_empty: str = "reinit",
    events: Optional[list] = None,
) -> MixtureModel:
    """Closed-form weights, means and covariances from the full membership matrix.

    Sums are accumulated over fixed-size chunks and reduced in chunk order.
    A component whose total responsibility is below ``10 * eps * N`` is
    reinitialized at the point with the lowest maximum responsibility (or
    ``EmptyComponent`` is raised when ``on_empty == "raise"``).
    """
    pts = as_points(data)
    w = np.asarray(w, dtype=float)
    n, d = pts.shape
    k_count = w.shape[1]
    slices = _chunks(n)

    parts = _map_chunks(lambda sl: (w[sl].sum(axis=0), w[sl].T @ pts[sl]), slices, threads)
    nk = np.zeros(k_count)
    s1 = np.zeros((k_count, d))
    for a, b in parts:
        nk += a
        s1 += b

    empty = nk < _EMPTY_EPS_FACTOR * np.finfo(float).eps * n
    if np.any(empty) and on_empty == "raise":
        raise EmptyComponent(f"components {np.flatnonzero(empty).tolist()} lost all mass")
    means = s1 / np.where(empty, 1.0, nk)[:, None]

    def scatter(sl):
        out = np.empty((k_count, d, d))
        for k in range(k_count):
            diff = pts[sl] - means[k]
            out[k] = (w[sl, k, None] * diff).T @ diff
        return out

    s2 = np.zeros((k_count, d, d))
    for part in _map_chunks(scatter, slices, threads):
        s2 += part

    weights = nk / n
    covs = []
    global_diag = np.diag(np.var(pts, axis=0)) if np.any(empty) else None
    taken = set()
    for k in range(k_count):
        if empty[k]:
            order = np.argsort(w.max(axis=1), kind="stable")
            pick = next(int(i) for i in order if int(i) not in taken)
            taken.add(pick)
            means[k] = pts[pick]
            weights[k] = 1.0 / k_count
            cov = global_diag
            log.warning("component %d emptied; reinitialized at point %d", k, pick)
            if events is not None:
                events.append({"component": k, "point": pick})
        else:
            cov = s2[k] / nk[k]
            cov = 0.5 * (cov + cov.T)
        covs.append(cholesky_regularized(cov, ridge, diagonal))
    weights = weights / weights.sum()
    return MixtureModel(weights, means, covs)


def _distinct_count(pts: np.ndarray) -> int:
    return np.unique(pts, axis=0).shape[0]


def kmeans_plus_plus(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` seeds chosen by greedy D^2 sampling.

    Each step draws ``2 + floor(ln k)`` candidates proportionally to the
    squared distance to the nearest chosen seed and keeps the one that
    lowers the total squared distance most.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if k > n or k > _distinct_count(pts):
        raise InitFailure(f"cannot find {k} distinct seed points among {n} points")
    trials = 2 + int(np.log(k))
    chosen = [int(rng.integers(n))]
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if not total > 0:
            raise InitFailure("ran out of distinct points during k-means++ seeding")
        best = None
        for cand in rng.choice(n, size=trials, p=d2 / total):
            cand_d2 = np.minimum(d2, np.sum((pts - pts[cand]) ** 2, axis=1))
            potential = cand_d2.sum()
            if best is None or potential < best[0]:
                best = (potential, int(cand), cand_d2)
        chosen.append(best[1])
        d2 = best[2]
    return np.array(chosen, dtype=np.intp)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the algorithm is pinned so seeds mean the same thing everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def initialize(data, k: int, config: FitConfig) -> MixtureModel:
    """Starting mixture: seeded means, global diagonal covariance, uniform weights."""
    pts = as_points(data)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise InitFailure(f"need 1 <= K <= N, got K={k}, N={n}")
    rng = make_rng(config.seed)
    if config.init == "kmeans++":
        idx = kmeans_plus_plus(pts, k, rng)
    else:
        uniq, first = np.unique(pts, axis=0, return_index=True)
        if k > uniq.shape[0]:
            raise InitFailure(f"only {uniq.shape[0]} distinct points for K={k}")
        idx = np.sort(first)[rng.choice(uniq.shape[0], size=k, replace=False)]
    ridge = config.resolve_ridge(pts)
    var = np.var(pts, axis=0) if n > 1 else np.ones(pts.shape[1])
    cov = cholesky_regularized(np.diag(var), ridge, config.covariance == "diag")
    return MixtureModel(np.full(k, 1.0 / k), pts[idx].copy(), [cov] * k)


def fit(
    data,
    k: int,
    policy: Optional[ActiveSetPolicy] = None,
    config: Optional[FitConfig] = None,
    init_model: Optional[MixtureModel] = None,
):
    """Run EM with partial E-steps chosen by ``policy`` (full EM by default).

    Each iteration refreshes the active rows, carries the other rows over,
    runs the M-step on all N rows and tests the change in mean observed
    log-likelihood. The loop stops on convergence, on an empty active set
    or after ``max_iter`` iterations. Returns ``(model, w, report)``.
    """
    policy = policy or FullPolicy()
    config = config or FitConfig()
    dataset = data if isinstance(data, Dataset) else Dataset(data)
    pts = dataset.points
    n = pts.shape[0]
    if n < 1:
        raise ValueError("cannot fit an empty dataset")
    start = time.perf_counter()
    ridge = config.resolve_ridge(pts)
    diagonal = config.covariance == "diag"
    model = init_model if init_model is not None else initialize(pts, k, config)
    if model.k != k:
        raise ValueError(f"initial model has {model.k} components, expected {k}")

    counter = EvalCounter()
    report = RunReport(0, Termination.MAX_ITERATIONS, model, seed=config.seed)
    report.config_echo = {**dataclasses.asdict(config), "ridge": ridge, "k": k, "policy": policy.name}
    if config.record_models:
        report.param_trace.append(model)

    state = ActiveState.fresh(n)
    active = np.arange(n, dtype=np.intp)
    w = None
    prev = observed_loglik(pts, model, counter, config.threads)
    for it in range(1, config.max_iter + 1):
        w = e_step(pts, model, active, w, counter, config.threads)
        report.active_counts.append(int(active.shape[0]))
        if config.record_active_sets:
            report.active_sets.append(active.copy())
        if config.record_f:
            report.f_trace.append(f_function(pts, model, w))

        model = m_step(pts, w, ridge, diagonal=diagonal, threads=config.threads,
                       events=report.reinit_events)
        if config.record_f:
            report.f_trace.append(f_function(pts, model, w))
        if config.record_models:
            report.param_trace.append(model)
        cur = observed_loglik(pts, model, counter, config.threads)
        report.loglik_trace.append(cur / n)
        report.iterations = it

        if converged(prev, cur, n, config.tol):
            report.termination = Termination.CONVERGED
            break
        prev = cur
        active = policy.select(w, hard_assign(w), active, state, it)
        if active.shape[0] == 0:
            report.termination = Termination.ACTIVE_SET_EMPTY
            break

    report.final_model = model
    report.density_evals = counter.estep
    report.loglik_density_evals = counter.loglik
    report.wall_time = time.perf_counter() - start
    return model, w, report
