"""Active-set policies deciding which points get a fresh E-step next iteration.

Each policy looks at the state after an E-step (membership rows, hard
assignments, per-point counters, the iteration index) and returns the
sorted array of point indices to refresh in the following iteration.
Points not returned keep their stale membership rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ActiveState


@dataclass(frozen=True)
class TauConfig:
    tau: int

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau!r}")


@dataclass(frozen=True)
class LazyConfig:
    threshold: float = 0.9
    full_every: int = 5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"lazy threshold must lie in (0, 1), got {self.threshold!r}")
        if int(self.full_every) != self.full_every or self.full_every < 1:
            raise ValueError(f"full_every must be a positive integer, got {self.full_every!r}")


@dataclass(frozen=True)
class StarConfig:
    # None keeps exactly the leaves of each heap
    tail_fraction: Optional[float] = None

    def __post_init__(self):
        f = self.tail_fraction
        if f is not None and not 0.0 < f <= 1.0:
            raise ValueError(f"tail_fraction must lie in (0, 1], got {f!r}")


def full_update(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.intp)


def tau_update(state: ActiveState, assignments, subset, tau: int):
    """Advance the consecutive-assignment counters of ``subset``.

    A point's streak grows by one when its hard assignment is unchanged
    and resets to 1 otherwise. Points whose streak has reached ``tau`` drop
    out; points outside ``subset`` are left alone. ``state`` is updated in
    place and returned with the next active set.
    """
    subset = np.asarray(subset, dtype=np.intp)
    new_c = np.asarray(assignments)[subset]
    same = state.cluster[subset] == new_c
    state.streak[subset] = np.where(same, state.streak[subset] + 1, 1)
    state.cluster[subset] = new_c
    nxt = subset[state.streak[subset] < tau]
    state.active[:] = False
    state.active[nxt] = True
    return state, nxt


def lazy_update(w, iteration: int, cfg: LazyConfig) -> np.ndarray:
    """Active set after ``iteration`` (1-based) for the lazy policy.

    Every ``full_every``-th iteration revisits the whole dataset; otherwise
    only points whose largest membership exceeds the threshold are kept.
    The largest membership is taken from the current, possibly stale rows.
    """
    w = np.asarray(w)
    if (iteration + 1) % cfg.full_every == 0:
        return full_update(w.shape[0])
    return np.flatnonzero(w.max(axis=1) > cfg.threshold)


def _before(wa, ia, wb, ib) -> bool:
    """Heap order: larger weight first, lower point index on ties."""
    return wa > wb or (wa == wb and ia < ib)


def build_max_heap(weights, indices, counter=None):
    """Array-backed binary max-heap built bottom-up by sift-down.

    Returns ``(weights, indices)`` rearranged into heap order. ``counter``
    (a one-element list) accumulates the number of key comparisons.
    """
    wts = [float(v) for v in weights]
    idx = [int(v) for v in indices]
    s = len(wts)
    comparisons = 0
    for root in range(s // 2 - 1, -1, -1):
        pos = root
        while True:
            child = 2 * pos + 1
            if child >= s:
                break
            right = child + 1
            if right < s:
                comparisons += 1
                if _before(wts[right], idx[right], wts[child], idx[child]):
                    child = right
            comparisons += 1
            if not _before(wts[child], idx[child], wts[pos], idx[pos]):
                break
            wts[pos], wts[child] = wts[child], wts[pos]
            idx[pos], idx[child] = idx[child], idx[pos]
            pos = child
    if counter is not None:
        counter[0] += comparisons
    return wts, idx


def heap_tail(weights, indices, tail_fraction=None, counter=None) -> np.ndarray:
    """Indices sitting in the tail of a max-heap of ``weights``.

    The tail is the leaf positions ``s // 2 .. s - 1`` of a heap of size
    ``s``, or the last ``ceil(tail_fraction * s)`` positions when a
    fraction is given (0.5 reproduces the leaves).
    """
    _, heap_idx = build_max_heap(weights, indices, counter)
    s = len(heap_idx)
    if s == 0:
        return np.empty(0, dtype=np.intp)
    start = s // 2 if tail_fraction is None else s - math.ceil(tail_fraction * s)
    return np.array(heap_idx[start:], dtype=np.intp)


def star_update(w, assignments, subset, cfg: StarConfig, counter=None) -> np.ndarray:
    """Union over clusters of the heap tails of active members."""
    w = np.asarray(w)
    subset = np.asarray(subset, dtype=np.intp)
    assign = np.asarray(assignments)[subset]
    tails = []
    for k in range(w.shape[1]):
        members = subset[assign == k]
        if members.size:
            tails.append(heap_tail(w[members, k], members, cfg.tail_fraction, counter))
    if not tails:
        return np.empty(0, dtype=np.intp)
    return np.sort(np.concatenate(tails))


class ActiveSetPolicy:
    """Base class: ``select`` returns the active set for the next iteration."""

    name = "policy"
    # True when the active set can only shrink
    nested = False

    def __init__(self):
        self.touches = 0

    def select(self, w, assignments, subset, state: ActiveState, iteration: int) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return self.name


class FullPolicy(ActiveSetPolicy):
    name = "EM-Traditional"

    def select(self, w, assignments, subset, state, iteration):
        self.touches = w.shape[0]
        return full_update(w.shape[0])


class TauPolicy(ActiveSetPolicy):
    nested = True

    def __init__(self, tau: int):
        super().__init__()
        self.config = TauConfig(tau)
        self.name = f"EM-Tau({tau})"

    def select(self, w, assignments, subset, state, iteration):
        self.touches = len(subset)
        _, nxt = tau_update(state, assignments, subset, self.config.tau)
        return nxt


class LazyPolicy(ActiveSetPolicy):
    def __init__(self, threshold: float = 0.9, full_every: int = 5):
        super().__init__()
        self.config = LazyConfig(threshold, full_every)
        self.name = f"EM-Lazy({threshold:g},{full_every})"

    def select(self, w, assignments, subset, state, iteration):
        self.touches = w.shape[0]
        return lazy_update(w, iteration, self.config)


class StarPolicy(ActiveSetPolicy):
    nested = True

    def __init__(self, tail_fraction: Optional[float] = None):
        super().__init__()
        self.config = StarConfig(tail_fraction)
        self.name = "EM*" if tail_fraction is None else f"EM*({tail_fraction:g})"

    def select(self, w, assignments, subset, state, iteration):
        counter = [0]
        nxt = star_update(w, assignments, subset, self.config, counter)
        self.touches = len(subset) + counter[0]
        return nxt


def make_policy(spec: str) -> ActiveSetPolicy:
    """Build a policy from ``full``, ``tau:N``, ``lazy[:T[:every]]`` or ``star[:frac]``."""
    name, *args = spec.strip().lower().split(":")
    try:
        if name == "full" and not args:
            return FullPolicy()
        if name == "tau" and len(args) == 1:
            return TauPolicy(int(args[0]))
        if name == "lazy" and len(args) <= 2:
            threshold = float(args[0]) if args else 0.9
            every = int(args[1]) if len(args) > 1 else 5
            return LazyPolicy(threshold, every)
        if name == "star" and len(args) <= 1:
            return StarPolicy(float(args[0]) if args else None)
    except ValueError as exc:
        raise ValueError(f"bad policy {spec!r}: {exc}") from None
    raise ValueError(f"unknown policy spec {spec!r}")
