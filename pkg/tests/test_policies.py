import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partial_em.data_io import EXAMPLE1, sample_mixture
from partial_em.em_engine import FitConfig, e_step, fit
from partial_em.model import ActiveState, hard_assign
from partial_em.policies import (
    FullPolicy,
    LazyConfig,
    LazyPolicy,
    StarConfig,
    StarPolicy,
    TauConfig,
    TauPolicy,
    build_max_heap,
    full_update,
    heap_tail,
    lazy_update,
    make_policy,
    star_update,
    tau_update,
)

from oracles import recursive_heap_leaves


def run_sequence(clusters, tau):
    """Feed one point's cluster sequence through tau_update; returns (streaks, active flags)."""
    state = ActiveState.fresh(1)
    active = np.array([0])
    streaks, flags = [], []
    for c in clusters:
        if active.size == 0:
            break
        state, active = tau_update(state, np.array([c]), active, tau)
        streaks.append(int(state.streak[0]))
        flags.append(bool(active.size))
    return streaks, flags


class TestTau:
    def test_recurrence_without_dropout(self):
        streaks, _ = run_sequence([1, 1, 2, 2, 2], tau=100)
        assert streaks == [1, 2, 1, 2, 3]

    def test_in_run_trace_stops_at_tau(self):
        streaks, flags = run_sequence([1, 1, 2, 2, 2], tau=2)
        assert streaks == [1, 2]
        assert flags == [True, False]

    def test_tau_one_deactivates_after_first_estep(self):
        state = ActiveState.fresh(5)
        _, nxt = tau_update(state, np.array([0, 1, 1, 0, 2]), np.arange(5), 1)
        assert nxt.size == 0
        assert np.all(state.streak == 1)

    def test_points_outside_subset_untouched(self):
        state = ActiveState.fresh(4)
        state.cluster[:] = [0, 1, 0, 1]
        state.streak[:] = [2, 5, 1, 3]
        tau_update(state, np.array([1, 0, 0, 0]), np.array([0, 2]), 10)
        assert state.streak.tolist() == [1, 5, 2, 3]
        assert state.cluster.tolist() == [1, 1, 0, 1]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TauConfig(0)

    @settings(max_examples=60)
    @given(st.lists(st.integers(0, 2), min_size=1, max_size=30), st.integers(1, 8))
    def test_streak_resets_exactly_on_change(self, clusters, tau):
        streaks, flags = run_sequence(clusters, tau)
        for j in range(1, len(streaks)):
            if clusters[j] == clusters[j - 1]:
                assert streaks[j] == streaks[j - 1] + 1
            else:
                assert streaks[j] == 1
        # once inactive, never active again
        assert flags == sorted(flags, reverse=True)

    def test_replay_matches_logged_run(self):
        data = sample_mixture(EXAMPLE1, 100, seed=3)
        tau = 3
        cfg = FitConfig(seed=3, tol=1e-300, record_models=True, record_active_sets=True)
        _, _, r = fit(data, 2, TauPolicy(tau), cfg)
        # scalar replay of the counter recurrence on the logged models
        cluster = [None] * data.n
        streak = [0] * data.n
        active = list(range(data.n))
        replayed = []
        for it in range(r.iterations):
            replayed.append(list(active))
            assign = hard_assign(e_step(data, r.param_trace[it]))
            nxt = []
            for n in active:
                streak[n] = streak[n] + 1 if cluster[n] == assign[n] else 1
                cluster[n] = int(assign[n])
                if streak[n] < tau:
                    nxt.append(n)
            active = nxt
        assert [a.tolist() for a in r.active_sets] == replayed
        assert all(b <= a for a, b in zip(r.active_counts, r.active_counts[1:]))
        assert r.termination.value == "ActiveSetEmpty"


class TestLazy:
    def test_uniform_rows_select_nothing(self):
        w = np.full((10, 2), 0.5)
        assert lazy_update(w, 1, LazyConfig(0.9, 5)).size == 0

    def test_full_every_one_always_full(self):
        w = np.full((7, 2), 0.5)
        for it in range(1, 6):
            assert lazy_update(w, it, LazyConfig(0.9, 1)).tolist() == list(range(7))

    def test_schedule(self):
        w = np.full((4, 2), 0.5)
        cfg = LazyConfig(0.9, 3)
        sizes = [lazy_update(w, it, cfg).size for it in range(1, 8)]
        # next iteration 3 and 6 are full
        assert sizes == [0, 4, 0, 0, 4, 0, 0]

    def test_threshold_filter_matches_brute_force(self):
        rng = np.random.default_rng(0)
        w = rng.dirichlet(np.ones(3) * 0.3, size=300)
        w[0] = [0.9, 0.05, 0.05]  # exactly at the threshold is excluded
        got = lazy_update(w, 1, LazyConfig(0.9, 50))
        expected = [n for n in range(300) if max(w[n]) > 0.9]
        assert got.tolist() == expected

    def test_full_every_one_behaves_like_full_policy(self, example1):
        cfg = FitConfig(seed=0)
        a = fit(example1, 2, FullPolicy(), cfg)[2]
        b = fit(example1, 2, LazyPolicy(0.9, 1), cfg)[2]
        assert a.loglik_trace == b.loglik_trace

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LazyConfig(1.0, 5)
        with pytest.raises(ValueError):
            LazyConfig(0.5, 0)


class TestStar:
    def test_heap_size_one_keeps_its_point(self):
        assert heap_tail([0.7], [4]).tolist() == [4]

    def test_heap_size_three_keeps_two_leaves(self):
        tail = heap_tail([0.2, 0.9, 0.5], [10, 11, 12])
        assert sorted(tail.tolist()) == [10, 12]

    @pytest.mark.parametrize("seed", range(5))
    def test_leaves_match_reference_heap(self, seed):
        rng = np.random.default_rng(seed)
        weights = rng.random(20)
        indices = rng.permutation(100)[:20]
        got = sorted(heap_tail(weights, indices).tolist())
        assert got == recursive_heap_leaves(weights, indices)

    def test_ties_match_reference_heap(self):
        weights = [0.5, 0.5, 0.2, 0.5, 0.2, 0.9, 0.5]
        indices = list(range(7))
        assert sorted(heap_tail(weights, indices).tolist()) == recursive_heap_leaves(weights, indices)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
    def test_built_heap_is_valid(self, weights):
        wts, idx = build_max_heap(weights, range(len(weights)))
        for i in range(1, len(wts)):
            parent = (i - 1) // 2
            assert (wts[parent], -idx[parent]) >= (wts[i], -idx[i])

    def test_tail_fraction(self):
        w = np.linspace(0, 1, 10)
        assert heap_tail(w, range(10), tail_fraction=1.0).size == 10
        assert heap_tail(w, range(10), tail_fraction=0.7).size == 7
        assert sorted(heap_tail(w, range(10), 0.5).tolist()) == sorted(heap_tail(w, range(10)).tolist())

    def test_union_over_clusters_restricted_to_active(self):
        rng = np.random.default_rng(1)
        w = rng.dirichlet(np.ones(2), size=40)
        assign = hard_assign(w)
        subset = np.arange(0, 40, 2)
        nxt = star_update(w, assign, subset, StarConfig())
        assert set(nxt.tolist()) <= set(subset.tolist())
        expected = []
        for k in range(2):
            members = [n for n in subset if assign[n] == k]
            expected += recursive_heap_leaves(w[members, k], members)
        assert nxt.tolist() == sorted(expected)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StarConfig(0.0)
        with pytest.raises(ValueError):
            StarConfig(1.5)


def test_full_update():
    assert full_update(1).tolist() == [0]
    assert full_update(5).tolist() == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("policy", [TauPolicy(4), StarPolicy(), StarPolicy(0.8), LazyPolicy(), FullPolicy()])
def test_policies_touch_each_point_a_constant_number_of_times(policy):
    rng = np.random.default_rng(2)
    n = 5000
    w = rng.dirichlet(np.ones(4), size=n)
    state = ActiveState.fresh(n)
    policy.select(w, hard_assign(w), np.arange(n), state, 1)
    assert policy.touches <= 4 * n


@pytest.mark.parametrize("policy_factory", [lambda: TauPolicy(5), lambda: StarPolicy(), lambda: StarPolicy(0.75)])
def test_nested_policies_shrink(policy_factory, example1):
    cfg = FitConfig(seed=1, record_active_sets=True)
    _, _, r = fit(example1, 2, policy_factory(), cfg)
    for prev, cur in zip(r.active_sets, r.active_sets[1:]):
        assert set(cur.tolist()) <= set(prev.tolist())
    assert all(b <= a for a, b in zip(r.active_counts, r.active_counts[1:]))


def test_lazy_revisits_everything_on_schedule(example1):
    cfg = FitConfig(seed=1, tol=1e-12, record_active_sets=True)
    _, _, r = fit(example1, 2, LazyPolicy(0.9, 4), cfg)
    assert r.iterations >= 8
    for it, active in enumerate(r.active_sets, start=1):
        if it % 4 == 0 or it == 1:
            assert active.tolist() == list(range(example1.n))


@pytest.mark.parametrize(
    "spec,cls,name",
    [("full", FullPolicy, "EM-Traditional"), ("tau:25", TauPolicy, "EM-Tau(25)"),
     ("lazy", LazyPolicy, "EM-Lazy(0.9,5)"), ("lazy:0.8:3", LazyPolicy, "EM-Lazy(0.8,3)"),
     ("star", StarPolicy, "EM*"), ("star:0.6", StarPolicy, "EM*(0.6)")],
)
def test_make_policy(spec, cls, name):
    p = make_policy(spec)
    assert isinstance(p, cls) and p.name == name


@pytest.mark.parametrize("spec", ["tau", "tau:0", "bogus", "full:3", "star:2"])
def test_make_policy_rejects(spec):
    with pytest.raises(ValueError):
        make_policy(spec)
