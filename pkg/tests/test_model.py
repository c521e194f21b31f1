import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from partial_em.model import (
    ActiveState,
    Dataset,
    MixtureModel,
    RunReport,
    Termination,
    check_membership,
    hard_assign,
    read_membership_csv,
    write_membership_csv,
)


def test_hard_assign_basic():
    assert hard_assign([[0.2, 0.8]]).tolist() == [1]


def test_hard_assign_tie_goes_to_lowest_index():
    assert hard_assign([[0.5, 0.5]]).tolist() == [0]
    assert hard_assign([[0.25, 0.25, 0.25, 0.25]]).tolist() == [0]


def test_hard_assign_matches_row_scan():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(4), size=200)
    w[::7, 2] = w[::7, 1]  # plant some ties
    expected = []
    for row in w:
        best = 0
        for k in range(1, len(row)):
            if row[k] > row[best]:
                best = k
        expected.append(best)
    assert hard_assign(w).tolist() == expected


@settings(max_examples=50)
@given(
    arrays(np.float64, (6, 3), elements=st.floats(0.01, 1.0)),
    arrays(np.float64, (6,), elements=st.floats(0.1, 100.0)),
)
def test_hard_assign_scale_invariant(rows, scales):
    assert np.array_equal(hard_assign(rows), hard_assign(rows * scales[:, None]))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), labels=[1, 2])
    d = Dataset([1.0, 2.0, 3.0])
    assert (d.n, d.d) == (3, 1)


def test_mixture_model_requires_simplex_weights():
    with pytest.raises(ValueError):
        MixtureModel.from_arrays([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    m = MixtureModel.from_arrays([0.3, 0.7], [[0.0], [1.0]], [[[1.0]], [[2.0]]])
    assert m.k == 2 and m.d == 1


def test_check_membership():
    check_membership(np.array([[0.3, 0.7], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        check_membership(np.array([[0.3, 0.6]]))


def test_membership_csv_roundtrip(tmp_path):
    w = np.random.default_rng(1).dirichlet(np.ones(3), size=10)
    path = tmp_path / "w.csv"
    write_membership_csv(path, w)
    header = path.read_text().splitlines()[0]
    assert header == "point_id,w_0,w_1,w_2"
    np.testing.assert_array_equal(read_membership_csv(path), w)


def test_active_state_packs_into_two_bytes_per_point():
    n = 1000
    state = ActiveState.fresh(n)
    assert np.all(state.streak == 0)
    state.cluster[:] = 254
    state.streak[:] = 255
    packed = state.packed()
    assert packed.dtype == np.uint8 and packed.nbytes == 2 * n
    state.streak[0] = 256
    with pytest.raises(OverflowError):
        state.packed()


def test_report_json_keys():
    m = MixtureModel.from_arrays([1.0], [[0.0]], [[[1.0]]])
    r = RunReport(3, Termination.CONVERGED, m, loglik_trace=[-1.0, -0.9, -0.9])
    d = r.to_dict()
    for key in ("iterations", "termination", "loglik_trace", "f_trace", "active_counts",
                "density_evals", "wall_time_secs", "model", "config_echo"):
        assert key in d
    assert d["termination"] == "Converged"
    assert set(d["model"]) == {"weights", "means", "covariances"}
