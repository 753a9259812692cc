import numpy as np
import pytest
from helpers import build_forest, build_tree, leaf_node, numeric_dataset, single_leaf_forest, split_node

from rfexplain import counterfactual as C
from rfexplain import forest as F
from rfexplain.errors import EmptyReferenceError, NoCounterfactualError


class PrecomputedBackend:
    """Distance backend over an explicit matrix plus per-point row function."""

    name = "precomputed"

    def __init__(self, matrix, point_row=None):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.point_row = point_row

    def row_for_index(self, i):
        return self.matrix[int(i)]

    def row_for_point(self, x):
        return self.point_row(x)


@pytest.fixture(scope="module")
def chain():
    """1-D chain x = 0, 1, 2 with utilities 0.1 < 0.2 < 0.3 for class 'b'.

    One depth-2 tree: leaves at x<=0.5 (counts 9:1), 0.5<x<=1.5 (8:2),
    x>1.5 (7:3).
    """
    tree = build_tree([
        split_node(0, 0.5, 1, 2),
        leaf_node([9, 1]),
        split_node(0, 1.5, 3, 4), leaf_node([8, 2]), leaf_node([7, 3]),
    ], 2)
    fr = build_forest([tree], np.ones((1, 3)), ("a", "b"), n_features=1)
    ds = numeric_dataset([[0.0], [1.0], [2.0]], [0, 0, 1], class_names=("a", "b"))
    return fr, ds


@pytest.fixture(scope="module")
def chain_with_flip():
    """Like ``chain`` but the last point is predicted 'b' (leaf 2:8)."""
    tree = build_tree([
        split_node(0, 0.5, 1, 2),
        leaf_node([9, 1]),
        split_node(0, 1.5, 3, 4), leaf_node([8, 2]), leaf_node([2, 8]),
    ], 2)
    fr = build_forest([tree], np.ones((1, 3)), ("a", "b"), n_features=1)
    ds = numeric_dataset([[0.0], [1.0], [2.0]], [0, 0, 1], class_names=("a", "b"))
    return fr, ds


# ---------------------------------------------------------------------------
# utility evaluation
# ---------------------------------------------------------------------------

def test_utility_spec_validation():
    with pytest.raises(ValueError):
        C.UtilitySpec(kind="nope")
    with pytest.raises(ValueError):
        C.UtilitySpec(kind=C.CLASS_PROBABILITY)  # needs a target
    with pytest.raises(ValueError):
        C.UtilitySpec(kind=C.CLASS_FLIP, delta=-1.0)


def test_utility_single_leaf_majority_fraction():
    fr = single_leaf_forest([[3, 1]], ("a", "b"), n_features=1)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=0)
    assert C.utility_eval(fr, [0.0], u) == 0.75


def test_utility_uniform_leaf_is_half():
    fr = single_leaf_forest([[2, 2]], ("a", "b"), n_features=1)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    assert C.utility_eval(fr, [0.0], u) == 0.5


def test_utility_matches_predict_proba_component(toy_forest, toy_numeric):
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    for i in (0, 5, 21):
        x = toy_numeric.X[i]
        assert C.utility_eval(toy_forest, x, u) == pytest.approx(
            F.predict_proba(toy_forest, x)[1], abs=1e-15)


def test_utility_unknown_class_rejected(toy_forest):
    with pytest.raises(ValueError):
        C.utility_eval(toy_forest, np.zeros(5), C.UtilitySpec(C.CLASS_PROBABILITY, target_class=7))


# ---------------------------------------------------------------------------
# counterfactual search
# ---------------------------------------------------------------------------

def test_single_opposite_class_point_wins_regardless_of_distance(chain_with_flip):
    fr, ds = chain_with_flip
    # index 2 is the only flipped point; its distance entry is deliberately huge
    matrix = np.array([[0.0, 1.0, 999.0], [1.0, 0.0, 1.0], [999.0, 1.0, 0.0]])
    backend = PrecomputedBackend(matrix)
    u = C.UtilitySpec(kind=C.CLASS_FLIP)
    res = C.find_counterfactual(fr, ds.X[0], ds, backend, u, instance_index=0)
    assert res.counterfactual_index == 2
    assert res.distance == 999.0


def test_delta_above_max_gain_raises(chain):
    fr, ds = chain
    backend = C.EuclideanBackend(ds.X)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1, delta=0.5)
    with pytest.raises(NoCounterfactualError):
        C.find_counterfactual(fr, ds.X[0], ds, backend, u, instance_index=0)


def test_empty_reference_distinct_error(chain):
    fr, ds = chain
    empty = ds.subset(np.array([], dtype=int))
    backend = C.EuclideanBackend(np.zeros((0, 1)))
    with pytest.raises(EmptyReferenceError):
        C.find_counterfactual(fr, ds.X[0], empty, backend,
                              C.UtilitySpec(kind=C.CLASS_FLIP))


def test_class_flip_counterfactual_gains_probability(credit_forest, credit_split):
    _, train, test = credit_split
    backend = C.EuclideanBackend(train.X)
    u = C.UtilitySpec(kind=C.CLASS_FLIP)
    res = C.find_counterfactual(credit_forest, test.X[0], train, backend, u)
    # two-class flip means the counterfactual crosses the probability midpoint
    assert res.utility_gain > 0


def test_delta_zero_equals_first_trajectory_step(credit_forest, credit_split):
    _, train, test = credit_split
    backend = C.EuclideanBackend(train.X)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1, delta=0.0)
    for i in (0, 3, 11):
        res = C.find_counterfactual(credit_forest, test.X[i], train, backend, u)
        _, traj = C.trajectory_from_point(credit_forest, test.X[i], train, backend, u)
        assert res.counterfactual_index == traj.indices[0]


def test_argmin_invariant_under_monotone_rescaling(credit_forest, credit_split):
    _, train, test = credit_split
    base = C.EuclideanBackend(train.X)

    class Rescaled:
        name = "rescaled"

        def row_for_point(self, x):
            d = base.row_for_point(x)
            return 3.0 * d + np.arcsinh(d)

        def row_for_index(self, i):
            return self.row_for_point(train.X[i])

    u = C.UtilitySpec(kind=C.CLASS_FLIP)
    for i in (0, 5, 9):
        a = C.find_counterfactual(credit_forest, test.X[i], train, base, u)
        b = C.find_counterfactual(credit_forest, test.X[i], train, Rescaled(), u)
        assert a.counterfactual_index == b.counterfactual_index


def test_infinite_distances_never_beat_finite(chain):
    fr, ds = chain
    matrix = np.array([[0.0, np.inf, 5.0], [np.inf, 0.0, 1.0], [5.0, 1.0, 0.0]])
    backend = PrecomputedBackend(matrix)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1, delta=0.0)
    res = C.find_counterfactual(fr, ds.X[0], ds, backend, u, instance_index=0)
    assert res.counterfactual_index == 2  # index 1 is closer by rank but infinitely far


def test_all_infinite_candidates_fall_back_to_lowest_index(chain):
    fr, ds = chain
    matrix = np.full((3, 3), np.inf)
    np.fill_diagonal(matrix, 0.0)
    backend = PrecomputedBackend(matrix)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1, delta=0.0)
    res = C.find_counterfactual(fr, ds.X[0], ds, backend, u, instance_index=0)
    assert res.counterfactual_index == 1
    assert np.isinf(res.distance)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def test_trajectory_at_global_maximum_is_singleton(chain):
    fr, ds = chain
    backend = C.EuclideanBackend(ds.X)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    traj = C.trajectory(fr, 2, ds, backend, u)
    assert list(traj.indices) == [2]


def test_chain_visits_every_index_in_order(chain):
    fr, ds = chain
    backend = C.EuclideanBackend(ds.X)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    traj = C.trajectory(fr, 0, ds, backend, u)
    assert list(traj.indices) == [0, 1, 2]
    assert np.allclose(traj.utilities, [0.1, 0.2, 0.3])


def test_trajectory_start_out_of_range(chain):
    fr, ds = chain
    backend = C.EuclideanBackend(ds.X)
    with pytest.raises(ValueError):
        C.trajectory(fr, 9, ds, backend, C.UtilitySpec(kind=C.CLASS_FLIP))


def test_trajectory_class_flip_stop(credit_forest, credit_split):
    _, train, _ = credit_split
    backend = C.EuclideanBackend(train.X)
    u = C.UtilitySpec(kind=C.CLASS_FLIP)
    pred = np.argmax(F.predict_proba(credit_forest, train.X), axis=1)
    start = int(np.nonzero(pred == 0)[0][0])
    traj = C.trajectory(credit_forest, start, train, backend, u, stop=C.STOP_CLASS_FLIP)
    assert (pred[traj.indices[:-1]] == 0).all()
    assert pred[traj.indices[-1]] == 1


def test_trajectory_properties_random(toy_numeric, toy_forest):
    rng = np.random.default_rng(17)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    for _ in range(25):
        n = toy_numeric.n
        matrix = rng.uniform(0.1, 5.0, size=(n, n))
        matrix = 0.5 * (matrix + matrix.T)
        matrix[rng.random((n, n)) < 0.05] = np.inf
        np.fill_diagonal(matrix, 0.0)
        backend = PrecomputedBackend(matrix)
        start = int(rng.integers(0, n))
        traj = C.trajectory(toy_forest, start, toy_numeric, backend, u)
        assert (np.diff(traj.utilities) > 0).all()
        assert len(set(traj.indices)) == len(traj.indices)
        assert len(traj) <= n


def test_trajectory_from_point_prepends_strictly_lower_start(credit_forest, credit_split):
    _, train, test = credit_split
    backend = C.EuclideanBackend(train.X)
    u = C.UtilitySpec(kind=C.CLASS_FLIP)
    u0, traj = C.trajectory_from_point(credit_forest, test.X[2], train, backend, u,
                                       stop=C.STOP_CONVERGENCE)
    assert len(traj) > 0
    assert traj.utilities[0] > u0
    assert (np.diff(traj.utilities) > 0).all()


def test_trajectory_from_point_empty_at_maximum(chain):
    fr, ds = chain
    backend = C.EuclideanBackend(ds.X)
    u = C.UtilitySpec(kind=C.CLASS_PROBABILITY, target_class=1)
    u0, traj = C.trajectory_from_point(fr, np.array([2.0]), ds, backend, u)
    assert u0 == 0.3 and len(traj) == 0
