import numpy as np
import pytest
from helpers import (build_forest, build_tree, leaf_node, numeric_dataset,
                     oracle_global_tally, oracle_segment_tally, split_node)

from rfexplain import forest as F
from rfexplain import tally as T


@pytest.fixture(scope="module")
def stump_forest():
    t = build_tree([split_node(0, 0.5, 1, 2), leaf_node([1, 0]), leaf_node([0, 1])], 2)
    return build_forest([t], np.ones((1, 2)), ("a", "b"), n_features=3)


@pytest.fixture(scope="module")
def random_forest_small():
    rng = np.random.default_rng(23)
    X = rng.normal(0, 1, size=(150, 6)).round(2)
    y = (X[:, 0] + 0.8 * X[:, 1] * X[:, 2] + 0.3 * rng.standard_normal(150) > 0).astype(int)
    ds = numeric_dataset(X, y)
    return F.fit(ds, n_trees=18, max_depth=3, seed=31)


def test_zero_segment_gives_zero_tally(stump_forest):
    x = np.array([0.3, 1.0, -2.0])
    assert (T.tally_segment(stump_forest, x, x).counts == 0).all()


def test_single_stump_crossed_upward(stump_forest):
    got = T.tally_segment(stump_forest, np.array([0.0, 0, 0]), np.array([1.0, 0, 0]))
    assert np.array_equal(got.counts, [1, 0, 0])


def test_endpoint_exchange_negates(random_forest_small):
    rng = np.random.default_rng(5)
    geo = T.build_geometry(random_forest_small)
    for _ in range(10):
        a, b = rng.normal(0, 1.5, 6), rng.normal(0, 1.5, 6)
        fwd = T.tally_segment(random_forest_small, a, b, geometry=geo).counts
        back = T.tally_segment(random_forest_small, b, a, geometry=geo).counts
        assert np.array_equal(fwd, -back)


def test_endpoint_on_threshold_does_not_count(stump_forest):
    # from[0] == threshold exactly: no strict betweenness, no crossing
    got = T.tally_segment(stump_forest, np.array([0.5, 0, 0]), np.array([2.0, 0, 0]))
    assert np.array_equal(got.counts, [0, 0, 0])


def test_region_restriction_blocks_out_of_cell_crossings():
    # f1 <= 0 -> leaf; f1 > 0 -> split on f0 at 0.5. The f0 partition only
    # exists where f1 > 0; a segment crossing f0=0.5 at f1 < 0 must not count.
    t = build_tree([
        split_node(1, 0.0, 1, 2),
        leaf_node([2, 0]),
        split_node(0, 0.5, 3, 4), leaf_node([0, 1]), leaf_node([1, 1]),
    ], 2)
    fr = build_forest([t], np.ones((1, 4)), ("a", "b"), n_features=2)
    a, b = np.array([0.0, -1.0]), np.array([1.0, -1.0])
    region = T.tally_segment(fr, a, b, mode=T.REGION_RESTRICTED).counts
    global_ = T.tally_segment(fr, a, b, mode=T.GLOBAL_THRESHOLDS).counts
    assert np.array_equal(region, [0, 0])
    assert np.array_equal(global_, [1, 0])
    # crossing inside the cell counts in both modes
    a2, b2 = np.array([0.0, 1.0]), np.array([1.0, 1.0])
    assert np.array_equal(T.tally_segment(fr, a2, b2).counts, [1, 0])


def test_region_boundary_point_is_inside():
    # crossing point sits exactly on the cell boundary f1 == 0 (closed box)
    t = build_tree([
        split_node(1, 0.0, 1, 2),
        split_node(0, 0.5, 3, 4), leaf_node([2, 0]),
        leaf_node([0, 1]), leaf_node([1, 1]),
    ], 2)
    fr = build_forest([t], np.ones((1, 4)), ("a", "b"), n_features=2)
    got = T.tally_segment(fr, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert np.array_equal(got.counts, [1, 0])


def test_oracle_equivalence_region_mode(random_forest_small):
    rng = np.random.default_rng(99)
    geo = T.build_geometry(random_forest_small)
    for _ in range(30):
        a = rng.normal(0, 1.3, 6)
        b = rng.normal(0, 1.3, 6)
        got = T.tally_segment(random_forest_small, a, b, geometry=geo).counts
        want = oracle_segment_tally(random_forest_small, a, b)
        assert np.array_equal(got, want)


def test_global_mode_matches_enumeration(random_forest_small):
    rng = np.random.default_rng(100)
    geo = T.build_geometry(random_forest_small)
    for _ in range(20):
        a, b = rng.normal(0, 1.3, 6), rng.normal(0, 1.3, 6)
        got = T.tally_segment(random_forest_small, a, b, mode=T.GLOBAL_THRESHOLDS,
                              geometry=geo).counts
        assert np.array_equal(got, oracle_global_tally(random_forest_small, a, b))


def test_unused_features_have_zero_tally(random_forest_small):
    used = {int(f) for tree in random_forest_small.trees
            for f in tree.feature[tree.feature != F.LEAF]}
    unused = set(range(6)) - used
    rng = np.random.default_rng(3)
    for _ in range(5):
        counts = T.tally_segment(random_forest_small, rng.normal(0, 2, 6),
                                 rng.normal(0, 2, 6)).counts
        for f in unused:
            assert counts[f] == 0


# ---------------------------------------------------------------------------
# trajectories and derived tallies
# ---------------------------------------------------------------------------

def test_two_point_trajectory_equals_segment(random_forest_small):
    rng = np.random.default_rng(7)
    a, b = rng.normal(0, 1, 6), rng.normal(0, 1, 6)
    # trajectory order is instance first; the integrated tally walks back
    traj = T.tally_trajectory(random_forest_small, np.vstack([b, a])).counts
    seg = T.tally_segment(random_forest_small, a, b).counts
    assert np.array_equal(traj, seg)


def test_collinear_points_additive_in_global_mode(random_forest_small):
    rng = np.random.default_rng(8)
    a, b = rng.normal(0, 1, 6), rng.normal(0, 1, 6)
    mid = a + 0.37 * (b - a)
    direct = T.tally_segment(random_forest_small, a, b, mode=T.GLOBAL_THRESHOLDS).counts
    path = T.tally_trajectory(random_forest_small, np.vstack([b, mid, a]),
                              mode=T.GLOBAL_THRESHOLDS).counts
    assert np.array_equal(direct, path)


def test_path_additivity_region_mode(random_forest_small):
    rng = np.random.default_rng(9)
    geo = T.build_geometry(random_forest_small)
    a, b = rng.normal(0, 1, 6), rng.normal(0, 1, 6)
    mid = a + 0.5 * (b - a)
    s1 = T.tally_segment(random_forest_small, mid, a, geometry=geo).counts
    s2 = T.tally_segment(random_forest_small, b, mid, geometry=geo).counts
    path = T.tally_trajectory(random_forest_small, np.vstack([a, mid, b]), geometry=geo).counts
    assert np.array_equal(path, s1 + s2)


def test_trajectory_needs_two_points(random_forest_small):
    with pytest.raises(ValueError):
        T.tally_trajectory(random_forest_small, np.zeros((1, 6)))


def test_null_and_mean_tallies(random_forest_small):
    ds_mean = np.zeros(6)
    train = numeric_dataset(np.vstack([ds_mean + 1, ds_mean - 1]), [0, 1])
    zero_inst = np.zeros(6)
    null_t, mean_t = T.null_and_mean_tallies(random_forest_small, zero_inst, train)
    assert (null_t.counts == 0).all()        # instance equals the null point
    assert (mean_t.counts == 0).all()        # instance equals the train mean


def test_null_tally_hand_enumerated(stump_forest):
    # segment 0 -> (2, 0, 0) crosses the only stump threshold upward once
    null_t, _ = T.null_and_mean_tallies(
        stump_forest, np.array([2.0, 0.0, 0.0]),
        numeric_dataset(np.array([[2.0, 0.0, 0.0]]), [0]))
    assert np.array_equal(null_t.counts, [1, 0, 0])


# ---------------------------------------------------------------------------
# sparsity and exports
# ---------------------------------------------------------------------------

def test_sparsity_all_zero_vector():
    assert T.sparsity(np.zeros(10), 1e-12) == 1.0


def test_sparsity_dense_vector_epsilon_zero():
    assert T.sparsity(np.array([1.0, -2.0, 3.0]), 0.0) == 0.0


def test_sparsity_validates_input():
    with pytest.raises(ValueError):
        T.sparsity(np.array([]), 0.1)
    with pytest.raises(ValueError):
        T.sparsity(np.ones(3), -0.5)


def test_tally_records_sorted_by_magnitude():
    tally = T.PartitionTally(counts=np.array([0, 3, -5, 3]))
    recs = T.tally_records(tally, ("w", "x", "y", "z"))
    assert recs == [("y", -5), ("x", 3), ("z", 3), ("w", 0)]


def test_tally_grid_export(tmp_path):
    tally = T.PartitionTally(counts=np.arange(-2, 2))
    path = T.write_tally_grid(tmp_path / "g.txt", tally, 2, 2)
    assert path.read_text() == "-2 -1\n0 1\n"
    with pytest.raises(ValueError):
        T.write_tally_grid(tmp_path / "bad.txt", tally, 3, 2)
