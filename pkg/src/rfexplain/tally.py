"""Signed tallies of forest partition crossings along straight segments.

Every internal tree node contributes an axis-aligned partition: the
hyperplane x[feature] = threshold restricted to the node's cell (the box
carved out by its ancestors). Walking the straight segment from a
counterfactual point to an instance, each partition pierced by the
segment adds +1 to its feature when the feature increases along the walk
at that crossing and -1 when it decreases. Summed over all nodes of all
trees, the result is a per-feature signed integer attribution.

Region-restricted mode (the default) counts a crossing only where the
partition actually exists, i.e. the segment point at the crossing lies
inside the node's cell; global mode counts every threshold lying
strictly between the endpoint values, ignoring cells. Points landing
exactly on a threshold do not count (strict betweenness); points landing
exactly on a cell boundary count as inside (closed box).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import LEAF, Forest

REGION_RESTRICTED = "region_restricted"
GLOBAL_THRESHOLDS = "global_thresholds"

DIRECTION_CONVENTION = "counterfactual->instance"


@dataclass
class PartitionTally:
    """Per-encoded-feature signed crossing counts for one walk."""

    counts: np.ndarray  # (d,) int64
    direction_convention: str = DIRECTION_CONVENTION

    @property
    def n_features(self):
        return self.counts.shape[0]


@dataclass
class SplitGeometry:
    """Flattened split planes and ancestor constraints of a forest.

    Node k is internal node k (across all trees) with split
    (node_feature[k], node_threshold[k]); constraint rows r with
    constr_node[r] == k are its ancestors' halfspaces:
    x[constr_feat[r]] <= constr_thresh[r] when constr_left[r] else >=.
    """

    node_feature: np.ndarray
    node_threshold: np.ndarray
    constr_node: np.ndarray
    constr_feat: np.ndarray
    constr_thresh: np.ndarray
    constr_left: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return self.node_feature.shape[0]


def build_geometry(forest: Forest) -> SplitGeometry:
    """Collect every internal node and its ancestor constraints."""
    n_feat, n_thr = [], []
    c_node, c_feat, c_thr, c_left = [], [], [], []
    k = 0
    for tree in forest.trees:
        stack = [(0, [])]  # (node id, ancestor constraints as (feat, thr, is_left))
        while stack:
            node, constraints = stack.pop()
            f = int(tree.feature[node])
            if f == LEAF:
                continue
            thr = float(tree.threshold[node])
            n_feat.append(f)
            n_thr.append(thr)
            for cf, ct, cl in constraints:
                c_node.append(k)
                c_feat.append(cf)
                c_thr.append(ct)
                c_left.append(cl)
            k += 1
            stack.append((int(tree.right[node]), constraints + [(f, thr, False)]))
            stack.append((int(tree.left[node]), constraints + [(f, thr, True)]))
    return SplitGeometry(
        node_feature=np.asarray(n_feat, dtype=np.int64),
        node_threshold=np.asarray(n_thr, dtype=np.float64),
        constr_node=np.asarray(c_node, dtype=np.int64),
        constr_feat=np.asarray(c_feat, dtype=np.int64),
        constr_thresh=np.asarray(c_thr, dtype=np.float64),
        constr_left=np.asarray(c_left, dtype=bool),
        n_features=forest.n_features,
    )


def tally_segment(forest: Forest, from_point, to_point, mode=REGION_RESTRICTED,
                  geometry: SplitGeometry | None = None) -> PartitionTally:
    """Signed crossing counts along the straight segment from -> to.

    The sign convention follows the walk direction: +1 when the feature
    value increases through the crossing (to[f] > from[f]), -1 when it
    decreases. Pass ``from=counterfactual, to=instance`` to get tallies
    in the library-wide reporting convention. Reversing the endpoints
    negates every count. ``geometry`` may be precomputed once per forest
    and reused across many segments.
    """
    if mode not in (REGION_RESTRICTED, GLOBAL_THRESHOLDS):
        raise ValueError(f"unknown tally mode {mode!r}")
    a = np.asarray(from_point, dtype=np.float64)
    b = np.asarray(to_point, dtype=np.float64)
    if a.shape != (forest.n_features,) or b.shape != (forest.n_features,):
        raise ValueError(f"segment endpoints must have {forest.n_features} features")
    geo = geometry if geometry is not None else build_geometry(forest)

    counts = np.zeros(geo.n_features, dtype=np.int64)
    if geo.n_nodes == 0:
        return PartitionTally(counts=counts)

    delta = b - a
    af = a[geo.node_feature]
    df = delta[geo.node_feature]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (geo.node_threshold - af) / df
    crossed = (df != 0.0) & (s > 0.0) & (s < 1.0)

    if mode == REGION_RESTRICTED and geo.constr_node.size:
        active = crossed[geo.constr_node]
        r_node = geo.constr_node[active]
        r_feat = geo.constr_feat[active]
        p = a[r_feat] + s[r_node] * delta[r_feat]
        ok = np.where(geo.constr_left[active], p <= geo.constr_thresh[active],
                      p >= geo.constr_thresh[active])
        violations = np.zeros(geo.n_nodes, dtype=np.int64)
        np.add.at(violations, r_node[~ok], 1)
        crossed &= violations == 0

    sign = np.where(df > 0, 1, -1)
    np.add.at(counts, geo.node_feature[crossed], sign[crossed])
    return PartitionTally(counts=counts)


def tally_trajectory(forest: Forest, trajectory_points, mode=REGION_RESTRICTED,
                     geometry: SplitGeometry | None = None) -> PartitionTally:
    """Tallies integrated along a multi-step path.

    ``trajectory_points`` are in walk order, instance first and the final
    counterfactual last. Segments are accumulated from the trajectory end
    back to the start, so the summed tally reads in the standard
    counterfactual -> instance direction.
    """
    pts = np.asarray(trajectory_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("a trajectory tally needs at least 2 points")
    geo = geometry if geometry is not None else build_geometry(forest)
    total = np.zeros(geo.n_features, dtype=np.int64)
    for k in range(pts.shape[0] - 1):
        total += tally_segment(forest, pts[k + 1], pts[k], mode=mode, geometry=geo).counts
    return PartitionTally(counts=total)


def null_and_mean_tallies(forest: Forest, instance, train, mode=REGION_RESTRICTED,
                          geometry: SplitGeometry | None = None):
    """Tallies of the instance against an all-zero input and against the
    training-set feature mean (both walked toward the instance)."""
    geo = geometry if geometry is not None else build_geometry(forest)
    x = np.asarray(instance, dtype=np.float64)
    zero = np.zeros_like(x)
    mean = np.asarray(train.X if hasattr(train, "X") else train, dtype=np.float64).mean(axis=0)
    null_tally = tally_segment(forest, zero, x, mode=mode, geometry=geo)
    mean_tally = tally_segment(forest, mean, x, mode=mode, geometry=geo)
    return null_tally, mean_tally


def sparsity(attribution, epsilon):
    """Fraction of components whose magnitude is at most epsilon."""
    v = np.asarray(attribution, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty attribution vector")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return float((np.abs(v) <= epsilon).mean())


TALLY_EPSILON = 1e-12  # tallies are integers; this is an exact-zero test


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def tally_records(tally: PartitionTally, feature_names):
    """(feature name, signed count) sorted by |count| descending, ties by
    feature index ascending."""
    counts = tally.counts
    order = np.argsort(-np.abs(counts), kind="stable")
    return [(feature_names[i], int(counts[i])) for i in order]


def write_tally_text(path, tally: PartitionTally, feature_names, delimiter=","):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"feature{delimiter}count\n")
        for name, count in tally_records(tally, feature_names):
            fh.write(f"{name}{delimiter}{count}\n")
    return path


def write_tally_grid(path, tally: PartitionTally, rows, cols):
    """Image-shaped tally as a plain-text signed integer grid."""
    if rows * cols != tally.n_features:
        raise ValueError(f"{rows}x{cols} grid cannot hold {tally.n_features} counts")
    grid = tally.counts.reshape(rows, cols)
    with open(path, "w", encoding="utf-8") as fh:
        for r in range(rows):
            fh.write(" ".join(str(int(v)) for v in grid[r]) + "\n")
    return path
