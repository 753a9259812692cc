"""Model-aware proximities and distances from the forest's bootstrap structure.

The proximity of training instance j to instance i averages, over the
trees where i is out-of-bag, the bootstrap multiplicity of j inside i's
leaf, normalized by the leaf's total in-bag multiplicity:

    p[i, j] = (1/|S_i|) * sum over t in S_i of  c_j(t) * [j in i's leaf] / |M_i(t)|

where S_i is the set of trees with i out-of-bag, c_j(t) the in-bag count
of j in tree t, and |M_i(t)| the total in-bag multiplicity of i's leaf.
Rows are stochastic, asymmetric, and self-proximity is exactly zero.
The symmetric distance is the reciprocal of the averaged proximity,
infinite for pairs with zero proximity both ways.

Full matrices are materialized only at desk scale (``max_dense`` cap);
``ProximityEngine`` serves single rows and out-of-sample rows on demand
so larger reference sets never need an n x n allocation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import NoOutOfBagError
from .forest import Forest, train_leaf_matrix

DEFAULT_DENSE_CAP = 4096


@dataclass
class ProximityMatrix:
    """Row-stochastic proximity values over a reference set.

    ``has_oob[i]`` is False when instance i was in-bag for every tree;
    such rows are all-zero and must not feed distance argmins silently.
    """

    values: np.ndarray
    reference: np.ndarray
    has_oob: np.ndarray

    @property
    def n(self):
        return self.values.shape[0]


@dataclass
class DistanceMatrix:
    """Symmetric nonnegative distances; ``inf`` marks zero-proximity pairs."""

    values: np.ndarray
    metric: str

    @property
    def n(self):
        return self.values.shape[0]


def _ragged_gather(starts, ends):
    """Concatenate ranges [starts[k], ends[k]) into one index vector.

    Returns (positions, owner) where ``owner[r]`` is the range index that
    produced ``positions[r]``. Empty ranges are allowed.
    """
    lengths = ends - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    owner = np.repeat(np.arange(len(starts), dtype=np.int64), lengths)
    pos = np.ones(total, dtype=np.int64)
    first = np.cumsum(lengths)[:-1]
    keep = lengths > 0
    pos[0] = starts[np.argmax(keep)]
    lead = np.nonzero(keep)[0]
    if lead.size > 1:
        pos[first[lead[:-1]]] = starts[lead[1:]] - (ends[lead[:-1]] - 1)
    return np.cumsum(pos), owner


class ProximityEngine:
    """Per-tree leaf bookkeeping enabling proximity rows without n^2 memory.

    Precomputes, for every tree, its training-instance leaf assignment
    and leaf membership index; row queries then reduce to ragged gathers
    over leaf member slices.
    """

    def __init__(self, forest: Forest, train: Dataset):
        self.forest = forest
        self.train = train
        self.n = train.n
        self.counts = forest.records.counts.astype(np.int64)  # (T, n)
        self.leaves = train_leaf_matrix(forest, train)        # (T, n)
        self.s_sizes = (self.counts == 0).sum(axis=0)         # |S_i|

        T = forest.n_trees
        max_nodes = max(tree.n_nodes for tree in forest.trees)
        self.order = np.empty((T, self.n), dtype=np.int64)
        self.starts = np.zeros((T, max_nodes + 1), dtype=np.int64)
        self.leaf_weight = np.empty((T, self.n), dtype=np.float64)  # c_j / |M(leaf_j)| per tree
        for t in range(T):
            lv = self.leaves[t]
            self.order[t] = np.argsort(lv, kind="stable")
            occupancy = np.bincount(lv, minlength=max_nodes)
            self.starts[t, 1:] = np.cumsum(occupancy)
            w_leaf = np.bincount(lv, weights=self.counts[t], minlength=max_nodes)
            self.leaf_weight[t] = self.counts[t] / w_leaf[lv]

    def _accumulate_members(self, tree_ids, leaf_ids, values_per_tree, out, divisor_per_member=None):
        """out[j] += values_per_tree[k] * leaf_weight for members j of each (tree, leaf)."""
        s = self.starts[tree_ids, leaf_ids]
        e = self.starts[tree_ids, leaf_ids + 1]
        pos, owner = _ragged_gather(s, e)
        if pos.size == 0:
            return
        t_rep = tree_ids[owner]
        members = self.order[t_rep, pos]
        vals = values_per_tree[owner] * self.leaf_weight[t_rep, members]
        if divisor_per_member is not None:
            vals = vals / divisor_per_member[members]
        np.add.at(out, members, vals)

    def prox_row(self, i):
        """In-sample proximity row p[i, :] (sums to 1 when S_i is nonempty)."""
        s_i = np.nonzero(self.counts[:, i] == 0)[0]
        if s_i.size == 0:
            raise NoOutOfBagError(f"training instance {i} has no out-of-bag trees")
        row = np.zeros(self.n)
        self._accumulate_members(s_i, self.leaves[s_i, i], np.full(s_i.size, 1.0 / s_i.size), row)
        return row

    def prox_col(self, i):
        """In-sample proximity column p[:, i]; entries for rows without OOB trees are 0."""
        in_bag = np.nonzero(self.counts[:, i] > 0)[0]
        col = np.zeros(self.n)
        if in_bag.size == 0:
            return col
        # contribution of i (weighted by its in-bag count) to the rows of
        # instances that are out-of-bag in these trees and share i's leaf
        leaf_ids = self.leaves[in_bag, i]
        s = self.starts[in_bag, leaf_ids]
        e = self.starts[in_bag, leaf_ids + 1]
        pos, owner = _ragged_gather(s, e)
        if pos.size == 0:
            return col
        t_rep = in_bag[owner]
        members = self.order[t_rep, pos]
        oob_member = self.counts[t_rep, members] == 0
        t_rep, members = t_rep[oob_member], members[oob_member]
        safe_s = np.maximum(self.s_sizes[members], 1)
        vals = self.leaf_weight[t_rep, i] / safe_s
        vals[self.s_sizes[members] == 0] = 0.0
        np.add.at(col, members, vals)
        return col

    def prox_rows_oos(self, queries):
        """Out-of-sample proximity rows: every tree counts (the query is
        out-of-bag everywhere). Accepts one point or a batch."""
        Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if Q.shape[1] != self.forest.n_features:
            raise ValueError(f"expected {self.forest.n_features} features, got {Q.shape[1]}")
        T = self.forest.n_trees
        rows = np.zeros((Q.shape[0], self.n))
        leaf_per_tree = np.empty((T, Q.shape[0]), dtype=np.int64)
        for t, tree in enumerate(self.forest.trees):
            leaf_per_tree[t] = tree.apply(Q)
        all_trees = np.arange(T)
        share = np.full(T, 1.0 / T)
        for q in range(Q.shape[0]):
            self._accumulate_members(all_trees, leaf_per_tree[:, q], share, rows[q])
        return rows if np.asarray(queries).ndim == 2 else rows[0]

    def distance_row_insample(self, i):
        """Symmetric distance from training point i to every training point."""
        sym = 0.5 * (self.prox_row(i) + self.prox_col(i))
        with np.errstate(divide="ignore"):
            d = 1.0 / sym
        d[i] = 0.0
        return d

    def distance_rows_oos(self, queries):
        """Distance rows for unseen points: reciprocal of the one-sided
        out-of-sample proximity (no reverse direction exists for points
        outside the training set)."""
        p = np.atleast_2d(self.prox_rows_oos(queries))
        with np.errstate(divide="ignore"):
            d = 1.0 / p
        return d if np.asarray(queries).ndim == 2 else d[0]


def gap_proximity(forest: Forest, train: Dataset, max_dense=DEFAULT_DENSE_CAP) -> ProximityMatrix:
    """Full proximity matrix over the training set (desk scale only).

    Rows of instances that were never out-of-bag are zero and flagged via
    ``has_oob``; callers decide whether that aborts their pipeline.
    """
    n = train.n
    if n > max_dense:
        raise ValueError(
            f"n={n} exceeds the dense materialization cap ({max_dense}); "
            "use ProximityEngine row queries or subsample"
        )
    counts = forest.records.counts.astype(np.int64)
    leaves = train_leaf_matrix(forest, train)
    P = np.zeros((n, n))
    for t, tree in enumerate(forest.trees):
        c_t = counts[t]
        lv = leaves[t]
        order = np.argsort(lv, kind="stable")
        bounds = np.flatnonzero(np.diff(lv[order])) + 1
        for grp in np.split(order, bounds):
            w_total = c_t[grp].sum()
            oob = grp[c_t[grp] == 0]
            if oob.size == 0:
                continue
            in_bag = grp[c_t[grp] > 0]
            P[np.ix_(oob, in_bag)] += c_t[in_bag] / w_total
    s_sizes = (counts == 0).sum(axis=0)
    has_oob = s_sizes > 0
    P[has_oob] /= s_sizes[has_oob][:, None]
    return ProximityMatrix(values=P, reference=np.arange(n), has_oob=has_oob)


def gap_proximity_oos(forest: Forest, train: Dataset, query):
    """Proximity row of an unseen point over training indices (sums to 1)."""
    return ProximityEngine(forest, train).prox_rows_oos(query)


def gap_distance(prox: ProximityMatrix) -> DistanceMatrix:
    """Symmetric distance: d[i,j] = 1 / (0.5 (p[i,j] + p[j,i])), 0 on the
    diagonal, ``inf`` where the symmetrized proximity vanishes."""
    P = prox.values
    if P.shape[0] != P.shape[1]:
        raise ValueError("proximity matrix must be square")
    sym = 0.5 * (P + P.T)
    with np.errstate(divide="ignore"):
        d = 1.0 / sym
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(values=d, metric="rf_gap")


def euclidean_distance(data, standardize=False) -> DistanceMatrix:
    """Pairwise L2 distances over encoded features.

    ``standardize`` z-scores columns first (constant columns untouched);
    the model-aware metric never needs this, only the baseline does.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty data")
    if standardize:
        X = standardize_columns(X)
    d = cdist(X, X)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(values=d, metric="euclidean")


def standardize_columns(X, reference=None):
    """Z-score columns of X using reference statistics (default: X itself)."""
    ref = X if reference is None else reference
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return (X - mu) / sd


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_matrix_text(path, values, delimiter=","):
    """Matrix as delimiter-separated text; infinities as the token ``inf``."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(values):
            fh.write(delimiter.join(_fmt(v) for v in row) + "\n")
    return path


def write_matrix_triplets(path, values):
    """Nonzero off-diagonal entries as a binary (i:int32, j:int32, value:float64) stream."""
    values = np.atleast_2d(values)
    ii, jj = np.nonzero(values)
    keep = ii != jj
    ii, jj = ii[keep], jj[keep]
    rec = np.empty(ii.size, dtype=[("i", "<i4"), ("j", "<i4"), ("value", "<f8")])
    rec["i"], rec["j"], rec["value"] = ii, jj, values[ii, jj]
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())
    return path


def read_matrix_triplets(path, n):
    rec = np.fromfile(path, dtype=[("i", "<i4"), ("j", "<i4"), ("value", "<f8")])
    out = np.zeros((n, n))
    out[rec["i"], rec["j"]] = rec["value"]
    return out


def _fmt(v):
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"
