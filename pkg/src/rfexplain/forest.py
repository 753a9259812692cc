"""CART-style random forest with full bootstrap bookkeeping.

Beyond prediction, downstream modules need three things a stock forest
does not expose: the exact per-tree bootstrap multiplicities c_j(t), the
out-of-bag tree set of every training instance, and per-node split
geometry (feature, threshold, cell). Trees are stored as flat arrays for
fast vectorized routing and loss-free serialization.

Conventions fixed here and relied on everywhere else:
  * routing sends x left iff x[feature] <= threshold;
  * split thresholds are midpoints between consecutive distinct sorted
    values at the node, so no training value sits on a threshold;
  * ties in the split search break toward the lower feature index, then
    the lower threshold;
  * leaf class counts are bootstrap-weighted (in-bag multiplicity).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

FORMAT_MAGIC = b"RFEXF001"
LEAF = -1


@dataclass
class Tree:
    """One decision tree as parallel node arrays (node 0 is the root).

    ``feature[k] == LEAF`` marks leaves; ``class_counts[k]`` holds the
    bootstrap-weighted class counts of the node's in-bag sample.
    """

    feature: np.ndarray      # (n_nodes,) int32, LEAF for leaves
    threshold: np.ndarray    # (n_nodes,) float64
    left: np.ndarray         # (n_nodes,) int32, LEAF for leaves
    right: np.ndarray        # (n_nodes,) int32, LEAF for leaves
    depth: np.ndarray        # (n_nodes,) int32
    class_counts: np.ndarray  # (n_nodes, n_classes) int64

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def is_leaf(self, node):
        return self.feature[node] == LEAF

    def leaf_distributions(self):
        """Per-node class distributions (rows sum to 1; defined for all nodes)."""
        totals = self.class_counts.sum(axis=1, keepdims=True).astype(np.float64)
        return self.class_counts / totals

    def apply(self, X):
        """Leaf node id for every row of X, by threshold descent."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        cur = np.zeros(X.shape[0], dtype=np.int32)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[cur]
            internal = feat != LEAF
            if not internal.any():
                return cur
            fv = X[rows, np.where(internal, feat, 0)]
            go_left = fv <= self.threshold[cur]
            nxt = np.where(go_left, self.left[cur], self.right[cur])
            cur = np.where(internal, nxt, cur).astype(np.int32)


@dataclass
class BootstrapRecord:
    """Per-tree in-bag multiplicities over training indices.

    counts[t, j] is the number of times training instance j was drawn
    into tree t's bootstrap sample; j is out-of-bag for t iff it is 0.
    """

    counts: np.ndarray  # (n_trees, n_train) uint16

    @property
    def n_trees(self):
        return self.counts.shape[0]

    @property
    def n_train(self):
        return self.counts.shape[1]

    def oob_mask(self):
        """(n_trees, n_train) boolean, True where the instance is out-of-bag."""
        return self.counts == 0

    def oob_tree_sets(self):
        """For each training instance i, the array S_i of trees with i out-of-bag."""
        mask = self.oob_mask()
        return [np.nonzero(mask[:, i])[0] for i in range(self.n_train)]


@dataclass
class Forest:
    trees: list
    records: BootstrapRecord
    class_names: tuple
    n_features: int
    hyperparams: dict = field(default_factory=dict)

    @property
    def n_trees(self):
        return len(self.trees)

    @property
    def n_classes(self):
        return len(self.class_names)


@dataclass(frozen=True)
class SplitInfo:
    """One internal node: its split and the axis-aligned box of its cell.

    ``region`` maps feature index -> (lo, hi) for the features constrained
    by ancestors; absent features are unconstrained (-inf, +inf).
    """

    tree: int
    node: int
    feature: int
    threshold: float
    region: dict


def _resolve_mtry(features_per_split, d):
    if features_per_split == "sqrt":
        return int(np.ceil(np.sqrt(d)))
    m = int(features_per_split)
    if m < 1:
        raise ValueError("features_per_split must be >= 1")
    return min(m, d)


def _build_tree(codes, uniq_vals, y, n_classes, boot, max_depth, mtry, rng):
    """Grow one tree on the bootstrap multiset ``boot`` (train indices with repeats).

    Split search: for every candidate feature, candidate thresholds are
    the midpoints between consecutive distinct values present at the
    node; the (feature, threshold) pair minimizing bootstrap-weighted
    Gini impurity wins, ties going to the lower feature index then the
    lower threshold.
    """
    d = codes.shape[1]
    feature, threshold, left, right, depth_arr, counts_list = [], [], [], [], [], []

    # stack entries: (sample indices, depth, parent node id, is_left_child)
    stack = [(boot, 0, -1, False)]
    while stack:
        samp, depth, parent, is_left = stack.pop()
        node_id = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node_id
            else:
                right[parent] = node_id

        y_node = y[samp]
        counts = np.bincount(y_node, minlength=n_classes)
        n_s = samp.shape[0]

        split = None
        if depth < max_depth and n_s >= 2 and counts.max() < n_s:
            feats = np.sort(rng.choice(d, size=mtry, replace=False))
            split = _best_split(codes, uniq_vals, samp, y_node, n_classes, feats)

        feature.append(LEAF if split is None else split[0])
        threshold.append(0.0 if split is None else split[1])
        left.append(LEAF)
        right.append(LEAF)
        depth_arr.append(depth)
        counts_list.append(counts)

        if split is not None:
            f, _, code_cut = split
            go_left = codes[samp, f] <= code_cut
            # right pushed first so the left child is materialized next (preorder)
            stack.append((samp[~go_left], depth + 1, node_id, False))
            stack.append((samp[go_left], depth + 1, node_id, True))

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        depth=np.array(depth_arr, dtype=np.int32),
        class_counts=np.array(counts_list, dtype=np.int64),
    )


def _best_split(codes, uniq_vals, samp, y_node, n_classes, feats):
    """Exhaustive Gini search over the candidate features of one node.

    Works on per-feature value codes so class counts per distinct value
    come from a single bincount; returns (feature, threshold, code_cut)
    or None when no candidate feature admits a valid split.
    """
    m = feats.shape[0]
    n_s = samp.shape[0]
    k_max = max(uniq_vals[f].shape[0] for f in feats)

    sub = codes[samp[:, None], feats[None, :]].astype(np.int64)  # (n_s, m)
    flat = (np.arange(m, dtype=np.int64) * k_max + sub) * n_classes + y_node[:, None]
    joint = np.bincount(flat.ravel(), minlength=m * k_max * n_classes).astype(np.float64)
    joint = joint.reshape(m, k_max, n_classes)

    cum = np.cumsum(joint, axis=1)                      # left class counts at cut "code <= k"
    totals = cum[:, -1:, :]                             # per-feature class totals
    n_left = cum.sum(axis=2)
    n_right = n_s - n_left
    present = joint.sum(axis=2) > 0

    # a cut after code k is valid iff code k is present and something remains on the right
    valid = present & (n_right > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (cum ** 2).sum(axis=2) / n_left + ((totals - cum) ** 2).sum(axis=2) / n_right
    gain[~valid] = -np.inf

    best_flat = int(np.argmax(gain))                    # first max: lowest feature, lowest threshold
    if not np.isfinite(gain.flat[best_flat]):
        return None
    fi, cut = divmod(best_flat, k_max)
    f = int(feats[fi])

    present_codes = np.nonzero(present[fi])[0]
    nxt = present_codes[np.searchsorted(present_codes, cut) + 1]
    vals = uniq_vals[f]
    thr = 0.5 * (vals[cut] + vals[nxt])
    return f, float(thr), int(cut)


def fit(train: Dataset, n_trees, max_depth, features_per_split="sqrt", seed=0) -> Forest:
    """Train a forest of Gini/CART trees on bootstrap draws of ``train``.

    Each tree draws n samples with replacement (n = training-set size),
    records its in-bag multiplicities exactly, and grows to at most
    ``max_depth`` splits along any path. A single-class training set
    yields a degenerate forest of single-leaf trees.
    """
    if train.n == 0:
        raise ValueError("training set is empty")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    X, y = train.X, train.y
    n, d = X.shape
    n_classes = train.n_classes
    mtry = _resolve_mtry(features_per_split, d)

    uniq_vals, codes = [], np.empty((n, d), dtype=np.int32)
    for f in range(d):
        vals, inv = np.unique(X[:, f], return_inverse=True)
        uniq_vals.append(vals)
        codes[:, f] = inv

    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    in_bag = np.zeros((n_trees, n), dtype=np.uint16)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(seeds[t])
        boot = rng.integers(0, n, size=n)
        in_bag[t] = np.bincount(boot, minlength=n)
        trees.append(_build_tree(codes, uniq_vals, y, n_classes, boot, max_depth, mtry, rng))

    return Forest(
        trees=trees,
        records=BootstrapRecord(in_bag),
        class_names=train.class_names,
        n_features=d,
        hyperparams={
            "n_trees": int(n_trees),
            "max_depth": int(max_depth),
            "features_per_split": features_per_split,
            "seed": int(seed),
        },
    )


def predict_proba(forest: Forest, X):
    """Mean over trees of the leaf's bootstrap-weighted class distribution.

    Accepts a single instance or a batch; returns (n_classes,) or
    (n, n_classes) accordingly, rows summing to 1.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X2.shape[1]}")
    acc = np.zeros((X2.shape[0], forest.n_classes))
    for tree in forest.trees:
        acc += tree.leaf_distributions()[tree.apply(X2)]
    acc /= forest.n_trees
    return acc[0] if single else acc


def predict(forest: Forest, X):
    """Argmax class indices (ties to the lower class index)."""
    proba = np.atleast_2d(predict_proba(forest, X))
    return np.argmax(proba, axis=1)


def train_leaf_matrix(forest: Forest, train: Dataset):
    """(n_trees, n_train) leaf ids of every training instance in every tree."""
    out = np.empty((forest.n_trees, train.n), dtype=np.int32)
    for t, tree in enumerate(forest.trees):
        out[t] = tree.apply(train.X)
    return out


def oob_predict_proba(forest: Forest, train: Dataset, index, _leaves=None):
    """Class distribution for training instance ``index`` averaged over the
    trees for which it is out-of-bag."""
    from .errors import NoOutOfBagError

    s_i = np.nonzero(forest.records.counts[:, index] == 0)[0]
    if s_i.size == 0:
        raise NoOutOfBagError(f"training instance {index} is in-bag for every tree")
    x = train.X[index]
    acc = np.zeros(forest.n_classes)
    for t in s_i:
        tree = forest.trees[t]
        leaf = int(tree.apply(x[None, :])[0]) if _leaves is None else int(_leaves[t, index])
        acc += tree.leaf_distributions()[leaf]
    return acc / s_i.size


def oob_predict_proba_all(forest: Forest, train: Dataset):
    """OOB class distributions for every training instance at once.

    Returns (proba, has_oob): rows of ``proba`` with ``has_oob`` False are
    zero (the instance was in-bag everywhere).
    """
    leaves = train_leaf_matrix(forest, train)
    oob = forest.records.oob_mask()
    acc = np.zeros((train.n, forest.n_classes))
    for t, tree in enumerate(forest.trees):
        dist = tree.leaf_distributions()[leaves[t]]
        acc += np.where(oob[t][:, None], dist, 0.0)
    n_oob = oob.sum(axis=0)
    has = n_oob > 0
    acc[has] /= n_oob[has][:, None]
    return acc, has


def leaf_index(forest: Forest, tree_index, x):
    """Leaf node id reached by ``x`` in the given tree."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {x.shape[-1]}")
    return int(forest.trees[tree_index].apply(x[None, :])[0])


def enumerate_splits(forest: Forest):
    """All internal nodes with their split and cell box.

    The cell of a node is the intersection of its ancestors' halfspaces;
    region bounds follow the routing convention (left: value <= threshold).
    """
    out = []
    for t, tree in enumerate(forest.trees):
        stack = [(0, {})]
        while stack:
            node, region = stack.pop()
            f = int(tree.feature[node])
            if f == LEAF:
                continue
            thr = float(tree.threshold[node])
            out.append(SplitInfo(tree=t, node=node, feature=f, threshold=thr, region=region))
            lo, hi = region.get(f, (-np.inf, np.inf))
            left_region = dict(region)
            left_region[f] = (lo, min(hi, thr))
            right_region = dict(region)
            right_region[f] = (max(lo, thr), hi)
            stack.append((int(tree.right[node]), right_region))
            stack.append((int(tree.left[node]), left_region))
    return out


# ---------------------------------------------------------------------------
# serialization: versioned self-describing container, byte-stable round trip
# ---------------------------------------------------------------------------

_ARRAY_SPECS = (
    ("feature", "<i4"),
    ("threshold", "<f8"),
    ("left", "<i4"),
    ("right", "<i4"),
    ("depth", "<i4"),
    ("class_counts", "<i8"),
)


def save_forest(forest: Forest, path):
    """Write the forest (trees + bootstrap records) to a versioned binary file.

    The layout is magic | header length | JSON header | raw array blocks;
    identical forests serialize to identical bytes.
    """
    node_counts = [tree.n_nodes for tree in forest.trees]
    header = {
        "format_version": 1,
        "class_names": list(forest.class_names),
        "n_features": int(forest.n_features),
        "hyperparams": forest.hyperparams,
        "n_trees": forest.n_trees,
        "n_train": forest.records.n_train,
        "node_counts": node_counts,
        "arrays": [name for name, _ in _ARRAY_SPECS] + ["in_bag_counts"],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, dtype in _ARRAY_SPECS:
            stacked = np.concatenate([getattr(tree, name) for tree in forest.trees], axis=0)
            fh.write(np.ascontiguousarray(stacked.astype(dtype)).tobytes())
        fh.write(np.ascontiguousarray(forest.records.counts.astype("<u2")).tobytes())


def load_forest(path) -> Forest:
    """Inverse of :func:`save_forest`; round trip is exact."""
    from .errors import FormatError

    with open(path, "rb") as fh:
        magic = fh.read(len(FORMAT_MAGIC))
        if magic != FORMAT_MAGIC:
            raise FormatError(f"not a forest file (magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise FormatError(f"unsupported forest format version {header.get('format_version')}")

        node_counts = header["node_counts"]
        total = sum(node_counts)
        n_classes = len(header["class_names"])
        flat = {}
        for name, dtype in _ARRAY_SPECS:
            shape = (total, n_classes) if name == "class_counts" else (total,)
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(count * np.dtype(dtype).itemsize), dtype=dtype)
            flat[name] = arr.reshape(shape)
        n_trees, n_train = header["n_trees"], header["n_train"]
        in_bag = np.frombuffer(fh.read(n_trees * n_train * 2), dtype="<u2").reshape(n_trees, n_train)

    trees, off = [], 0
    for count in node_counts:
        sl = slice(off, off + count)
        trees.append(
            Tree(
                feature=flat["feature"][sl].astype(np.int32),
                threshold=flat["threshold"][sl].astype(np.float64),
                left=flat["left"][sl].astype(np.int32),
                right=flat["right"][sl].astype(np.int32),
                depth=flat["depth"][sl].astype(np.int32),
                class_counts=flat["class_counts"][sl].astype(np.int64),
            )
        )
        off += count
    return Forest(
        trees=trees,
        records=BootstrapRecord(in_bag.astype(np.uint16)),
        class_names=tuple(header["class_names"]),
        n_features=int(header["n_features"]),
        hyperparams=header["hyperparams"],
    )
