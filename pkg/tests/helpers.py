"""Shared test utilities: hand-built trees/forests, toy datasets, and the
dense-sampling tally oracle kept independent of the library's analytic path."""

import numpy as np

from rfexplain.data import NUMERIC, Dataset, FeatureSchema
from rfexplain.forest import LEAF, BootstrapRecord, Forest, Tree


def numeric_dataset(X, y, class_names=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    names = tuple(f"f{i}" for i in range(d))
    schema = FeatureSchema(names, {n: [i] for i, n in enumerate(names)}, (NUMERIC,) * d)
    if class_names is None:
        class_names = tuple(f"c{i}" for i in range(int(y.max()) + 1 if y.size else 1))
    return Dataset(X, y, schema, tuple(class_names))


def leaf_node(class_counts):
    return {"feature": LEAF, "threshold": 0.0, "left": LEAF, "right": LEAF,
            "counts": class_counts}


def split_node(feature, threshold, left, right):
    return {"feature": feature, "threshold": threshold, "left": left, "right": right,
            "counts": None}


def build_tree(nodes, n_classes):
    """Assemble a Tree from a node-dict list; internal counts are filled in
    bottom-up so every node carries its subtree totals."""
    n = len(nodes)
    feature = np.array([nd["feature"] for nd in nodes], dtype=np.int32)
    threshold = np.array([nd["threshold"] for nd in nodes], dtype=np.float64)
    left = np.array([nd["left"] for nd in nodes], dtype=np.int32)
    right = np.array([nd["right"] for nd in nodes], dtype=np.int32)
    counts = np.zeros((n, n_classes), dtype=np.int64)
    depth = np.zeros(n, dtype=np.int32)

    def fill(node, d):
        depth[node] = d
        if feature[node] == LEAF:
            counts[node] = nodes[node]["counts"]
            return counts[node]
        counts[node] = fill(left[node], d + 1) + fill(right[node], d + 1)
        return counts[node]

    fill(0, 0)
    return Tree(feature=feature, threshold=threshold, left=left, right=right,
                depth=depth, class_counts=counts)


def build_forest(trees, in_bag_counts, class_names, n_features):
    return Forest(trees=list(trees),
                  records=BootstrapRecord(np.asarray(in_bag_counts, dtype=np.uint16)),
                  class_names=tuple(class_names),
                  n_features=n_features,
                  hyperparams={"n_trees": len(trees), "max_depth": 0,
                               "features_per_split": "sqrt", "seed": 0})


def single_leaf_forest(class_counts_per_tree, class_names, n_features, n_train=4):
    trees = [build_tree([leaf_node(np.asarray(c))], len(class_names))
             for c in class_counts_per_tree]
    in_bag = np.ones((len(trees), n_train), dtype=np.uint16)
    return build_forest(trees, in_bag, class_names, n_features)


# ---------------------------------------------------------------------------
# brute-force tally oracle: dense segment sampling + routing paths
# ---------------------------------------------------------------------------

def routing_paths(tree, points):
    """Set of internal node ids visited by each point's root-to-leaf walk."""
    paths = []
    for p in points:
        node, path = 0, set()
        while tree.feature[node] != LEAF:
            path.add(int(node))
            f = int(tree.feature[node])
            node = int(tree.left[node]) if p[f] <= tree.threshold[node] else int(tree.right[node])
        paths.append(path)
    return paths


def oracle_segment_tally(forest, a, b, max_samples=200000):
    """Count sign-tagged halfspace flips of every node present on the routing
    paths of both flanking samples, sampled finer than half the minimum
    threshold gap per feature. Independent of the analytic crossing code:
    uses only tree descent."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = b - a
    d = a.shape[0]

    thresholds = {}
    for tree in forest.trees:
        for k in range(tree.n_nodes):
            f = int(tree.feature[k])
            if f != LEAF:
                thresholds.setdefault(f, []).append(float(tree.threshold[k]))
    step = 1.0
    for f, ths in thresholds.items():
        if delta[f] == 0:
            continue
        gaps = np.diff(np.unique(ths))
        if gaps.size:
            step = min(step, 0.4 * gaps.min() / abs(delta[f]))
    n_samples = min(int(np.ceil(1.0 / step)) + 2, max_samples)
    s_vals = np.linspace(0.0, 1.0, n_samples)
    pts = a[None, :] + s_vals[:, None] * delta[None, :]

    counts = np.zeros(d, dtype=np.int64)
    for tree in forest.trees:
        paths = routing_paths(tree, pts)
        for k in range(n_samples - 1):
            for node in paths[k] & paths[k + 1]:
                f = int(tree.feature[node])
                thr = tree.threshold[node]
                if (pts[k][f] <= thr) != (pts[k + 1][f] <= thr):
                    counts[f] += 1 if delta[f] > 0 else -1
    return counts


def oracle_global_tally(forest, a, b):
    """Direct enumeration for global-threshold mode: every split threshold
    strictly between the endpoint values, signed by walk direction."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    counts = np.zeros(a.shape[0], dtype=np.int64)
    for tree in forest.trees:
        for k in range(tree.n_nodes):
            f = int(tree.feature[k])
            if f == LEAF:
                continue
            thr = tree.threshold[k]
            lo, hi = min(a[f], b[f]), max(a[f], b[f])
            if lo < thr < hi:
                counts[f] += 1 if b[f] > a[f] else -1
    return counts
