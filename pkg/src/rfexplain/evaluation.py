"""Quantitative studies: top-k perturbation class flips and explanation sparsity.

The flip experiment asks which attribution method best identifies the
features that matter: for each test instance, find its nearest
flipped-class reference point under a metric, rank features by an
attribution (partition tallies of the pair, an imported per-instance
attribution, or the |instance - counterfactual| fallback), adopt the
counterfactual's values on the top-k features, and record whether the
predicted class flips. Curves run over every k from 0 to d; k = 0 never
flips and k = d always does, since the perturbed point then equals the
counterfactual itself.

The sparsity study compares how many features two attribution sources
leave at (near-)zero, with a standard two-sample comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .counterfactual import EuclideanBackend, GapBackend, _restricted_argmin
from .data import Dataset, FeatureSchema
from .errors import ConsistencyError, ParseError, SchemaError
from .forest import Forest, predict_proba
from .tally import TALLY_EPSILON, SplitGeometry, build_geometry, sparsity, tally_segment

SOURCE_TALLY = "partition_tally"
SOURCE_IMPORTED = "imported"
SOURCE_ABS_DIFF = "abs_difference"

RANK_PARTITIONS = "partitions"
RANK_IMPORTED = "imported"
RANK_BASELINE = "baseline"

# default epsilon for continuous attributions, as a fraction of the row max
CONTINUOUS_EPSILON_FRACTION = 1e-6


@dataclass
class AttributionSet:
    """Per-instance, per-feature attribution values from one source."""

    values: np.ndarray  # (m, d)
    source: str
    instance_ids: np.ndarray | None = None

    @property
    def n_instances(self):
        return self.values.shape[0]

    def row_epsilon(self, row_index):
        """Zero-threshold for one row: exact for integer tallies, scaled
        to the row magnitude for continuous sources."""
        if self.source == SOURCE_TALLY:
            return TALLY_EPSILON
        m = np.abs(self.values[row_index]).max()
        return CONTINUOUS_EPSILON_FRACTION * m

    def sparsities(self):
        return np.array([sparsity(self.values[i], self.row_epsilon(i))
                         for i in range(self.n_instances)])


@dataclass
class FlipCurve:
    """Flip frequency per k for one (metric, ranking) strategy."""

    metric: str
    ranking: str
    flip_rate: np.ndarray  # (d + 1,)
    n_evaluated: int
    n_excluded: int

    @property
    def strategy(self):
        return f"{self.metric}x{self.ranking}"


def import_attributions(path, schema: FeatureSchema, n_expected=None, delimiter="auto") -> AttributionSet:
    """Read a delimiter-separated attribution table, realigned to schema order.

    The header must contain exactly the schema's encoded feature names
    (any order); each subsequent row is one instance.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    if not lines:
        raise ParseError(f"{path}: empty attribution file")
    sep = "," if (delimiter == "," or (delimiter == "auto" and "," in lines[0])) else None
    header = [h.strip() for h in (lines[0].split(sep) if sep else lines[0].split())]
    if sorted(header) != sorted(schema.feature_names):
        missing = set(schema.feature_names) - set(header)
        extra = set(header) - set(schema.feature_names)
        raise SchemaError(f"attribution header mismatch (missing {sorted(missing)[:4]}, "
                          f"unexpected {sorted(extra)[:4]})")
    col_order = [header.index(name) for name in schema.feature_names]

    rows = []
    for r, ln in enumerate(lines[1:]):
        cells = [c.strip() for c in (ln.split(sep) if sep else ln.split())]
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=r)
        try:
            rows.append([float(cells[c]) for c in col_order])
        except ValueError as exc:
            raise ParseError(f"unparseable attribution value: {exc}", row=r) from None
    values = np.asarray(rows, dtype=np.float64)
    if n_expected is not None and values.shape[0] != n_expected:
        raise ConsistencyError(f"attribution file has {values.shape[0]} rows, expected {n_expected}")
    return AttributionSet(values=values, source=SOURCE_IMPORTED)


def export_attributions(path, attributions: AttributionSet, schema: FeatureSchema, delimiter=","):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(schema.feature_names) + "\n")
        for row in attributions.values:
            fh.write(delimiter.join(f"{v:.12g}" for v in row) + "\n")
    return path


def rank_features(attribution_row):
    """Feature indices by |value| descending; ties go to the lower index."""
    row = np.asarray(attribution_row, dtype=np.float64)
    if row.size == 0:
        raise ValueError("empty attribution row")
    return np.argsort(-np.abs(row), kind="stable")


def perturb_topk(instance, counterfactual, ranking, k):
    """Copy of the instance adopting the counterfactual's values on the
    first k ranked features."""
    x = np.asarray(instance, dtype=np.float64)
    cf = np.asarray(counterfactual, dtype=np.float64)
    ranking = np.asarray(ranking, dtype=np.int64)
    if not 0 <= k <= x.shape[0]:
        raise ValueError(f"k={k} outside 0..{x.shape[0]}")
    out = x.copy()
    idx = ranking[:k]
    out[idx] = cf[idx]
    return out


def _perturbation_ladder(x, cf, ranking):
    """(d+1, d) matrix whose row k is perturb_topk(x, cf, ranking, k)."""
    d = x.shape[0]
    ladder = np.tile(x, (d + 1, 1))
    adopt = np.arange(1, d + 1)[:, None] > np.arange(d)[None, :]  # row k adopts ranked j < k
    ladder[1:, ranking] = np.where(adopt, cf[ranking][None, :], x[ranking][None, :])
    return ladder


def run_flip_experiment(forest: Forest, test: Dataset, reference: Dataset, strategies,
                        attributions: AttributionSet | None = None, tally_mode="region_restricted",
                        train_for_gap: Dataset | None = None, max_instances=None,
                        geometry: SplitGeometry | None = None):
    """Flip curves for every (metric, ranking) strategy over the test set.

    ``reference`` is the counterfactual candidate pool; the model-aware
    metric requires it to be the forest's training set (``train_for_gap``
    defaults to ``reference``). Instances with no flipped-class reference
    point are excluded from every strategy and counted.
    """
    metrics = sorted({m for m, _ in strategies})
    rankings = {r for _, r in strategies}
    if RANK_IMPORTED in rankings and attributions is None:
        raise ConsistencyError("an imported ranking strategy needs an attribution set")

    backends = {}
    for metric in metrics:
        if metric == "euclidean":
            backends[metric] = EuclideanBackend(reference.X)
        elif metric == "rf_gap":
            backends[metric] = GapBackend(forest, train_for_gap or reference)
        else:
            raise ValueError(f"unknown metric {metric!r}")

    geo = geometry if geometry is not None else build_geometry(forest)
    d = test.d
    n_take = test.n if max_instances is None else min(max_instances, test.n)
    if attributions is not None and attributions.n_instances < n_take:
        raise ConsistencyError(
            f"attribution set covers {attributions.n_instances} instances, need {n_take}")

    pred_test = np.argmax(np.atleast_2d(predict_proba(forest, test.X[:n_take])), axis=1)
    pred_ref = np.argmax(np.atleast_2d(predict_proba(forest, reference.X)), axis=1)

    evaluated = [i for i in range(n_take) if (pred_ref != pred_test[i]).any()]
    n_excluded = n_take - len(evaluated)

    # nearest flipped-class counterfactual per instance per metric
    cf_index = {m: np.empty(len(evaluated), dtype=np.int64) for m in metrics}
    for metric in metrics:
        backend = backends[metric]
        for pos, i in enumerate(evaluated):
            candidates = np.nonzero(pred_ref != pred_test[i])[0]
            row = backend.row_for_point(test.X[i])
            cf_index[metric][pos] = _restricted_argmin(row, candidates)

    flips = {(m, r): np.zeros(d + 1, dtype=np.int64) for m, r in strategies}
    for pos, i in enumerate(evaluated):
        x = test.X[i]
        ladders = {}
        for metric, ranking_kind in strategies:
            cf = reference.X[cf_index[metric][pos]]
            if ranking_kind == RANK_PARTITIONS:
                attr = tally_segment(forest, cf, x, mode=tally_mode, geometry=geo).counts
            elif ranking_kind == RANK_BASELINE:
                attr = np.abs(x - cf)
            elif ranking_kind == RANK_IMPORTED:
                attr = attributions.values[i]
            else:
                raise ValueError(f"unknown ranking {ranking_kind!r}")
            ladders[(metric, ranking_kind)] = _perturbation_ladder(x, cf, rank_features(attr))

        stacked = np.concatenate([ladders[s] for s in strategies], axis=0)
        pred = np.argmax(np.atleast_2d(predict_proba(forest, stacked)), axis=1)
        for s_pos, s in enumerate(strategies):
            block = pred[s_pos * (d + 1):(s_pos + 1) * (d + 1)]
            flips[s] += block != pred_test[i]

    curves = []
    for metric, ranking_kind in strategies:
        rate = (flips[(metric, ranking_kind)] / len(evaluated)) if evaluated else np.zeros(d + 1)
        curves.append(FlipCurve(metric=metric, ranking=ranking_kind, flip_rate=rate,
                                n_evaluated=len(evaluated), n_excluded=n_excluded))
    return curves


@dataclass
class SparsitySummary:
    mean_a: float
    stderr_a: float
    mean_b: float
    stderr_b: float
    statistic: float
    pvalue: float
    n_instances: int


def sparsity_study(tallies: AttributionSet, baseline: AttributionSet) -> SparsitySummary:
    """Mean sparsity (fraction of near-zero features) per source, with a
    Welch two-sample comparison between them."""
    if tallies.n_instances != baseline.n_instances:
        raise ConsistencyError(
            f"attribution sets cover {tallies.n_instances} vs {baseline.n_instances} instances")
    if (tallies.instance_ids is not None and baseline.instance_ids is not None
            and not np.array_equal(tallies.instance_ids, baseline.instance_ids)):
        raise ConsistencyError("attribution sets cover different instances")
    a = tallies.sparsities()
    b = baseline.sparsities()
    res = stats.ttest_ind(a, b, equal_var=False)
    return SparsitySummary(
        mean_a=float(a.mean()),
        stderr_a=float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0,
        mean_b=float(b.mean()),
        stderr_b=float(b.std(ddof=1) / np.sqrt(b.size)) if b.size > 1 else 0.0,
        statistic=float(res.statistic),
        pvalue=float(res.pvalue),
        n_instances=int(a.size),
    )


def write_flip_curves(path, curves, delimiter=","):
    """One row per (k, strategy): k, strategy, flip_rate, n_evaluated, n_excluded."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["k", "strategy", "flip_rate", "n_evaluated", "n_excluded"]) + "\n")
        for curve in curves:
            for k, rate in enumerate(curve.flip_rate):
                fh.write(delimiter.join([str(k), curve.strategy, f"{rate:.12g}",
                                         str(curve.n_evaluated), str(curve.n_excluded)]) + "\n")
    return path
