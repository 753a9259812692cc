"""Constrained nearest-neighbor counterfactuals and hill-climbing trajectories.

A counterfactual for a query point is the closest reference point whose
model output beats the query's by more than a margin (or whose predicted
class flips). A trajectory iterates that idea locally: from the current
point, move to the nearest reference point with strictly higher utility,
until no improvement remains or a class flip occurs. Utilities are model
outputs, not ground-truth labels.

Distance backends abstract the metric: plain L2 over encoded features,
or the model-aware reciprocal-proximity distance served row-by-row so
large reference sets never materialize a full matrix. Infinite distances
order after every finite one and are only ever chosen when no candidate
is finitely reachable. All argmin ties break toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import EmptyReferenceError, NoCounterfactualError
from .forest import Forest, predict_proba
from .proximity import ProximityEngine, standardize_columns

CLASS_PROBABILITY = "class_probability"
CLASS_FLIP = "class_flip"

STOP_CONVERGENCE = "convergence"
STOP_CLASS_FLIP = "class_flip"


@dataclass(frozen=True)
class UtilitySpec:
    """What counts as a better model output.

    ``class_probability``: utility is the predicted probability of
    ``target_class`` (an index into the forest's classes); a candidate
    qualifies when its utility exceeds the query's by more than ``delta``.

    ``class_flip``: a candidate qualifies when its predicted class
    differs from the query's; for ordering purposes the utility is one
    minus the probability of the query's original class.
    """

    kind: str
    target_class: int | None = None
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in (CLASS_PROBABILITY, CLASS_FLIP):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == CLASS_PROBABILITY and self.target_class is None:
            raise ValueError("class_probability utility needs a target_class")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


@dataclass(frozen=True)
class CounterfactualResult:
    instance_index: int | None
    counterfactual_index: int
    distance: float
    utility_gain: float
    metric: str


@dataclass
class Trajectory:
    """Visited reference indices with their strictly increasing utilities."""

    indices: np.ndarray
    utilities: np.ndarray

    def __len__(self):
        return len(self.indices)


# ---------------------------------------------------------------------------
# distance backends
# ---------------------------------------------------------------------------

class EuclideanBackend:
    """L2 rows over a fixed reference matrix (optionally z-scored)."""

    name = "euclidean"

    def __init__(self, reference_X, standardize=False):
        X = np.asarray(reference_X, dtype=np.float64)
        self._raw = X
        self._standardize = standardize
        self._X = standardize_columns(X) if standardize else X

    def row_for_point(self, x):
        q = np.asarray(x, dtype=np.float64)[None, :]
        if self._standardize:
            q = standardize_columns(q, reference=self._raw)
        return cdist(q, self._X)[0]

    def row_for_index(self, i):
        return self.row_for_point(self._raw[i])


class GapBackend:
    """Model-aware distance rows backed by a ProximityEngine.

    The reference set is the forest's training set. Rows between two
    training points use the symmetric reciprocal-proximity distance;
    rows from an unseen point use the out-of-sample extension (every
    tree counts, one-sided proximity). A bounded cache keeps trajectory
    steps cheap without letting memory grow past desk scale.
    """

    name = "rf_gap"

    def __init__(self, forest: Forest, train: Dataset, cache_rows=4096):
        self.engine = ProximityEngine(forest, train)
        self._cache = {}
        self._cache_rows = cache_rows

    def row_for_point(self, x):
        return self.engine.distance_rows_oos(x)

    def row_for_index(self, i):
        i = int(i)
        row = self._cache.get(i)
        if row is None:
            row = self.engine.distance_row_insample(i)
            if len(self._cache) >= self._cache_rows:
                self._cache.pop(next(iter(self._cache)))
            self._cache[i] = row
        return row


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------

def utility_eval(forest: Forest, x, utility: UtilitySpec, origin_class=None):
    """Utility of one point; see UtilitySpec for the two flavors."""
    proba = predict_proba(forest, np.asarray(x, dtype=np.float64))
    if utility.kind == CLASS_PROBABILITY:
        _check_class(forest, utility.target_class)
        return float(proba[utility.target_class])
    origin = int(np.argmax(proba)) if origin_class is None else int(origin_class)
    _check_class(forest, origin)
    return float(1.0 - proba[origin])


def reference_utilities(forest: Forest, reference_X, utility: UtilitySpec, origin_class=None,
                        reference_proba=None):
    """Utilities (and predicted classes) of every reference point in one pass.

    ``reference_proba`` short-circuits the batch prediction when the
    caller already holds the reference probabilities (many searches over
    one pool)."""
    proba = np.atleast_2d(predict_proba(forest, reference_X)) if reference_proba is None \
        else np.atleast_2d(reference_proba)
    pred = np.argmax(proba, axis=1)
    if utility.kind == CLASS_PROBABILITY:
        _check_class(forest, utility.target_class)
        return proba[:, utility.target_class], pred
    if origin_class is None:
        raise ValueError("class_flip utilities over a reference need the origin class")
    _check_class(forest, origin_class)
    return 1.0 - proba[:, int(origin_class)], pred


def _check_class(forest, c):
    if c is None or not 0 <= int(c) < forest.n_classes:
        raise ValueError(f"class index {c!r} outside 0..{forest.n_classes - 1}")


def _restricted_argmin(distances, candidate_indices):
    """Lowest-index argmin of distances over the candidate subset.

    ``inf`` entries lose to any finite entry; if every candidate is
    infinitely far, the lowest candidate index is returned (the caller
    has no finite alternative).
    """
    sub = distances[candidate_indices]
    return int(candidate_indices[int(np.argmin(sub))])


# ---------------------------------------------------------------------------
# search operations
# ---------------------------------------------------------------------------

def find_counterfactual(forest: Forest, instance, reference: Dataset, backend,
                        utility: UtilitySpec, instance_index=None,
                        reference_proba=None) -> CounterfactualResult:
    """Closest reference point satisfying the utility/flip constraint.

    ``instance_index``, when given, marks the instance as reference row i
    so the in-sample (symmetric) distance row is used; otherwise the
    instance is treated as an unseen point.
    """
    if reference.n == 0:
        raise EmptyReferenceError("reference set is empty")
    x = np.asarray(instance, dtype=np.float64)

    proba_x = predict_proba(forest, x)
    origin = int(np.argmax(proba_x))
    u_ref, pred_ref = reference_utilities(forest, reference.X, utility, origin_class=origin,
                                          reference_proba=reference_proba)
    u_x = utility_eval(forest, x, utility, origin_class=origin)

    if utility.kind == CLASS_PROBABILITY:
        eligible = (u_ref - u_x) > utility.delta
    else:
        eligible = pred_ref != origin
    candidates = np.nonzero(eligible)[0]
    if candidates.size == 0:
        raise NoCounterfactualError(
            f"no reference point satisfies the {utility.kind} constraint (delta={utility.delta})"
        )

    if instance_index is not None:
        d = backend.row_for_index(int(instance_index))
    else:
        d = backend.row_for_point(x)
    j = _restricted_argmin(d, candidates)
    return CounterfactualResult(
        instance_index=None if instance_index is None else int(instance_index),
        counterfactual_index=j,
        distance=float(d[j]),
        utility_gain=float(u_ref[j] - u_x),
        metric=backend.name,
    )


def _climb(start, u_ref, pred_ref, backend, stop, origin):
    """Shared hill-climbing loop: nearest strictly-better reference point
    each step; stops on an empty candidate set or (optionally) a flip."""
    traj = [int(start)]
    cur = int(start)
    if stop == STOP_CLASS_FLIP and pred_ref[cur] != origin:
        return traj
    while True:
        candidates = np.nonzero(u_ref > u_ref[cur])[0]
        if candidates.size == 0:
            return traj
        cur = _restricted_argmin(backend.row_for_index(cur), candidates)
        traj.append(cur)
        if stop == STOP_CLASS_FLIP and pred_ref[cur] != origin:
            return traj


def trajectory(forest: Forest, start_index, reference: Dataset, backend,
               utility: UtilitySpec, stop=STOP_CONVERGENCE, origin_class=None,
               reference_proba=None) -> Trajectory:
    """Hill-climbing path through the reference set from ``start_index``.

    Candidates are the reference points with strictly higher utility than
    the current point; each step takes the nearest one. Under the
    ``class_flip`` stop, the walk ends as soon as the current point's
    predicted class differs from the origin (default: the start point's
    predicted class); candidate ordering is still by utility.
    """
    if stop not in (STOP_CONVERGENCE, STOP_CLASS_FLIP):
        raise ValueError(f"unknown stop criterion {stop!r}")
    if not 0 <= int(start_index) < reference.n:
        raise ValueError(f"start index {start_index} outside reference of size {reference.n}")

    proba_start = predict_proba(forest, reference.X[int(start_index)])
    origin = int(np.argmax(proba_start)) if origin_class is None else int(origin_class)
    u_ref, pred_ref = reference_utilities(forest, reference.X, utility, origin_class=origin,
                                          reference_proba=reference_proba)
    idx = _climb(int(start_index), u_ref, pred_ref, backend, stop, origin)
    return Trajectory(indices=np.asarray(idx, dtype=np.int64), utilities=u_ref[idx])


def trajectory_from_point(forest: Forest, instance, reference: Dataset, backend,
                          utility: UtilitySpec, stop=STOP_CONVERGENCE, reference_proba=None):
    """Trajectory whose starting point is not a reference member.

    Returns (start_utility, Trajectory); the trajectory indices cover the
    reference points visited after leaving the instance (empty when no
    reference point improves on it). The first hop uses the unseen-point
    distance row, later hops the in-sample rows.
    """
    if stop not in (STOP_CONVERGENCE, STOP_CLASS_FLIP):
        raise ValueError(f"unknown stop criterion {stop!r}")
    x = np.asarray(instance, dtype=np.float64)
    origin = int(np.argmax(predict_proba(forest, x)))
    u_ref, pred_ref = reference_utilities(forest, reference.X, utility, origin_class=origin,
                                          reference_proba=reference_proba)
    u0 = utility_eval(forest, x, utility, origin_class=origin)

    candidates = np.nonzero(u_ref > u0)[0]
    if candidates.size == 0:
        return u0, Trajectory(indices=np.empty(0, dtype=np.int64), utilities=np.empty(0))
    first = _restricted_argmin(backend.row_for_point(x), candidates)
    idx = _climb(first, u_ref, pred_ref, backend, stop, origin)
    return u0, Trajectory(indices=np.asarray(idx, dtype=np.int64), utilities=u_ref[idx])
