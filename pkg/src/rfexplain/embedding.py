"""Classical multidimensional scaling of distance matrices to 2-D.

Double-center the squared distances, take the top two spectral
components, and report the eigenvalue mass those two components discard
as a stress figure. Model-aware distances are generally non-Euclidean,
so negative eigenvalues are clamped to zero rather than treated as an
error; infinite entries (unreachable pairs) are capped at a multiple of
the largest finite distance so they stay peripheral without dominating
the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .proximity import DistanceMatrix


@dataclass
class EmbeddingCoords:
    """2-D coordinates (centroid at the origin) plus residual stress.

    ``stress`` is the fraction of total absolute eigenvalue mass not
    carried by the two retained axes; exactly planar Euclidean input
    gives (numerically) zero.
    """

    coords: np.ndarray  # (n, 2)
    stress: float

    @property
    def n(self):
        return self.coords.shape[0]


def mds_embed(distances, inf_cap_factor=1.5) -> EmbeddingCoords:
    """Classical MDS via double-centering and top-2 eigendecomposition.

    The output is deterministic: each axis is flipped so its first
    coordinate of meaningful magnitude is positive.
    """
    D = distances.values if isinstance(distances, DistanceMatrix) else np.asarray(distances, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points to embed")
    if not np.array_equal(D, D.T):
        raise ValueError("distance matrix must be symmetric")
    if inf_cap_factor <= 1.0:
        raise ValueError("inf_cap_factor must exceed 1")

    off_diag = ~np.eye(n, dtype=bool)
    finite = np.isfinite(D) & off_diag
    if not finite.any():
        raise DegenerateInputError("all pairwise distances are infinite")
    if np.isinf(D).any():
        cap = inf_cap_factor * D[finite].max()
        D = np.where(np.isinf(D), cap, D)

    sq = D ** 2
    row_mean = sq.mean(axis=1, keepdims=True)
    B = -0.5 * (sq - row_mean - row_mean.T + sq.mean())

    eigval, eigvec = np.linalg.eigh(B)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]

    top = np.maximum(eigval[:2], 0.0)
    coords = eigvec[:, :2] * np.sqrt(top)[None, :]

    total_abs = np.abs(eigval).sum()
    stress = float(1.0 - top.sum() / total_abs) if total_abs > 0 else 0.0

    for axis in range(2):
        col = coords[:, axis]
        scale = np.abs(col).max()
        if scale == 0:
            continue
        lead = col[np.abs(col) > 1e-9 * scale]
        if lead.size and lead[0] < 0:
            coords[:, axis] = -col
    return EmbeddingCoords(coords=coords, stress=stress)


def write_embedding(path, coords: EmbeddingCoords, labels=None, trajectory_indices=(), delimiter=","):
    """One row per point: index, u, v, label, trajectory_flag."""
    traj = set(int(i) for i in trajectory_indices)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["index", "u", "v", "label", "trajectory_flag"]) + "\n")
        for i in range(coords.n):
            lab = "" if labels is None else str(labels[i])
            row = [str(i), f"{coords.coords[i, 0]:.12g}", f"{coords.coords[i, 1]:.12g}",
                   lab, "1" if i in traj else "0"]
            fh.write(delimiter.join(row) + "\n")
    return path
