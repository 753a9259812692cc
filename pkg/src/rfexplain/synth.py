"""Synthetic stand-in datasets for demos and hermetic tests.

Two generators mirror the shapes of the benchmark datasets the library
is aimed at, so every pipeline can run without shipping or downloading
data files:

  * a credit-scoring table: 1,000 rows, 20 raw attributes (13
    categorical + 7 numeric) plus a good/bad label, one-hot encoding to
    exactly 61 columns;
  * rendered digit images: 28x28 grayscale glyphs (classes 0-9) with
    random shift/scale/rotation, stroke intensity jitter, and low-level
    background sensor noise, written in IDX binary format on request.

Both are seeded and fully deterministic.
"""

from __future__ import annotations

import struct

import numpy as np

# (name, levels) for the 13 categorical attributes; level counts chosen so
# one-hot encoding of 20 attributes yields 61 columns (54 one-hot + 7 numeric).
CREDIT_CATEGORICALS = [
    ("checking_status", ["0_to_200", "ge_200", "lt_0", "none"]),
    ("credit_history", ["all_paid", "critical", "delayed", "existing_paid", "no_credits"]),
    ("purpose", ["appliance", "business", "car_new", "car_used", "education",
                 "furniture", "other", "repairs", "retraining", "tv"]),
    ("savings", ["100_to_500", "500_to_1000", "ge_1000", "lt_100", "unknown"]),
    ("employment", ["1_to_4y", "4_to_7y", "ge_7y", "lt_1y", "unemployed"]),
    ("personal_status", ["div_sep", "married", "single", "widowed"]),
    ("other_debtors", ["co_applicant", "guarantor", "none"]),
    ("property", ["car_other", "real_estate", "savings_insurance", "unknown"]),
    ("other_plans", ["bank", "none", "stores"]),
    ("housing", ["free", "own", "rent"]),
    ("job", ["management", "skilled", "unskilled_nonres", "unskilled_res"]),
    ("telephone", ["none", "yes"]),
    ("foreign_worker", ["no", "yes"]),
]

CREDIT_NUMERICS = [
    "duration_months",
    "credit_amount",
    "installment_rate",
    "residence_since",
    "age_years",
    "existing_credits",
    "dependents",
]

CREDIT_LABEL = "risk"

# latent risk contributions per level (positive pushes toward "bad")
_CHECKING_RISK = {"lt_0": 1.0, "0_to_200": 0.45, "ge_200": -0.35, "none": -0.75}
_SAVINGS_RISK = {"lt_100": 0.55, "100_to_500": 0.15, "500_to_1000": -0.25,
                 "ge_1000": -0.6, "unknown": -0.15}
_HISTORY_RISK = {"no_credits": 0.5, "all_paid": 0.35, "existing_paid": 0.0,
                 "delayed": 0.3, "critical": -0.45}
_EMPLOYMENT_RISK = {"unemployed": 0.45, "lt_1y": 0.3, "1_to_4y": 0.0,
                    "4_to_7y": -0.2, "ge_7y": -0.3}

# hard-to-separate noise scale, tuned so a 1000-tree depth-5 forest on a
# 50/50 split lands near 74% test accuracy (majority class is 70%)
_NOISE_SCALE = 0.8
_BAD_RATE = 0.30


def make_credit_rows(n=1000, seed=0):
    """Header and string rows of the credit-scoring stand-in table."""
    rng = np.random.default_rng(seed)

    cats = {}
    for name, levels in CREDIT_CATEGORICALS:
        k = len(levels)
        # mildly skewed level frequencies, deterministic per attribute
        weights = 1.0 / (1.0 + 0.35 * np.arange(k, dtype=np.float64))
        weights = weights / weights.sum()
        draws = rng.choice(k, size=n, p=weights)
        # guarantee every level is observed so the encoded width is stable
        for lv in range(k):
            if not (draws == lv).any():
                draws[int(rng.integers(0, n))] = lv
        cats[name] = np.array(levels)[draws]

    duration = np.clip(np.round(rng.lognormal(np.log(20.0), 0.55, n)), 4, 72).astype(int)
    amount = np.clip(np.round(rng.lognormal(np.log(2500.0), 0.85, n)), 250, 20000).astype(int)
    installment = rng.integers(1, 5, size=n)
    residence = rng.integers(1, 5, size=n)
    age = np.clip(np.round(rng.normal(35.0, 11.0, n)), 19, 75).astype(int)
    credits = 1 + rng.binomial(3, 0.18, size=n)
    dependents = 1 + (rng.random(n) < 0.15).astype(int)

    z = (
        np.array([_CHECKING_RISK[v] for v in cats["checking_status"]])
        + np.array([_SAVINGS_RISK[v] for v in cats["savings"]])
        + np.array([_HISTORY_RISK[v] for v in cats["credit_history"]])
        + np.array([_EMPLOYMENT_RISK[v] for v in cats["employment"]])
        + 0.55 * (duration - 20.0) / 12.0
        + 0.40 * np.log(amount / 2500.0)
        + 0.45 * (age < 25)
        - 0.012 * (age - 35.0)
        + 0.15 * (installment - 2.5)
        + _NOISE_SCALE * rng.standard_normal(n)
    )
    cut = np.quantile(z, 1.0 - _BAD_RATE)
    label = np.where(z > cut, "bad", "good")

    header = [name for name, _ in CREDIT_CATEGORICALS] + CREDIT_NUMERICS + [CREDIT_LABEL]
    numerics = [duration, amount, installment, residence, age, credits, dependents]
    rows = []
    for i in range(n):
        row = [cats[name][i] for name, _ in CREDIT_CATEGORICALS]
        row += [str(int(col[i])) for col in numerics]
        row.append(label[i])
        rows.append(row)
    return header, rows


def write_credit_csv(path, n=1000, seed=0):
    """Write the credit stand-in as a comma-separated file with header."""
    header, rows = make_credit_rows(n=n, seed=seed)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return path


# ---------------------------------------------------------------------------
# digit images
# ---------------------------------------------------------------------------

def _circle(cx, cy, r, n=24, start=0.0, stop=2 * np.pi):
    ang = np.linspace(start, stop, n)
    return np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)


def _digit_skeletons():
    """Polyline strokes per digit on a unit square (y grows downward)."""
    strokes = {
        0: [_circle(0.5, 0.5, 0.32)],
        1: [np.array([[0.38, 0.3], [0.55, 0.12], [0.55, 0.88]])],
        2: [np.concatenate([_circle(0.5, 0.3, 0.22, start=np.pi, stop=2.25 * np.pi),
                            np.array([[0.3, 0.88], [0.78, 0.88]])])],
        3: [_circle(0.48, 0.3, 0.2, start=-0.75 * np.pi, stop=0.6 * np.pi),
            _circle(0.48, 0.68, 0.22, start=-0.6 * np.pi, stop=0.75 * np.pi)],
        4: [np.array([[0.62, 0.88], [0.62, 0.12], [0.22, 0.62], [0.82, 0.62]])],
        5: [np.array([[0.72, 0.14], [0.32, 0.14], [0.3, 0.45]]),
            _circle(0.48, 0.64, 0.23, start=-0.55 * np.pi, stop=0.75 * np.pi)],
        6: [np.array([[0.62, 0.12], [0.38, 0.42], [0.33, 0.62]]),
            _circle(0.5, 0.66, 0.2)],
        7: [np.array([[0.25, 0.14], [0.75, 0.14], [0.45, 0.88]])],
        8: [_circle(0.5, 0.3, 0.18), _circle(0.5, 0.68, 0.22)],
        9: [_circle(0.5, 0.34, 0.2),
            np.array([[0.68, 0.36], [0.62, 0.88]])],
    }
    return strokes


def _render_base(strokes, size=56, sigma=0.055):
    """Distance-field rendering of one digit's strokes on a size x size canvas."""
    ys, xs = np.mgrid[0:size, 0:size]
    pts = np.stack([(xs + 0.5) / size, (ys + 0.5) / size], axis=-1).reshape(-1, 2)
    canvas = np.zeros(pts.shape[0])
    for poly in strokes:
        a, b = poly[:-1], poly[1:]
        ab = b - a
        ab_len2 = np.maximum((ab ** 2).sum(axis=1), 1e-12)
        ap = pts[:, None, :] - a[None, :, :]
        t = np.clip((ap * ab[None, :, :]).sum(axis=2) / ab_len2[None, :], 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        dist = np.sqrt(((pts[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)
        canvas = np.maximum(canvas, np.exp(-(dist ** 2) / (2 * sigma ** 2)))
    return canvas.reshape(size, size)


def make_digit_images(n, seed=0, size=28, noise_max=5):
    """n jittered digit images (uint8, size x size) with balanced-ish labels.

    Each image is an affine-perturbed sample of its digit's stroke
    rendering plus uniform background sensor noise in [0, noise_max].
    """
    rng = np.random.default_rng(seed)
    bases = {dig: _render_base(strokes) for dig, strokes in _digit_skeletons().items()}
    base_stack = np.stack([bases[d] for d in range(10)])  # (10, 56, 56)
    bs = base_stack.shape[1]

    labels = rng.integers(0, 10, size=n).astype(np.uint8)
    shift = rng.uniform(-2.5, 2.5, size=(n, 2))
    scale = rng.uniform(0.8, 1.2, size=n)
    angle = rng.uniform(-0.3, 0.3, size=n)
    gain = rng.uniform(0.65, 1.0, size=n)

    ys, xs = np.mgrid[0:size, 0:size]
    gx = (xs + 0.5) / size - 0.5
    gy = (ys + 0.5) / size - 0.5
    grid = np.stack([gx.ravel(), gy.ravel()], axis=0)  # (2, size*size)

    cos, sin = np.cos(angle), np.sin(angle)
    # inverse affine: output pixel -> base canvas coordinate
    u = (cos[:, None] * grid[0] + sin[:, None] * grid[1]) / scale[:, None]
    v = (-sin[:, None] * grid[0] + cos[:, None] * grid[1]) / scale[:, None]
    u = (u + 0.5) * bs - 0.5 + shift[:, 0:1]
    v = (v + 0.5) * bs - 0.5 + shift[:, 1:2]

    u0 = np.clip(np.floor(u).astype(np.int64), 0, bs - 2)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, bs - 2)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)

    lab = labels.astype(np.int64)[:, None]
    c00 = base_stack[lab, v0, u0]
    c01 = base_stack[lab, v0, u0 + 1]
    c10 = base_stack[lab, v0 + 1, u0]
    c11 = base_stack[lab, v0 + 1, u0 + 1]
    val = (c00 * (1 - fu) * (1 - fv) + c01 * fu * (1 - fv)
           + c10 * (1 - fu) * fv + c11 * fu * fv)

    img = 255.0 * gain[:, None] * val
    img += rng.integers(0, noise_max + 1, size=img.shape)
    img = np.clip(np.round(img), 0, 255).astype(np.uint8).reshape(n, size, size)
    return img, labels


def write_idx(images, labels, images_path, labels_path):
    """Write images/labels in the big-endian IDX binary format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        fh.write(labels.tobytes())
    return images_path, labels_path
