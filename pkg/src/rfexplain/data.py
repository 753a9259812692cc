"""Tabular and image dataset loading with a uniform encoded representation.

Every dataset is exposed as an (n, d) float matrix plus integer class
labels. Categorical columns are one-hot encoded at load time; the
FeatureSchema records how encoded columns map back to raw features so
that explanations can be reported per raw feature or per encoded column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, FormatError, ParseError, SchemaError

NUMERIC = "numeric"
ONEHOT = "onehot"

# tokens rejected as missing values (imputation is out of scope)
_MISSING_TOKENS = {"", "?", "NA", "NaN", "nan"}


@dataclass(frozen=True)
class FeatureSchema:
    """Layout of the encoded feature space.

    feature_names: one name per encoded column, in matrix order.
    groups: raw feature name -> encoded column indices (singleton for numerics).
    kinds: per encoded column, either ``numeric`` or ``onehot``.
    """

    feature_names: tuple
    groups: dict
    kinds: tuple

    @property
    def n_features(self):
        return len(self.feature_names)

    def validate(self):
        seen = {}
        for raw, cols in self.groups.items():
            for c in cols:
                if c in seen:
                    raise SchemaError(f"encoded column {c} appears in groups {seen[c]!r} and {raw!r}")
                seen[c] = raw
        if sorted(seen) != list(range(self.n_features)):
            raise SchemaError("groups do not cover every encoded column exactly once")
        if len(self.kinds) != self.n_features:
            raise SchemaError("kinds length does not match feature count")

    def onehot_columns(self):
        return [i for i, k in enumerate(self.kinds) if k == ONEHOT]


@dataclass
class Dataset:
    """Encoded instances, integer class labels, and their schema.

    ``y`` holds indices into ``class_names``. Instances are immutable by
    convention: nothing in the library writes to ``X`` after construction.
    """

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    class_names: tuple

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise SchemaError("instance matrix must be 2-dimensional")
        if self.X.shape[0] != self.y.shape[0]:
            raise SchemaError("instance and label counts differ")
        if self.X.shape[1] != self.schema.n_features:
            raise SchemaError(
                f"matrix has {self.X.shape[1]} columns, schema declares {self.schema.n_features}"
            )

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, indices) -> "Dataset":
        """View of selected rows (copying; datasets are small at desk scale)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.schema, self.class_names)

    def validate_encoding(self):
        """Check that every one-hot group is exactly one-hot in every row."""
        self.schema.validate()
        for raw, cols in self.schema.groups.items():
            if any(self.schema.kinds[c] == ONEHOT for c in cols):
                block = self.X[:, cols]
                if not np.isin(block, (0.0, 1.0)).all():
                    raise SchemaError(f"one-hot group {raw!r} contains values outside {{0, 1}}")
                if not (block.sum(axis=1) == 1.0).all():
                    raise SchemaError(f"one-hot group {raw!r} does not sum to 1 in every row")


@dataclass(frozen=True)
class SplitIndices:
    """Seeded train/test partition of row indices 0..n-1."""

    train: np.ndarray
    test: np.ndarray
    seed: int


def _detect_delimiter(header_line, delimiter):
    if delimiter == ",":
        return ","
    if delimiter == "whitespace":
        return None  # str.split() semantics
    if delimiter == "auto":
        return "," if "," in header_line else None
    raise SchemaError(f"unknown delimiter spec {delimiter!r}")


def load_tabular(path, label_column, categorical_columns=(), delimiter="auto") -> Dataset:
    """Load a delimited text file with a header row into an encoded Dataset.

    Columns named in ``categorical_columns`` are one-hot encoded into
    {0,1} columns (one per observed level, levels sorted); all other
    non-label columns are parsed as reals. Row order is preserved:
    file row k becomes instance k. Missing values are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    if not lines:
        raise ParseError(f"{path}: empty file")
    sep = _detect_delimiter(lines[0], delimiter)
    header = [h.strip() for h in (lines[0].split(sep) if sep else lines[0].split())]

    if label_column not in header:
        raise SchemaError(f"label column {label_column!r} not found in header {header}")
    categorical_columns = list(categorical_columns)
    for c in categorical_columns:
        if c not in header:
            raise SchemaError(f"categorical column {c!r} not found in header")

    rows = []
    for r, ln in enumerate(lines[1:]):
        cells = [c.strip() for c in (ln.split(sep) if sep else ln.split())]
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=r)
        rows.append(cells)

    label_pos = header.index(label_column)
    cat_set = set(categorical_columns)
    raw_features = [h for h in header if h != label_column]

    # First pass: collect categorical levels and validate numerics.
    levels = {c: set() for c in categorical_columns}
    for r, cells in enumerate(rows):
        for j, name in enumerate(header):
            v = cells[j]
            if v in _MISSING_TOKENS:
                raise ParseError("missing value", row=r, column=name)
            if j == label_pos or name in cat_set:
                if name in cat_set:
                    levels[name].add(v)
                continue
            try:
                float(v)
            except ValueError:
                raise ParseError(f"cannot parse {v!r} as a number", row=r, column=name) from None
    levels = {c: sorted(vals) for c, vals in levels.items()}

    feature_names, kinds, groups = [], [], {}
    col_of = {}  # raw name -> (kind, start index)
    for name in raw_features:
        if name in cat_set:
            start = len(feature_names)
            for lv in levels[name]:
                feature_names.append(f"{name}={lv}")
                kinds.append(ONEHOT)
            groups[name] = list(range(start, len(feature_names)))
            col_of[name] = (ONEHOT, start)
        else:
            groups[name] = [len(feature_names)]
            col_of[name] = (NUMERIC, len(feature_names))
            feature_names.append(name)
            kinds.append(NUMERIC)

    class_names = sorted({cells[label_pos] for cells in rows})
    class_index = {c: i for i, c in enumerate(class_names)}

    X = np.zeros((len(rows), len(feature_names)), dtype=np.float64)
    y = np.zeros(len(rows), dtype=np.int64)
    for r, cells in enumerate(rows):
        y[r] = class_index[cells[label_pos]]
        for j, name in enumerate(header):
            if j == label_pos:
                continue
            kind, start = col_of[name]
            if kind == ONEHOT:
                X[r, start + levels[name].index(cells[j])] = 1.0
            else:
                X[r, start] = float(cells[j])

    schema = FeatureSchema(tuple(feature_names), groups, tuple(kinds))
    ds = Dataset(X, y, schema, tuple(class_names))
    ds.validate_encoding()
    return ds


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what} ({len(buf)} of {n} bytes)")
    return buf


def load_idx_images(images_path, labels_path, limit=None, normalize=False) -> Dataset:
    """Load IDX-format image/label files into a flattened Dataset.

    Each r x c image becomes one row of r*c pixel features. Pixel values
    stay in [0, 255] unless ``normalize`` divides them by 255.
    """
    with open(images_path, "rb") as fh:
        magic, n_img, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        n_take = n_img if limit is None else min(limit, n_img)
        raw = _read_exact(fh, n_take * rows * cols, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n_take, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, n_lab = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        if n_lab != n_img:
            raise ConsistencyError(f"{n_img} images but {n_lab} labels")
        labels = np.frombuffer(_read_exact(fh, n_take, "label data"), dtype=np.uint8)

    X = images.astype(np.float64)
    if normalize:
        X = X / 255.0
    class_names = tuple(str(v) for v in sorted(np.unique(labels)))
    to_index = {int(v): i for i, v in enumerate(sorted(np.unique(labels)))}
    y = np.array([to_index[int(v)] for v in labels], dtype=np.int64)

    names = tuple(f"px{i:03d}" for i in range(rows * cols))
    schema = FeatureSchema(names, {n: [i] for i, n in enumerate(names)}, (NUMERIC,) * len(names))
    return Dataset(X, y, schema, class_names)


def split(dataset: Dataset, test_fraction, seed) -> SplitIndices:
    """Seeded disjoint train/test split with |test| = round(test_fraction * n)."""
    n = dataset.n
    if n < 2:
        raise ValueError("need at least 2 instances to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n_test = int(np.floor(test_fraction * n + 0.5))
    if n_test == 0 or n_test == n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return SplitIndices(train=train, test=test, seed=int(seed))
