import numpy as np
import pytest

from rfexplain import data, forest
from rfexplain import synth


@pytest.fixture(scope="session")
def credit_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("credit") / "credit.csv"
    synth.write_credit_csv(path, n=400, seed=11)
    cats = [name for name, _ in synth.CREDIT_CATEGORICALS]
    return data.load_tabular(path, label_column="risk", categorical_columns=cats)


@pytest.fixture(scope="session")
def credit_split(credit_dataset):
    sp = data.split(credit_dataset, 0.5, seed=11)
    return sp, credit_dataset.subset(sp.train), credit_dataset.subset(sp.test)


@pytest.fixture(scope="session")
def credit_forest(credit_split):
    _, train, _ = credit_split
    return forest.fit(train, n_trees=150, max_depth=5, seed=11)


@pytest.fixture(scope="session")
def toy_numeric():
    """Small 2-class numeric dataset with enough structure to train on."""
    rng = np.random.default_rng(3)
    X = rng.normal(0.0, 1.0, size=(80, 5)).round(2)
    y = (X[:, 0] + 0.7 * X[:, 1] - 0.4 * X[:, 2] + 0.3 * rng.standard_normal(80) > 0).astype(int)
    from helpers import numeric_dataset
    return numeric_dataset(X, y, class_names=("neg", "pos"))


@pytest.fixture(scope="session")
def toy_forest(toy_numeric):
    return forest.fit(toy_numeric, n_trees=40, max_depth=3, seed=5)
