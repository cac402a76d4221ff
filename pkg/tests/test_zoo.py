import json
import pickle

import numpy as np
import pytest

from conftest import table_dataset
from tabtext.datasets import register_builtin, split
from tabtext.zoo import (FAMILIES, AdapterGuardError, AdapterUnavailable, HyperGrid, TabularEncoder, ZooError,
                         builtin_grid, external_adapter, grid_search, make_estimator, predict_proba, reduced_grid)


def test_builtin_grid_sizes():
    assert {f: len(builtin_grid(f)) for f in FAMILIES} == {"gbdt_a": 1944, "gbdt_b": 4800, "svm_rbf": 24}
    for f in FAMILIES:
        assert len(builtin_grid(f).points()) == len(builtin_grid(f))


def test_reduced_grids_are_subsets_of_full():
    for f in FAMILIES:
        full = dict(builtin_grid(f).axes)
        for name, values in reduced_grid(f).axes:
            assert set(values) <= set(full[name])


def test_grid_validation_and_family_checks():
    with pytest.raises(ZooError, match="empty"):
        HyperGrid.of("svm_rbf", {"C": []})
    with pytest.raises(ZooError, match="unknown model family"):
        builtin_grid("rf")
    with pytest.raises(ZooError, match="grid is for"):
        grid_search("gbdt_a", reduced_grid("svm_rbf"), register_builtin("iris"))


def test_parameter_mapping():
    xgb = make_estimator("gbdt_a", {"max_depth": 4, "lambda_l1": 0.1, "lambda_l2": 1.0, "eta": 0.3}).get_params()
    assert (xgb["max_depth"], xgb["reg_alpha"], xgb["reg_lambda"], xgb["learning_rate"]) == (4, 0.1, 1.0, 0.3)
    lgb = make_estimator("gbdt_b", {"num_leaves": 8, "lambda_l1": 0.1, "lambda_l2": 10.0, "learning_rate": 0.03})
    p = lgb.get_params()
    assert (p["num_leaves"], p["reg_alpha"], p["reg_lambda"], p["learning_rate"]) == (8, 0.1, 10.0, 0.03)
    svm = make_estimator("svm_rbf", {"C": 10, "gamma": "scale", "kernel": "rbf"})
    assert svm.get_params()["svc__C"] == 10


def test_evaluation_count_probe():
    """Every (point, fold) pair is scored exactly once."""
    seen = []

    def probe(y, proba, labels):
        seen.append(len(y))
        return float((proba.argmax(1) == y).mean())

    grid = HyperGrid.of("svm_rbf", {"C": (0.1, 1, 10), "gamma": ("scale", 0.1), "kernel": ("rbf",)})
    res = grid_search("svm_rbf", grid, register_builtin("iris"), metric=probe, folds=3)
    assert len(seen) == res.evaluations == 6 * 3
    assert sum(seen) == 6 * 150
    assert len(res.grid_means) == 6


def test_ties_go_to_earliest_point():
    grid = HyperGrid.of("svm_rbf", {"C": (1, 10, 100), "kernel": ("rbf",)})
    res = grid_search("svm_rbf", grid, register_builtin("iris"), metric=lambda y, p, labels: 0.5, folds=3)
    assert res.best_params == {"C": 1, "kernel": "rbf"}


def test_search_is_deterministic():
    tr, _ = split(register_builtin("wine"), stratify=False)
    a = grid_search("gbdt_b", reduced_grid("gbdt_b"), tr, folds=3)
    b = grid_search("gbdt_b", reduced_grid("gbdt_b"), tr, folds=3)
    assert a.best_params == b.best_params and a.grid_means == b.grid_means


def test_folds_need_enough_members():
    ds = table_dataset("iris", ["a", "y"], [[str(i), str(i % 2)] for i in range(6)], "y")
    with pytest.raises(ZooError, match="at least 5 members"):
        grid_search("svm_rbf", reduced_grid("svm_rbf"), ds)


def test_encoder_handles_categories_and_missing():
    ds = register_builtin("titanic")
    enc = TabularEncoder(exclude=("PassengerId",)).fit(ds)
    X = enc.transform(ds)
    names = enc.output_names()
    assert X.shape == (891, len(names))
    assert "Sex=male" in names and "Embarked=S" in names and "Name" not in names
    assert np.isnan(X[:, names.index("Age")]).any()
    with pytest.raises(ZooError, match="schema mismatch"):
        enc.transform(register_builtin("iris"))


def test_fit_predict_and_save(tmp_path):
    tr, te = split(register_builtin("iris"), stratify=False)
    res = grid_search("gbdt_a", reduced_grid("gbdt_a"), tr, folds=3)
    proba = predict_proba(res, te)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert proba.shape == (te.n, 3)
    d = res.save(tmp_path / "fit")
    meta = json.loads((d / "best_params.json").read_text())
    assert meta["best_params"] == res.best_params and meta["folds"] == 3
    with open(d / "model.pkl", "rb") as fh:
        blob = pickle.load(fh)
    np.testing.assert_allclose(blob["model"].predict_proba(blob["encoder"].transform(te)), proba)


def test_external_adapters():
    with pytest.raises(ZooError):
        external_adapter("catboost")
    small = register_builtin("iris")
    for name in ("tabnet", "tabpfn"):
        try:
            external_adapter(name).fit(small)
        except AdapterUnavailable as exc:
            assert name in str(exc)
    with pytest.raises(AdapterGuardError, match="1024"):
        external_adapter("tabpfn").fit(table_dataset("iris", ["a", "y"], [[i % 7, i % 2] for i in range(1100)], "y"))
