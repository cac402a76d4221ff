import json

import numpy as np
import pytest

from tabtext.datasets import (BUILTINS, MISSING, DatasetError, build_dataset, is_missing, load_csv, register_builtin,
                              split, subsample, to_csv)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_missing_sentinel_is_singleton_and_falsy():
    import pickle

    assert pickle.loads(pickle.dumps(MISSING)) is MISSING
    assert not MISSING
    assert repr(MISSING) == "MISSING"
    assert is_missing(MISSING) and is_missing(float("nan")) and not is_missing(0.0)


def test_load_csv_types_and_missing(tmp_path):
    p = write(tmp_path, "toy.csv", "a,b,c,y\n1,x,NA,0\n2.5,,3,1\n3,z,null,1\n")
    ds = load_csv(p, "y")
    assert ds.n == 3 and ds.m == 3
    assert ds.feature("a").kind == "numeric" and not ds.feature("a").integer
    assert ds.feature("b").kind == "categorical"
    assert ds.value(1, "b") is MISSING
    assert ds.value(0, "c") is MISSING and ds.value(1, "c") == 3.0
    assert ds.feature("c").integer
    assert "missing_data" in ds.card.flags
    assert ds.missing_features() == ["b", "c"]


def test_tsv_uses_tab(tmp_path):
    p = write(tmp_path, "toy.tsv", "a\ty\n1\t0\n2\t1\n")
    assert load_csv(p, "y").n == 2


@pytest.mark.parametrize("text,msg", [
    ("a,b\n1,2\n", "missing label column"),
    ("a,y\n", "zero data rows"),
    ("a,y\n1,0\n1,2,3\n", "ragged row at line 3"),
    ("", "empty file"),
])
def test_load_csv_errors(tmp_path, text, msg):
    p = write(tmp_path, "bad.csv", text)
    with pytest.raises(DatasetError, match=msg):
        load_csv(p, "y")


def test_label_with_missing_value_rejected():
    with pytest.raises(DatasetError, match="missing values"):
        build_dataset("t", ["a", "y"], [["1", "0"], ["2", ""]], "y")


def test_numeric_labels_sort_numerically():
    ds = build_dataset("t", ["a", "y"], [["1", "10"], ["2", "9"], ["3", "10"]], "y")
    assert ds.classes == (9, 10)
    assert ds.y.tolist() == [1, 0, 1]


def test_csv_round_trip(tmp_path):
    ds = register_builtin("titanic")
    out = tmp_path / "t.csv"
    to_csv(ds, out)
    back = load_csv(out, "Survived", schema_hint=BUILTINS["titanic"].hints, name="titanic")
    assert back.feature_names == ds.feature_names
    assert back.n == ds.n
    for f in ds.feature_names:
        for i in (0, 1, 5, 888):
            a, b = ds.value(i, f), back.value(i, f)
            assert (a is MISSING and b is MISSING) or a == b


def test_builtin_cards_match_published_table():
    expected = {"iris": (150, 4, False), "wine": (178, 13, False), "diabetes": (784, 8, True),
                "titanic": (891, 11, True), "heloc": (10459, 23, True), "fraud": (284807, 30, True),
                "crime": (878049, 8, False), "cancer": (801, 20533, False)}
    for name, (n, m, binary) in expected.items():
        card = BUILTINS[name].card
        assert (card.sample_size, card.feature_count, card.is_binary) == (n, m, binary)
    assert BUILTINS["titanic"].card.flags == {"missing_data"}
    assert BUILTINS["fraud"].card.flags == {"imbalanced"}


def test_titanic_bundled():
    ds = register_builtin("titanic")
    assert ds.n == 891 and ds.m == 11
    assert ds.value(0, "Cabin") is MISSING
    assert any(ds.value(i, "Age") is MISSING for i in range(ds.n))
    assert ds.mismatches == ()


def test_unknown_and_absent_builtins(tmp_path, monkeypatch):
    with pytest.raises(DatasetError, match="unknown dataset"):
        register_builtin("nope")
    monkeypatch.setenv("TABTEXT_DATA_DIR", str(tmp_path))
    with pytest.raises(DatasetError, match="heloc.csv"):
        register_builtin("heloc")


def test_data_dir_override_and_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("TABTEXT_DATA_DIR", str(tmp_path))
    write(tmp_path, "iris.csv", "sepal_length,sepal_width,petal_length,petal_width,label\n"
                                "1,2,3,4,a\n2,3,4,5,b\n")
    ds = register_builtin("iris")
    assert ds.n == 2
    assert any("2 rows" in m for m in ds.mismatches)
    manifest = json.loads((tmp_path / "iris.card.json").read_text())
    assert manifest["observed"]["n"] == 2


def test_split_is_deterministic_and_disjoint():
    ds = register_builtin("iris")
    a_tr, a_te = split(ds, 0.2, 42)
    b_tr, b_te = split(ds, 0.2, 42)
    assert a_tr == b_tr and a_te == b_te
    assert set(a_tr.index).isdisjoint(a_te.index)
    assert a_tr.n + a_te.n == ds.n and a_te.n == 30
    assert list(a_tr.index) == sorted(a_tr.index)
    # stratified halves keep class balance exactly on iris
    assert a_te.class_counts().tolist() == [10, 10, 10]


def test_split_rejects_singleton_class():
    ds = build_dataset("t", ["a", "y"], [[str(i), "0"] for i in range(5)] + [["9", "1"]], "y")
    with pytest.raises(DatasetError, match="single member"):
        split(ds)
    tr, te = split(ds, stratify=False)
    assert tr.n + te.n == 6


def test_subsample_stratified():
    ds = register_builtin("titanic")
    sub = subsample(ds, 200, seed=1)
    assert sub.n == 200
    frac = ds.class_counts()[1] / ds.n
    assert abs(sub.class_counts()[1] / 200 - frac) < 0.01
    with pytest.raises(DatasetError):
        subsample(ds, ds.n + 1)


def test_numeric_matrix_nan_for_missing():
    ds = register_builtin("titanic")
    X = ds.numeric_matrix(["Age", "Fare"])
    assert X.shape == (891, 2)
    assert np.isnan(X[:, 0]).sum() == sum(ds.value(i, "Age") is MISSING for i in range(ds.n)) > 0
    with pytest.raises(DatasetError):
        ds.numeric_matrix(["Name"])
    assert np.isfinite(X[:, 1]).all()
