import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tabtext.curation import CurationError, FeatureScore, anova_f_scores, select_by_threshold, shapley_values_exact
from tabtext.datasets import MISSING, build_dataset, load_csv, split, to_csv
from tabtext.metrics import accuracy, auroc, f1, logit_delta, mcc
from tabtext.template import parse_text

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

cell = st.one_of(st.integers(-1000, 1000).map(str), st.sampled_from(["a", "b c", "x,y", 'q"q', ""]))


@SETTINGS
@given(st.integers(2, 4).flatmap(lambda m: st.lists(st.lists(cell, min_size=m, max_size=m), min_size=2, max_size=12)))
def test_csv_round_trip(tmp_path_factory, rows):
    m = len(rows[0])
    header = [f"c{j}" for j in range(m)] + ["y"]
    recs = [r + [str(i % 2)] for i, r in enumerate(rows)]
    ds = build_dataset("t", header, recs, "y")
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    to_csv(ds, path)
    back = load_csv(path, "y", name="t")
    assert back.feature_names == ds.feature_names and back.y.tolist() == ds.y.tolist()
    for f in ds.feature_names:
        for i in range(ds.n):
            a, b = ds.value(i, f), back.value(i, f)
            assert (a is MISSING and b is MISSING) or a == b


@SETTINGS
@given(st.integers(10, 80), st.integers(0, 2**31 - 1), st.floats(0.1, 0.5), st.booleans())
def test_split_partition_and_determinism(n, seed, frac, stratify):
    recs = [[str(i), str(i % 2)] for i in range(n)]
    ds = build_dataset("t", ["a", "y"], recs, "y")
    tr, te = split(ds, frac, seed, stratify)
    tr2, te2 = split(ds, frac, seed, stratify)
    assert tr == tr2 and te == te2
    assert sorted(list(tr.index) + list(te.index)) == list(range(n))


literal = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30)


@given(literal)
def test_escaped_text_parses_to_itself(s):
    escaped = s.replace("{", "{{").replace("}", "}}")
    parts = parse_text(escaped)
    assert "".join(parts) == s


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50), st.floats(-50, 50))
def test_anova_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    y = np.arange(30) % 3
    X = rng.normal(size=(30, 3)) * rng.uniform(0.1, 10, 3) + rng.normal(size=3)[None, :] * y[:, None]
    base = [s.score for s in anova_f_scores(X, y)]
    moved = [s.score for s in anova_f_scores(a * X + b, y)]
    np.testing.assert_allclose(moved, base, rtol=1e-6, atol=1e-9)


@SETTINGS
@given(st.lists(st.floats(0, 1000), min_size=2, max_size=10), st.floats(0, 1000), st.floats(0, 1000))
def test_threshold_selection_is_monotone(values, t1, t2):
    scores = [FeatureScore(f"f{i}", v) for i, v in enumerate(values)]
    lo, hi = min(t1, t2), max(t1, t2)
    try:
        high = select_by_threshold(scores, hi)
    except CurationError:
        return
    assert high <= select_by_threshold(scores, lo)


@SETTINGS
@given(arrays(np.float64, (4,), elements=st.floats(-5, 5)), arrays(np.float64, (2, 4), elements=st.floats(-5, 5)),
       arrays(np.float64, (6, 4), elements=st.floats(-5, 5)))
def test_shapley_efficiency_and_linearity(w, X, bg):
    def f(Z):
        return Z @ w + Z[:, 0] * Z[:, 1]

    phi = shapley_values_exact(f, X, bg)
    np.testing.assert_allclose(phi.sum(1), f(X) - f(bg).mean(), atol=1e-8)
    phi_lin = shapley_values_exact(lambda Z: Z @ w, X, bg)
    np.testing.assert_allclose(phi_lin, (X - bg.mean(0)) * w, atol=1e-8)


labels_and_preds = st.integers(2, 4).flatmap(
    lambda k: st.tuples(st.just(k), st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)),
                                             min_size=2, max_size=40)))


@SETTINGS
@given(labels_and_preds, st.randoms())
def test_count_metrics_invariant_under_relabelling(kp, rnd):
    k, pairs = kp
    t = np.array([p[0] for p in pairs])
    p = np.array([p[1] for p in pairs])
    perm = list(range(k))
    rnd.shuffle(perm)
    perm = np.array(perm)
    labels = list(range(k))
    assert accuracy(perm[t], perm[p]) == accuracy(t, p)
    assert mcc(perm[t], perm[p], labels) == pytest.approx(mcc(t, p, labels), abs=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert f1(perm[t], perm[p], "macro", labels) == pytest.approx(f1(t, p, "macro", labels), abs=1e-12)


@SETTINGS
@given(st.lists(st.tuples(st.booleans(), st.integers(-20, 20)), min_size=2, max_size=40))
def test_auroc_invariant_under_monotone_maps(pairs):
    y = np.array([int(a) for a, _ in pairs])
    s = np.array([b for _, b in pairs], dtype=float)
    assume(0 < y.sum() < len(y))
    base = auroc(y, s)
    assert auroc(y, np.exp(s / 5)) == pytest.approx(base, abs=1e-12)
    assert auroc(y, 3 * s - 7) == pytest.approx(base, abs=1e-12)
    assert auroc(1 - y, s) == pytest.approx(1 - base, abs=1e-12)


@SETTINGS
@given(arrays(np.float64, (5, 3), elements=st.floats(-50, 50)), arrays(np.float64, (5, 3), elements=st.floats(-50, 50)))
def test_logit_delta_antisymmetric(a, b):
    d1, d2 = logit_delta(a, b), logit_delta(b, a)
    np.testing.assert_array_equal(d1.delta, -d2.delta)
    assert d1.flipped.tolist() == d2.flipped.tolist()
    assert d1.mean_abs == d2.mean_abs
