"""Feature selection, feature scaling and imputation plans.

Everything here is fitted on training rows and then carried around as plain
statistics, so applying a plan to test rows can never read test data.
"""
from __future__ import annotations

import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .datasets import MISSING, TabularDataset, is_missing


class CurationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureScore:
    feature: str
    score: float
    method: str = "anova_f"

    def __post_init__(self):
        if self.method not in ("anova_f", "shap"):
            raise CurationError(f"unknown scoring method {self.method!r}")
        if not math.isfinite(self.score):
            raise CurationError(f"score for {self.feature!r} is not finite: {self.score}")
        if self.score < 0:
            raise CurationError(f"score for {self.feature!r} is negative")


# ---------------------------------------------------------------- ANOVA


@dataclass(frozen=True)
class AnovaParts:
    ssb: float
    ssw: float
    k: int
    n: int

    @property
    def f(self) -> float:
        if self.ssw == 0:
            return 0.0 if self.ssb == 0 else math.inf
        return (self.ssb / (self.k - 1)) / (self.ssw / (self.n - self.k))


def anova_parts(x: np.ndarray, y: np.ndarray) -> AnovaParts:
    """Between- and within-group sums of squares for one feature.

    Rows where ``x`` is NaN are left out before anything is computed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    keep = ~np.isnan(x)
    x, y = x[keep], y[keep]
    groups, codes = np.unique(y, return_inverse=True)
    k, n = len(groups), len(x)
    if k < 2:
        raise CurationError("ANOVA needs at least two classes")
    if n <= k:
        raise CurationError(f"ANOVA needs more samples than classes (n={n}, k={k})")
    counts = np.bincount(codes, minlength=k)
    group_means = np.bincount(codes, weights=x, minlength=k) / counts
    grand = x.mean()
    ssb = float(np.sum(counts * (group_means - grand) ** 2))
    ssw = float(np.sum((x - group_means[codes]) ** 2))
    return AnovaParts(ssb, ssw, k, n)


def anova_f_scores(X, y, names: Sequence[str] | None = None) -> list[FeatureScore]:
    """ANOVA F-value per column of ``X`` (NaN marks a missing cell)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise CurationError("names and columns differ in length")
    out = []
    for j, name in enumerate(names):
        parts = anova_parts(X[:, j], y)
        f = parts.f
        if parts.ssb == 0 and parts.ssw == 0:
            warnings.warn(f"{name}: constant feature, F defined as 0", RuntimeWarning, stacklevel=2)
        elif math.isinf(f):
            warnings.warn(f"{name}: zero within-group variance, F clamped to the largest float",
                          RuntimeWarning, stacklevel=2)
            f = sys.float_info.max
        out.append(FeatureScore(name, float(f), "anova_f"))
    return out


def anova_for_dataset(ds: TabularDataset, features: Sequence[str] | None = None) -> list[FeatureScore]:
    """Score the numeric features of ``ds``; categorical and text columns are skipped."""
    if features is None:
        features = [f.name for f in ds.schema if f.kind == "numeric"]
    return anova_f_scores(ds.numeric_matrix(features), ds.y, features)


def select_by_threshold(scores: Sequence[FeatureScore], tau: float) -> frozenset:
    if not scores:
        raise CurationError("no scores to threshold")
    keep = frozenset(s.feature for s in scores if s.score >= tau)
    if not keep:
        raise CurationError(f"every feature scores below tau={tau}")
    return keep


def rank(scores: Sequence[FeatureScore]) -> list[str]:
    return [s.feature for s in sorted(scores, key=lambda s: -s.score)]


# ---------------------------------------------------------------- Shapley


def as_prediction_function(model, target_class: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar output per row: the ``target_class`` probability for models with
    ``predict_proba``, ``predict`` otherwise; plain callables pass through."""
    if callable(model) and not hasattr(model, "predict"):
        return lambda X: np.asarray(model(X), dtype=float).reshape(len(X))
    if hasattr(model, "predict_proba"):
        return lambda X: np.asarray(model.predict_proba(X), dtype=float)[:, target_class]
    return lambda X: np.asarray(model.predict(X), dtype=float).reshape(len(X))


def _masked_values(f, x: np.ndarray, background: np.ndarray, masks: Sequence[int]) -> dict[int, float]:
    """v(S) for each bitmask S: mean model output with features outside S
    taken from the background rows."""
    m = len(x)
    nb = len(background)
    batch = np.repeat(background[None, :, :], len(masks), axis=0)
    for i, mask in enumerate(masks):
        on = [j for j in range(m) if mask >> j & 1]
        if on:
            batch[i][:, on] = x[on]
    out = f(batch.reshape(len(masks) * nb, m)).reshape(len(masks), nb).mean(axis=1)
    return dict(zip(masks, out.tolist()))


def _default_background(X: np.ndarray, background, seed: int = 0, size: int = 100) -> np.ndarray:
    if background is not None:
        return np.asarray(background, dtype=float)
    if len(X) <= size:
        return X.copy()
    idx = np.random.default_rng(seed).choice(len(X), size=size, replace=False)
    return X[np.sort(idx)]


def shapley_values_exact(model, X, background=None, max_features: int = 15) -> np.ndarray:
    """Exact Shapley values (n x m) by enumerating every feature subset.

    The value of a coalition S is the model output averaged over the
    background rows with the features in S fixed to the explained row.
    """
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    if m > max_features:
        raise CurationError(
            f"{m} features exceed max_features={max_features}; use shapley_values_sampled instead"
        )
    f = as_prediction_function(model)
    bg = _default_background(X, background)
    full = (1 << m) - 1
    weights = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    masks = list(range(full + 1))
    phi = np.zeros((n, m))
    for i in range(n):
        v = _masked_values(f, X[i], bg, masks)
        for j in range(m):
            bit = 1 << j
            total = 0.0
            for mask in masks:
                if mask & bit:
                    continue
                total += weights[bin(mask).count("1")] * (v[mask | bit] - v[mask])
            phi[i, j] = total
    return phi


def shapley_values_sampled(model, X, n_permutations: int = 200, seed: int = 0, background=None) -> np.ndarray:
    """Permutation-sampling estimate of the Shapley values."""
    if n_permutations < 1:
        raise CurationError("n_permutations must be at least 1")
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    f = as_prediction_function(model)
    bg = _default_background(X, background)
    rng = np.random.default_rng(seed)
    phi = np.zeros((n, m))
    for i in range(n):
        perms = [rng.permutation(m) for _ in range(n_permutations)]
        chains = []
        for perm in perms:
            mask, chain = 0, [0]
            for j in perm:
                mask |= 1 << int(j)
                chain.append(mask)
            chains.append(chain)
        needed = sorted({mk for chain in chains for mk in chain})
        v = _masked_values(f, X[i], bg, needed)
        for perm, chain in zip(perms, chains):
            for step, j in enumerate(perm):
                phi[i, j] += v[chain[step + 1]] - v[chain[step]]
        phi[i] /= n_permutations
    return phi


def _mean_abs(phi: np.ndarray, names) -> list[FeatureScore]:
    names = list(names) if names is not None else [f"x{j}" for j in range(phi.shape[1])]
    return [FeatureScore(nm, float(np.abs(phi[:, j]).mean()), "shap") for j, nm in enumerate(names)]


def shapley_scores_exact(model, X, names=None, background=None, max_features: int = 15) -> list[FeatureScore]:
    return _mean_abs(shapley_values_exact(model, X, background, max_features), names)


def shapley_scores_sampled(model, X, n_permutations: int = 200, seed: int = 0, names=None,
                           background=None) -> list[FeatureScore]:
    return _mean_abs(shapley_values_sampled(model, X, n_permutations, seed, background), names)


# ---------------------------------------------------------------- scaling


SCALING_KINDS = ("standardize", "normalize", "log1p", "none")


@dataclass(frozen=True)
class FittedScaler:
    kind: str
    mean: float | None = None
    std: float | None = None
    max: float | None = None
    plain_log: bool = False

    def apply(self, value):
        if is_missing(value):
            return MISSING
        x = float(value)
        if self.kind == "standardize":
            return (x - self.mean) / self.std
        if self.kind == "normalize":
            return x / self.max
        if self.kind == "log1p":
            return math.log(x) if self.plain_log else math.log1p(x)
        return x

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedScaler":
        return cls(**d)


def fit_scaler(train_column, kind: str, plain_log: bool = False) -> FittedScaler:
    """Fit on training values only; NaN and MISSING cells are ignored.

    Standardization uses the population standard deviation.
    """
    if kind not in SCALING_KINDS:
        raise CurationError(f"unknown scaling kind {kind!r}")
    vals = np.array([float(v) for v in train_column if not is_missing(v)], dtype=float)
    if len(vals) < 2:
        raise CurationError("need at least two non-missing values to fit a scaler")
    if kind == "standardize":
        std = float(vals.std())
        if std <= 0:
            raise CurationError("zero variance: cannot standardize")
        return FittedScaler(kind, mean=float(vals.mean()), std=std)
    if kind == "normalize":
        mx = float(vals.max())
        if mx <= 0:
            raise CurationError("non-positive maximum: cannot normalize")
        return FittedScaler(kind, max=mx)
    if kind == "log1p":
        floor = 0.0 if plain_log else -1.0
        if (vals <= floor).any():
            raise CurationError(f"log transform needs every value > {floor:g}")
        return FittedScaler(kind, plain_log=plain_log)
    return FittedScaler("none")


def apply_scaler(value, scaler: FittedScaler):
    return scaler.apply(value)


# ---------------------------------------------------------------- plans


@dataclass(frozen=True)
class CurationPlan:
    """What to keep, how to rescale, and how to fill gaps.

    ``selected_features`` of ``None`` keeps every feature.  ``imputation``
    maps a feature to ``"drop"``, ``"impute_1"`` (unrelated filler) or
    ``"impute_2"`` (related filler).
    """

    selected_features: frozenset | None = None
    scaling: Mapping = field(default_factory=dict)
    imputation: Mapping = field(default_factory=dict)
    provenance: Mapping = field(default_factory=dict)

    def validate(self, ds: TabularDataset) -> "CurationPlan":
        names = set(ds.feature_names)
        if self.selected_features is not None:
            extra = set(self.selected_features) - names
            if extra:
                raise CurationError(f"selected features not in schema: {sorted(extra)}")
        for feat in self.scaling:
            if feat not in names:
                raise CurationError(f"scaling targets unknown feature {feat!r}")
            if ds.feature(feat).kind != "numeric":
                raise CurationError(f"cannot scale non-numeric feature {feat!r}")
        return self

    def dropped(self, ds: TabularDataset) -> frozenset:
        if self.selected_features is None:
            return frozenset()
        return frozenset(ds.feature_names) - self.selected_features

    def to_dict(self) -> dict:
        return {
            "selected_features": sorted(self.selected_features) if self.selected_features is not None else None,
            "scaling": {k: v.to_dict() for k, v in sorted(self.scaling.items())},
            "imputation": dict(sorted(self.imputation.items())),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CurationPlan":
        sel = d.get("selected_features")
        return cls(
            selected_features=frozenset(sel) if sel is not None else None,
            scaling={k: FittedScaler.from_dict(v) for k, v in (d.get("scaling") or {}).items()},
            imputation=dict(d.get("imputation") or {}),
            provenance=dict(d.get("provenance") or {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CurationPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_scaling_plan(train: TabularDataset, kinds: Mapping[str, str], plain_log: bool = False) -> dict:
    out = {}
    for feat, kind in kinds.items():
        if train.feature(feat).kind != "numeric":
            raise CurationError(f"cannot scale non-numeric feature {feat!r}")
        if kind == "none":
            continue
        out[feat] = fit_scaler(train.columns[feat], kind, plain_log)
    return out


def anova_plan(ds: TabularDataset, tau: float, seed: int | None = None, fit_on: str = "train") -> CurationPlan:
    """Threshold plan from ANOVA scores on ``ds``.

    Non-numeric features are not scored and are always kept.
    """
    scores = anova_for_dataset(ds)
    keep = select_by_threshold(scores, tau)
    non_numeric = {f.name for f in ds.schema if f.kind != "numeric"}
    return CurationPlan(
        selected_features=frozenset(keep | non_numeric),
        provenance={"method": "anova_f", "tau": tau, "dataset": ds.name, "fit_on": fit_on,
                    "split_seed": seed, "scores": {s.feature: s.score for s in scores}},
    )


# Feature sets that the published selected-feature renderings keep out.
LITERAL_DROPS = {
    "wine": ("alcalinity_of_ash", "magnesium", "nonflavanoid_phenols", "proanthocyanins"),
    "diabetes": ("BloodPressure", "SkinThickness", "Insulin"),
    "heloc": ("MSinceMostRecentTradeOpen", "NumTrades60Ever2DerogPubRec", "NumTrades90Ever2DerogPubRec",
              "MSinceMostRecentDelq", "NumTradesOpeninLast12M", "NumRevolvingTradesWBalance",
              "NumInstallTradesWBalance", "NumBank2NatlTradesWHighUtilization"),
    "titanic": ("Embarked", "Cabin"),
    "fraud": ("V8", "V13", "V15", "V22", "V23", "V24", "V25", "V26", "V27", "V28"),
}


def literal_plan(dataset: str, feature_names: Sequence[str]) -> CurationPlan:
    if dataset not in LITERAL_DROPS:
        raise CurationError(f"no literal selection plan for {dataset!r}")
    drops = set(LITERAL_DROPS[dataset])
    return CurationPlan(
        selected_features=frozenset(n for n in feature_names if n not in drops),
        provenance={"method": "literal", "dataset": dataset},
    )


def combine(*plans: CurationPlan) -> CurationPlan:
    """Merge plans left to right; selections intersect, later mappings win."""
    sel = None
    scaling, imputation, prov = {}, {}, {}
    for p in plans:
        if p.selected_features is not None:
            sel = p.selected_features if sel is None else sel & p.selected_features
        scaling.update(p.scaling)
        imputation.update(p.imputation)
        prov.update(p.provenance)
    return CurationPlan(sel, scaling, imputation, prov)

