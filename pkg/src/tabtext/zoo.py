"""Classical baselines: RBF SVM and two gradient-boosted tree engines,
searched exhaustively over fixed grids with stratified k-fold CV."""
from __future__ import annotations

import itertools
import json
import logging
import pickle
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.impute import SimpleImputer
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import make_pipeline
from sklearn.svm import SVC

from .datasets import MISSING, TabularDataset
from .metrics import MetricError, accuracy, auroc, f1

log = logging.getLogger(__name__)

FAMILIES = ("svm_rbf", "gbdt_a", "gbdt_b")
ONE_HOT_MAX_LEVELS = 20


class ZooError(ValueError):
    pass


class AdapterUnavailable(RuntimeError):
    """An optional external model is not installed; report cells show "---"."""


class AdapterGuardError(ZooError):
    pass


@dataclass(frozen=True)
class HyperGrid:
    model_family: str
    axes: tuple  # ((param, (values...)), ...) in declared order

    def __post_init__(self):
        if not self.axes:
            raise ZooError("grid needs at least one axis")
        for name, values in self.axes:
            if not values:
                raise ZooError(f"axis {name!r} is empty")

    @classmethod
    def of(cls, family: str, axes: Mapping[str, Sequence]) -> "HyperGrid":
        return cls(family, tuple((k, tuple(v)) for k, v in axes.items()))

    def points(self) -> list[dict]:
        names = [a[0] for a in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(a[1] for a in self.axes))]

    def __len__(self) -> int:
        n = 1
        for _, values in self.axes:
            n *= len(values)
        return n

    def to_dict(self) -> dict:
        return {"model_family": self.model_family, "axes": {k: list(v) for k, v in self.axes}}


_L1_L2_A = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
_L1_L2_B = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)

BUILTIN_GRIDS = {
    "gbdt_a": {
        "max_depth": (2, 4, 6, 8, 10, 12),
        "lambda_l1": _L1_L2_A,
        "lambda_l2": _L1_L2_A,
        "eta": (0.01, 0.03, 0.1, 0.3),
    },
    "gbdt_b": {
        "num_leaves": tuple(2 ** i for i in range(1, 13)),
        "lambda_l1": _L1_L2_B,
        "lambda_l2": _L1_L2_B,
        "learning_rate": (0.01, 0.03, 0.1, 0.3),
    },
    "svm_rbf": {
        "C": (0.1, 1, 10, 100),
        "gamma": (0.001, 0.01, 0.1, 1, "auto", "scale"),
        "kernel": ("rbf",),
    },
}

# Small sub-grids (every value drawn from the full lists) for quick runs.
REDUCED_GRIDS = {
    "gbdt_a": {"max_depth": (2, 4, 6), "lambda_l1": (1e-8, 1.0), "lambda_l2": (1e-8, 1.0), "eta": (0.1, 0.3)},
    "gbdt_b": {"num_leaves": (4, 16, 64), "lambda_l1": (1e-8, 1.0), "lambda_l2": (1e-8, 1.0),
               "learning_rate": (0.03, 0.1)},
    "svm_rbf": BUILTIN_GRIDS["svm_rbf"],
}


def _check_family(family: str):
    if family not in FAMILIES:
        raise ZooError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def builtin_grid(family: str) -> HyperGrid:
    _check_family(family)
    return HyperGrid.of(family, BUILTIN_GRIDS[family])


def reduced_grid(family: str) -> HyperGrid:
    _check_family(family)
    return HyperGrid.of(family, REDUCED_GRIDS[family])


# ---------------------------------------------------------------- estimators


def make_estimator(family: str, params: Mapping, seed: int = 42):
    """Concrete scikit-learn compatible estimator for one grid point."""
    _check_family(family)
    p = dict(params)
    if family == "gbdt_a":
        from xgboost import XGBClassifier

        kw = {"max_depth": p.pop("max_depth", None), "reg_alpha": p.pop("lambda_l1", None),
              "reg_lambda": p.pop("lambda_l2", None), "learning_rate": p.pop("eta", None)}
        kw = {k: v for k, v in kw.items() if v is not None}
        kw.update(p)
        return XGBClassifier(random_state=seed, n_jobs=1, **kw)
    if family == "gbdt_b":
        from lightgbm import LGBMClassifier

        kw = {"num_leaves": p.pop("num_leaves", None), "reg_alpha": p.pop("lambda_l1", None),
              "reg_lambda": p.pop("lambda_l2", None), "learning_rate": p.pop("learning_rate", None)}
        kw = {k: v for k, v in kw.items() if v is not None}
        kw.update(p)
        return LGBMClassifier(random_state=seed, n_jobs=1, verbose=-1, deterministic=True,
                              force_row_wise=True, **kw)
    # SVC cannot take NaN; inputs are otherwise left unscaled
    return make_pipeline(SimpleImputer(strategy="median"), SVC(probability=True, random_state=seed, **p))


@dataclass
class TabularEncoder:
    """Turns a TabularDataset into a float matrix.

    Numeric columns pass through (NaN stays NaN).  Categorical columns with
    at most ``ONE_HOT_MAX_LEVELS`` training levels are one-hot encoded, wider
    ones become ordinal codes.  Text columns and ``exclude`` are dropped.
    """

    exclude: tuple = ()
    feature_names: tuple = ()
    plan: list = field(default_factory=list)

    def fit(self, ds: TabularDataset) -> "TabularEncoder":
        self.feature_names = tuple(ds.feature_names)
        self.plan = []
        for f in ds.schema:
            if f.name in self.exclude or f.kind == "text":
                continue
            if f.kind == "numeric":
                self.plan.append((f.name, "numeric", None))
                continue
            levels = sorted({v for v in ds.columns[f.name] if v is not MISSING})
            kind = "onehot" if len(levels) <= ONE_HOT_MAX_LEVELS else "ordinal"
            self.plan.append((f.name, kind, tuple(levels)))
        if not self.plan:
            raise ZooError("no encodable features")
        return self

    def transform(self, ds: TabularDataset) -> np.ndarray:
        if tuple(ds.feature_names) != self.feature_names:
            raise ZooError(f"schema mismatch: expected {list(self.feature_names)}, got {ds.feature_names}")
        blocks = []
        for name, kind, levels in self.plan:
            col = ds.columns[name]
            if kind == "numeric":
                blocks.append(np.asarray(col, dtype=float)[:, None])
            elif kind == "onehot":
                block = np.zeros((ds.n, len(levels)))
                index = {lv: j for j, lv in enumerate(levels)}
                for i, v in enumerate(col):
                    j = index.get(v)
                    if j is not None:
                        block[i, j] = 1.0
                blocks.append(block)
            else:
                index = {lv: j for j, lv in enumerate(levels)}
                blocks.append(np.array([index.get(v, np.nan) for v in col], dtype=float)[:, None])
        return np.hstack(blocks)

    def output_names(self) -> list[str]:
        out = []
        for name, kind, levels in self.plan:
            out.extend([f"{name}={lv}" for lv in levels] if kind == "onehot" else [name])
        return out


# ---------------------------------------------------------------- search


def _score_accuracy(y, proba, labels):
    return accuracy(y, np.asarray(labels)[proba.argmax(axis=1)])


def _score_auroc(y, proba, labels):
    return auroc(y, proba, "binary" if len(labels) == 2 else "macro_ovr", labels)


def _score_f1(y, proba, labels):
    return f1(y, np.asarray(labels)[proba.argmax(axis=1)], "binary" if len(labels) == 2 else "macro", labels)


SCORERS: dict[str, Callable] = {"accuracy": _score_accuracy, "auroc": _score_auroc, "f1": _score_f1}


@dataclass
class FitResult:
    family: str
    best_params: dict
    cv_scores: list
    final_model: object
    seed: int
    encoder: TabularEncoder
    classes: tuple
    evaluations: int = 0
    skipped_folds: list = field(default_factory=list)
    grid_means: list = field(default_factory=list)
    folds: int = 5

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"family": self.family, "best_params": self.best_params, "cv_scores": self.cv_scores,
                "seed": self.seed, "classes": [str(c) for c in self.classes], "folds": self.folds,
                "evaluations": self.evaluations, "skipped_folds": self.skipped_folds}
        (d / "best_params.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
        with open(d / "model.pkl", "wb") as fh:
            pickle.dump({"model": self.final_model, "encoder": self.encoder}, fh)
        return d


def _fit_fold(family, params, seed, X, y, tr, va, labels, scorer):
    model = make_estimator(family, params, seed)
    if len(np.unique(y[tr])) < len(labels):
        return None, "training fold misses a class"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model.fit(X[tr], y[tr])
        proba = model.predict_proba(X[va])
    try:
        return float(scorer(y[va], proba, labels)), None
    except MetricError as exc:
        return None, str(exc)


def grid_search(
    family: str,
    grid: HyperGrid,
    train: TabularDataset,
    metric: str | Callable = "accuracy",
    folds: int = 5,
    seed: int = 42,
    n_jobs: int = 1,
    exclude: Sequence[str] = (),
) -> FitResult:
    """Exhaustive stratified k-fold search; ties go to the earliest grid point.

    Folds where the metric is undefined are skipped and recorded.  The best
    point is refit on the whole training set.
    """
    _check_family(family)
    if grid.model_family != family:
        raise ZooError(f"grid is for {grid.model_family!r}, not {family!r}")
    counts = train.class_counts()
    if (counts < folds).any():
        raise ZooError(f"every class needs at least {folds} members for {folds}-fold CV; counts={counts.tolist()}")
    scorer = SCORERS[metric] if isinstance(metric, str) else metric
    encoder = TabularEncoder(exclude=tuple(exclude)).fit(train)
    X = encoder.transform(train)
    y = np.asarray(train.y)
    labels = list(range(train.n_classes))
    splits = list(StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed).split(X, y))
    points = grid.points()
    jobs = [(p, f) for p in range(len(points)) for f in range(folds)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_fold)(family, points[p], seed, X, y, splits[f][0], splits[f][1], labels, scorer)
        for p, f in jobs
    )
    per_point = [[None] * folds for _ in points]
    skipped = []
    for (p, f), (score, reason) in zip(jobs, results):
        per_point[p][f] = score
        if score is None:
            skipped.append({"point": p, "fold": f, "reason": reason})
            warnings.warn(f"grid point {p} fold {f} skipped: {reason}", RuntimeWarning, stacklevel=2)
    means = []
    for scores in per_point:
        valid = [s for s in scores if s is not None]
        means.append(float(np.mean(valid)) if valid else -np.inf)
    best = int(np.argmax(means))  # argmax returns the first maximum
    if not np.isfinite(means[best]):
        raise ZooError("every fold of every grid point was skipped")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        final = make_estimator(family, points[best], seed).fit(X, y)
    return FitResult(
        family=family,
        best_params=points[best],
        cv_scores=per_point[best],
        final_model=final,
        seed=seed,
        encoder=encoder,
        classes=train.classes,
        evaluations=len(jobs),
        skipped_folds=skipped,
        grid_means=means,
        folds=folds,
    )


def predict_proba(result, data: TabularDataset) -> np.ndarray:
    """Class-probability matrix with columns in label-code order."""
    if hasattr(result, "adapter_predict_proba"):
        return result.adapter_predict_proba(data)
    if tuple(data.classes) != tuple(result.classes) and set(data.classes) - set(result.classes):
        raise ZooError("evaluation data has classes unseen in training")
    X = result.encoder.transform(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        proba = np.asarray(result.final_model.predict_proba(X), dtype=float)
    proba = proba / proba.sum(axis=1, keepdims=True)
    return proba


# ---------------------------------------------------------------- adapters


TABPFN_MAX_TRAIN = 1024
TABPFN_MAX_FEATURES = 100


@dataclass
class ExternalAdapter:
    name: str
    config: dict = field(default_factory=dict)
    model: object = None
    encoder: TabularEncoder | None = None
    classes: tuple = ()

    def _guard(self, train: TabularDataset):
        if self.name == "tabpfn":
            if train.n > TABPFN_MAX_TRAIN:
                raise AdapterGuardError(f"tabpfn supports at most {TABPFN_MAX_TRAIN} training rows, got {train.n}")
            if train.m > TABPFN_MAX_FEATURES:
                raise AdapterGuardError(f"tabpfn supports at most {TABPFN_MAX_FEATURES} features, got {train.m}")

    def fit(self, train: TabularDataset) -> "ExternalAdapter":
        self._guard(train)
        try:
            if self.name == "tabpfn":
                from tabpfn import TabPFNClassifier as cls
            else:
                from pytorch_tabnet.tab_model import TabNetClassifier as cls
        except ImportError as exc:
            raise AdapterUnavailable(f"{self.name} is not installed ({exc})") from exc
        self.encoder = TabularEncoder().fit(train)
        X = self.encoder.transform(train)
        self.model = cls(**self.config)
        if self.name == "tabnet":
            X = np.nan_to_num(X)
        self.model.fit(X, np.asarray(train.y))
        self.classes = train.classes
        return self

    def adapter_predict_proba(self, data: TabularDataset) -> np.ndarray:
        X = self.encoder.transform(data)
        if self.name == "tabnet":
            X = np.nan_to_num(X)
        return np.asarray(self.model.predict_proba(X), dtype=float)


def external_adapter(name: str, config: Mapping | None = None) -> ExternalAdapter:
    if name not in ("tabnet", "tabpfn"):
        raise ZooError(f"unknown external adapter {name!r}")
    return ExternalAdapter(name, dict(config or {}))
