"""Dataset loading, builtin registry, splitting and subsampling.

Values live column-wise: numeric columns are float64 arrays (NaN marks a
missing cell), categorical and text columns are object arrays holding ``str``
or the :data:`MISSING` sentinel.  Row accessors translate NaN back to
:data:`MISSING` so callers only ever see one representation of a gap.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.model_selection import train_test_split

log = logging.getLogger(__name__)

DEFAULT_NA_TOKENS = ("", "NA", "NaN", "null")
FEATURE_KINDS = ("numeric", "categorical", "text")
FLAGS = ("missing_data", "distribution_shift", "imbalanced", "biased_multiclass", "high_dimensional")


class DatasetError(ValueError):
    pass


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(value) -> bool:
    if value is MISSING or value is None:
        return True
    return isinstance(value, float) and math.isnan(value)


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str = "numeric"
    unit_phrase: str | None = None
    # every non-missing value is a whole number; decided at load time
    integer: bool = False

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise DatasetError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class DatasetCard:
    sample_size: int
    feature_count: int
    is_binary: bool
    flags: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "feature_count": self.feature_count,
            "is_binary": self.is_binary,
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """An immutable n x m table plus integer-coded labels.

    ``index`` holds the source row numbers, so subsets produced by
    :func:`split` and :func:`subsample` stay traceable to the original file.
    """

    name: str
    schema: tuple
    columns: dict
    y: np.ndarray
    classes: tuple
    label_column: str
    card: DatasetCard
    index: np.ndarray = field(default=None)
    mismatches: tuple = ()

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", np.arange(len(self.y)))
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise DatasetError("feature names must be unique")
        if self.label_column in names:
            raise DatasetError("label column must not be a feature")
        if not names:
            raise DatasetError("dataset needs at least one feature")
        for arr in self.columns.values():
            arr.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def feature(self, name: str) -> FeatureSchema:
        for f in self.schema:
            if f.name == name:
                return f
        raise KeyError(name)

    def value(self, i: int, name: str):
        v = self.columns[name][i]
        if isinstance(v, float) and math.isnan(v):
            return MISSING
        return v

    def row(self, i: int) -> dict:
        return {f.name: self.value(i, f.name) for f in self.schema}

    def iter_rows(self) -> Iterator[dict]:
        for i in range(self.n):
            yield self.row(i)

    def numeric_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(names) if names is not None else [f.name for f in self.schema if f.kind == "numeric"]
        for name in names:
            if self.feature(name).kind != "numeric":
                raise DatasetError(f"{name!r} is not numeric")
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[name] for name in names]).astype(float)

    def missing_features(self) -> list[str]:
        """Features with at least one missing cell, in schema order."""
        out = []
        for f in self.schema:
            col = self.columns[f.name]
            if f.kind == "numeric":
                if np.isnan(col).any():
                    out.append(f.name)
            elif any(v is MISSING for v in col):
                out.append(f.name)
        return out

    def has_missing(self) -> bool:
        return bool(self.missing_features())

    def take(self, positions: Sequence[int]) -> "TabularDataset":
        pos = np.asarray(positions, dtype=int)
        return replace(
            self,
            columns={k: v[pos] for k, v in self.columns.items()},
            y=self.y[pos],
            index=self.index[pos],
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def __eq__(self, other):
        if not isinstance(other, TabularDataset):
            return NotImplemented
        if (self.schema, self.classes, self.label_column) != (other.schema, other.classes, other.label_column):
            return False
        if not np.array_equal(self.y, other.y):
            return False
        for f in self.schema:
            a, b = self.columns[f.name], other.columns[f.name]
            if f.kind == "numeric":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif list(a) != list(b):
                return False
        return True

    __hash__ = None


# ---------------------------------------------------------------- loading


def _is_na(token: str, na_tokens) -> bool:
    return token.strip().lower() in na_tokens


def _to_float(token: str):
    try:
        return float(token)
    except ValueError:
        return None


def _sort_classes(values: Iterable) -> tuple:
    values = set(values)
    floats = {v: _to_float(v) if isinstance(v, str) else v for v in values}
    if all(f is not None for f in floats.values()):
        ordered = sorted(values, key=lambda v: floats[v])
        out = []
        for v in ordered:
            f = float(floats[v])
            out.append(int(f) if f.is_integer() else f)
        return tuple(out)
    return tuple(sorted(values))


def _encode_labels(raw: list[str]) -> tuple[np.ndarray, tuple]:
    classes = _sort_classes(raw)
    lookup = {}
    for code, c in enumerate(classes):
        lookup[str(c)] = code
        if isinstance(c, int):
            lookup[f"{c}.0"] = code
    try:
        y = np.array([lookup[r.strip()] for r in raw], dtype=np.int64)
    except KeyError:
        y = np.array([classes.index(_sort_key_value(r)) for r in raw], dtype=np.int64)
    return y, classes


def _sort_key_value(token: str):
    f = _to_float(token)
    if f is None:
        return token
    return int(f) if f.is_integer() else f


def build_dataset(
    name: str,
    header: Sequence[str],
    records: Sequence[Sequence[str]],
    label: str,
    schema_hint: Sequence[FeatureSchema] | None = None,
    na_tokens: Sequence[str] = DEFAULT_NA_TOKENS,
    card: DatasetCard | None = None,
) -> TabularDataset:
    """Assemble a dataset from string records (the shared back end of the loaders)."""
    header = [h.strip() for h in header]
    if label not in header:
        raise DatasetError(f"missing label column {label!r}")
    if not records:
        raise DatasetError("zero data rows")
    width = len(header)
    for lineno, rec in enumerate(records, start=2):
        if len(rec) != width:
            raise DatasetError(f"ragged row at line {lineno}: {len(rec)} fields, expected {width}")
    na = {t.strip().lower() for t in na_tokens}
    hints = {h.name: h for h in (schema_hint or ())}

    label_pos = header.index(label)
    raw_labels = [rec[label_pos] for rec in records]
    if any(_is_na(v, na) for v in raw_labels):
        raise DatasetError(f"label column {label!r} has missing values")
    y, classes = _encode_labels(raw_labels)

    schema, columns = [], {}
    for pos, col in enumerate(header):
        if pos == label_pos:
            continue
        tokens = [rec[pos] for rec in records]
        hint = hints.get(col)
        present = [t for t in tokens if not _is_na(t, na)]
        if hint is not None:
            kind = hint.kind
        else:
            kind = "numeric" if all(_to_float(t) is not None for t in present) else "categorical"
        if kind == "numeric":
            values = np.array([math.nan if _is_na(t, na) else float(t) for t in tokens], dtype=float)
            if np.isnan(values).all() and present:
                raise DatasetError(f"column {col!r} hinted numeric but does not parse")
            finite = values[~np.isnan(values)]
            integer = bool(len(finite)) and bool(np.all(finite == np.round(finite)))
            arr = values
        else:
            arr = np.empty(len(tokens), dtype=object)
            arr[:] = [MISSING if _is_na(t, na) else t for t in tokens]
            integer = False
        unit = hint.unit_phrase if hint is not None else None
        schema.append(FeatureSchema(col, kind, unit, integer))
        columns[col] = arr

    ds_card = card or DatasetCard(
        sample_size=len(records),
        feature_count=len(schema),
        is_binary=len(classes) == 2,
        flags=frozenset(),
    )
    ds = TabularDataset(name, tuple(schema), columns, y, classes, label, ds_card)
    if card is None and ds.has_missing():
        ds = replace(ds, card=replace(ds_card, flags=frozenset({"missing_data"})))
    return ds


def load_csv(
    path,
    label: str,
    schema_hint: Sequence[FeatureSchema] | None = None,
    na_tokens: Sequence[str] = DEFAULT_NA_TOKENS,
    name: str | None = None,
    delimiter: str | None = None,
) -> TabularDataset:
    """Load a delimited text file with a header row.

    Columns are numeric when every non-missing cell parses as a number and
    categorical otherwise; free-text columns must be declared via ``schema_hint``.
    """
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file (no header row)") from None
        records = [rec for rec in reader if rec]
    return build_dataset(name or path.stem, header, records, label, schema_hint, na_tokens)


def to_csv(ds: TabularDataset, path, delimiter: str = ",") -> None:
    """Write ``ds`` back out; missing cells become empty fields."""
    names = ds.feature_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(names + [ds.label_column])
        for i in range(ds.n):
            out = []
            for f in ds.schema:
                v = ds.value(i, f.name)
                if v is MISSING:
                    out.append("")
                elif f.kind == "numeric":
                    out.append(repr(float(v)))
                else:
                    out.append(v)
            out.append(str(ds.classes[ds.y[i]]))
            w.writerow(out)


# ---------------------------------------------------------------- builtins


@dataclass(frozen=True)
class BuiltinSpec:
    name: str
    files: tuple
    label: str
    card: DatasetCard
    source_url: str
    hints: tuple = ()
    # row identifiers: kept in the table, never used as model inputs
    id_columns: tuple = ()


def _card(n, m, binary, *flags):
    return DatasetCard(n, m, binary, frozenset(flags))


BUILTINS = {
    "iris": BuiltinSpec(
        "iris", ("iris.csv",), "label", _card(150, 4, False),
        "https://archive.ics.uci.edu/dataset/53/iris",
        hints=tuple(FeatureSchema(n, "numeric", "centimeters")
                    for n in ("sepal_length", "sepal_width", "petal_length", "petal_width")),
    ),
    "wine": BuiltinSpec(
        "wine", ("wine.csv",), "label", _card(178, 13, False),
        "https://archive.ics.uci.edu/dataset/109/wine",
    ),
    "diabetes": BuiltinSpec(
        "diabetes", ("diabetes.csv",), "Outcome", _card(784, 8, True),
        "https://www.kaggle.com/datasets/mathchi/diabetes-data-set",
    ),
    "titanic": BuiltinSpec(
        "titanic", ("titanic.csv",), "Survived", _card(891, 11, True, "missing_data"),
        "https://www.openml.org/search?type=data&sort=runs&id=40945&status=active",
        hints=(FeatureSchema("Name", "text"), FeatureSchema("Ticket", "text")),
        id_columns=("PassengerId",),
    ),
    "heloc": BuiltinSpec(
        "heloc", ("heloc.csv",), "RiskPerformance", _card(10459, 23, True, "distribution_shift"),
        "https://www.kaggle.com/datasets/averkiyoliabev/home-equity-line-of-creditheloc",
    ),
    "fraud": BuiltinSpec(
        "fraud", ("creditcard.csv",), "Class", _card(284807, 30, True, "imbalanced"),
        "https://www.kaggle.com/datasets/mlg-ulb/creditcardfraud/data",
    ),
    "crime": BuiltinSpec(
        "crime", ("sf_crime.csv",), "Category", _card(878049, 8, False, "biased_multiclass"),
        "https://www.kaggle.com/c/sf-crime (train.csv)",
        hints=(FeatureSchema("Dates", "text"), FeatureSchema("Descript", "text"),
               FeatureSchema("Resolution", "categorical"), FeatureSchema("Address", "text")),
    ),
    "cancer": BuiltinSpec(
        "cancer", ("cancer_data.csv", "cancer_labels.csv"), "Class",
        _card(801, 20533, False, "high_dimensional"),
        "https://archive.ics.uci.edu/dataset/401/gene+expression+cancer+rna+seq "
        "(data.csv -> cancer_data.csv, labels.csv -> cancer_labels.csv)",
    ),
}


def identifier_columns(name: str) -> tuple:
    spec = BUILTINS.get(name.lower())
    return spec.id_columns if spec is not None else ()


def data_dir() -> Path:
    return Path(os.environ.get("TABTEXT_DATA_DIR", Path.home() / ".cache" / "tabtext" / "datasets"))


def locate_file(filename: str) -> Path | None:
    candidate = data_dir() / filename
    if candidate.is_file():
        return candidate
    bundled = resources.files("tabtext") / "data" / filename
    if bundled.is_file():
        return Path(str(bundled))
    return None


def _read_records(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [rec for rec in reader if rec]


def _load_cancer(spec: BuiltinSpec, paths) -> TabularDataset:
    header, records = _read_records(paths[0])
    lab_header, lab_records = _read_records(paths[1])
    if len(records) != len(lab_records):
        raise DatasetError("cancer data and label files differ in row count")
    # both files carry a leading sample-id column
    ids = {rec[0]: rec[1] for rec in lab_records}
    header = header[1:] + [spec.label]
    merged = [rec[1:] + [ids[rec[0]]] for rec in records]
    return build_dataset(spec.name, header, merged, spec.label, card=spec.card)


def register_builtin(name: str) -> TabularDataset:
    """Load one of the eight benchmark datasets from local files.

    Files are looked up in ``$TABTEXT_DATA_DIR`` first, then among the
    files bundled with the package (iris, wine, titanic).  Nothing is fetched
    over the network.
    """
    key = name.lower()
    if key not in BUILTINS:
        raise DatasetError(f"unknown dataset {name!r}; expected one of {sorted(BUILTINS)}")
    spec = BUILTINS[key]
    paths = []
    for fn in spec.files:
        p = locate_file(fn)
        if p is None:
            raise DatasetError(
                f"source file for {key!r} not found: place {fn!r} in {data_dir()} "
                f"(set TABTEXT_DATA_DIR to change); download from {spec.source_url}"
            )
        paths.append(p)
    if key == "cancer":
        ds = _load_cancer(spec, paths)
    else:
        header, records = _read_records(paths[0])
        ds = build_dataset(spec.name, header, records, spec.label, spec.hints, card=spec.card)
    if ds.has_missing() and "missing_data" not in spec.card.flags:
        log.info("%s has missing cells although its card carries no missing_data flag", key)
    mismatches = card_mismatches(ds)
    for msg in mismatches:
        log.warning("%s: %s", key, msg)
    ds = replace(ds, mismatches=tuple(mismatches))
    if paths[0].parent == data_dir():
        try:
            save_card_manifest(ds, data_dir() / f"{key}.card.json")
        except OSError:
            pass
    return ds


def card_mismatches(ds: TabularDataset) -> list[str]:
    out = []
    if ds.n != ds.card.sample_size:
        out.append(f"file has {ds.n} rows, card lists {ds.card.sample_size}")
    if ds.m != ds.card.feature_count:
        out.append(f"file has {ds.m} features, card lists {ds.card.feature_count}")
    if (ds.n_classes == 2) != ds.card.is_binary:
        out.append(f"file has {ds.n_classes} classes, card binary={ds.card.is_binary}")
    return out


def save_card_manifest(ds: TabularDataset, path) -> None:
    payload = {
        "name": ds.name,
        "card": ds.card.to_dict(),
        "observed": {"n": ds.n, "m": ds.m, "n_classes": ds.n_classes},
        "mismatches": list(ds.mismatches),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- sampling


def _check_stratifiable(ds: TabularDataset):
    counts = ds.class_counts()
    if (counts[counts > 0] < 2).any():
        small = [str(ds.classes[c]) for c in np.flatnonzero(counts == 1)]
        raise DatasetError(f"cannot stratify: class(es) {small} have a single member")


def split(ds: TabularDataset, test_fraction: float = 0.2, seed: int = 42, stratify: bool = True):
    """Deterministic train/test partition; both halves keep source row order."""
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must lie strictly between 0 and 1")
    if stratify:
        _check_stratifiable(ds)
    pos = np.arange(ds.n)
    train, test = train_test_split(
        pos, test_size=test_fraction, random_state=seed, stratify=ds.y if stratify else None
    )
    return ds.take(np.sort(train)), ds.take(np.sort(test))


def subsample(ds: TabularDataset, n_target: int, seed: int = 42, stratify: bool = True) -> TabularDataset:
    if n_target > ds.n:
        raise DatasetError(f"n_target={n_target} exceeds dataset size {ds.n}")
    if n_target == ds.n:
        return ds
    if stratify:
        present = int((ds.class_counts() > 0).sum())
        if n_target < present:
            raise DatasetError(f"n_target={n_target} is smaller than the number of classes ({present})")
        _check_stratifiable(ds)
    keep, _ = train_test_split(
        np.arange(ds.n), train_size=n_target, random_state=seed, stratify=ds.y if stratify else None
    )
    return ds.take(np.sort(keep))
