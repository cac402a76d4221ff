"""Rebuild the CSV files bundled under src/tabtext/data/.

iris.csv and wine.csv are exported from the copies shipped with scikit-learn.

titanic.csv is a reconstruction of the 891-passenger Kaggle training file.
The passenger list (names, survival) comes from the explainerdashboard wheel,
which ships the Kaggle training passengers split into train/test CSVs with
ages already imputed.  Raw columns (age with gaps, ticket, cabin, embarked)
come from the OpenML titanic3 table bundled in the dabl wheel.  PassengerId
is a sequential index over the reconstructed rows, not the Kaggle id.

Usage:
    pip download --no-deps dabl==0.3.2 explainerdashboard==0.5.8 -d /tmp/wheels
    python scripts/build_bundled_data.py /tmp/wheels
"""
import glob
import io
import re
import sys
import zipfile
from pathlib import Path

import pandas as pd
from sklearn import datasets

OUT = Path(__file__).resolve().parents[1] / "src" / "tabtext" / "data"


def _wheel_csv(wheel_dir, pattern, member, **kw):
    (path,) = glob.glob(str(Path(wheel_dir) / pattern))
    return pd.read_csv(io.BytesIO(zipfile.ZipFile(path).read(member)), **kw)


def build_iris():
    bunch = datasets.load_iris(as_frame=True)
    df = bunch.frame.rename(
        columns={
            "sepal length (cm)": "sepal_length",
            "sepal width (cm)": "sepal_width",
            "petal length (cm)": "petal_length",
            "petal width (cm)": "petal_width",
            "target": "label",
        }
    )
    df.to_csv(OUT / "iris.csv", index=False)


def build_wine():
    bunch = datasets.load_wine(as_frame=True)
    df = bunch.frame.rename(columns={"target": "label"})
    df.to_csv(OUT / "wine.csv", index=False)


def _key(name):
    return re.sub(r"[^a-z]", "", name.lower())


def build_titanic(wheel_dir):
    kaggle = pd.concat(
        [
            _wheel_csv(wheel_dir, "explainerdashboard-*.whl",
                       f"explainerdashboard/datasets/titanic_{part}.csv")
            for part in ("train", "test")
        ],
        ignore_index=True,
    )
    raw = _wheel_csv(wheel_dir, "dabl-*.whl", "dabl/datasets/titanic.csv",
                     na_values="?", keep_default_na=False)
    raw["key"] = raw["name"].map(_key)

    rows = []
    for i, passenger in kaggle.iterrows():
        cand = raw[raw["key"] == _key(passenger["Name"])]
        if len(cand) > 1:
            cand = cand[(cand["fare"] - passenger["Fare"]).abs() < 1e-3]
        if len(cand) != 1:
            raise RuntimeError(f"cannot match passenger {passenger['Name']!r}")
        r = cand.iloc[0]
        rows.append(
            {
                "PassengerId": i + 1,
                "Survived": int(passenger["Survival"]),
                "Pclass": int(r["pclass"]),
                "Name": r["name"].strip(),
                "Sex": r["sex"],
                "Age": "" if pd.isna(r["age"]) else round(float(r["age"]), 2),
                "SibSp": int(r["sibsp"]),
                "Parch": int(r["parch"]),
                "Ticket": r["ticket"],
                "Fare": "" if pd.isna(r["fare"]) else r["fare"],
                "Cabin": "" if pd.isna(r["cabin"]) else r["cabin"],
                "Embarked": "" if pd.isna(r["embarked"]) else r["embarked"],
            }
        )
    pd.DataFrame(rows).to_csv(OUT / "titanic.csv", index=False)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    build_iris()
    build_wine()
    if len(sys.argv) > 1:
        build_titanic(sys.argv[1])
