import csv
import json
import os
import stat

import pytest

from tabtext.harness import (PROTOCOL_SPLIT, ExperimentConfig, HarnessError, RunRecord, input_hash, prepare, run,
                             selection_plan)
from tabtext.lm import LOCAL_TINY
from tabtext.report import emit_report, markdown, sota_verdict

QUICK = {"epochs": 2, "early_stopping_patience": None}


def cfg(**kw):
    return ExperimentConfig(**kw).validate()


@pytest.mark.parametrize("bad,msg", [
    ({"experiment": "nope", "dataset": "iris"}, "unknown experiment"),
    ({"experiment": "sota_benchmark", "dataset": "mnist"}, "unknown dataset"),
    ({"experiment": "sota_benchmark", "dataset": "iris", "models": ["rf"]}, "unknown models"),
    ({"experiment": "sota_benchmark", "dataset": "iris", "seeds": []}, "seeds"),
    ({"experiment": "sota_benchmark", "dataset": "iris", "grid": "tiny"}, "grid"),
    ({"experiment": "sota_benchmark", "dataset": "iris", "template": "nope"}, "unknown template"),
    ({"experiment": "sota_benchmark", "dataset": "iris", "schema_version": 9}, "schema_version"),
])
def test_config_validation(bad, msg):
    with pytest.raises(HarnessError, match=msg):
        ExperimentConfig(**bad).validate()


def test_config_rejects_unknown_keys_and_loads_yaml(tmp_path):
    with pytest.raises(HarnessError, match="unknown config keys"):
        ExperimentConfig.from_dict({"experiment": "sota_benchmark", "dataset": "iris", "lr": 1})
    p = tmp_path / "c.yaml"
    p.write_text("experiment: sota_benchmark\ndataset: iris\nmodels: [svm_rbf]\ngrid: reduced\n")
    c = ExperimentConfig.load(p)
    assert c.models == ["svm_rbf"] and c.split == PROTOCOL_SPLIT


def test_template_defaults():
    assert cfg(experiment="scaling_ablation", dataset="titanic").template_id == "titanic_sota"
    assert cfg(experiment="imputation_sensitivity", dataset="titanic").template_id == "titanic"


def test_input_hash_is_deterministic_and_sensitive():
    a = cfg(experiment="sota_benchmark", dataset="iris")
    assert input_hash(a) == input_hash(cfg(experiment="sota_benchmark", dataset="iris", output_dir="elsewhere"))
    assert input_hash(a) != input_hash(cfg(experiment="sota_benchmark", dataset="iris", seeds=[7]))


def test_prepare_uses_protocol_split():
    prep = prepare(cfg(experiment="sota_benchmark", dataset="titanic"))
    assert (prep.train.n, prep.test.n) == (712, 179)
    assert prep.notes["split"]["stratify"] is False


def test_selection_plan_kinds():
    c = cfg(experiment="feature_selection_ablation", dataset="wine", plan={"selection": "anova", "tau": 30})
    plan = selection_plan(c, prepare(c))
    assert plan.provenance["fit_on"] == "train" and "flavanoids" in plan.selected_features
    c = cfg(experiment="feature_selection_ablation", dataset="wine", plan={"selection": "magic"})
    with pytest.raises(HarnessError, match="unknown selection"):
        selection_plan(c, prepare(c))


@pytest.fixture(scope="module")
def iris_sota(tmp_path_factory):
    out = tmp_path_factory.mktemp("sota")
    c = cfg(experiment="sota_benchmark", dataset="iris", models=["svm_rbf", "tabpfn"], grid="reduced",
            output_dir=str(out))
    return run(c)


def test_record_written_once_and_read_only(iris_sota):
    rec, path = iris_sota
    assert stat.S_IMODE(os.stat(path).st_mode) & stat.S_IWUSR == 0
    again = rec.save(path.parent)
    assert again != path and again.exists()
    back = RunRecord.load(path)
    assert back.input_hash == rec.input_hash and back.reports == json.loads(json.dumps(rec.reports))


def test_sota_record_contents(iris_sota):
    rec, _ = iris_sota
    assert rec.complete
    assert rec.reports["svm_rbf"]["42"]["accuracy"] == 1.0
    assert rec.reports["tabpfn"]["42"] is None and "tabpfn" in rec.summary["unavailable"]
    assert "svm_rbf/42" in rec.artifacts["best_params"]
    assert sota_verdict(rec) == "---"


def test_report_emission(iris_sota, tmp_path):
    rec, _ = iris_sota
    paths = emit_report(rec, tmp_path)
    assert set(paths) == {"md", "json", "csv", "png"}
    assert paths["png"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    md = paths["md"].read_text()
    assert "SVM (RBF)" in md and rec.input_hash in md
    assert "started" not in json.loads(paths["json"].read_text())
    # two emissions of the same record are byte-identical
    again = emit_report(rec, tmp_path / "again")
    for kind in ("md", "json", "csv", "png"):
        assert paths[kind].read_bytes() == again[kind].read_bytes()


def test_imputation_requires_missing_data():
    with pytest.raises(HarnessError, match="nothing to impute"):
        run(cfg(experiment="imputation_sensitivity", dataset="iris"), save=False)


@pytest.fixture(scope="module")
def imputation_record():
    rec, _ = run(cfg(experiment="imputation_sensitivity", dataset="titanic", backbone=LOCAL_TINY, train=QUICK),
                 save=False)
    return rec


def test_imputation_control_is_exactly_zero(imputation_record):
    d = imputation_record.summary["delta"]
    assert d["control"]["42"]["identical_corpus"] is True
    assert d["control"]["42"]["max_abs_delta"] == 0.0
    assert d["impute_1"]["42"]["identical_corpus"] is False
    assert imputation_record.artifacts["missing_features"] == ["Age", "Cabin", "Embarked"]


def test_imputation_scatter_csv(imputation_record, tmp_path):
    paths = emit_report(imputation_record, tmp_path)
    rows = list(csv.reader(paths["csv"].read_text().splitlines()))
    assert rows[0] == ["sample", "d_logit_c0", "d_logit_c1", "arm"]
    assert {r[3] for r in rows[1:]} == {"impute_1", "impute_2", "control"}
    assert len(rows) - 1 == 3 * 179
    assert "control" in markdown(imputation_record)


def test_scaling_ablation_classical():
    rec, _ = run(cfg(experiment="scaling_ablation", dataset="titanic", models=["gbdt_b"], grid="reduced"), save=False)
    assert rec.complete
    assert set(rec.reports) == {f"{a}/gbdt_b" for a in ("none", "standardize", "normalize", "log1p")}
    assert "a 3.135-year-old" in rec.artifacts["corpus_sample_log1p"][0]
