import json

import golden
from tabtext.cli import main


def test_data_info(capsys):
    assert main(["data", "info", "titanic"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 891 and info["missing_features"] == ["Age", "Cabin", "Embarked"]


def test_data_split(tmp_path, capsys):
    assert main(["data", "split", "iris", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "iris_train.csv").read_text().count("\n") == 121
    assert "train 120 rows" in capsys.readouterr().out


def test_render_first_row(capsys):
    assert main(["render", "iris", "--rows", "1"]) == 0
    assert capsys.readouterr().out == golden.IRIS + "\n"


def test_anova_with_plan_output(tmp_path, capsys):
    out = tmp_path / "plan.json"
    assert main(["anova", "wine", "--tau", "30", "--fit-on", "full", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("flavanoids")
    assert "fit on full" in text and json.loads(out.read_text())["provenance"]["fit_on"] == "full"


def test_fit_reduced(capsys, tmp_path):
    assert main(["fit", "svm_rbf", "iris", "--grid", "reduced", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] == 1.0
    assert (tmp_path / "best_params.json").exists()


def test_run_and_report(tmp_path, capsys):
    config = tmp_path / "c.yaml"
    config.write_text("experiment: sota_benchmark\ndataset: iris\nmodels: [gbdt_a]\ngrid: reduced\n")
    assert main(["run", str(config), "--output-dir", str(tmp_path / "out")]) == 0
    lines = capsys.readouterr().out.splitlines()
    record = lines[0].split(" ", 1)[1]
    assert record.endswith(".record.json") and any(line.startswith("png") for line in lines)
    assert main(["report", record, "--out", str(tmp_path / "again")]) == 0
    assert len(list((tmp_path / "again").glob("*.png"))) == 1


def test_errors_return_2(capsys):
    assert main(["data", "info", "nope"]) == 2
    assert "unknown dataset" in capsys.readouterr().err
