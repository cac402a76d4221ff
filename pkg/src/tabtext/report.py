"""Render a RunRecord to markdown, JSON, CSV and a PNG figure.

Output names depend only on the record (experiment, dataset, input hash),
so re-rendering the same record overwrites the same four files.
"""
from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

import numpy as np

from .harness import IMPUTATION_ARMS, SCALING_ARMS, RunRecord, jsonable

METRICS = ("accuracy", "f1", "auroc", "mcc")
# table row order for the benchmark
METHOD_LABELS = {"svm_rbf": "SVM (RBF)", "gbdt_b": "LGBM", "gbdt_a": "XGBoost", "tabnet": "TabNet",
                 "tabpfn": "TabPFN", "tablm": "TabLM"}


_ORDER = list(METHOD_LABELS) + ["without_selection", "with_selection"] + list(SCALING_ARMS) + list(IMPUTATION_ARMS)


def ordered_keys(rec: RunRecord) -> list[str]:
    """Report keys in table order; scaling keys look like ``arm/model``."""
    def key(k):
        head, _, tail = k.partition("/")
        rank = _ORDER.index(head) if head in _ORDER else len(_ORDER)
        return rank, tail, k
    return sorted(rec.reports, key=key)


def _mean(per_seed: dict, metric: str):
    vals = [r[metric] for r in (per_seed or {}).values() if r and r.get(metric) is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(v, digits=4) -> str:
    return "---" if v is None else f"{v:.{digits}f}"


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def metric_rows(rec: RunRecord) -> list[dict]:
    """One flat row per (arm or model, seed) with the scalar metrics."""
    out = []
    for key in sorted(rec.reports):
        for seed, rep in sorted(rec.reports[key].items()):
            row = {"arm": key, "seed": seed}
            for m in ("accuracy", "f1", "auroc", "mcc", "precision", "recall", "auprc"):
                row[m] = None if rep is None else rep.get(m)
            out.append(row)
    return out


def _sota_text(rec: RunRecord) -> str:
    const = rec.summary.get("sota_constant") or {}
    value = const.get("value") or "N/A"
    return f"{value} [{const['citation']}]" if const.get("citation") else value


def sota_verdict(rec: RunRecord) -> str:
    """``yes`` when TabLM strictly beats the published constant on its own metric."""
    const = (rec.summary.get("sota_constant") or {}).get("value")
    if _mean(rec.reports.get("tablm"), "accuracy") is None:
        return "---"
    if not const:
        return "no"
    m = re.match(r"([0-9.]+)\s*\((Acc|AUROC)\)", const)
    if not m:
        return "no"
    metric = "accuracy" if m.group(2) == "Acc" else "auroc"
    ours = _mean(rec.reports.get("tablm"), metric)
    return "yes" if ours is not None and ours > float(m.group(1)) else "no"


def markdown(rec: RunRecord) -> str:
    exp, ds = rec.config["experiment"], rec.config["dataset"]
    parts = [f"# {exp} on {ds}", "", f"input hash `{rec.input_hash}`, package {rec.package_version}", ""]
    if exp == "sota_benchmark":
        rows = []
        for model in ordered_keys(rec):
            r = rec.reports[model]
            rows.append([METHOD_LABELS.get(model, model)] + [_fmt(_mean(r, k)) for k in METRICS])
        parts.append(_md_table(["Method", "Accuracy", "F1", "AUROC", "MCC"], rows))
        parts += ["", f"Current state of the art: {_sota_text(rec)}", f"TabLM beats it: {sota_verdict(rec)}"]
    elif exp == "feature_selection_ablation":
        w, wo = rec.reports.get("with_selection", {}), rec.reports.get("without_selection", {})
        rows = [[ds, _fmt(_mean(wo, "auroc"), 3), _fmt(_mean(wo, "f1"), 3), _fmt(_mean(w, "auroc"), 3),
                 _fmt(_mean(w, "f1"), 3), rec.summary.get("improved", "---")]]
        parts.append(_md_table(["Dataset", "AUROC without", "F1 without", "AUROC with", "F1 with", "Improved?"], rows))
        per_seed = rec.summary.get("per_seed_auroc", [])
        if per_seed:
            parts += ["", _md_table(["seed", "AUROC without", "AUROC with", "with >= without"],
                                    [[r["seed"], _fmt(r["without"]), _fmt(r["with"]), r["with_ge_without"]]
                                     for r in per_seed])]
        parts += ["", "Dropped features: " + (", ".join(rec.artifacts.get("dropped_features", [])) or "none")]
    elif exp == "imputation_sensitivity":
        rows = []
        for arm, seeds in sorted(rec.summary.get("delta", {}).items()):
            for seed, d in sorted(seeds.items()):
                rows.append([arm, seed, _fmt(d["mean_abs_delta"]), _fmt(d["flipped_fraction"]),
                             _fmt(d["max_abs_delta"]), d["identical_corpus"]])
        parts.append(_md_table(["arm vs baseline", "seed", "mean abs delta", "flipped fraction", "max abs delta",
                                "identical corpus"], rows))
        parts += ["", _md_table(["arm"] + list(METRICS),
                                [[a] + [_fmt(_mean(rec.reports.get(a), k)) for k in METRICS]
                                 for a in IMPUTATION_ARMS if a in rec.reports])]
    else:
        parts.append(_md_table(["arm"] + list(METRICS),
                               [[k] + [_fmt(_mean(rec.reports[k], m)) for m in METRICS] for k in ordered_keys(rec)]))
        if exp == "scaling_ablation":
            for arm in SCALING_ARMS:
                sample = rec.artifacts.get(f"corpus_sample_{arm}")
                if sample:
                    parts += ["", f"Probe text ({arm}): {sample[0]}"]
    if rec.summary.get("reproducibility"):
        parts += ["", f"Not reproducible at desk scale: {rec.summary['reproducibility']}."]
    if rec.errors:
        parts += ["", "## Failures", ""] + [f"- {k}: {v}" for k, v in sorted(rec.errors.items())]
    if rec.summary.get("unavailable"):
        parts += ["", "## Unavailable", ""] + [f"- {k}: {v}" for k, v in sorted(rec.summary["unavailable"].items())]
    return "\n".join(parts) + "\n"


def csv_text(rec: RunRecord) -> str:
    buf = io.StringIO()
    if rec.config["experiment"] == "imputation_sensitivity":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "d_logit_c0", "d_logit_c1", "arm"])
        for row in rec.artifacts.get("scatter", []):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), row[3]])
        return buf.getvalue()
    rows = metric_rows(rec)
    w = csv.DictWriter(buf, fieldnames=["arm", "seed", "accuracy", "f1", "auroc", "mcc", "precision", "recall",
                                        "auprc"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def figure(rec: RunRecord, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    exp = rec.config["experiment"]
    fig, ax = plt.subplots(figsize=(6, 4))
    if exp == "imputation_sensitivity":
        scatter = rec.artifacts.get("scatter", [])
        for arm, marker in (("impute_1", "o"), ("impute_2", "x"), ("control", ".")):
            pts = np.array([[r[1], r[2]] for r in scatter if r[3] == arm], dtype=float).reshape(-1, 2)
            if len(pts):
                ax.scatter(pts[:, 0], pts[:, 1], s=12, marker=marker, label=arm, alpha=0.7)
        ax.axhline(0, color="grey", lw=0.5)
        ax.axvline(0, color="grey", lw=0.5)
        ax.set_xlabel("logit change, class 0")
        ax.set_ylabel("logit change, class 1")
        ax.legend()
    else:
        keys = ordered_keys(rec)
        x = np.arange(len(keys))
        width = 0.8 / len(METRICS)
        for j, m in enumerate(METRICS):
            vals = [_mean(rec.reports[k], m) for k in keys]
            ax.bar(x + j * width, [np.nan if v is None else v for v in vals], width, label=m)
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels([METHOD_LABELS.get(k, k) for k in keys], rotation=30, ha="right", fontsize=8)
        ax.set_ylim(min(0.0, ax.get_ylim()[0]), 1.05)
        ax.legend(fontsize=7, ncol=4)
    ax.set_title(f"{exp} ({rec.config['dataset']})", fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def emit_report(rec: RunRecord, out_dir) -> dict:
    """Write ``<name>.{md,json,csv,png}`` under ``out_dir``; returns the paths."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    stem = d / rec.name
    paths = {"md": stem.with_suffix(".md"), "json": stem.with_suffix(".json"), "csv": stem.with_suffix(".csv"),
             "png": stem.with_suffix(".png")}
    paths["md"].write_text(markdown(rec), encoding="utf-8")
    body = {k: v for k, v in rec.to_dict().items() if k not in ("started", "finished")}
    paths["json"].write_text(json.dumps(body, indent=2, sort_keys=True, default=jsonable) + "\n", encoding="utf-8")
    paths["csv"].write_text(csv_text(rec), encoding="utf-8")
    figure(rec, paths["png"])
    return paths
