"""Config-driven experiment runner.

Each experiment returns a :class:`RunRecord` holding the config snapshot, a
content hash of its inputs, one :class:`EvalReport` per arm or model, and
any auxiliary artifacts (plans, logit deltas, corpus samples).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import stat
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from . import __version__
from .curation import (CurationPlan, anova_for_dataset, anova_plan, combine, fit_scaling_plan, literal_plan,
                       rank)
from .datasets import (BUILTINS, TabularDataset, identifier_columns, locate_file, register_builtin, split,
                       subsample)
from .lm import TrainConfig, backbone_benchmark, evaluate_classifier, fine_tune, predict_logits
from .metrics import EvalReport, evaluate, logit_delta
from .template import builtin_template_ids, load_builtin_template, render_dataset, render_row
from .zoo import (FAMILIES, AdapterGuardError, AdapterUnavailable, builtin_grid, external_adapter, grid_search,
                  predict_proba, reduced_grid)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXPERIMENTS = ("feature_selection_ablation", "scaling_ablation", "imputation_sensitivity",
               "sota_benchmark", "backbone_benchmark")
SOTA_MODELS = FAMILIES + ("tabnet", "tabpfn", "tablm")
DEFAULT_SEEDS = (42,)
MULTI_SEEDS = (42, 7, 2024)
DEFAULT_BACKBONE = "distilbert-base-uncased"

# Protocol split: 80/20, seed 42, no stratification (the usual train_test_split idiom).
PROTOCOL_SPLIT = {"test_fraction": 0.2, "seed": 42, "stratify": False}

# Per-dataset ANOVA thresholds; titanic uses the literal drop set instead.
DEFAULT_TAU = {"iris": 100.0, "wine": 30.0, "diabetes": 10.0, "heloc": 50.0, "fraud": 100.0}
DESK_SUBSAMPLE = {"fraud": 20_000, "crime": 50_000}
CANCER_MAX_GENES = 200

# Benchmark tables and the backbone sweep can be run here, but their published
# numbers depend on hardware, seeds and splits that are not available.
NOT_REPRODUCIBLE = {
    "sota_benchmark": "full-scale benchmark tables: hardware, random seeds and data splits are unstated",
    "backbone_benchmark": "eleven-backbone sweep: pretrained weights, seeds and GPU budget are unstated",
}


class HarnessError(ValueError):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


@dataclass
class ExperimentConfig:
    experiment: str
    dataset: str
    template: str | None = None
    plan: dict = field(default_factory=dict)
    models: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    subsample: int | None = None
    output_dir: str = "runs"
    backbone: str = DEFAULT_BACKBONE
    train: dict = field(default_factory=dict)
    grid: str = "full"
    split: dict = field(default_factory=lambda: dict(PROTOCOL_SPLIT))
    full_scale: bool = False
    allow_truncation: bool = False
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise HarnessError(f"unsupported config schema_version {self.schema_version}")
        if self.experiment not in EXPERIMENTS:
            raise HarnessError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.dataset not in BUILTINS:
            raise HarnessError(f"unknown dataset {self.dataset!r}; expected one of {sorted(BUILTINS)}")
        if self.template is not None and self.template not in builtin_template_ids():
            raise HarnessError(f"unknown template {self.template!r}")
        if not self.seeds:
            raise HarnessError("seeds must be non-empty")
        if self.grid not in ("full", "reduced"):
            raise HarnessError("grid must be 'full' or 'reduced'")
        if self.experiment == "sota_benchmark":
            bad = [m for m in self.models if m not in SOTA_MODELS]
            if bad:
                raise HarnessError(f"unknown models {bad}; expected a subset of {SOTA_MODELS}")
        if self.experiment == "scaling_ablation":
            bad = [m for m in self.models if m not in FAMILIES + ("tablm",)]
            if bad:
                raise HarnessError(f"unknown models {bad} for the scaling ablation")
        TrainConfig(**self.train)
        return self

    @property
    def template_id(self) -> str:
        if self.template:
            return self.template
        if self.experiment == "scaling_ablation" and self.dataset == "titanic":
            return "titanic_sota"
        return self.dataset

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise HarnessError(f"unknown config keys {sorted(extra)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text(encoding="utf-8")
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_dict(doc)


@dataclass
class RunRecord:
    config: dict
    input_hash: str
    reports: dict = field(default_factory=dict)  # arm/model -> {"seed": {...report...}} or error
    errors: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    package_version: str = __version__

    @property
    def complete(self) -> bool:
        return not self.errors

    @property
    def name(self) -> str:
        return f"{self.config['experiment']}_{self.config['dataset']}_{self.input_hash[:12]}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunRecord":
        return cls(**d)

    def save(self, directory) -> Path:
        """Write once; the file is made read-only and never overwritten."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stamp = self.finished.replace(":", "").replace("-", "")
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=jsonable) + "\n"
        for k in range(1000):
            path = d / f"{self.name}_{stamp}{f'_{k}' if k else ''}.record.json"
            try:
                with open(path, "x", encoding="utf-8") as fh:
                    fh.write(text)
                break
            except FileExistsError:
                continue
        else:
            raise HarnessError(f"could not find a free record name in {d}")
        os.chmod(path, stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    return str(obj)


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def input_hash(config: ExperimentConfig) -> str:
    """sha256 over the config snapshot and the bytes of the source data files."""
    h = hashlib.sha256()
    snap = {k: v for k, v in config.to_dict().items() if k != "output_dir"}
    h.update(_canonical(snap).encode())
    spec = BUILTINS[config.dataset]
    for fn in spec.files:
        p = locate_file(fn)
        if p is not None:
            with open(p, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
    h.update(__version__.encode())
    return h.hexdigest()


# ---------------------------------------------------------------- shared steps


@dataclass
class Prepared:
    data: TabularDataset
    train: TabularDataset
    test: TabularDataset
    notes: dict


def prepare(config: ExperimentConfig) -> Prepared:
    ds = register_builtin(config.dataset)
    notes = {"card_mismatches": list(ds.mismatches)}
    n_target = config.subsample
    if n_target is None and not config.full_scale:
        n_target = DESK_SUBSAMPLE.get(config.dataset)
    if n_target is not None and n_target < ds.n:
        ds = subsample(ds, n_target, seed=config.split.get("seed", 42), stratify=True)
        notes["subsample"] = {"n": n_target, "desk_scale": config.subsample is None}
    s = {**PROTOCOL_SPLIT, **config.split}
    train, test = split(ds, s["test_fraction"], s["seed"], s["stratify"])
    notes["split"] = {**s, "n_train": train.n, "n_test": test.n}
    return Prepared(ds, train, test, notes)


def _train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig.for_backbone(config.backbone, **{**config.train, "seed": seed})


def selection_plan(config: ExperimentConfig, prep: Prepared) -> CurationPlan:
    """Feature-selection plan named by ``config.plan['selection']``:
    ``anova`` (threshold from ``tau``), ``literal`` or ``none``."""
    kind = config.plan.get("selection", "literal" if config.dataset == "titanic" else "anova")
    if kind == "none":
        return CurationPlan(provenance={"method": "none"})
    if kind == "literal":
        return literal_plan(config.dataset, prep.train.feature_names)
    if kind != "anova":
        raise HarnessError(f"unknown selection {kind!r}")
    tau = config.plan.get("tau", DEFAULT_TAU.get(config.dataset))
    if tau is None:
        raise HarnessError(f"no ANOVA threshold for {config.dataset!r}; set plan.tau")
    fit_on = config.plan.get("fit_on", "train")
    source = prep.data if fit_on == "full" else prep.train
    return anova_plan(source, tau, seed=config.split.get("seed"), fit_on=fit_on)


def _cancer_plan(config: ExperimentConfig, prep: Prepared) -> CurationPlan | None:
    if config.dataset != "cancer":
        return None
    k = int(config.plan.get("max_genes", CANCER_MAX_GENES))
    scores = anova_for_dataset(prep.train)
    top = frozenset(rank(scores)[:k])
    return CurationPlan(top, provenance={"method": "anova_f_top_k", "k": k, "fit_on": "train"})


def _lm_arm(config, prep, template, plan, seed, num_classes):
    train_c = render_dataset(prep.train, template, plan)
    test_c = render_dataset(prep.test, template, plan)
    clf = fine_tune(train_c, config.backbone, _train_config(config, seed), num_classes=num_classes)
    report = evaluate_classifier(clf, test_c)
    return clf, train_c, test_c, report


def _aggregate(per_seed: Mapping[str, dict]) -> dict:
    """mean and range over seeds for each scalar metric."""
    keys = ("accuracy", "f1", "auroc", "mcc", "precision", "recall", "auprc")
    out = {}
    for k in keys:
        vals = [r[k] for r in per_seed.values() if r.get(k) is not None]
        if vals:
            out[k] = {"mean": float(np.mean(vals)), "min": float(min(vals)), "max": float(max(vals))}
    return out


def _new_record(config: ExperimentConfig) -> RunRecord:
    return RunRecord(config=config.to_dict(), input_hash=input_hash(config), started=_now())


def _report_dict(rep: EvalReport) -> dict:
    return json.loads(json.dumps(rep.to_dict(), default=jsonable))


# ---------------------------------------------------------------- experiments


def run_feature_selection_ablation(config: ExperimentConfig) -> RunRecord:
    config.validate()
    rec = _new_record(config)
    prep = prepare(config)
    template = load_builtin_template(config.template_id)
    plan = selection_plan(config, prep)
    rec.artifacts["selection_plan"] = plan.to_dict()
    rec.artifacts["dropped_features"] = sorted(plan.dropped(prep.train))
    arms = {"without_selection": None, "with_selection": plan}
    for arm, p in arms.items():
        rec.reports[arm] = {}
        for seed in config.seeds:
            try:
                _, _, _, rep = _lm_arm(config, prep, template, p, seed, prep.data.n_classes)
                rec.reports[arm][str(seed)] = _report_dict(rep)
            except Exception as exc:
                rec.errors[f"{arm}/{seed}"] = f"{type(exc).__name__}: {exc}"
    per_seed = []
    for seed in config.seeds:
        a = rec.reports["without_selection"].get(str(seed), {}).get("auroc")
        b = rec.reports["with_selection"].get(str(seed), {}).get("auroc")
        if a is not None and b is not None:
            per_seed.append({"seed": seed, "without": a, "with": b, "with_ge_without": b >= a})
    means = {arm: _aggregate(rec.reports[arm]) for arm in arms}
    verdict = "---"
    if all("auroc" in means[a] for a in arms):
        wo = round(means["without_selection"]["auroc"]["mean"], 3)
        wi = round(means["with_selection"]["auroc"]["mean"], 3)
        verdict = "---" if wi == wo else ("yes" if wi > wo else "no")
    rec.summary = {"aggregate": means, "per_seed_auroc": per_seed, "improved": verdict,
                   "with_ge_without_count": sum(r["with_ge_without"] for r in per_seed), **prep.notes}
    rec.finished = _now()
    return rec


SCALING_ARMS = ("none", "standardize", "normalize", "log1p")


def _scaled_dataset(ds: TabularDataset, scalers: Mapping) -> TabularDataset:
    cols = dict(ds.columns)
    for feat, sc in scalers.items():
        col = ds.columns[feat]
        cols[feat] = np.array([np.nan if np.isnan(v) else sc.apply(v) for v in col], dtype=float)
    return dataclasses.replace(ds, columns=cols)


def run_scaling_ablation(config: ExperimentConfig) -> RunRecord:
    config.validate()
    rec = _new_record(config)
    prep = prepare(config)
    features = list(config.plan.get("scale_features", ["Age", "Fare"]))
    for f in features:
        if prep.train.feature(f).kind != "numeric":
            raise HarnessError(f"cannot scale non-numeric feature {f!r}")
    template = load_builtin_template(config.template_id)
    base = selection_plan(config, prep)
    models = config.models or ["tablm"]
    probe_rows = [prep.data.row(i) for i in range(min(3, prep.data.n))]
    for arm in SCALING_ARMS:
        scalers = fit_scaling_plan(prep.train, {f: arm for f in features})
        plan = combine(base, CurationPlan(scaling=scalers, provenance={"scaling": arm}))
        rec.artifacts[f"plan_{arm}"] = plan.to_dict()
        rec.artifacts[f"corpus_sample_{arm}"] = [
            render_row(r, template, plan, schema=prep.data.schema, index=i).text for i, r in enumerate(probe_rows)
        ]
        for model in models:
            key = f"{arm}/{model}"
            rec.reports[key] = {}
            for seed in config.seeds:
                try:
                    if model == "tablm":
                        _, _, _, rep = _lm_arm(config, prep, template, plan, seed, prep.data.n_classes)
                    else:
                        tr = _scaled_dataset(prep.train, scalers)
                        te = _scaled_dataset(prep.test, scalers)
                        grid = builtin_grid(model) if config.grid == "full" else reduced_grid(model)
                        fit = grid_search(model, grid, tr, seed=seed, exclude=identifier_columns(config.dataset))
                        rep = evaluate(te.y, predict_proba(fit, te))
                    rec.reports[key][str(seed)] = _report_dict(rep)
                except Exception as exc:
                    rec.errors[f"{key}/{seed}"] = f"{type(exc).__name__}: {exc}"
    rec.summary = {"aggregate": {k: _aggregate(v) for k, v in rec.reports.items()},
                   "features": features, **prep.notes}
    rec.finished = _now()
    return rec


IMPUTATION_ARMS = ("baseline", "impute_1", "impute_2", "control")


def run_imputation_sensitivity(config: ExperimentConfig) -> RunRecord:
    """Baseline drops clauses with missing cells; Impute-1/Impute-2 insert the
    unrelated/related filler sentences; the control re-renders the baseline
    corpus and retrains, so its logit differences must be exactly zero."""
    config.validate()
    ds_card = BUILTINS[config.dataset].card
    if "missing_data" not in ds_card.flags:
        raise HarnessError(f"nothing to impute: {config.dataset!r} carries no missing_data flag")
    rec = _new_record(config)
    prep = prepare(config)
    template = load_builtin_template(config.template_id)
    missing = prep.data.missing_features()
    if not missing:
        raise HarnessError("nothing to impute: no missing cells found")
    policies = {"baseline": "drop", "impute_1": "impute_1", "impute_2": "impute_2", "control": "drop"}
    scatter = []
    for seed in config.seeds:
        logits, corpora = {}, {}
        for arm in IMPUTATION_ARMS:
            plan = CurationPlan(imputation={f: policies[arm] for f in missing})
            try:
                clf, _, test_c, rep = _lm_arm(config, prep, template, plan, seed, prep.data.n_classes)
                logits[arm] = predict_logits(clf, [ex.text for ex in test_c])
                corpora[arm] = [ex.text for ex in test_c]
                rec.reports.setdefault(arm, {})[str(seed)] = _report_dict(rep)
            except Exception as exc:
                rec.errors[f"{arm}/{seed}"] = f"{type(exc).__name__}: {exc}"
        if "baseline" not in logits:
            continue
        for arm in ("impute_1", "impute_2", "control"):
            if arm not in logits:
                continue
            d = logit_delta(logits["baseline"], logits[arm])
            rec.summary.setdefault("delta", {}).setdefault(arm, {})[str(seed)] = {
                **d.summary(), "max_abs_delta": float(np.abs(d.delta).max()),
                "identical_corpus": corpora[arm] == corpora["baseline"],
            }
            if seed == config.seeds[0]:
                scatter.extend(d.scatter_rows(arm))
    rec.artifacts["scatter"] = [list(r) for r in scatter]
    rec.artifacts["missing_features"] = missing
    rec.summary.update(prep.notes)
    rec.finished = _now()
    return rec


def _load_sota_constants() -> dict:
    text = (resources.files("tabtext") / "sota_constants.json").read_text(encoding="utf-8")
    return json.loads(text)


def run_sota_benchmark(config: ExperimentConfig) -> RunRecord:
    config.validate()
    rec = _new_record(config)
    prep = prepare(config)
    models = config.models or list(SOTA_MODELS)
    cancer_plan = _cancer_plan(config, prep)
    if cancer_plan is not None:
        rec.artifacts["cancer_gene_plan"] = cancer_plan.to_dict()
    for model in models:
        rec.reports[model] = {}
        for seed in config.seeds:
            try:
                if model in FAMILIES:
                    grid = builtin_grid(model) if config.grid == "full" else reduced_grid(model)
                    t0 = time.perf_counter()
                    fit = grid_search(model, grid, prep.train, seed=seed, exclude=identifier_columns(config.dataset))
                    rep = evaluate(prep.test.y, predict_proba(fit, prep.test))
                    rep.runtime_seconds = time.perf_counter() - t0
                    rec.artifacts.setdefault("best_params", {})[f"{model}/{seed}"] = fit.best_params
                elif model in ("tabnet", "tabpfn"):
                    adapter = external_adapter(model).fit(prep.train)
                    rep = evaluate(prep.test.y, predict_proba(adapter, prep.test))
                else:
                    plan = cancer_plan
                    if config.dataset == "cancer" and plan is None and not config.allow_truncation:
                        raise HarnessError("full-width cancer serialization refused; pass allow_truncation")
                    if config.dataset == "cancer" and config.allow_truncation and config.full_scale:
                        plan = None
                    template = load_builtin_template(config.template_id)
                    _, _, _, rep = _lm_arm(config, prep, template, plan, seed, prep.data.n_classes)
                rec.reports[model][str(seed)] = _report_dict(rep)
            except (AdapterUnavailable, AdapterGuardError) as exc:
                rec.reports[model][str(seed)] = None
                rec.summary.setdefault("unavailable", {})[model] = f"{type(exc).__name__}: {exc}"
            except Exception as exc:
                rec.reports[model][str(seed)] = None
                rec.errors[f"{model}/{seed}"] = f"{type(exc).__name__}: {exc}"
    const = _load_sota_constants().get(config.dataset)
    rec.summary.update({"aggregate": {m: _aggregate({k: v for k, v in r.items() if v}) for m, r in rec.reports.items()},
                        "sota_constant": const, "reproducibility": NOT_REPRODUCIBLE["sota_benchmark"],
                        **prep.notes})
    rec.finished = _now()
    return rec


def run_backbone_benchmark(config: ExperimentConfig) -> RunRecord:
    config.validate()
    rec = _new_record(config)
    prep = prepare(config)
    template = load_builtin_template(config.template_id)
    train_c = render_dataset(prep.train, template)
    test_c = render_dataset(prep.test, template)
    backbones = config.models or [config.backbone]
    for seed in config.seeds:
        rows = backbone_benchmark(backbones, train_c, test_c, num_classes=prep.data.n_classes,
                                  overrides={**config.train, "seed": seed})
        for r in rows:
            entry = rec.reports.setdefault(r.backbone, {})
            if r.failed:
                entry[str(seed)] = None
                rec.errors[f"{r.backbone}/{seed}"] = r.error
            else:
                d = _report_dict(r.report)
                d["train_seconds"] = r.train_seconds
                d["train_samples_per_second"] = r.train_samples_per_second
                entry[str(seed)] = d
    rec.summary.update({"reproducibility": NOT_REPRODUCIBLE["backbone_benchmark"], **prep.notes})
    rec.finished = _now()
    return rec


RUNNERS = {
    "feature_selection_ablation": run_feature_selection_ablation,
    "scaling_ablation": run_scaling_ablation,
    "imputation_sensitivity": run_imputation_sensitivity,
    "sota_benchmark": run_sota_benchmark,
    "backbone_benchmark": run_backbone_benchmark,
}


def run(config: ExperimentConfig, save: bool = True) -> tuple[RunRecord, Path | None]:
    config.validate()
    rec = RUNNERS[config.experiment](config)
    path = rec.save(config.output_dir) if save else None
    return rec, path
