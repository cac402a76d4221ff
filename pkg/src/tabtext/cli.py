"""Command line entry point: ``tabtext <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__


def _cmd_data_info(args) -> int:
    from .datasets import register_builtin

    ds = register_builtin(args.name)
    print(json.dumps({"name": ds.name, "n": ds.n, "m": ds.m, "classes": [str(c) for c in ds.classes],
                      "class_counts": ds.class_counts().tolist(), "card": ds.card.to_dict(),
                      "missing_features": ds.missing_features(), "card_mismatches": list(ds.mismatches)},
                     indent=2))
    return 0


def _cmd_data_split(args) -> int:
    from .datasets import register_builtin, split, to_csv

    ds = register_builtin(args.name)
    train, test = split(ds, args.test_fraction, args.seed, args.stratify)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    to_csv(train, out / f"{args.name}_train.csv")
    to_csv(test, out / f"{args.name}_test.csv")
    print(f"train {train.n} rows, test {test.n} rows -> {out}")
    return 0


def _cmd_render(args) -> int:
    from .curation import CurationPlan
    from .datasets import register_builtin
    from .template import export_jsonl, load_builtin_template, render_dataset

    ds = register_builtin(args.dataset)
    template = load_builtin_template(args.template or args.dataset)
    plan = CurationPlan.load(args.plan) if args.plan else None
    if args.rows is not None:
        ds = ds.take(range(min(args.rows, ds.n)))
    corpus = render_dataset(ds, template, plan)
    if args.out:
        export_jsonl(corpus, args.out)
        print(f"{len(corpus)} examples -> {args.out}")
    else:
        for ex in corpus:
            print(ex.text)
    return 0


def _cmd_anova(args) -> int:
    from .curation import anova_for_dataset, anova_plan, rank
    from .datasets import register_builtin, split

    ds = register_builtin(args.dataset)
    source = ds if args.fit_on == "full" else split(ds, stratify=False)[0]
    scores = anova_for_dataset(source)
    by_name = {s.feature: s.score for s in scores}
    for name in rank(scores):
        print(f"{name:40s} {by_name[name]:12.4f}")
    if args.tau is not None:
        plan = anova_plan(source, args.tau, fit_on=args.fit_on)
        print(f"\nfit on {args.fit_on}; tau {args.tau:g} drops: {sorted(plan.dropped(source))}")
        if args.out:
            plan.save(args.out)
    return 0


def _cmd_fit(args) -> int:
    from .datasets import identifier_columns, register_builtin, split
    from .metrics import evaluate
    from .zoo import builtin_grid, grid_search, predict_proba, reduced_grid

    ds = register_builtin(args.dataset)
    train, test = split(ds, stratify=False)
    grid = builtin_grid(args.family) if args.grid == "full" else reduced_grid(args.family)
    res = grid_search(args.family, grid, train, metric=args.metric, n_jobs=args.jobs,
                      exclude=identifier_columns(args.dataset))
    rep = evaluate(test.y, predict_proba(res, test))
    if args.out:
        res.save(args.out)
    print(json.dumps({"best_params": res.best_params, "evaluations": res.evaluations,
                      "accuracy": rep.accuracy, "f1": rep.f1, "auroc": rep.auroc, "mcc": rep.mcc}, indent=2,
                     default=str))
    return 0


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, run
    from .report import emit_report

    config = ExperimentConfig.load(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    rec, path = run(config)
    paths = emit_report(rec, config.output_dir)
    print(f"record {path}")
    for kind, p in paths.items():
        print(f"{kind:5s} {p}")
    return 0 if rec.complete else 1


def _cmd_report(args) -> int:
    from .harness import RunRecord
    from .report import emit_report

    rec = RunRecord.load(args.record)
    paths = emit_report(rec, args.out or Path(args.record).parent)
    for kind, p in paths.items():
        print(f"{kind:5s} {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabtext", description="Serialize tabular data to text and benchmark it.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="inspect or split a builtin dataset")
    dsub = data.add_subparsers(dest="data_command", required=True)
    info = dsub.add_parser("info")
    info.add_argument("name")
    info.set_defaults(func=_cmd_data_info)
    sp = dsub.add_parser("split")
    sp.add_argument("name")
    sp.add_argument("--out", default=".")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--stratify", action="store_true")
    sp.set_defaults(func=_cmd_data_split)

    r = sub.add_parser("render", help="serialize a dataset with a template")
    r.add_argument("dataset")
    r.add_argument("--template")
    r.add_argument("--plan", help="curation plan JSON")
    r.add_argument("--rows", type=int)
    r.add_argument("--out", help="JSONL output path")
    r.set_defaults(func=_cmd_render)

    a = sub.add_parser("anova", help="ANOVA F-scores and threshold selection")
    a.add_argument("dataset")
    a.add_argument("--tau", type=float)
    a.add_argument("--fit-on", choices=("train", "full"), default="train")
    a.add_argument("--out", help="write the selection plan JSON here")
    a.set_defaults(func=_cmd_anova)

    f = sub.add_parser("fit", help="grid-search a classical model on the default split")
    f.add_argument("family", choices=("svm_rbf", "gbdt_a", "gbdt_b"))
    f.add_argument("dataset")
    f.add_argument("--grid", choices=("full", "reduced"), default="full")
    f.add_argument("--metric", choices=("accuracy", "auroc", "f1"), default="accuracy")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--out", help="directory for best_params.json and model.pkl")
    f.set_defaults(func=_cmd_fit)

    run = sub.add_parser("run", help="run an experiment config and write its report")
    run.add_argument("config")
    run.add_argument("--output-dir")
    run.set_defaults(func=_cmd_run)

    rep = sub.add_parser("report", help="render markdown/JSON/CSV/PNG from a saved run record")
    rep.add_argument("record")
    rep.add_argument("--out")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
