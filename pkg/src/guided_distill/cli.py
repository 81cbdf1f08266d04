"""``guided-distill`` command line: synth, train, report, significance.

Exit codes: 0 ok, 2 configuration error, 3 I/O or data error,
4 missing upstream artifact or per-sample predictions, 5 diverged training.
Diagnostics go to stderr; stdout carries only the requested payload.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import report as rep
from .config import PRESETS, load_config
from .data import SynthSpec, TaskSpec, generate, generate_multitask, save
from .errors import ConfigError, DataError, MissingArtifactError, TrainingError
from .metrics import mcnemar_counts, mcnemar_test
from .pipeline import ROWS
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_DIVERGED = 0, 2, 3, 4, 5

log = logging.getLogger("guided_distill")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _synth_doc(args) -> dict:
    if args.spec:
        doc = yaml.safe_load(Path(args.spec).read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.spec}: spec must be a mapping")
    else:
        doc = {}
    preset = doc.pop("preset", None) or args.preset
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown {preset!r}; known {sorted(PRESETS)}")
        data = PRESETS[preset]["data"]
        doc = {"synth": dict(data["synth"]) | doc.get("synth", doc),
               "tasks": doc.get("tasks", data.get("tasks"))}
    elif "synth" not in doc:
        doc = {"synth": doc}
    if args.seed is not None:
        doc["synth"]["seed"] = args.seed
    return doc


def cmd_synth(args) -> int:
    doc = _synth_doc(args)
    tasks = [TaskSpec(t["name"], int(t["n_classes"]), tuple(t["priors"]) if t.get("priors") else None,
                      tuple(t["label_names"]) if t.get("label_names") else None)
             for t in doc.get("tasks") or []]
    synth = dict(doc["synth"])
    if tasks:
        synth.update(n_classes=2, priors=None, label_names=None)
    try:
        spec = SynthSpec.from_dict(synth)
    except TypeError as exc:
        raise ConfigError(f"synth spec: {exc}") from exc
    out = Path(args.out)
    if tasks:
        datasets = generate_multitask(spec, tasks)
        for name, ds in datasets.items():
            save(ds, out / name)
    else:
        datasets = {"main": generate(spec)}
        save(datasets["main"], out)
    for name, ds in datasets.items():
        sizes = {k: int(v.size) for k, v in ds.splits.items()}
        print(f"{name}: N={ds.n} K={ds.n_classes} d_I={ds.d_i} d_S={ds.d_s} splits={sizes}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = run_experiment(cfg, stages=args.stages, seeds=args.seeds, out_dir=args.out)
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    agg = rep.aggregate_reports(rep.load_reports(args.run_dir))
    if args.format == "json":
        sys.stdout.write(rep.to_json(agg) + "\n")
    elif args.format == "csv":
        sys.stdout.write(rep.to_csv(agg))
    else:
        sys.stdout.write(rep.render_table(agg) + "\n")
    if not args.no_figures:
        fig_dir = Path(args.figures) if args.figures else Path(args.run_dir) / "figures"
        for p in rep.plot_report(agg, fig_dir):
            log.info("wrote %s", p)
    return EXIT_OK


def cmd_significance(args) -> int:
    reports = rep.load_reports(args.run_dir)
    if args.seed is not None:
        reports = [r for r in reports if r["seed"] == args.seed]
        if not reports:
            raise DataError(f"no report for seed {args.seed}")
    for row in (args.row_a, args.row_b):
        if row not in ROWS:
            raise ConfigError(f"unknown method row {row!r}; expected one of {ROWS}")
    correct_a, correct_b = [], []
    for r in reports:
        preds = r.get("predictions", {}).get(args.task)
        if not preds or args.row_a not in preds or args.row_b not in preds or "y_true" not in preds:
            raise MissingArtifactError("predictions", f"seed_{r['seed']}/report.json[{args.task}]")
        y = np.asarray(preds["y_true"])
        correct_a.append(np.asarray(preds[args.row_a]) == y)
        correct_b.append(np.asarray(preds[args.row_b]) == y)
    a, b = np.concatenate(correct_a), np.concatenate(correct_b)
    both, a_only, b_only, neither = mcnemar_counts(a, b)
    p = mcnemar_test(a, b)
    print(f"task={args.task} A={args.row_a} B={args.row_b} n={a.size}")
    print(f"both_correct={both} A_only={a_only} B_only={b_only} both_wrong={neither}")
    print(f"p={p!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guided-distill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("spec", nargs="?", help="YAML synth spec (fields of SynthSpec, or preset: NAME)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a preset's data block")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run training stages from a config file")
    p.add_argument("config")
    p.add_argument("--stages", type=_int_list, default=[1, 2, 3], help="subset of 1,2,3")
    p.add_argument("--seeds", type=_int_list, help="override the config's seeds")
    p.add_argument("--out", help="run directory (default: $GUIDED_DISTILL_OUTPUT_ROOT/<name>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="render results of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--figures", help="figure directory (default: <run_dir>/figures)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("significance", help="McNemar test between two method rows")
    p.add_argument("run_dir")
    p.add_argument("task")
    p.add_argument("row_a")
    p.add_argument("row_b")
    p.add_argument("--seed", type=int, help="single seed (default: pool all seeds)")
    p.set_defaults(func=cmd_significance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DataError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
