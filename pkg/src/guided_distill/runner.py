"""Execute an experiment config: stages per (seed, task), artifacts, manifest."""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import PairedDataset, generate, generate_multitask, load
from .errors import ConfigError, MissingArtifactError
from .metrics import SEVEN_POINT_CRITERIA, CriteriaScoreTable, auroc, balanced_accuracy, micro_f1, \
    seven_point_scores
from .models import ModelBundle, load_checkpoint, save_checkpoint
from .pipeline import ROWS, BatchHook, StageResult, evaluate_all, train_classifiers, train_combined, \
    train_fusion, train_guidance

log = logging.getLogger(__name__)

STAGE_FILES = {
    1: ("stage1_I.ckpt", "stage1_S.ckpt"),
    2: ("stage2_G.ckpt",),
    3: ("stage3_Dc.ckpt",),
}
STAGE_NETWORKS = {
    "stage1_I.ckpt": ("E_I", "D_I"),
    "stage1_S.ckpt": ("E_S", "D_S"),
    "stage2_G.ckpt": ("G",),
    "stage3_Dc.ckpt": ("D_c", "D_SI"),
}


def build_datasets(cfg: ExperimentConfig, seed: int) -> dict[str, PairedDataset]:
    if cfg.dataset_path is not None:
        root = Path(cfg.dataset_path)
        if (root / "manifest.json").exists():
            return {"main": load(root)}
        subdirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists()) if root.is_dir() else []
        if not subdirs:
            raise FileNotFoundError(f"{root}: no dataset manifest found")
        return {p.name: load(p) for p in subdirs}
    spec = cfg.synth
    if cfg.resample_per_seed:
        spec = type(spec).from_dict(spec.to_dict() | {"seed": spec.seed + seed})
    if cfg.multitask:
        return generate_multitask(spec, cfg.tasks)
    return {"main": generate(spec)}


def _write_curves(path: Path, results: list[StageResult]):
    rows = []
    if path.exists():
        with path.open() as fh:
            done = {r.stage for r in results}
            rows = [r for r in csv.DictReader(fh) if r["stage"] not in done]
    for res in results:
        for c in res.curve:
            is_mse = res.stage.startswith("stage2")
            rows.append({"stage": res.stage, "epoch": c["epoch"], "split": c["split"],
                         "loss": repr(c["loss"]), "ba": "" if is_mse else repr(c["metric"])})
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["stage", "epoch", "split", "loss", "ba"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _save(task_dir: Path, bundle: ModelBundle, fname: str, meta: dict):
    save_checkpoint(task_dir / fname, {n: bundle[n] for n in STAGE_NETWORKS[fname]}, meta)


def _restore(task_dir: Path, bundle: ModelBundle, fname: str, stage: int):
    path = task_dir / fname
    if not path.exists():
        raise MissingArtifactError(stage, path)
    nets, _ = load_checkpoint(path)
    for name, net in nets.items():
        bundle[name].load_state(net.state())
        bundle[name].set_frozen(net.frozen)


def check_dependencies(out_dir: Path, cfg: ExperimentConfig, stages, seeds):
    """Raise before any training if a requested stage lacks upstream artifacts."""
    needed = set()
    if 1 not in stages and (2 in stages or 3 in stages):
        needed.add(1)
    if 2 not in stages and 3 in stages:
        needed.add(2)
    for seed in seeds:
        for task in cfg.task_names():
            for stage in sorted(needed):
                for fname in STAGE_FILES[stage]:
                    path = out_dir / f"seed_{seed}" / task / fname
                    if not path.exists():
                        raise MissingArtifactError(stage, path)


def melanoma_inference(task_reports: dict, table: CriteriaScoreTable | None = None) -> dict:
    """Melanoma rows from per-criterion predictions (tasks sharing one test split).

    The reference decision is the checklist score of the true criterion
    labels at each threshold; AUROC ranks subjects by predicted score.
    """
    table = table or CriteriaScoreTable.default()
    truth_score = seven_point_scores(
        {c: task_reports[c]["predictions"]["y_true"] for c in SEVEN_POINT_CRITERIA}, table)
    out = {}
    for t in table.thresholds:
        y = (truth_score >= t).astype(np.int64)
        rows = {}
        for row in ROWS:
            if not all(row in task_reports[c]["predictions"] for c in SEVEN_POINT_CRITERIA):
                continue
            score = seven_point_scores({c: task_reports[c]["predictions"][row] for c in SEVEN_POINT_CRITERIA},
                                       table)
            pred = (score >= t).astype(np.int64)
            entry = {"ba": balanced_accuracy(y, pred, n_classes=2) if len(np.unique(y)) == 2 else None,
                     "f1": micro_f1(y, pred)}
            if len(np.unique(y)) == 2:
                entry["auroc"] = auroc(y, score)
            rows[row] = {k: v for k, v in entry.items() if v is not None}
        out[f"MEL_t{t}"] = {"rows": rows, "predictions": {}}
    return out


def run_experiment(cfg: ExperimentConfig, stages=(1, 2, 3), seeds=None, out_dir=None,
                   hook: BatchHook | None = None) -> Path:
    """Run the requested stages for every (seed, task); returns the run directory."""
    stages = tuple(sorted(set(stages)))
    if not stages or any(s not in (1, 2, 3) for s in stages):
        raise ConfigError(f"stages must be a subset of 1,2,3, got {stages}")
    seeds = list(seeds) if seeds else cfg.seeds
    out = Path(out_dir) if out_dir is not None else cfg.resolve_output_dir()
    check_dependencies(out, cfg, stages, seeds)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest.update({"package_version": __version__, "config": cfg.raw, "checkpoint_format": 1})
    records = {(r["task"], r["seed"]): r for r in manifest.get("records", [])}
    model_kw = cfg.model_kwargs()

    for seed in seeds:
        datasets = build_datasets(cfg, seed)
        seed_dir = out / f"seed_{seed}"
        task_reports = {}
        for task, ds in datasets.items():
            t0 = time.perf_counter()
            task_dir = seed_dir / task
            task_dir.mkdir(parents=True, exist_ok=True)
            cfgs = cfg.stage_configs(task, seed)
            bundle = ModelBundle.build(ds.d_i, ds.d_s, ds.n_classes, seed=seed, **model_kw)
            meta = {"task": task, "seed": seed}
            results = []
            if 1 in stages:
                results += train_classifiers(ds, bundle, cfgs.classifier_i, cfgs.classifier_s, hook)
                _save(task_dir, bundle, "stage1_I.ckpt", meta)
                _save(task_dir, bundle, "stage1_S.ckpt", meta)
            else:
                _restore(task_dir, bundle, "stage1_I.ckpt", 1)
                _restore(task_dir, bundle, "stage1_S.ckpt", 1)
            if 2 in stages:
                results.append(train_guidance(ds, bundle, cfgs.guidance, hook))
                _save(task_dir, bundle, "stage2_G.ckpt", meta)
            elif 3 in stages:
                _restore(task_dir, bundle, "stage2_G.ckpt", 2)
            if 3 in stages:
                results.append(train_combined(ds, bundle, cfgs.combined, hook))
                results.append(train_fusion(ds, bundle, cfgs.fusion or cfgs.combined, hook))
                _save(task_dir, bundle, "stage3_Dc.ckpt", meta)
                task_reports[task] = evaluate_all(bundle, ds)
            _write_curves(task_dir / "curves.csv", results)
            rec = records.get((task, seed), {"task": task, "seed": seed, "stages": [], "wall_time_s": {}})
            rec["stages"] = sorted(set(rec["stages"]) | set(stages))
            rec["checkpoints"] = sorted(str((task_dir / f).relative_to(out))
                                        for f in STAGE_NETWORKS if (task_dir / f).exists())
            rec["best_epochs"] = rec.get("best_epochs", {}) | {r.stage: r.best_epoch for r in results}
            rec["wall_time_s"] = rec.get("wall_time_s", {}) | {
                ",".join(map(str, stages)): round(time.perf_counter() - t0, 3)}
            records[(task, seed)] = rec
            log.info("seed %d task %s done in %.1fs", seed, task, time.perf_counter() - t0)
        if 3 in stages:
            if all(c in task_reports for c in SEVEN_POINT_CRITERIA):
                task_reports |= melanoma_inference(task_reports)
            report = {
                "seed": seed,
                "task_order": list(task_reports),
                "tasks": {t: {k: v for k, v in r.items() if k != "predictions"} for t, r in task_reports.items()},
                "predictions": {t: r["predictions"] for t, r in task_reports.items() if r["predictions"]},
                "mcnemar": {t: r["mcnemar_p"] for t, r in task_reports.items() if "mcnemar_p" in r},
            }
            (seed_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
            for task in task_reports:
                if (task, seed) in records:
                    records[(task, seed)]["report"] = str((seed_dir / "report.json").relative_to(out))
    manifest["records"] = sorted(records.values(), key=lambda r: (r["seed"], r["task"]))
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out
