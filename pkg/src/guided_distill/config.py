"""Experiment configuration: YAML documents, presets and validation.

A config mirrors the columns of a per-experiment hyperparameter table
(batch size, epochs, patience, network, optimizer, learning rate, loss
weights, weighted sampling) with one block per training stage.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import RADPATH_SPLIT_FRACTIONS, SynthSpec, TaskSpec
from .errors import ConfigError
from .pipeline import StageConfigs, TrainConfig

OUTPUT_ROOT_ENV = "GUIDED_DISTILL_OUTPUT_ROOT"
STAGE_KEYS = ("classifier_I", "classifier_S", "guidance", "combined", "fusion")

MODEL_PRESETS = {
    # linear encoders: any nonlinearity available to the guided model comes through G
    "synthetic": {"latent_i": 48, "latent_s": 48, "encoder_hidden": [], "bottleneck": 32},
    # guidance bottlenecks used on the clinical datasets
    "radpath": {"latent_i": 1024, "latent_s": 1024, "encoder_hidden": [256, 256], "bottleneck": 256},
    "derm7pt": {"latent_i": 1024, "latent_s": 1024, "encoder_hidden": [256, 256], "bottleneck": 512},
}

RADPATH_BENCHMARK = {
    "n_classes": 3, "d_i": 64, "d_s": 64, "sigma_i": 1.0, "sigma_s": 0.3, "rho": 0.5,
    "priors": [133 / 221, 34 / 221, 54 / 221], "n": 2000, "label_dims": 8, "subject_dims": 8,
    "separation": 2.0, "within_class": 1.0, "modes_per_class": 2,
    "split_fractions": list(RADPATH_SPLIT_FRACTIONS), "stratify": True,
    "label_names": ["glioblastoma", "oligodendroglioma", "astrocytoma"],
}

# Synthetic class priors for the eight dermatology-style tasks (illustrative only).
DERM_TASKS = [
    {"name": "PN", "n_classes": 3, "priors": [0.40, 0.37, 0.23],
     "label_names": ["absent", "typical", "atypical"]},
    {"name": "BWV", "n_classes": 2, "priors": [0.80, 0.20], "label_names": ["absent", "present"]},
    {"name": "VS", "n_classes": 3, "priors": [0.80, 0.08, 0.12],
     "label_names": ["absent", "regular", "irregular"]},
    {"name": "PIG", "n_classes": 3, "priors": [0.58, 0.12, 0.30],
     "label_names": ["absent", "regular", "irregular"]},
    {"name": "STR", "n_classes": 3, "priors": [0.64, 0.10, 0.26],
     "label_names": ["absent", "regular", "irregular"]},
    {"name": "DaG", "n_classes": 3, "priors": [0.23, 0.33, 0.44],
     "label_names": ["absent", "regular", "irregular"]},
    {"name": "RS", "n_classes": 2, "priors": [0.77, 0.23], "label_names": ["absent", "present"]},
    {"name": "DIAG", "n_classes": 5, "priors": [0.08, 0.57, 0.25, 0.05, 0.05],
     "label_names": ["BCC", "NEV", "MEL", "MISC", "SK"]},
]
DERM_LOSS_WEIGHTS = {
    "PN": [0.9, 0.9, 1.8], "BWV": [0.6, 12.0], "VS": [0.01, 20.0, 50.0], "PIG": [0.2, 45.0, 1.1],
    "STR": [0.06, 50.0, 4.0], "DaG": [0.3, 0.9, 0.9], "RS": [0.25, 6.0],
    "DIAG": [15.0, 0.07, 1.4, 4.0, 15.0],
}

_CLASSIFIER = {"batch_size": 50, "max_epochs": 200, "patience": 30, "optimizer": "adam",
               "lr": 1e-3, "wrs": True}

PRESETS = {
    "radpath-like": {
        "name": "radpath-like",
        "seeds": [0, 1, 2, 3, 4],
        "data": {"synth": RADPATH_BENCHMARK, "resample_per_seed": True},
        "model": {"preset": "synthetic"},
        "stages": {
            "classifier_I": dict(_CLASSIFIER),
            "classifier_S": dict(_CLASSIFIER),
            "guidance": {"batch_size": 50, "max_epochs": 150, "patience": None,
                         "optimizer": "sgd", "lr": 0.5},
            "combined": {"batch_size": 50, "max_epochs": 500, "patience": 200, "optimizer": "sgd",
                         "lr": 1e-3, "loss_weights": [1.0, 1.7, 1.6], "wrs": True},
        },
    },
    "derm7pt-like": {
        "name": "derm7pt-like",
        "seeds": [0, 1, 2],
        "data": {
            "synth": {"d_i": 96, "d_s": 96, "sigma_i": 1.0, "sigma_s": 0.3, "rho": 0.5,
                      "n": 1011, "label_dims": 8, "subject_dims": 8, "separation": 2.0,
                      "modes_per_class": 2, "split_fractions": [413 / 1011, 206 / 1011, 392 / 1011],
                      "stratify": False, "priors": None, "label_names": None},
            "tasks": DERM_TASKS,
            "resample_per_seed": False,
        },
        "model": {"preset": "synthetic"},
        "stages": {
            "classifier_I": dict(_CLASSIFIER),
            "classifier_S": dict(_CLASSIFIER),
            "guidance": {"batch_size": 100, "max_epochs": 500, "patience": None,
                         "optimizer": "sgd", "lr": 0.5},
            "combined": {"batch_size": 100, "max_epochs": 500, "patience": 200, "optimizer": "sgd",
                         "lr": 1e-4, "wrs": False},
        },
        "task_overrides": {t: {"combined": {"loss_weights": w}} for t, w in DERM_LOSS_WEIGHTS.items()},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    name: str
    seeds: list[int]
    stages: dict[str, TrainConfig]
    model: dict
    synth: SynthSpec | None = None
    tasks: list[TaskSpec] = field(default_factory=list)
    dataset_path: Path | None = None
    resample_per_seed: bool = False
    task_overrides: dict = field(default_factory=dict)
    output_dir: Path | None = None
    raw: dict = field(default_factory=dict)

    @property
    def multitask(self) -> bool:
        return bool(self.tasks)

    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks] if self.tasks else ["main"]

    def stage_configs(self, task: str, seed: int) -> StageConfigs:
        over = self.task_overrides.get(task, {})
        cfgs = {}
        for key in STAGE_KEYS:
            base = self.stages.get(key)
            if key in over:
                base = TrainConfig.from_dict(_merge(base.to_dict() if base else {}, over[key]))
            cfgs[key] = base
        return StageConfigs(cfgs["classifier_I"], cfgs["classifier_S"], cfgs["guidance"],
                            cfgs["combined"], cfgs["fusion"]).with_seed(1000 * seed)

    def model_kwargs(self) -> dict:
        m = dict(self.model)
        preset = m.pop("preset", "synthetic")
        if preset not in MODEL_PRESETS:
            raise ConfigError(f"model.preset: unknown {preset!r}; known {sorted(MODEL_PRESETS)}")
        kw = _merge(MODEL_PRESETS[preset], m)
        for key in ("encoder_hidden", "decoder_hidden", "combined_hidden"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return kw

    def resolve_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.name


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a config mapping; ``preset:`` pulls in a named preset first."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"preset: unknown {name!r}; known {sorted(PRESETS)}")
        doc = _merge(PRESETS[name], {k: v for k, v in doc.items() if k != "preset"})
    known = {"name", "seeds", "data", "model", "stages", "task_overrides", "output_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    seeds = doc.get("seeds") or []
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError(f"seeds: need a non-empty list of integers, got {seeds!r}")
    stages = {}
    for key in STAGE_KEYS:
        block = (doc.get("stages") or {}).get(key)
        if block is None:
            if key == "fusion":
                continue
            raise ConfigError(f"stages.{key}: missing")
        try:
            stages[key] = TrainConfig.from_dict(block)
        except (TypeError, ConfigError) as exc:
            raise ConfigError(f"stages.{key}: {exc}") from exc
    data = doc.get("data") or {}
    synth = tasks = path = None
    if "path" in data:
        path = Path(data["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
    elif "synth" in data:
        synth_doc = dict(data["synth"])
        tasks = [TaskSpec(t["name"], int(t["n_classes"]),
                          tuple(t["priors"]) if t.get("priors") else None,
                          tuple(t["label_names"]) if t.get("label_names") else None)
                 for t in data.get("tasks") or []]
        if tasks:
            synth_doc.update(n_classes=2, priors=None, label_names=None)
        try:
            synth = SynthSpec.from_dict(synth_doc)
        except TypeError as exc:
            raise ConfigError(f"data.synth: {exc}") from exc
        for t in tasks:
            if t.n_classes < 2:
                raise ConfigError(f"data.tasks.{t.name}: n_classes must be >= 2")
    else:
        raise ConfigError("data: need either 'path' or 'synth'")
    cfg = ExperimentConfig(
        name=str(doc.get("name", "experiment")), seeds=list(seeds), stages=stages,
        model=dict(doc.get("model") or {}), synth=synth, tasks=tasks or [], dataset_path=path,
        resample_per_seed=bool(data.get("resample_per_seed", False)),
        task_overrides=dict(doc.get("task_overrides") or {}),
        output_dir=Path(doc["output_dir"]) if doc.get("output_dir") else None, raw=doc,
    )
    cfg.model_kwargs()
    for task, over in cfg.task_overrides.items():
        bad = set(over) - set(STAGE_KEYS)
        if bad:
            raise ConfigError(f"task_overrides.{task}: unknown stage(s) {sorted(bad)}")
        for s in cfg.seeds[:1]:
            cfg.stage_configs(task, s)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)


def preset_config(name: str, **overrides) -> ExperimentConfig:
    return parse_config(_merge({"preset": name}, overrides))
