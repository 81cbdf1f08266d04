"""Latent-space guidance of an inferior-modality classifier by a superior modality."""

__version__ = "0.1.0"

from .data import PairedDataset, SynthSpec, generate, load, make_splits, save
from .models import Classifier, GuidanceNet, GuidedModel, ModelBundle, freeze
from .pipeline import StageConfigs, TrainConfig, evaluate_all, run_pipeline, train_classifiers, \
    train_combined, train_guidance

__all__ = [
    "PairedDataset", "SynthSpec", "generate", "load", "make_splits", "save",
    "Classifier", "GuidanceNet", "GuidedModel", "ModelBundle", "freeze",
    "StageConfigs", "TrainConfig", "evaluate_all", "run_pipeline", "train_classifiers",
    "train_combined", "train_guidance",
]
