import json

import numpy as np
import pytest

from guided_distill.autodiff import Tensor, mse_loss, no_grad
from guided_distill.data import PairedDataset, SynthSpec, generate, make_splits
from guided_distill.errors import ConfigError, DataError
from guided_distill.models import ModelBundle
from guided_distill.pipeline import (ROWS, StageConfigs, TrainConfig, WeightedRandomSampler,
                                     class_balanced_probabilities, evaluate_all, latents, run_pipeline,
                                     train_classifiers, train_combined, train_guidance,
                                     weighted_random_sampler)

FAST = TrainConfig(batch_size=32, max_epochs=8, patience=4, optimizer="adam", lr=3e-3)
FAST_G = TrainConfig(batch_size=32, max_epochs=8, patience=None, optimizer="adam", lr=3e-3)


def tiny_spec(**kw):
    return SynthSpec(**({"n": 400, "d_i": 16, "d_s": 16, "separation": 1.5} | kw))


def tiny_bundle(ds, seed=0):
    return ModelBundle.build(ds.d_i, ds.d_s, ds.n_classes, latent_i=12, latent_s=12,
                             encoder_hidden=(16,), bottleneck=8, seed=seed)


def cfgs(seed=0):
    return StageConfigs(FAST, FAST, FAST_G, FAST).with_seed(seed)


def snapshot(bundle, names):
    return {n: [a.copy() for a in bundle[n].state()] for n in names}


def same(a, b):
    return all(np.array_equal(x, y) for n in a for x, y in zip(a[n], b[n]))


# --- sampler

def test_sampler_minority_frequency():
    draws = weighted_random_sampler([0, 0, 0, 1], seed=0, n_draws=100_000)
    assert abs(np.mean(draws == 3) - 0.5) < 0.01


def test_sampler_balanced_is_uniform_and_deterministic():
    np.testing.assert_allclose(class_balanced_probabilities([0, 1, 2, 0, 1, 2]), 1 / 6)
    a = WeightedRandomSampler([0, 1, 1, 2], seed=4).draw(50)
    b = WeightedRandomSampler([0, 1, 1, 2], seed=4).draw(50)
    assert np.array_equal(a, b)


def test_sampler_needs_two_classes():
    with pytest.raises(DataError):
        class_balanced_probabilities([0, 0, 0])


# --- configs

@pytest.mark.parametrize("kw", [{"batch_size": 0}, {"lr": -1.0}, {"optimizer": "rmsprop"},
                                {"patience": 0}, {"loss_weights": [1.0, -1.0]}])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_loss_weight_class_mismatch():
    ds = generate(tiny_spec())
    bad = TrainConfig(max_epochs=2, patience=None, loss_weights=[1.0, 2.0])
    with pytest.raises(ConfigError):
        train_classifiers(ds, tiny_bundle(ds), bad, FAST)


def test_single_class_rejected():
    x = np.random.default_rng(0).normal(size=(30, 4))
    y = np.zeros(30, dtype=np.int64)
    ds = PairedDataset(x, x.copy(), y, make_splits(30, (0.6, 0.2, 0.2), 0, stratify=False), ("only",))
    with pytest.raises((DataError, ConfigError)):
        train_classifiers(ds, ModelBundle.build(4, 4, 2, latent_i=6, latent_s=6, encoder_hidden=(),
                                                bottleneck=3), FAST, FAST)


# --- stages

def test_stage1_superior_beats_inferior():
    ds = generate(tiny_spec(n=800, seed=1))
    res_i, res_s = train_classifiers(ds, tiny_bundle(ds), FAST, FAST)
    assert res_s.best_metric > res_i.best_metric


def test_stage_freeze_contract():
    ds = generate(tiny_spec())
    b = tiny_bundle(ds)
    train_classifiers(ds, b, FAST, FAST)
    stage1 = snapshot(b, ["E_I", "D_I", "E_S", "D_S"])
    train_guidance(ds, b, FAST_G)
    assert same(stage1, snapshot(b, ["E_I", "D_I", "E_S", "D_S"]))
    front = snapshot(b, ["E_I", "D_I", "E_S", "D_S", "G"])
    train_combined(ds, b, FAST)
    assert same(front, snapshot(b, ["E_I", "D_I", "E_S", "D_S", "G"]))


def test_guidance_improves_on_untrained():
    ds = generate(tiny_spec())
    b = tiny_bundle(ds)
    train_classifiers(ds, b, FAST, FAST)
    va = ds.splits["val"]
    zi, zs = latents(b, ds.x_i[va], ds.x_s[va])
    with no_grad():
        before = float(mse_loss(b["G"](Tensor(zi)), Tensor(zs)).data)
    res = train_guidance(ds, b, FAST_G)
    assert res.best_metric < before


def test_guidance_learns_identity():
    # x_S = x_I and E_S a copy of E_I, so the regression target is z_I itself
    rng = np.random.default_rng(0)
    x = rng.normal(size=(600, 4))
    y = (x[:, 0] > 0).astype(np.int64)
    ds = PairedDataset(x, x.copy(), y, make_splits(600, (0.7, 0.15, 0.15), 0, True, y), ("a", "b"))
    b = ModelBundle.build(4, 4, 2, latent_i=12, latent_s=12, encoder_hidden=(), bottleneck=8, seed=0)
    b["E_S"].load_state(b["E_I"].state())
    g_cfg = TrainConfig(batch_size=32, max_epochs=300, patience=None, optimizer="adam", lr=3e-3)
    res = train_guidance(ds, b, g_cfg)
    assert res.best_metric < 1e-3


def test_equal_class_weights_match_unweighted():
    ds = generate(tiny_spec())
    a, b = tiny_bundle(ds), tiny_bundle(ds)
    weighted = TrainConfig(**(FAST.to_dict() | {"loss_weights": [2.0, 2.0, 2.0]}))
    ra, _ = train_classifiers(ds, a, FAST, FAST)
    rb, _ = train_classifiers(ds, b, weighted, FAST)
    np.testing.assert_allclose([c["loss"] for c in ra.curve], [c["loss"] for c in rb.curve], rtol=1e-12)


def test_early_stopping_and_best_epoch():
    ds = generate(tiny_spec())
    cfg = TrainConfig(batch_size=32, max_epochs=60, patience=3, optimizer="adam", lr=3e-2)
    res, _ = train_classifiers(ds, tiny_bundle(ds), cfg, FAST)
    val = [c["metric"] for c in res.curve if c["split"] == "val"]
    assert res.best_epoch == int(np.argmax(val))
    assert res.epochs_run < 60 and res.epochs_run - 1 - res.best_epoch == 3


def test_pipeline_determinism():
    ds = generate(tiny_spec(seed=3))
    r1, s1 = run_pipeline(ds, tiny_bundle(ds, 3), cfgs(3))
    r2, s2 = run_pipeline(ds, tiny_bundle(ds, 3), cfgs(3))
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    assert {k: v.curve for k, v in s1.items()} == {k: v.curve for k, v in s2.items()}


def test_no_test_leakage():
    ds = generate(tiny_spec())
    test = set(ds.splits["test"].tolist())
    seen = []

    def hook(stage, split, idx):
        seen.append(stage)
        assert not test.intersection(np.asarray(idx).tolist()), (stage, split)

    run_pipeline(ds, tiny_bundle(ds), cfgs(), hook=hook)
    assert {"stage1_I", "stage1_S", "stage2_G", "stage3_Dc", "stage3_SI"} <= set(seen)


def test_evaluate_all_report_shape():
    ds = generate(tiny_spec())
    report, _ = run_pipeline(ds, tiny_bundle(ds), cfgs())
    assert tuple(report["rows"]) == ROWS
    assert all(len(report["predictions"][r]) == ds.splits["test"].size for r in ROWS)
    ba = report["rows"]
    assert report["delta_pct"]["ba"] == pytest.approx(100 * (ba["G(I)+I"]["ba"] - ba["I"]["ba"]) / ba["I"]["ba"])
    with pytest.raises(ConfigError):
        evaluate_all(tiny_bundle(ds), ds, trained={"I"})
