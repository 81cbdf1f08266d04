"""Three-stage guided training and the five-row evaluation.

Stage 1 trains the inferior and superior classifiers independently.
Stage 2 freezes both and fits the guidance network ``G`` on latent pairs
with an MSE loss. Stage 3 freezes ``E_I`` and ``G`` and trains the
combined decoder ``D_c`` on ``[G(z_I) ⌢ z_I]`` with weighted
cross-entropy. The ``S+I`` fusion head is trained like ``D_c`` but on
``[z_S ⌢ z_I]``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .data import PairedDataset
from .errors import ConfigError, DataError, TrainingError
from .metrics import balanced_accuracy, delta_percent, mcnemar_test, micro_f1, auroc
from .models import GuidanceNet, Mlp, ModelBundle

log = logging.getLogger(__name__)

ROWS = ("S+I", "S", "I", "G(I)", "G(I)+I")
BatchHook = Callable[[str, str, np.ndarray], None]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 100
    patience: int | None = 20
    optimizer: str = "sgd"
    lr: float = 1e-3
    loss_weights: tuple[float, ...] | None = None
    wrs: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.loss_weights is not None and not isinstance(self.loss_weights, tuple):
            object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience is not None and not 1 <= self.patience <= self.max_epochs:
            raise ConfigError(f"patience must lie in [1, max_epochs={self.max_epochs}], got {self.patience}")
        if self.optimizer.lower() not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.loss_weights is not None and any(w <= 0 for w in self.loss_weights):
            raise ConfigError(f"loss_weights must be positive, got {self.loss_weights}")

    def check_classes(self, n_classes: int):
        if self.loss_weights is not None and len(self.loss_weights) != n_classes:
            raise ConfigError(
                f"loss_weights has {len(self.loss_weights)} entries for {n_classes} classes")

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights) if self.loss_weights is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"TrainConfig: unknown field(s) {sorted(unknown)}")
        return cls(**d)


@dataclass
class StageResult:
    stage: str
    best_epoch: int
    best_metric: float
    epochs_run: int
    curve: list[dict] = field(default_factory=list)
    checkpoint: str | None = None


# -------------------------------------------------------------- sampling


def class_balanced_probabilities(labels, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    if k < 2:
        raise DataError(f"weighted sampling needs at least 2 classes, got {k}")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise DataError(f"class(es) {np.flatnonzero(counts == 0).tolist()} have no samples")
    w = 1.0 / counts[labels]
    return w / w.sum()


class WeightedRandomSampler:
    """Draws indices with replacement, P(i) proportional to 1 / count(class of i)."""

    def __init__(self, labels, seed: int = 0, n_classes: int | None = None):
        self.probs = class_balanced_probabilities(labels, n_classes)
        self.rng = np.random.default_rng(seed)

    def draw(self, n: int) -> np.ndarray:
        return self.rng.choice(self.probs.size, size=n, replace=True, p=self.probs)


def weighted_random_sampler(labels, seed: int = 0, n_draws: int | None = None,
                            n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    return WeightedRandomSampler(labels, seed, n_classes).draw(labels.size if n_draws is None else n_draws)


# ------------------------------------------------------------ training


def _predict(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=1)


def _fit(stage: str, cfg: TrainConfig, params, train_y: np.ndarray, batch_loss, evaluate,
         nets: list[Mlp], *, maximize: bool, n_classes: int,
         hook: BatchHook | None = None, train_index: np.ndarray | None = None) -> StageResult:
    """Mini-batch loop with best-checkpoint selection and patience.

    ``batch_loss(rows)`` returns the loss Tensor for training rows ``rows``
    (positions into the training split). ``evaluate()`` returns
    ``(train_loss, train_metric, val_loss, val_metric)``; the val metric
    drives selection and ties keep the earliest epoch.
    """
    n = train_y.size
    if n == 0:
        raise DataError(f"{stage}: empty training split")
    opt = ad.make_optimizer(cfg.optimizer, params, cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    sampler = WeightedRandomSampler(train_y, seed=cfg.seed, n_classes=n_classes) if cfg.wrs else None
    sign = 1.0 if maximize else -1.0
    best_score, best_epoch, best_metric = -np.inf, -1, float("nan")
    best_state = [net.state() for net in nets]
    curve = []
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order = sampler.draw(n) if sampler is not None else rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            if hook is not None and train_index is not None:
                hook(stage, "train", train_index[rows])
            loss = batch_loss(rows)
            if not np.isfinite(loss.data).all():
                raise TrainingError(stage, f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
        epochs_run = epoch + 1
        tr_loss, tr_metric, va_loss, va_metric = evaluate()
        if not np.isfinite(tr_loss):
            raise TrainingError(stage, f"non-finite loss at epoch {epoch}")
        curve.append({"epoch": epoch, "split": "train", "loss": tr_loss, "metric": tr_metric})
        curve.append({"epoch": epoch, "split": "val", "loss": va_loss, "metric": va_metric})
        if sign * va_metric > best_score:
            best_score, best_epoch, best_metric = sign * va_metric, epoch, va_metric
            best_state = [net.state() for net in nets]
        elif cfg.patience is not None and epoch - best_epoch >= cfg.patience:
            break
    for net, state in zip(nets, best_state):
        net.load_state(state)
    log.info("%s: best epoch %d metric %.4f after %d epochs", stage, best_epoch, best_metric, epochs_run)
    return StageResult(stage, best_epoch, float(best_metric), epochs_run, curve)


def _check_dataset(ds: PairedDataset):
    if ds.n_classes < 2:
        raise DataError(f"need at least 2 classes, got {ds.n_classes}")
    for name in ("train", "val"):
        if ds.splits.get(name) is None or ds.splits[name].size == 0:
            raise DataError(f"split {name!r} is empty")


def _train_classifier(stage: str, encoder: Mlp, decoder: Mlp, x_tr, y_tr, x_va, y_va,
                      cfg: TrainConfig, n_classes: int, hook, train_index, val_index):
    cfg.check_classes(n_classes)
    weights = cfg.loss_weights
    xt, xv = Tensor(x_tr), Tensor(x_va)

    def batch_loss(rows):
        logits = decoder(encoder(Tensor(x_tr[rows])))
        return ad.weighted_cross_entropy(logits, y_tr[rows], weights)

    def evaluate():
        if hook is not None:
            hook(stage, "val", val_index)
        with no_grad():
            lt = decoder(encoder(xt))
            lv = decoder(encoder(xv))
        return (float(ad.weighted_cross_entropy(lt, y_tr, weights).data),
                balanced_accuracy(y_tr, _predict(lt.data)),
                float(ad.weighted_cross_entropy(lv, y_va).data),
                balanced_accuracy(y_va, _predict(lv.data)))

    return _fit(stage, cfg, encoder.parameters() + decoder.parameters(), y_tr, batch_loss, evaluate,
                [encoder, decoder], maximize=True, n_classes=n_classes, hook=hook, train_index=train_index)


def train_classifiers(ds: PairedDataset, bundle: ModelBundle, cfg_i: TrainConfig, cfg_s: TrainConfig,
                      hook: BatchHook | None = None) -> tuple[StageResult, StageResult]:
    """Stage 1: ``C_I`` on ``x_I`` alone and ``C_S`` on ``x_S`` alone."""
    _check_dataset(ds)
    tr, va = ds.splits["train"], ds.splits["val"]
    bundle.unfreeze(["E_I", "D_I", "E_S", "D_S"])
    res_i = _train_classifier("stage1_I", bundle["E_I"], bundle["D_I"], ds.x_i[tr], ds.y[tr],
                              ds.x_i[va], ds.y[va], cfg_i, ds.n_classes, hook, tr, va)
    res_s = _train_classifier("stage1_S", bundle["E_S"], bundle["D_S"], ds.x_s[tr], ds.y[tr],
                              ds.x_s[va], ds.y[va], cfg_s, ds.n_classes, hook, tr, va)
    return res_i, res_s


def latents(bundle: ModelBundle, x_i: np.ndarray | None = None, x_s: np.ndarray | None = None):
    """``(z_I, z_S)`` as arrays from the current encoders (None where no input)."""
    with no_grad():
        z_i = bundle["E_I"](Tensor(x_i)).data if x_i is not None else None
        z_s = bundle["E_S"](Tensor(x_s)).data if x_s is not None else None
    return z_i, z_s


def train_guidance(ds: PairedDataset, bundle: ModelBundle, cfg: TrainConfig,
                   hook: BatchHook | None = None) -> StageResult:
    """Stage 2: fit ``G`` so that ``G(z_I) ~ z_S`` under MSE, both classifiers frozen."""
    _check_dataset(ds)
    g = bundle["G"]
    if g.in_width != bundle["E_I"].out_width or g.out_width != bundle["E_S"].out_width:
        raise ConfigError(
            f"G maps {g.in_width}->{g.out_width} but latents are "
            f"{bundle['E_I'].out_width}->{bundle['E_S'].out_width}")
    bundle.freeze(["E_I", "D_I", "E_S", "D_S"])
    bundle.unfreeze(["G"])
    tr, va = ds.splits["train"], ds.splits["val"]
    zi_tr, zs_tr = latents(bundle, ds.x_i[tr], ds.x_s[tr])
    zi_va, zs_va = latents(bundle, ds.x_i[va], ds.x_s[va])

    def batch_loss(rows):
        return ad.mse_loss(g(Tensor(zi_tr[rows])), Tensor(zs_tr[rows]))

    def evaluate():
        if hook is not None:
            hook("stage2_G", "val", va)
        with no_grad():
            tr_mse = float(ad.mse_loss(g(Tensor(zi_tr)), Tensor(zs_tr)).data)
            va_mse = float(ad.mse_loss(g(Tensor(zi_va)), Tensor(zs_va)).data)
        return tr_mse, tr_mse, va_mse, va_mse

    # The guidance stage is a regression; WRS and class weights do not apply.
    return _fit("stage2_G", cfg, g.parameters(), ds.y[tr], batch_loss, evaluate, [g],
                maximize=False, n_classes=ds.n_classes, hook=hook, train_index=tr)


def _train_head(stage: str, head: Mlp, feats_tr, y_tr, feats_va, y_va, cfg: TrainConfig,
                n_classes: int, hook, train_index, val_index) -> StageResult:
    cfg.check_classes(n_classes)
    weights = cfg.loss_weights
    ft, fv = Tensor(feats_tr), Tensor(feats_va)

    def batch_loss(rows):
        return ad.weighted_cross_entropy(head(Tensor(feats_tr[rows])), y_tr[rows], weights)

    def evaluate():
        if hook is not None:
            hook(stage, "val", val_index)
        with no_grad():
            lt, lv = head(ft), head(fv)
        return (float(ad.weighted_cross_entropy(lt, y_tr, weights).data),
                balanced_accuracy(y_tr, _predict(lt.data)),
                float(ad.weighted_cross_entropy(lv, y_va).data),
                balanced_accuracy(y_va, _predict(lv.data)))

    return _fit(stage, cfg, head.parameters(), y_tr, batch_loss, evaluate, [head], maximize=True,
                n_classes=n_classes, hook=hook, train_index=train_index)


def guided_features(bundle: ModelBundle, x_i: np.ndarray) -> np.ndarray:
    z_i, _ = latents(bundle, x_i=x_i)
    with no_grad():
        z_hat = bundle["G"](Tensor(z_i)).data
    return np.concatenate([z_hat, z_i], axis=1)


def fusion_features(bundle: ModelBundle, x_i: np.ndarray, x_s: np.ndarray) -> np.ndarray:
    z_i, z_s = latents(bundle, x_i, x_s)
    return np.concatenate([z_s, z_i], axis=1)


def train_combined(ds: PairedDataset, bundle: ModelBundle, cfg: TrainConfig,
                   hook: BatchHook | None = None) -> StageResult:
    """Stage 3: train ``D_c`` on ``[G(z_I) ⌢ z_I]`` with ``E_I`` and ``G`` frozen.

    The frozen front end is evaluated once per split; with every upstream
    parameter frozen this is the same computation as running the guided
    model batch by batch.
    """
    _check_dataset(ds)
    bundle.freeze(["E_I", "D_I", "E_S", "D_S", "G"])
    bundle.unfreeze(["D_c"])
    tr, va = ds.splits["train"], ds.splits["val"]
    return _train_head("stage3_Dc", bundle["D_c"], guided_features(bundle, ds.x_i[tr]), ds.y[tr],
                       guided_features(bundle, ds.x_i[va]), ds.y[va], cfg, ds.n_classes, hook, tr, va)


def train_fusion(ds: PairedDataset, bundle: ModelBundle, cfg: TrainConfig,
                 hook: BatchHook | None = None) -> StageResult:
    """Upper-bound head ``D_SI`` on ``[z_S ⌢ z_I]``, same protocol as ``D_c``."""
    _check_dataset(ds)
    bundle.freeze(["E_I", "D_I", "E_S", "D_S", "G"])
    bundle.unfreeze(["D_SI"])
    tr, va = ds.splits["train"], ds.splits["val"]
    return _train_head("stage3_SI", bundle["D_SI"], fusion_features(bundle, ds.x_i[tr], ds.x_s[tr]),
                       ds.y[tr], fusion_features(bundle, ds.x_i[va], ds.x_s[va]), ds.y[va], cfg,
                       ds.n_classes, hook, tr, va)


# ---------------------------------------------------------- evaluation


def row_logits(bundle: ModelBundle, x_i: np.ndarray, x_s: np.ndarray | None, rows=ROWS) -> dict:
    """Test-time logits for each requested method row."""
    out = {}
    with no_grad():
        for row in rows:
            if row == "I":
                out[row] = bundle.classifier_i(Tensor(x_i)).data
            elif row == "S":
                out[row] = bundle.classifier_s(Tensor(x_s)).data
            elif row == "G(I)":
                z_i, _ = latents(bundle, x_i=x_i)
                out[row] = bundle["D_S"](bundle["G"](Tensor(z_i))).data
            elif row == "G(I)+I":
                out[row] = bundle.guided_model(Tensor(x_i)).data
            elif row == "S+I":
                out[row] = bundle["D_SI"](Tensor(fusion_features(bundle, x_i, x_s))).data
            else:
                raise ConfigError(f"unknown method row {row!r}; expected one of {ROWS}")
    return out


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def evaluate_all(bundle: ModelBundle, ds: PairedDataset, split: str = "test",
                 rows=ROWS, trained: set[str] | None = None) -> dict:
    """Metrics for every method row on ``split`` plus the guided-vs-inferior delta.

    ``trained`` names the rows whose models exist; asking for any other row
    is a configuration error.
    """
    if trained is not None:
        missing = [r for r in rows if r not in trained]
        if missing:
            raise ConfigError(f"no trained model for row(s) {missing}")
    idx = ds.splits.get(split)
    if idx is None or idx.size == 0:
        raise DataError(f"split {split!r} is empty")
    x_i, x_s, y = ds.x_i[idx], ds.x_s[idx], ds.y[idx]
    logits = row_logits(bundle, x_i, x_s, rows)
    result = {"rows": {}, "predictions": {"y_true": y.tolist()}}
    for row, z in logits.items():
        pred = _predict(z)
        entry = {"ba": balanced_accuracy(y, pred), "f1": micro_f1(y, pred)}
        if ds.n_classes == 2 and len(np.unique(y)) == 2:
            entry["auroc"] = auroc(y, _softmax(z)[:, 1])
        result["rows"][row] = entry
        result["predictions"][row] = pred.tolist()
    if "G(I)+I" in logits and "I" in logits:
        base, new = result["rows"]["I"], result["rows"]["G(I)+I"]
        result["delta_pct"] = {m: (delta_percent(new[m], base[m]) if base[m] > 0 else None)
                               for m in ("ba", "f1")}
        result["mcnemar_p"] = mcnemar_test(np.asarray(result["predictions"]["G(I)+I"]) == y,
                                           np.asarray(result["predictions"]["I"]) == y)
    return result


@dataclass
class StageConfigs:
    classifier_i: TrainConfig
    classifier_s: TrainConfig
    guidance: TrainConfig
    combined: TrainConfig
    fusion: TrainConfig | None = None

    def with_seed(self, seed: int) -> "StageConfigs":
        return StageConfigs(*(replace(c, seed=seed + k) if c is not None else None
                              for k, c in enumerate((self.classifier_i, self.classifier_s,
                                                     self.guidance, self.combined, self.fusion))))


def run_pipeline(ds: PairedDataset, bundle: ModelBundle, cfgs: StageConfigs,
                 hook: BatchHook | None = None) -> tuple[dict, dict[str, StageResult]]:
    """All stages in order, then :func:`evaluate_all` on the test split."""
    res_i, res_s = train_classifiers(ds, bundle, cfgs.classifier_i, cfgs.classifier_s, hook)
    res_g = train_guidance(ds, bundle, cfgs.guidance, hook)
    res_c = train_combined(ds, bundle, cfgs.combined, hook)
    res_f = train_fusion(ds, bundle, cfgs.fusion or cfgs.combined, hook)
    results = {r.stage: r for r in (res_i, res_s, res_g, res_c, res_f)}
    return evaluate_all(bundle, ds), results
