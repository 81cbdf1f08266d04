"""Synthetic paired-modality datasets and their on-disk container.

Each subject gets a class label ``y`` and a subject vector ``u``. An
embedding ``emb(y, u)`` (class centre plus within-class variation in the
label-carrying coordinates, free subject variation in the rest) is mapped
isometrically into the superior feature space. The inferior view applies
the same signal with a fraction ``rho`` of the label-carrying directions
removed, through a different isometry, and with more noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import ChecksumError, ConfigError, DataError

SCHEMA_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
# 165 / 28 / 28 of 221 subjects
RADPATH_SPLIT_FRACTIONS = (165 / 221, 28 / 221, 28 / 221)
RADPATH_PRIORS = (133 / 221, 34 / 221, 54 / 221)
RADPATH_LABELS = ("glioblastoma", "oligodendroglioma", "astrocytoma")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    n_classes: int
    priors: tuple[float, ...] | None = None
    label_names: tuple[str, ...] | None = None

    def resolved_priors(self) -> np.ndarray:
        if self.priors is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        p = np.asarray(self.priors, dtype=np.float64)
        return p / p.sum()

    def resolved_names(self) -> tuple[str, ...]:
        return tuple(self.label_names or (f"class_{k}" for k in range(self.n_classes)))


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 3
    d_i: int = 32
    d_s: int = 32
    sigma_i: float = 1.0
    sigma_s: float = 0.3
    rho: float = 0.5
    priors: tuple[float, ...] | None = RADPATH_PRIORS
    n: int = 2000
    seed: int = 0
    label_dims: int = 8
    subject_dims: int = 8
    separation: float = 1.0
    within_class: float = 1.0
    modes_per_class: int = 1
    split_fractions: tuple[float, ...] = RADPATH_SPLIT_FRACTIONS
    stratify: bool = True
    label_names: tuple[str, ...] | None = RADPATH_LABELS

    def __post_init__(self):
        for name in ("priors", "split_fractions", "label_names"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, tuple):
                object.__setattr__(self, name, tuple(v))
        self.validate()

    def validate(self):
        def bad(fld, why):
            raise ConfigError(f"SynthSpec.{fld}: {why}")

        if self.n_classes < 2:
            bad("n_classes", f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.rho <= 1.0:
            bad("rho", f"must lie in [0, 1], got {self.rho}")
        if not self.sigma_s >= 0.0:
            bad("sigma_s", f"must be >= 0, got {self.sigma_s}")
        if not self.sigma_i >= self.sigma_s:
            bad("sigma_i", f"must be >= sigma_s ({self.sigma_s}), got {self.sigma_i}")
        if self.priors is not None:
            p = np.asarray(self.priors, dtype=np.float64)
            if p.shape != (self.n_classes,) or np.any(p <= 0):
                bad("priors", f"need {self.n_classes} positive entries, got {self.priors}")
            if abs(p.sum() - 1.0) > 1e-9:
                bad("priors", f"must sum to 1, got sum {p.sum()}")
        if self.label_names is not None and len(self.label_names) != self.n_classes:
            bad("label_names", f"need {self.n_classes} names, got {len(self.label_names)}")
        if self.modes_per_class < 1:
            bad("modes_per_class", f"must be >= 1, got {self.modes_per_class}")
        if self.n < 1:
            bad("n", f"must be positive, got {self.n}")
        if self.label_dims < 1 or self.subject_dims < 0:
            bad("label_dims", "label_dims >= 1 and subject_dims >= 0 required")
        m = self.label_dims + self.subject_dims
        if self.d_s < m:
            bad("d_s", f"must be >= label_dims + subject_dims = {m}, got {self.d_s}")
        if self.d_i < m:
            bad("d_i", f"must be >= label_dims + subject_dims = {m}, got {self.d_i}")
        _check_fractions(self.split_fractions)

    def task(self, name: str = "main") -> TaskSpec:
        return TaskSpec(name, self.n_classes, self.priors, self.label_names)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"SynthSpec: unknown field(s) {sorted(unknown)}")
        return cls(**d)


def _check_fractions(fractions):
    f = np.asarray(fractions, dtype=np.float64)
    if f.ndim != 1 or not 1 <= f.size <= len(SPLIT_NAMES):
        raise ConfigError(f"split_fractions: need 1 to {len(SPLIT_NAMES)} values, got {fractions}")
    if np.any(f <= 0) or f.sum() > 1.0 + 1e-9:
        raise ConfigError(f"split_fractions: must be positive and sum to <= 1, got {fractions}")


@dataclass
class PairedDataset:
    """Aligned samples: row ``i`` of ``x_i``, ``x_s`` and ``y`` is one subject."""

    x_i: np.ndarray
    x_s: np.ndarray
    y: np.ndarray
    splits: dict[str, np.ndarray]
    label_names: tuple[str, ...]
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_i = np.asarray(self.x_i, dtype=np.float64)
        self.x_s = np.asarray(self.x_s, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.label_names = tuple(self.label_names)
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        n = self.y.shape[0]
        if self.x_i.ndim != 2 or self.x_s.ndim != 2:
            raise DataError("x_i and x_s must be 2-D")
        if self.x_i.shape[0] != n or self.x_s.shape[0] != n:
            raise DataError(
                f"misaligned rows: x_i {self.x_i.shape[0]}, x_s {self.x_s.shape[0]}, y {n}")
        if n and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DataError(f"y: labels must lie in [0, {self.n_classes})")
        _check_splits(self.splits, n)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def d_i(self) -> int:
        return self.x_i.shape[1]

    @property
    def d_s(self) -> int:
        return self.x_s.shape[1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.splits.get(name)
        if idx is None or idx.size == 0:
            raise DataError(f"split {name!r} is empty")
        return self.x_i[idx], self.x_s[idx], self.y[idx]

    def permuted(self, perm) -> "PairedDataset":
        """Reorder rows; split indices follow their subjects."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return PairedDataset(self.x_i[perm], self.x_s[perm], self.y[perm],
                             {k: inverse[v] for k, v in self.splits.items()},
                             self.label_names, dict(self.spec))


def _check_splits(splits, n):
    seen = {}
    for name, idx in splits.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataError(f"splits.{name}: index out of range [0, {n})")
        if np.unique(idx).size != idx.size:
            raise DataError(f"splits.{name}: duplicate indices")
        for other, oidx in seen.items():
            if np.intersect1d(idx, oidx).size:
                raise DataError(f"splits.{name} overlaps splits.{other}")
        seen[name] = idx


# --------------------------------------------------------------- splits


def _largest_remainder(total: int, fractions: np.ndarray) -> np.ndarray:
    raw = fractions * total
    target = min(total, int(np.floor(fractions.sum() * total + 1e-9)))
    counts = np.floor(raw + 1e-9).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for j in order[: max(0, target - counts.sum())]:
        counts[j] += 1
    return counts


def make_splits(n: int, fractions=RADPATH_SPLIT_FRACTIONS, seed: int = 0,
                stratify: bool = False, labels=None) -> dict[str, np.ndarray]:
    """Disjoint train/val/test index sets drawn at the requested fractions.

    Sizes use largest-remainder rounding, per class when ``stratify``.
    """
    _check_fractions(fractions)
    f = np.asarray(fractions, dtype=np.float64)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in f]
    if stratify:
        if labels is None:
            raise ConfigError("stratified splitting needs labels")
        labels = np.asarray(labels)
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            if members.size < f.size:
                raise DataError(
                    f"class {cls} has {members.size} samples, fewer than {f.size} splits")
            members = rng.permutation(members)
            counts = _largest_remainder(members.size, f)
            for j, (lo, hi) in enumerate(zip(np.r_[0, np.cumsum(counts)[:-1]], np.cumsum(counts))):
                parts[j].append(members[lo:hi])
    else:
        perm = rng.permutation(n)
        counts = _largest_remainder(n, f)
        for j, (lo, hi) in enumerate(zip(np.r_[0, np.cumsum(counts)[:-1]], np.cumsum(counts))):
            parts[j].append(perm[lo:hi])
    out = {name: np.empty(0, dtype=np.int64) for name in SPLIT_NAMES}
    for name, chunks in zip(SPLIT_NAMES, parts):
        out[name] = np.sort(np.concatenate(chunks)).astype(np.int64)
    return out


# ----------------------------------------------------------- generation


@dataclass
class SynthMatrices:
    """Fixed linear maps of a synthetic task family (derived from the seed only)."""

    centers: dict[str, np.ndarray]  # task -> K x modes x label_dims
    label_slices: dict[str, slice]
    emb_dim: int
    m_s: np.ndarray        # d_s x m, orthonormal columns
    q_i: np.ndarray        # d_i x m, orthonormal columns
    keep: np.ndarray       # m, 0/1 mask of coordinates visible in the inferior view

    @property
    def p_matrix(self) -> np.ndarray:
        """``P`` with ``x_I = P @ M_S @ emb + noise``."""
        return self.q_i @ np.diag(self.keep) @ self.m_s.T


def _orthonormal(rows: int, cols: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def synth_matrices(spec: SynthSpec, tasks: list[TaskSpec] | None = None) -> SynthMatrices:
    tasks = tasks or [spec.task()]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    L = spec.label_dims
    m = L * len(tasks) + spec.subject_dims
    if spec.d_s < m or spec.d_i < m:
        raise ConfigError(f"d_i and d_s must be >= embedding width {m} for {len(tasks)} task(s)")
    centers, slices = {}, {}
    for t_idx, task in enumerate(tasks):
        centers[task.name] = spec.separation * rng.standard_normal(
            (task.n_classes, spec.modes_per_class, L))
        slices[task.name] = slice(t_idx * L, (t_idx + 1) * L)
    m_s = _orthonormal(spec.d_s, m, rng)
    q_i = _orthonormal(spec.d_i, m, rng)
    keep = np.ones(m)
    n_drop = int(round(spec.rho * L))
    for task in tasks:
        s = slices[task.name]
        dropped = rng.permutation(L)[:n_drop]
        keep[s.start + dropped] = 0.0
    return SynthMatrices(centers, slices, m, m_s, q_i, keep)


def _sample(spec: SynthSpec, tasks: list[TaskSpec]):
    mats = synth_matrices(spec, tasks)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    n = spec.n
    labels = {t.name: rng.choice(t.n_classes, size=n, p=t.resolved_priors()) for t in tasks}
    modes = {t.name: rng.integers(spec.modes_per_class, size=n) for t in tasks}
    emb = rng.standard_normal((n, mats.emb_dim))
    emb[:, : spec.label_dims * len(tasks)] *= spec.within_class
    for t in tasks:
        emb[:, mats.label_slices[t.name]] += mats.centers[t.name][labels[t.name], modes[t.name]]
    x_s = emb @ mats.m_s.T + spec.sigma_s * rng.standard_normal((n, spec.d_s))
    x_i = (emb * mats.keep) @ mats.q_i.T + spec.sigma_i * rng.standard_normal((n, spec.d_i))
    return x_i, x_s, labels


def generate(spec: SynthSpec) -> PairedDataset:
    """Draw a single-task paired dataset with splits."""
    task = spec.task()
    x_i, x_s, labels = _sample(spec, [task])
    y = labels[task.name]
    splits = make_splits(spec.n, spec.split_fractions, seed=spec.seed,
                         stratify=spec.stratify, labels=y)
    return PairedDataset(x_i, x_s, y, splits, task.resolved_names(), spec.to_dict())


def generate_multitask(spec: SynthSpec, tasks: list[TaskSpec]) -> dict[str, PairedDataset]:
    """Several label sets over the same subjects; all tasks share x and splits.

    ``spec.n_classes``/``priors``/``label_names`` are ignored in favour of
    the per-task values.
    """
    x_i, x_s, labels = _sample(spec, list(tasks))
    splits = make_splits(spec.n, spec.split_fractions, seed=spec.seed, stratify=False)
    out = {}
    for t in tasks:
        echo = spec.to_dict() | {"task": asdict(t)}
        out[t.name] = PairedDataset(x_i, x_s, labels[t.name], splits, t.resolved_names(), echo)
    return out


def bayes_oracle_predict(spec: SynthSpec, x: np.ndarray, modality: str) -> np.ndarray:
    """Maximum-posterior class under the true generative model (single task)."""
    mats = synth_matrices(spec)
    task = spec.task()
    L = spec.label_dims
    var = np.ones(mats.emb_dim)
    var[:L] = spec.within_class ** 2
    if modality == "S":
        a, sigma = mats.m_s, spec.sigma_s
    elif modality == "I":
        a, sigma = mats.q_i @ np.diag(mats.keep), spec.sigma_i
    else:
        raise ConfigError(f"modality must be 'I' or 'S', got {modality!r}")
    cov = a @ np.diag(var) @ a.T + sigma ** 2 * np.eye(a.shape[0])
    log_mode = -np.log(spec.modes_per_class)
    columns = []
    for centres, prior in zip(mats.centers[task.name], task.resolved_priors()):
        per_mode = []
        for c in centres:
            mu = np.zeros(mats.emb_dim)
            mu[:L] = c
            per_mode.append(stats.multivariate_normal(a @ mu, cov, allow_singular=True).logpdf(x))
        columns.append(logsumexp(np.column_stack(per_mode), axis=1) + log_mode + np.log(prior))
    return np.column_stack(columns).argmax(axis=1)


# -------------------------------------------------------------------- IO


def _sha256(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def save(ds: PairedDataset, path) -> None:
    """Write ``manifest.json`` plus little-endian float64 blobs into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {"x_I": ds.x_i, "x_S": ds.x_s, "y": ds.y.astype(np.float64)}
    checksums = {}
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        (path / f"{name}.bin").write_bytes(raw)
        checksums[name] = _sha256(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n": ds.n,
        "d_I": ds.d_i,
        "d_S": ds.d_s,
        "n_classes": ds.n_classes,
        "label_names": list(ds.label_names),
        "dtype": "<f8",
        "splits": {k: v.tolist() for k, v in ds.splits.items()},
        "checksums": checksums,
        "spec": ds.spec,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load(path) -> PairedDataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{path}: manifest.json not found") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"schema_version: unsupported {manifest.get('schema_version')!r}")
    n, k = manifest["n"], manifest["n_classes"]
    shapes = {"x_I": (n, manifest["d_I"]), "x_S": (n, manifest["d_S"]), "y": (n,)}
    arrays = {}
    for name, shape in shapes.items():
        raw = (path / f"{name}.bin").read_bytes()
        if _sha256(raw) != manifest["checksums"][name]:
            raise ChecksumError(f"{name}: checksum mismatch")
        if len(raw) != 8 * int(np.prod(shape)):
            raise DataError(
                f"{name}: shape disagreement, manifest declares {shape} but blob holds {len(raw) // 8} values")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    y = arrays["y"]
    if not np.all(y == np.round(y)):
        raise DataError("y: non-integer labels")
    if len(manifest["label_names"]) != k:
        raise DataError(f"label_names: {len(manifest['label_names'])} names for n_classes={k}")
    return PairedDataset(arrays["x_I"], arrays["x_S"], y.astype(np.int64),
                         {s: np.asarray(v, dtype=np.int64) for s, v in manifest["splits"].items()},
                         tuple(manifest["label_names"]), manifest.get("spec", {}))
