"""Encoders, decoders, guidance and combined decoder as small MLPs.

Naming follows the guided-classification wiring: ``E_I``/``D_I`` and
``E_S``/``D_S`` form the two modality classifiers, ``G`` maps the inferior
latent code onto the superior one, and ``D_c`` classifies
``[G(E_I(x)) ⌢ E_I(x)]``. ``D_SI`` is the fusion head on ``[z_S ⌢ z_I]``
used for the upper-bound row of the report.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, DataError, ShapeError

NETWORK_NAMES = ("E_I", "D_I", "E_S", "D_S", "G", "D_c", "D_SI")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ConfigError(f"MLP needs at least input and output widths, got {widths}")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"MLP widths must be positive, got {widths}")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self):
        return {"layer_widths": list(self.layer_widths), "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), d.get("activation", "relu"))


class Mlp:
    """Fully connected network; the activation applies to hidden layers only."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None = None, name: str = ""):
        self.spec = spec
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers: list[tuple[Parameter, Parameter]] = []
        widths = spec.layer_widths
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            w = Parameter(ad.glorot_uniform(fi, fo, rng), name=f"{name}.{i}.weight")
            b = Parameter(np.zeros((1, fo)), name=f"{name}.{i}.bias")
            self.layers.append((w, b))

    @property
    def in_width(self) -> int:
        return self.spec.in_width

    @property
    def out_width(self) -> int:
        return self.spec.out_width

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeError(f"{self.name or 'mlp'} expects n x {self.in_width} input, got {x.shape}")
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.matmul(h, w) + b
            if i < last and self.spec.activation == "relu":
                h = ad.relu(h)
        return h

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def zero_output_layer(self):
        w, b = self.layers[-1]
        w.data[...] = 0.0
        b.data[...] = 0.0

    @property
    def frozen(self) -> bool:
        return all(p.frozen for p in self.parameters())

    def set_frozen(self, frozen: bool):
        for p in self.parameters():
            p.frozen = frozen

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"{self.name}: expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise ShapeError(f"{p.name}: shape {a.shape} != {p.shape}")
            p.data[...] = a


class Identity(Mlp):
    """Pass-through network with no parameters (useful for tests)."""

    def __init__(self, width: int, name: str = "identity"):
        self.spec = MlpSpec((width, width), "identity")
        self.name = name
        self.layers = []

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeError(f"{self.name} expects n x {self.in_width} input, got {x.shape}")
        return x


class Classifier:
    """Encoder followed by decoder: ``classify(x) == decoder(encoder(x))``."""

    def __init__(self, encoder: Mlp, decoder: Mlp):
        if encoder.out_width != decoder.in_width:
            raise ShapeError(
                f"encoder output width {encoder.out_width} != decoder input width {decoder.in_width}")
        self.encoder = encoder
        self.decoder = decoder

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_width

    @property
    def n_classes(self) -> int:
        return self.decoder.out_width

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def __call__(self, x: Tensor) -> Tensor:
        return self.decoder(self.encoder(x))

    classify = __call__

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


class GuidanceNet:
    """Maps inferior latent codes to estimates of superior latent codes."""

    def __init__(self, net: Mlp):
        widths = net.spec.layer_widths
        if len(widths) > 2 and min(widths[1:-1]) >= max(widths[0], widths[-1]):
            raise ConfigError(
                f"guidance bottleneck {min(widths[1:-1])} must be narrower than "
                f"max(input, output) = {max(widths[0], widths[-1])}")
        self.net = net

    @classmethod
    def build(cls, in_width: int, out_width: int, bottleneck: int,
              rng: np.random.Generator | None = None) -> "GuidanceNet":
        return cls(Mlp(MlpSpec((in_width, bottleneck, out_width)), rng, name="G"))

    @property
    def in_width(self) -> int:
        return self.net.in_width

    @property
    def out_width(self) -> int:
        return self.net.out_width

    def __call__(self, z_i: Tensor) -> Tensor:
        return self.net(z_i)

    def parameters(self):
        return self.net.parameters()


def classify(c: Classifier, x: Tensor) -> Tensor:
    return c(x)


def encode(c: Classifier, x: Tensor) -> Tensor:
    return c.encode(x)


def guide(g: GuidanceNet, z_i: Tensor) -> Tensor:
    return g(z_i)


class GuidedModel:
    """Unimodal predictor ``D_c([G(E_I(x_I)) ⌢ E_I(x_I)])``.

    Only ``x_I`` enters the forward pass; there is no input path for the
    superior modality.
    """

    def __init__(self, encoder_i: Mlp, guidance: GuidanceNet, combined_decoder: Mlp):
        need = guidance.out_width + encoder_i.out_width
        if guidance.in_width != encoder_i.out_width:
            raise ShapeError(
                f"guidance input width {guidance.in_width} != inferior latent {encoder_i.out_width}")
        if combined_decoder.in_width != need:
            raise ShapeError(f"D_c input width {combined_decoder.in_width} != {need}")
        self.encoder_i = encoder_i
        self.guidance = guidance
        self.combined_decoder = combined_decoder

    @property
    def n_classes(self) -> int:
        return self.combined_decoder.out_width

    def __call__(self, x_i: Tensor) -> Tensor:
        z_i = self.encoder_i(x_i)
        z_s_hat = self.guidance(z_i)
        return self.combined_decoder(ad.concat(z_s_hat, z_i))


def guided_forward(f: GuidedModel, x_i: Tensor) -> Tensor:
    return f(x_i)


@dataclass
class ModelBundle:
    """Named networks plus the wiring metadata needed to rebuild them."""

    networks: dict[str, Mlp] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, d_i: int, d_s: int, n_classes: int, *, latent_i: int = 64, latent_s: int = 64,
              encoder_hidden: tuple[int, ...] = (64, 64), decoder_hidden: tuple[int, ...] = (),
              bottleneck: int = 32, combined_hidden: tuple[int, ...] = (), seed: int = 0):
        """Instantiate all networks; each draws from its own child RNG stream."""
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        specs = {
            "E_I": MlpSpec((d_i, *encoder_hidden, latent_i)),
            "D_I": MlpSpec((latent_i, *decoder_hidden, n_classes)),
            "E_S": MlpSpec((d_s, *encoder_hidden, latent_s)),
            "D_S": MlpSpec((latent_s, *decoder_hidden, n_classes)),
            "G": MlpSpec((latent_i, bottleneck, latent_s)),
            "D_c": MlpSpec((latent_s + latent_i, *combined_hidden, n_classes)),
            "D_SI": MlpSpec((latent_s + latent_i, *combined_hidden, n_classes)),
        }
        streams = np.random.SeedSequence(seed).spawn(len(specs))
        nets = {name: Mlp(spec, np.random.default_rng(ss), name=name)
                for (name, spec), ss in zip(specs.items(), streams)}
        GuidanceNet(nets["G"])  # bottleneck check
        return cls(nets, {"d_I": d_i, "d_S": d_s, "n_classes": n_classes, "seed": seed})

    def __getitem__(self, name) -> Mlp:
        return self.networks[name]

    @property
    def classifier_i(self) -> Classifier:
        return Classifier(self["E_I"], self["D_I"])

    @property
    def classifier_s(self) -> Classifier:
        return Classifier(self["E_S"], self["D_S"])

    @property
    def guidance(self) -> GuidanceNet:
        return GuidanceNet(self["G"])

    @property
    def guided_model(self) -> GuidedModel:
        return GuidedModel(self["E_I"], self.guidance, self["D_c"])

    def freeze(self, names):
        freeze(self, names)

    def unfreeze(self, names):
        freeze(self, names, frozen=False)


def freeze(bundle: ModelBundle, names, frozen: bool = True) -> None:
    names = [names] if isinstance(names, str) else list(names)
    unknown = [n for n in names if n not in bundle.networks]
    if unknown:
        raise ConfigError(f"unknown network name(s) {unknown}; known: {sorted(bundle.networks)}")
    for n in names:
        bundle.networks[n].set_frozen(frozen)


# ---------------------------------------------------------- checkpoints

_MAGIC = b"GDCKPT01"


def save_checkpoint(path, networks: dict[str, Mlp], meta: dict | None = None) -> None:
    """Write ``magic | u64 manifest length | manifest JSON | float64-LE blob``."""
    tensors, chunks, offset = [], [], 0
    for name, net in networks.items():
        for p in net.parameters():
            raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
            tensors.append({"name": p.name, "network": name, "shape": list(p.shape),
                            "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "guided-distill-checkpoint",
        "version": 1,
        "networks": {name: {**net.spec.to_dict(), "frozen": net.frozen}
                     for name, net in networks.items()},
        "tensors": tensors,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    Path(path).write_bytes(_MAGIC + struct.pack("<Q", len(head)) + head + blob)


def read_checkpoint(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC or len(raw) < 16:
        raise DataError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n])
    blob = raw[16 + n:]
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise DataError(f"{path}: blob checksum mismatch")
    return manifest, blob


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    """Rebuild the networks stored in ``path``; returns ``(networks, meta)``."""
    manifest, blob = read_checkpoint(path)
    nets = {name: Mlp(MlpSpec.from_dict(spec), name=name)
            for name, spec in manifest["networks"].items()}
    params = {p.name: p for net in nets.values() for p in net.parameters()}
    for t in manifest["tensors"]:
        if t["name"] not in params:
            raise DataError(f"{path}: tensor {t['name']} not in architecture")
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(t["shape"])), offset=t["offset"])
        params[t["name"]].data[...] = arr.reshape(t["shape"])
    for name, spec in manifest["networks"].items():
        nets[name].set_frozen(spec["frozen"])
    return nets, manifest["meta"]
