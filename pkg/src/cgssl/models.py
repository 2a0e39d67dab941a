"""Classifier backbone and VAE encoder/decoder definitions.

The classifier is a pre-activation WideResNet family parameterized by depth
and width factor (depth = 6n+4 with basic blocks). The VAE encoder reuses the
same trunk with the classification head replaced by two linear heads
producing the posterior mean and log-variance; the decoder mirrors it with
upsampling convolutions and a logistic output so pixels stay in [0, 1].
"""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ArchitectureError, InvalidInputError
from .nn.layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    Module,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    Upsample2x,
    WideBasicBlock,
)
from .seeding import rng_for
from . import storage


@dataclass(frozen=True)
class ClassifierSpec:
    depth: int = 10
    width: int = 1
    num_classes: int = 4
    image_shape: tuple = (16, 16, 3)

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        return d

    @staticmethod
    def from_dict(d):
        return ClassifierSpec(
            depth=int(d["depth"]),
            width=int(d["width"]),
            num_classes=int(d["num_classes"]),
            image_shape=tuple(d["image_shape"]),
        )


# "wrn-50" is the full-scale backbone name; depth 52 is the nearest valid
# basic-block depth (6n+4) to that name, with the x2 width reading.
CLASSIFIER_PRESETS = {
    "toy": (10, 1),
    "wrn-50": (52, 2),
}


def resolve_classifier_spec(preset: str, num_classes: int, image_shape) -> ClassifierSpec:
    if preset not in CLASSIFIER_PRESETS:
        raise ArchitectureError(f"unknown classifier preset {preset!r}; known: {sorted(CLASSIFIER_PRESETS)}")
    depth, width = CLASSIFIER_PRESETS[preset]
    return ClassifierSpec(depth=depth, width=width, num_classes=num_classes, image_shape=tuple(image_shape))


def _validate_spec(spec: ClassifierSpec):
    if spec.num_classes < 2:
        raise ArchitectureError(f"num_classes must be >= 2, got {spec.num_classes}")
    if (spec.depth - 4) % 6 != 0 or spec.depth < 10:
        raise ArchitectureError(f"depth must be 6n+4 with n >= 1, got {spec.depth}")
    if spec.width < 1:
        raise ArchitectureError(f"width factor must be >= 1, got {spec.width}")
    h, w, c = spec.image_shape
    if h < 8 or w < 8 or c < 1 or h % 4 or w % 4:
        raise ArchitectureError(f"image shape must be at least 8x8 and divisible by 4, got {spec.image_shape}")


def _build_trunk(image_channels: int, depth: int, width: int, rng) -> tuple[Sequential, int]:
    """Conv trunk shared by the classifier and the VAE encoder; returns (trunk, feature_dim)."""
    n = (depth - 4) // 6
    widths = [16, 16 * width, 32 * width, 64 * width]
    layers = [("conv0", Conv2d(image_channels, widths[0], 3, 1, 1, rng))]
    cin = widths[0]
    for g, (cout, stride) in enumerate(zip(widths[1:], (1, 2, 2)), start=1):
        for b in range(n):
            layers.append((f"group{g}.block{b}", WideBasicBlock(cin, cout, stride if b == 0 else 1, rng)))
            cin = cout
    layers.append(("bn_final", BatchNorm2d(cin)))
    layers.append(("relu_final", ReLU()))
    layers.append(("pool", GlobalAvgPool()))
    return Sequential(layers), cin


class ClassifierModel(Module):
    def __init__(self, spec: ClassifierSpec, seed: int = 0):
        _validate_spec(spec)
        self.spec = spec
        self.seed = seed
        rng = rng_for(seed, "classifier-init")
        self.trunk, feat = _build_trunk(spec.image_shape[2], spec.depth, spec.width, rng)
        self.head = Linear(feat, spec.num_classes, rng)
        self.feature_dim = feat

    def children(self):
        return [("trunk", self.trunk), ("head", self.head)]

    @property
    def dtype(self):
        return self.head.w.dtype

    def forward(self, x, training=False, update_stats=None):
        x = np.asarray(x, dtype=self.dtype)
        return self.head.forward(self.trunk.forward(x, training, update_stats), training)

    def backward(self, dlogits):
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        return self.trunk.backward(self.head.backward(dlogits))


@dataclass(frozen=True)
class VAESpec:
    latent_dim: int = 32
    image_shape: tuple = (16, 16, 3)
    enc_depth: int = 10
    enc_width: int = 1
    dec_channels: tuple = (32, 16)

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        d["dec_channels"] = list(self.dec_channels)
        return d

    @staticmethod
    def from_dict(d):
        return VAESpec(
            latent_dim=int(d["latent_dim"]),
            image_shape=tuple(d["image_shape"]),
            enc_depth=int(d["enc_depth"]),
            enc_width=int(d["enc_width"]),
            dec_channels=tuple(d["dec_channels"]),
        )


class VAEModel(Module):
    """Encoder trunk + (mu, logvar) heads and an upsampling decoder.

    The prior over the latent space is the standard normal.
    """

    def __init__(self, spec: VAESpec, seed: int = 0):
        if spec.latent_dim < 1:
            raise ArchitectureError(f"latent_dim must be positive, got {spec.latent_dim}")
        h, w, c = spec.image_shape
        if h % 4 or w % 4 or h < 8 or w < 8:
            raise ArchitectureError(f"image shape must be divisible by 4 and >= 8, got {spec.image_shape}")
        self.spec = spec
        self.seed = seed
        rng = rng_for(seed, "vae-init")
        self.trunk, feat = _build_trunk(c, spec.enc_depth, spec.enc_width, rng)
        self.mu_head = Linear(feat, spec.latent_dim, rng)
        self.logvar_head = Linear(feat, spec.latent_dim, rng)
        c0, c1 = spec.dec_channels
        bh, bw = h // 4, w // 4
        self.decoder = Sequential([
            ("fc", Linear(spec.latent_dim, bh * bw * c0, rng)),
            ("relu0", ReLU()),
            ("reshape", Reshape((bh, bw, c0))),
            ("up1", Upsample2x()),
            ("conv1", Conv2d(c0, c1, 3, 1, 1, rng)),
            ("relu1", ReLU()),
            ("up2", Upsample2x()),
            ("conv2", Conv2d(c1, c1, 3, 1, 1, rng)),
            ("relu2", ReLU()),
            ("conv_out", Conv2d(c1, c, 3, 1, 1, rng)),
            ("sigmoid", Sigmoid()),
        ])

    def children(self):
        return [
            ("trunk", self.trunk),
            ("mu_head", self.mu_head),
            ("logvar_head", self.logvar_head),
            ("decoder", self.decoder),
        ]

    @property
    def dtype(self):
        return self.mu_head.w.dtype

    def encode_batch(self, x, training=False, update_stats=None):
        x = np.asarray(x, dtype=self.dtype)
        feat = self.trunk.forward(x, training, update_stats)
        return self.mu_head.forward(feat, training), self.logvar_head.forward(feat, training)

    def decode_batch(self, z, training=False):
        z = np.asarray(z, dtype=self.dtype)
        return self.decoder.forward(z, training)

    def load_pretrained_trunk(self, trunk_state: dict):
        dst = self.trunk.state_arrays()
        if set(trunk_state) != set(dst):
            raise ArchitectureError("pretrained trunk does not match the VAE encoder architecture")
        for k, arr in dst.items():
            if arr.shape != trunk_state[k].shape:
                raise ArchitectureError(f"pretrained trunk shape mismatch at {k}")
            arr[...] = trunk_state[k]


def build_classifier(spec: ClassifierSpec, seed: int = 0) -> ClassifierModel:
    return ClassifierModel(spec, seed)


def build_vae(spec: VAESpec, seed: int = 0, pretrained_encoder=None) -> VAEModel:
    """pretrained_encoder, when given, is an encoder-checkpoint path (see save_encoder)."""
    vae = VAEModel(spec, seed)
    if pretrained_encoder is not None:
        _load_sidecar(pretrained_encoder, "encoder")
        vae.load_pretrained_trunk(storage.load_npz(pretrained_encoder))
    return vae


def save_encoder(classifier: "ClassifierModel", path, training_step: int = 0) -> None:
    """Strip the classification head and save the trunk as an encoder initialization."""
    path = str(path)
    storage.save_npz(path, classifier.trunk.get_state())
    storage.write_json(path + ".json", {
        "schema_version": storage.SCHEMA_VERSION,
        "kind": "encoder",
        "spec": classifier.spec.to_dict(),
        "seed": classifier.seed,
        "training_step": int(training_step),
    })


def _check_batch(model, batch):
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != tuple(model.spec.image_shape):
        raise InvalidInputError(
            f"batch shape {batch.shape} does not match model input {model.spec.image_shape}"
        )
    return batch


def forward_logits(model: ClassifierModel, batch) -> np.ndarray:
    """Evaluation-mode logits, (batch, num_classes)."""
    batch = _check_batch(model, batch)
    if batch.shape[0] == 0:
        return np.zeros((0, model.spec.num_classes))
    return model.forward(batch, training=False)


def encode(vae: VAEModel, x) -> tuple[np.ndarray, np.ndarray]:
    x = _check_batch(vae, x)
    if x.shape[0] == 0:
        z = np.zeros((0, vae.spec.latent_dim))
        return z, z.copy()
    return vae.encode_batch(x, training=False)


def decode(vae: VAEModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != vae.spec.latent_dim:
        raise InvalidInputError(f"latent shape {z.shape} does not match latent_dim {vae.spec.latent_dim}")
    if z.shape[0] == 0:
        return np.zeros((0,) + tuple(vae.spec.image_shape))
    return vae.decode_batch(z, training=False)


def save_checkpoint(model, path, training_step: int = 0) -> None:
    """Named-array archive plus a JSON sidecar with the spec, seed and step."""
    path = str(path)
    storage.save_npz(path, model.get_state())
    kind = "vae" if isinstance(model, VAEModel) else "classifier"
    storage.write_json(path + ".json", {
        "schema_version": storage.SCHEMA_VERSION,
        "kind": kind,
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "training_step": int(training_step),
    })


def _load_sidecar(path, kind):
    meta = storage.read_json(str(path) + ".json")
    if meta["kind"] != kind:
        raise InvalidInputError(f"checkpoint {path} holds a {meta['kind']}, expected {kind}")
    return meta


def load_classifier(path) -> ClassifierModel:
    meta = _load_sidecar(path, "classifier")
    model = ClassifierModel(ClassifierSpec.from_dict(meta["spec"]), seed=meta["seed"])
    model.set_state(storage.load_npz(path))
    return model


def load_vae(path) -> VAEModel:
    meta = _load_sidecar(path, "vae")
    model = VAEModel(VAESpec.from_dict(meta["spec"]), seed=meta["seed"])
    model.set_state(storage.load_npz(path))
    return model
