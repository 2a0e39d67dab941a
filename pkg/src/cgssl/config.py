"""Pipeline configuration: one JSON schema for files, overrides, and persistence.

The persisted config.json is the fully-validated dict with defaults filled and
overrides applied, so what a run directory records is exactly what executed.
"""

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import InvalidSpecError
from . import storage

DEFAULTS = {
    "schema_version": storage.SCHEMA_VERSION,
    "seed": 0,
    "num_seeds": 1,
    "num_iterations": 2,
    "k_synth": 5000,
    "ablation_mode": "generated",
    "confidence_mode": "true-class",
    "run_dir": None,
    "dataset": {
        "name": "toy",
        "num_classes": 4,
        "per_class": 100,
        "image_size": 16,
        "test_per_class": 50,
        "data_seed": 1234,
        "root": None,
    },
    "split": {
        "fractions": [0.6, 0.2, 0.2],
        "stratify": False,
    },
    "model": {
        "preset": "toy",
        "depth": None,
        "width": None,
    },
    "supervised": {
        "learning_rate": 3e-2,
        "momentum": 0.9,
        "max_steps": 10_000,
        "plateau_decay_factor": 1e-2,
        "plateau_patience": 5,
        "batch_size": 64,
        "eval_interval": 50,
        "augment": True,
    },
    "vae": {
        "latent_dim": 128,
        "epochs": 30,
        "batch_size": 32,
        "learning_rate": 2e-3,
        "momentum": 0.9,
        "kl_weight": 1.0,
        "pad_count": None,
        "freeze_trunk": False,
        "pretrained_encoder": "auto",
        "pretrain_steps": 500,
        "dec_channels": [32, 16],
    },
    "mixmatch": {
        "alpha": 0.5,
        "temperature": 0.5,
        "beta": 100.0,
        "k_aug": 2,
        "ramp_up_steps": 0,
        "batch_size": 64,
        "learning_rate": 3e-2,
        "momentum": 0.9,
        "max_steps": 10_000,
        "plateau_decay_factor": 1e-2,
        "plateau_patience": 5,
        "eval_interval": 50,
        "augment": True,
        "mixup_enabled": True,
        "unlabeled_enabled": True,
    },
    "expected_full_scale": None,
}

# blocks whose value may be replaced wholesale rather than merged per key
_OPAQUE_KEYS = {"expected_full_scale"}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise InvalidSpecError(f"config section {path or '<root>'} must be an object")
    out = {}
    unknown = set(given) - set(defaults)
    if unknown:
        raise InvalidSpecError(f"unknown config key(s) {sorted(unknown)} under {path or '<root>'}")
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in given:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict) and key not in _OPAQUE_KEYS:
            out[key] = _merge(default, given[key], here)
        else:
            out[key] = copy.deepcopy(given[key])
    return out


def validate_config(cfg: dict) -> dict:
    cfg = _merge(DEFAULTS, cfg)
    if cfg["num_seeds"] < 1 or cfg["num_iterations"] < 1:
        raise InvalidSpecError("num_seeds and num_iterations must be >= 1")
    if cfg["k_synth"] < 0:
        raise InvalidSpecError("k_synth must be >= 0")
    if cfg["ablation_mode"] not in ("generated", "raw-ref"):
        raise InvalidSpecError("ablation_mode must be 'generated' or 'raw-ref'")
    if cfg["confidence_mode"] not in ("true-class", "max-prob"):
        raise InvalidSpecError("confidence_mode must be 'true-class' or 'max-prob'")
    if cfg["dataset"]["name"] not in ("toy", "stl10", "cifar100"):
        raise InvalidSpecError("dataset.name must be toy, stl10 or cifar100")
    return cfg


def load_config_file(path) -> dict:
    """Load a config by path, or by bundled name (e.g. 'toy.json')."""
    p = Path(path)
    if not p.exists() and "/" not in str(path):
        ref = resources.files("cgssl").joinpath("configs", str(path))
        if ref.is_file():
            return validate_config(json.loads(ref.read_text()))
        raise InvalidSpecError(f"config not found: {path} (no such file or bundled config)")
    if not p.exists():
        raise InvalidSpecError(f"config not found: {path}")
    return validate_config(json.loads(p.read_text()))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply dotted-key overrides like mixmatch.beta=25; unknown keys are errors."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise InvalidSpecError(f"override must be key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise InvalidSpecError(f"unknown config key {dotted!r}")
            node = node[k]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise InvalidSpecError(f"unknown config key {dotted!r}")
        node[keys[-1]] = _parse_value(raw)
    return validate_config(cfg)


@dataclass(frozen=True)
class PipelineConfig:
    """Validated config dict plus typed accessors for the stage configs."""

    raw: dict

    @staticmethod
    def from_dict(cfg: dict) -> "PipelineConfig":
        return PipelineConfig(validate_config(cfg))

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def num_seeds(self):
        return int(self.raw["num_seeds"])

    @property
    def num_iterations(self):
        return int(self.raw["num_iterations"])

    @property
    def k_synth(self):
        return int(self.raw["k_synth"])

    @property
    def ablation_mode(self):
        return self.raw["ablation_mode"]

    @property
    def confidence_mode(self):
        return self.raw["confidence_mode"]

    def classifier_spec(self, num_classes, image_shape):
        from .models import ClassifierSpec, resolve_classifier_spec

        m = self.raw["model"]
        if m["depth"] is not None and m["width"] is not None:
            return ClassifierSpec(int(m["depth"]), int(m["width"]), num_classes, tuple(image_shape))
        return resolve_classifier_spec(m["preset"], num_classes, image_shape)

    def split_spec(self, seed):
        from .datasets import SplitSpec

        return SplitSpec(tuple(self.raw["split"]["fractions"]), seed, self.raw["split"]["stratify"])

    def train_config(self, seed, block="supervised"):
        from .supervised import TrainConfig

        b = self.raw[block]
        return TrainConfig(
            learning_rate=b["learning_rate"], momentum=b["momentum"], max_steps=b["max_steps"],
            plateau_decay_factor=b["plateau_decay_factor"], plateau_patience=b["plateau_patience"],
            batch_size=b["batch_size"], eval_interval=b["eval_interval"], seed=seed,
            augment=b["augment"],
        )

    def pretrain_config(self, seed):
        cfg = dict(self.raw["supervised"])
        cfg["max_steps"] = self.raw["vae"]["pretrain_steps"]
        from .supervised import TrainConfig

        return TrainConfig(
            learning_rate=cfg["learning_rate"], momentum=cfg["momentum"], max_steps=cfg["max_steps"],
            plateau_decay_factor=cfg["plateau_decay_factor"], plateau_patience=cfg["plateau_patience"],
            batch_size=cfg["batch_size"], eval_interval=cfg["eval_interval"], seed=seed,
            augment=cfg["augment"],
        )

    def vae_config(self, seed, pretrained_encoder):
        from .vae_augment import VAETrainConfig

        b = self.raw["vae"]
        return VAETrainConfig(
            latent_dim=b["latent_dim"], epochs=b["epochs"], batch_size=b["batch_size"],
            learning_rate=b["learning_rate"], momentum=b["momentum"], kl_weight=b["kl_weight"],
            pad_count=b["pad_count"], seed=seed, pretrained_encoder=pretrained_encoder,
            freeze_trunk=b["freeze_trunk"], dec_channels=tuple(b["dec_channels"]),
        )

    def mixmatch_config(self, seed):
        from .mixmatch import MixMatchConfig

        b = self.raw["mixmatch"]
        return MixMatchConfig(
            alpha=b["alpha"], temperature=b["temperature"], beta=b["beta"], k_aug=b["k_aug"],
            ramp_up_steps=b["ramp_up_steps"], batch_size=b["batch_size"],
            learning_rate=b["learning_rate"], momentum=b["momentum"], max_steps=b["max_steps"],
            plateau_decay_factor=b["plateau_decay_factor"], plateau_patience=b["plateau_patience"],
            eval_interval=b["eval_interval"], seed=seed, augment=b["augment"],
            mixup_enabled=b["mixup_enabled"], unlabeled_enabled=b["unlabeled_enabled"],
        )
