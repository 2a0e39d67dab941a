"""Fully supervised reference training: SGD+momentum with plateau decay.

Model selection runs on the validation split; the returned parameters are
the snapshot with the best validation accuracy.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledSet, augment_batch
from .errors import InvalidInputError, InvalidSpecError
from .models import ClassifierModel, ClassifierSpec, build_classifier
from .optim import BatchSampler, TrainHistory, run_sgd_loop
from .confidence import softmax
from .seeding import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-2
    momentum: float = 0.9
    max_steps: int = 10_000
    plateau_decay_factor: float = 1e-2
    plateau_patience: int = 5
    batch_size: int = 64
    eval_interval: int = 50
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidSpecError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InvalidSpecError("momentum must be in [0, 1)")
        if not 0 < self.plateau_decay_factor < 1:
            raise InvalidSpecError("plateau_decay_factor must be in (0, 1)")
        if self.max_steps < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise InvalidSpecError("max_steps, batch_size and eval_interval must be positive")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean soft-target cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = float(-(targets * logp).sum() / n)
    dlogits = (np.exp(logp) - targets) / n
    return loss, dlogits


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[labels]


def evaluate(model: ClassifierModel, data: LabeledSet, batch_size: int = 256) -> tuple[float, float]:
    """Returns (accuracy, mean cross-entropy loss) in evaluation mode."""
    if len(data) == 0:
        raise InvalidInputError("cannot evaluate on an empty set")
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(data), batch_size):
        stop = min(start + batch_size, len(data))
        logits = model.forward(data.images[start:stop], training=False)
        logp = log_softmax(logits)
        labels = data.labels[start:stop]
        loss_sum += float(-logp[np.arange(stop - start), labels].sum())
        correct += int((logits.argmax(axis=1) == labels).sum())
    return correct / len(data), loss_sum / len(data)


def train_supervised(d_l: LabeledSet, d_v: LabeledSet, spec: ClassifierSpec,
                     config: TrainConfig) -> tuple[ClassifierModel, TrainHistory]:
    if len(d_l) == 0 or len(d_v) == 0:
        raise InvalidInputError("training and validation sets must be non-empty")
    if d_l.num_classes != d_v.num_classes:
        raise InvalidInputError("training and validation sets disagree on num_classes")

    model = build_classifier(spec, seed=derive_seed(config.seed, "init"))
    sampler = BatchSampler(len(d_l), config.batch_size, config.seed, "labeled")
    targets_all = one_hot(d_l.labels, d_l.num_classes)

    def step_fn(step, lr):
        idx = sampler.next()
        images = d_l.images[idx]
        if config.augment:
            images = augment_batch(images, config.seed, step)
        logits = model.forward(images, training=True)
        loss, dlogits = cross_entropy(logits, targets_all[idx])
        model.backward(dlogits)
        return loss

    def eval_fn():
        acc, loss = evaluate(model, d_v)
        return loss, acc

    history = run_sgd_loop(
        model, step_fn, eval_fn,
        max_steps=config.max_steps,
        eval_interval=config.eval_interval,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        plateau_decay_factor=config.plateau_decay_factor,
        plateau_patience=config.plateau_patience,
    )
    return model, history
