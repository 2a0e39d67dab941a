"""MixMatch-style semi-supervised training.

Per batch: guess soft labels for unlabeled samples by averaging predictions
over stochastic augmentations and sharpening with temperature T, then MixUp
both batches against a shuffled pool of everything, and optimize a combined
cross-entropy + beta-weighted Brier loss. The asymmetric lambda' = max(lambda,
1 - lambda) keeps every mixed example closer to its primary batch, which is
what makes the two loss terms attributable.
"""

from dataclasses import dataclass

import numpy as np

from .confidence import softmax
from .datasets import LabeledSet, UnlabeledSet, augment_batch, augment_pixels
from .errors import InvalidInputError, InvalidSpecError
from .models import ClassifierModel, ClassifierSpec, build_classifier, forward_logits
from .optim import BatchSampler, TrainHistory, run_sgd_loop
from .seeding import derive_seed, rng_for
from .supervised import cross_entropy, evaluate, one_hot


@dataclass(frozen=True)
class MixMatchConfig:
    alpha: float = 0.5
    temperature: float = 0.5
    beta: float = 100.0
    k_aug: int = 2
    ramp_up_steps: int = 0
    batch_size: int = 64
    learning_rate: float = 3e-2
    momentum: float = 0.9
    max_steps: int = 10_000
    plateau_decay_factor: float = 1e-2
    plateau_patience: int = 5
    eval_interval: int = 50
    seed: int = 0
    augment: bool = True
    mixup_enabled: bool = True
    unlabeled_enabled: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.temperature <= 0:
            raise InvalidSpecError("alpha and temperature must be > 0")
        if self.beta < 0 or self.k_aug < 1 or self.ramp_up_steps < 0:
            raise InvalidSpecError("beta must be >= 0, k_aug >= 1, ramp_up_steps >= 0")


@dataclass(frozen=True)
class MixedBatch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        if t.size and ((t < -1e-9).any() or np.abs(t.sum(axis=-1) - 1.0).max() > 1e-6):
            raise InvalidInputError("targets must be probability rows summing to 1")


def _check_simplex(p: np.ndarray):
    if p.size == 0:
        raise InvalidInputError("empty distribution")
    if (p < -1e-6).any() or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-6:
        raise InvalidInputError("input must lie on the probability simplex")


def sharpen(p, temperature: float) -> np.ndarray:
    """p_i^(1/T) renormalized; lowers entropy for T < 1 and preserves the argmax."""
    if temperature <= 0:
        raise InvalidSpecError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(p, dtype=np.float64)
    _check_simplex(p)
    if temperature == 1.0:
        return p.copy()
    powered = np.clip(p, 0.0, None) ** (1.0 / temperature)
    return powered / powered.sum(axis=-1, keepdims=True)


def guess_labels(model: ClassifierModel, x_u: np.ndarray, k_aug: int, temperature: float,
                 seed: int, augment: bool = True) -> np.ndarray:
    """Augmentation-averaged, sharpened predictions; constant w.r.t. the model."""
    x_u = np.asarray(x_u, dtype=np.float64)
    if x_u.shape[0] == 0:
        raise InvalidInputError("unlabeled batch must be non-empty")
    probs = np.zeros((x_u.shape[0], model.spec.num_classes))
    for k in range(k_aug):
        batch = _augment_copies(x_u, seed, k) if augment else x_u
        probs += softmax(forward_logits(model, batch))
    return sharpen(probs / k_aug, temperature)


def _augment_copies(x_u: np.ndarray, seed: int, k: int) -> np.ndarray:
    out = np.empty_like(x_u)
    for i in range(x_u.shape[0]):
        out[i] = augment_pixels(x_u[i], derive_seed(seed, "uaug", k, i))
    return out


def mixup(x1, t1, x2, t2, alpha: float, seed: int):
    """MixUp one pair: lambda ~ Beta(alpha, alpha), lambda' = max(lambda, 1-lambda)."""
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    t1, t2 = np.asarray(t1, dtype=np.float64), np.asarray(t2, dtype=np.float64)
    if x1.shape != x2.shape or t1.shape != t2.shape:
        raise InvalidInputError("mixup operands must share shapes")
    _check_simplex(t1)
    _check_simplex(t2)
    lam = float(rng_for(seed, "lam").beta(alpha, alpha))
    lam = max(lam, 1.0 - lam)
    return lam * x1 + (1.0 - lam) * x2, lam * t1 + (1.0 - lam) * t2, lam


def _mix_arrays(x1, t1, x2, t2, lam):
    lam_x = lam[:, None, None, None]
    lam_t = lam[:, None]
    return lam_x * x1 + (1.0 - lam_x) * x2, lam_t * t1 + (1.0 - lam_t) * t2


def mixmatch_batch(model: ClassifierModel, labeled_batch, unlabeled_batch,
                   config: MixMatchConfig, seed: int, return_trace: bool = False):
    """One full batch transform; returns (X', U') MixedBatches."""
    x, y = labeled_batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_u = np.asarray(unlabeled_batch, dtype=np.float64)
    if x.shape[0] == 0 or x_u.shape[0] == 0:
        raise InvalidInputError("labeled and unlabeled batches must be non-empty")

    if config.augment:
        x_hat = np.empty_like(x)
        for i in range(x.shape[0]):
            x_hat[i] = augment_pixels(x[i], derive_seed(seed, "aug-labeled", i))
        u_hat = np.concatenate([_augment_copies(x_u, seed, k) for k in range(config.k_aug)])
    else:
        x_hat = x
        u_hat = np.concatenate([x_u] * config.k_aug)

    guesses = guess_labels(model, x_u, config.k_aug, config.temperature, seed, config.augment)
    u_targets = np.tile(guesses, (config.k_aug, 1))

    pool_x = np.concatenate([x_hat, u_hat])
    pool_t = np.concatenate([y, u_targets])
    perm = rng_for(seed, "pool").permutation(pool_x.shape[0])
    pool_x, pool_t = pool_x[perm], pool_t[perm]

    n_x = x_hat.shape[0]
    if config.mixup_enabled:
        lam = rng_for(seed, "lam").beta(config.alpha, config.alpha, size=pool_x.shape[0])
        lam = np.maximum(lam, 1.0 - lam)
    else:
        lam = np.ones(pool_x.shape[0])
    mixed_x, mixed_tx = _mix_arrays(x_hat, y, pool_x[:n_x], pool_t[:n_x], lam[:n_x])
    mixed_u, mixed_tu = _mix_arrays(u_hat, u_targets, pool_x[n_x:], pool_t[n_x:], lam[n_x:])

    x_prime = MixedBatch(mixed_x, mixed_tx)
    u_prime = MixedBatch(mixed_u, mixed_tu)
    if return_trace:
        trace = {
            "guessed_labels": guesses.tolist(),
            "lambdas": lam.tolist(),
            "labeled_targets_mixed": mixed_tx.tolist(),
            "unlabeled_targets_mixed": mixed_tu.tolist(),
        }
        return x_prime, u_prime, trace
    return x_prime, u_prime


def mixmatch_loss(pred_x, targets_x, pred_u, targets_u, beta_effective: float):
    """(total, L_x, L_u): cross-entropy plus beta-weighted Brier consistency term."""
    pred_x, pred_u = np.asarray(pred_x, np.float64), np.asarray(pred_u, np.float64)
    targets_x, targets_u = np.asarray(targets_x, np.float64), np.asarray(targets_u, np.float64)
    if pred_x.shape != targets_x.shape or pred_u.shape != targets_u.shape:
        raise InvalidInputError("prediction/target shape mismatch")
    l_x, _ = cross_entropy(pred_x, targets_x)
    p_u = softmax(pred_u)
    l_u = float(((p_u - targets_u) ** 2).mean())
    return l_x + beta_effective * l_u, l_x, l_u


def _mixmatch_loss_grads(pred_x, targets_x, pred_u, targets_u, beta_effective):
    l_x, dlogits_x = cross_entropy(pred_x, targets_x)
    p_u = softmax(pred_u)
    l_u = float(((p_u - targets_u) ** 2).mean())
    g = 2.0 * (p_u - targets_u) * (beta_effective / p_u.size)
    dlogits_u = p_u * (g - (g * p_u).sum(axis=-1, keepdims=True))
    return l_x + beta_effective * l_u, dlogits_x, dlogits_u


def beta_at(config: MixMatchConfig, step: int) -> float:
    if config.ramp_up_steps > 0:
        return config.beta * min(1.0, step / config.ramp_up_steps)
    return config.beta


def train_mixmatch(d_l_aug: LabeledSet, d_u: UnlabeledSet, d_v: LabeledSet,
                   spec: ClassifierSpec, config: MixMatchConfig) -> tuple[ClassifierModel, TrainHistory]:
    """SSL training on (labeled, unlabeled) with best-on-validation selection.

    With unlabeled_enabled=False the step degenerates to cross-entropy on the
    augmented labeled batch and reproduces the supervised trajectory exactly.
    """
    if len(d_l_aug) == 0 or len(d_v) == 0:
        raise InvalidInputError("labeled and validation sets must be non-empty")
    if config.unlabeled_enabled and len(d_u) == 0:
        raise InvalidInputError("unlabeled set must be non-empty")

    model = build_classifier(spec, seed=derive_seed(config.seed, "init"))
    labeled_sampler = BatchSampler(len(d_l_aug), config.batch_size, config.seed, "labeled")
    unlabeled_sampler = BatchSampler(len(d_u), config.batch_size, config.seed, "unlabeled") \
        if config.unlabeled_enabled else None
    onehot_all = one_hot(d_l_aug.labels, d_l_aug.num_classes)

    def step_fn(step, lr):
        idx = labeled_sampler.next()
        images = d_l_aug.images[idx]
        targets = onehot_all[idx]

        if not config.unlabeled_enabled:
            if config.augment:
                images = augment_batch(images, config.seed, step)
            logits = model.forward(images, training=True)
            loss, dlogits = cross_entropy(logits, targets)
            model.backward(dlogits)
            return loss

        u_images = d_u.images[unlabeled_sampler.next()]
        x_prime, u_prime = mixmatch_batch(
            model, (images, targets), u_images, config, derive_seed(config.seed, "mm", step)
        )
        n_x = x_prime.inputs.shape[0]
        combined = np.concatenate([x_prime.inputs, u_prime.inputs])
        logits = model.forward(combined, training=True)
        total, dlx, dlu = _mixmatch_loss_grads(
            logits[:n_x], x_prime.targets, logits[n_x:], u_prime.targets, beta_at(config, step)
        )
        model.backward(np.concatenate([dlx, dlu]))
        return total

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
