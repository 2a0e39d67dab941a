"""SGD with momentum, plateau learning-rate decay, and the shared step loop.

Both trainers (supervised and the SSL one) run on this loop so their batch
selection and augmentation seeds derive identically; with the unsupervised
term disabled the SSL trainer reproduces the supervised trajectory exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .seeding import rng_for


@dataclass
class TrainHistory:
    """Per-evaluation records: step, train loss, val loss, val accuracy, lr."""

    records: list = field(default_factory=list)

    def add(self, step, train_loss, val_loss, val_acc, lr):
        self.records.append({
            "step": int(step),
            "train_loss": float(train_loss),
            "val_loss": float(val_loss),
            "val_acc": float(val_acc),
            "lr": float(lr),
        })

    def best_val_acc(self):
        return max(r["val_acc"] for r in self.records)

    def to_records(self):
        return list(self.records)


class SGDMomentum:
    def __init__(self, momentum: float):
        self.momentum = momentum
        self.velocity = {}

    def step(self, params: dict, grads: dict, lr: float):
        for name, p in params.items():
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            v *= self.momentum
            v += grads[name]
            p -= lr * v


class PlateauSchedule:
    """Multiply lr by `factor` when the watched loss stops improving for `patience` evals."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.stale = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


class BatchSampler:
    """Epoch-reshuffled minibatch index stream, deterministic per (seed, tag)."""

    def __init__(self, n: int, batch_size: int, seed: int, tag: str):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seed = seed
        self.tag = tag
        self.epoch = -1
        self.pos = 0
        self.perm = None

    def next(self) -> np.ndarray:
        if self.perm is None or self.pos + self.batch_size > self.n:
            self.epoch += 1
            self.perm = rng_for(self.seed, self.tag, "epoch", self.epoch).permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx


def run_sgd_loop(model, step_fn, eval_fn, *, max_steps, eval_interval, learning_rate,
                 momentum, plateau_decay_factor, plateau_patience) -> TrainHistory:
    """Drive SGD steps with plateau decay; leaves the best-val-accuracy state in `model`.

    step_fn(step, lr) runs forward/backward for one minibatch and returns the
    training loss; eval_fn() returns (val_loss, val_acc) on a frozen snapshot.
    """
    optimizer = SGDMomentum(momentum)
    schedule = PlateauSchedule(learning_rate, plateau_decay_factor, plateau_patience)
    history = TrainHistory()
    best_acc = -1.0
    best_state = None
    loss_accum, loss_count = 0.0, 0

    for step in range(1, max_steps + 1):
        loss = step_fn(step, schedule.lr)
        if not np.isfinite(loss):
            raise DivergenceError(step)
        loss_accum += loss
        loss_count += 1
        optimizer.step(model.named_params(), model.named_grads(), schedule.lr)

        if step % eval_interval == 0 or step == max_steps:
            val_loss, val_acc = eval_fn()
            history.add(step, loss_accum / loss_count, val_loss, val_acc, schedule.lr)
            loss_accum, loss_count = 0.0, 0
            if val_acc > best_acc:
                best_acc = val_acc
                best_state = model.get_state()
            schedule.update(val_loss)
            if step == max_steps:
                break

    if best_state is not None:
        model.set_state(best_state)
    return history
