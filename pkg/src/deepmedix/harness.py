"""Centralized training with checkpointing, plateau LR reduction and early stopping."""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import params as ps
from .errors import ConfigError
from .metrics import compute_metrics
from .objective import ModelObjective, epoch_batches
from .optim import AdamState, adam_step, reduce_lr, sgd_step


@dataclass
class OptimizerConfig:
    type: str = "adam"
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.type not in ("sgd", "adam", "svrg"):
            raise ConfigError(f"unknown optimizer {self.type!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.betas = tuple(self.betas)


@dataclass
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 32
    patience: int = 15
    lr_factor: float = 3.0
    lr_window: int = 3
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if not self.patience >= self.lr_window >= 1:
            raise ConfigError("need patience >= lr_window >= 1")
        if self.max_epochs < 0 or self.batch_size < 1:
            raise ConfigError("max_epochs must be >= 0 and batch_size >= 1")
        if self.lr_factor <= 1:
            raise ConfigError("lr_factor must exceed 1")
        if self.optimizer.type == "svrg":
            raise ConfigError("svrg is a federated local method; use sgd or adam for centralized training")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    improved: bool
    reduced_lr: bool
    stopped: bool


class PlateauSchedule:
    """Tracks validation accuracy; reduces the LR and signals early stopping.

    An epoch improves only if its accuracy is strictly greater than the best
    so far. After ``window`` non-improving epochs since the last improvement
    or reduction the LR is divided by ``factor`` (the window then re-arms).
    Training stops after ``patience`` consecutive non-improving epochs; the
    stop check wins over a reduction in the same epoch.
    """

    def __init__(self, lr, patience=15, factor=3.0, window=3):
        self.lr = lr
        self.patience, self.factor, self.window = patience, factor, window
        self.best = -np.inf
        self.best_epoch = 0
        self.since_best = 0
        self.since_reduce = 0
        self.reductions = 0

    def update(self, epoch, accuracy):
        """Return ``(improved, reduced, stop)`` after ``epoch`` (1-based)."""
        improved = accuracy > self.best
        if improved:
            self.best, self.best_epoch = accuracy, epoch
            self.since_best = self.since_reduce = 0
        else:
            self.since_best += 1
            self.since_reduce += 1
        stop = self.since_best >= self.patience
        reduced = not stop and self.since_reduce >= self.window
        if reduced:
            self.lr = reduce_lr(self.lr, self.factor)
            self.since_reduce = 0
            self.reductions += 1
        return improved, reduced, stop


@dataclass
class TrainResult:
    best_params: dict
    final_params: dict
    history: list
    best_epoch: int = 0
    best_val_accuracy: float = float("nan")


def predict(model, params, images, batch_size=256):
    """Eval-mode class probabilities for every image."""
    dtype = next(iter(params.values())).dtype
    out = [model.forward(params, images[i:i + batch_size].astype(dtype, copy=False))
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(model, params, images, labels, batch_size=256):
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty split")
    return compute_metrics(predict(model, params, images, batch_size), labels)


def accuracy(model, params, images, labels, batch_size=256):
    probs = predict(model, params, images, batch_size)
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


def train(model, train_split, val_split, config: TrainConfig, params=None, val_fn=None, on_epoch=None):
    """Train ``model`` on ``train_split`` = (images, labels), selecting on validation accuracy.

    ``val_fn(params, epoch)`` overrides the validation accuracy (used to inject
    sequences); by default eval-mode accuracy on ``val_split`` is used.
    """
    x_tr, y_tr = train_split
    if len(y_tr) == 0:
        raise ValueError("empty training split")
    if val_fn is None:
        x_val, y_val = val_split
        if len(y_val) == 0:
            raise ValueError("empty validation split")

        def val_fn(p, epoch):
            return accuracy(model, p, x_val, y_val)

    params = model.init_params(config.seed) if params is None else params
    objective = ModelObjective(model, x_tr, y_tr)
    opt = config.optimizer
    schedule = PlateauSchedule(opt.lr, config.patience, config.lr_factor, config.lr_window)
    adam = AdamState.fresh(params, alpha=opt.lr, beta1=opt.betas[0], beta2=opt.betas[1],
                           epsilon=opt.epsilon) if opt.type == "adam" else None
    best = ps.copy(params)
    history = []
    indices = np.arange(len(y_tr))
    for e in range(config.max_epochs):
        lr = schedule.lr
        total, seen = 0.0, 0
        for batch, key in epoch_batches(indices, config.batch_size, config.seed, 0, e):
            loss, grads, stats = objective.loss_and_grad(params, batch, key=key)
            if adam is None:
                params = sgd_step(params, grads, lr)
            else:
                adam.alpha = lr
                adam, params = adam_step(adam, params, grads)
            params = ps.merge(params, stats)
            total += loss * len(batch)
            seen += len(batch)
        acc = float(val_fn(params, e + 1))
        improved, reduced, stop = schedule.update(e + 1, acc)
        if improved:
            best = ps.copy(params)
        record = EpochRecord(e + 1, lr, total / seen, acc, improved, reduced, stop)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if stop:
            break
    return TrainResult(best, params, history, schedule.best_epoch,
                       schedule.best if history else float("nan"))


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_accuracy", "improved", "reduced_lr", "stopped")


def write_history_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_accuracy),
                        int(r.improved), int(r.reduced_lr), int(r.stopped)])
