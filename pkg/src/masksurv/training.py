"""Mini-batch Adam training with validation-driven LR decay and early stopping."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EncodedCohort
from .errors import ConfigurationError, DivergenceError
from .losses import RANK_SIGMA, acceptable_pairs, loss_terms, total_loss
from .tensor import backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 1500
    early_stop_patience: int = 200
    lr_patience: int = 100
    lr_decay: float = 0.1
    w1: float = 1.0
    w2: float = 1.0
    sigma: float = RANK_SIGMA
    min_delta: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be positive")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if not (self.early_stop_patience < self.max_epochs and self.lr_patience < self.max_epochs):
            raise ConfigurationError("patience values must be smaller than max_epochs")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if self.w1 < 0 or self.w2 < 0 or (self.w1 == 0 and self.w2 == 0):
            raise ConfigurationError("loss weights must be non-negative and not both zero")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    train_curve: list = field(default_factory=list)   # mean per-patient training loss
    val_curve: list = field(default_factory=list)     # full validation loss
    lr_curve: list = field(default_factory=list)
    val_l1_curve: list = field(default_factory=list)
    val_l2_curve: list = field(default_factory=list)

    @property
    def best_val_terms(self):
        return self.val_l1_curve[self.best_epoch], self.val_l2_curve[self.best_epoch]


def _loss(model, X, A, s, k, cfg):
    y = model.forward(X, A)
    return y, total_loss(y, s, k, cfg.w1, cfg.w2, sigma=cfg.sigma)


def evaluate_loss(model, cohort: EncodedCohort, cfg: TrainConfig, batch_size: int = 1024):
    """Validation loss (weighted total) plus the unweighted (L1, L2) terms."""
    y = model.predict(cohort.features, cohort.availability)
    l1, l2 = loss_terms(y, cohort.time_bin, cohort.event, sigma=cfg.sigma)
    return cfg.w1 * l1 + cfg.w2 * l2, l1, l2


def train(model, train_set: EncodedCohort, val_set: EncodedCohort, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` in place and leave it at its best-validation parameters."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("training and validation sets must be non-empty")
    if cfg.w1 == 0 and not acceptable_pairs(train_set.time_bin, train_set.event).any():
        raise ConfigurationError("ranking-only loss needs at least one acceptable pair in the training set")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params)
    lr = cfg.lr
    n = len(train_set)
    X, A, S, K = train_set.features, train_set.availability, train_set.time_bin, train_set.event

    res = TrainResult(best_epoch=0, epochs_run=0, best_val_loss=np.inf)
    best_state = model.state()
    since_best = 0
    since_lr = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            _, loss = _loss(model, X[idx], A[idx], S[idx], K[idx], cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {b}")
            total += value
            if loss.requires_grad:
                opt.step(backward(loss), lr)
        val, l1, l2 = evaluate_loss(model, val_set, cfg)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        res.train_curve.append(total / n)
        res.val_curve.append(val)
        res.val_l1_curve.append(l1)
        res.val_l2_curve.append(l2)
        res.lr_curve.append(lr)
        res.epochs_run = epoch + 1
        improved = val < res.best_val_loss - cfg.min_delta
        if val < res.best_val_loss:
            # any decrease moves the checkpoint; only a real one resets patience
            res.best_val_loss = val
            res.best_epoch = epoch
            best_state = model.state()
        if improved:
            since_best = 0
            since_lr = 0
        else:
            since_best += 1
            since_lr += 1
            if since_lr >= cfg.lr_patience:
                lr *= cfg.lr_decay
                since_lr = 0
                log.debug("epoch %d: learning rate decayed to %g", epoch, lr)
            if since_best >= cfg.early_stop_patience:
                log.debug("epoch %d: early stop (best epoch %d)", epoch, res.best_epoch)
                break
    model.load_state(best_state)
    return res
