"""End-to-end finite-difference checks of the losses through the encoder."""
from __future__ import annotations

import numpy as np

from .losses import loss_l1, loss_l2, total_loss
from .model import MaskedSurvivalTransformer, profile_config
from .tensor import check_parameters


def toy_batch(n: int = 8, d: int = 6, T: int = 6, seed: int = 0, missing_rate: float = 0.3):
    """Random encoded batch with some missing features, at least one
    available feature per row, and at least one acceptable pair."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    A = rng.random((n, d)) >= missing_rate
    A[np.arange(n), rng.integers(0, d, n)] = True
    X[~A] = 0.0
    s = rng.integers(0, T, n)
    k = rng.integers(0, 2, n)
    s[0], k[0] = 0, 1
    s[1] = T - 1
    return X, A, s, k


def gradient_suite(profile: str = "toy", batch: int = 8, d: int = 6, T: int = 6, step: float = 1e-5,
                   max_coords: int | None = 24, seed: int = 0) -> dict:
    """Max relative error over every model parameter for L1, L2 and L1+L2."""
    model = MaskedSurvivalTransformer(profile_config(profile, T=T, d=d, seed=seed))
    X, A, s, k = toy_batch(batch, d, T, seed)
    losses = {
        "L1": lambda: loss_l1(model.forward(X, A), s, k),
        "L2": lambda: loss_l2(model.forward(X, A), s, k),
        "L1+L2": lambda: total_loss(model.forward(X, A), s, k),
    }
    out = {}
    for name, fn in losses.items():
        per_param = check_parameters(fn, model.params, step=step, max_coords=max_coords, seed=seed)
        out[name] = max(per_param.values())
    return out
