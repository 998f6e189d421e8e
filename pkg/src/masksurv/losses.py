"""Censoring-aware training loss: first-hitting-time likelihood plus a
pairwise ranking term, both summed (not averaged) over the batch."""
from __future__ import annotations

import numpy as np

from . import tensor as tc
from .errors import ConfigurationError, ContractError
from .tensor import Tensor

LOG_EPS = 1e-7
RANK_SIGMA = 0.1


def _check_batch(y, s, k):
    s = np.asarray(s, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    if y.ndim != 2 or len(s) != y.shape[0] or len(k) != y.shape[0]:
        raise ContractError("hazards must be (N, T) with one time bin and event per row")
    if len(s) == 0:
        raise ContractError("empty batch")
    if s.min() < 0 or s.max() >= y.shape[1]:
        raise ContractError("time bin outside [0, T)")
    return s, k


def acceptable_pairs(s, k) -> np.ndarray:
    """A[i, j] = 1 when i had the event strictly before j's observed time."""
    s = np.asarray(s)
    k = np.asarray(k)
    return (k[:, None] == 1) & (s[:, None] < s[None, :])


def loss_l1(y: Tensor, s, k, eps: float = LOG_EPS) -> Tensor:
    """Negative log-likelihood of the first hitting time.

    Uncensored patients contribute -log y[s]; censored ones -log(1 - F(s)).
    Log arguments are clamped below at ``eps``.
    """
    y = tc.as_tensor(y)
    s, k = _check_batch(y, s, k)
    rows = np.arange(len(s))
    at_event = y[rows, s]
    survival = tc.sub(1.0, tc.cumsum(y, axis=1)[rows, s])
    arg = tc.add(tc.mul(at_event, k.astype(float)), tc.mul(survival, (1 - k).astype(float)))
    return tc.scale(tc.sum_(tc.log(tc.clamp_min(arg, eps))), -1.0)


def loss_l2(y: Tensor, s, k, sigma: float = RANK_SIGMA) -> Tensor:
    """Ranking penalty sum_{i,j} A_ij exp(-(F_i(s_i) - F_j(s_i)) / sigma)."""
    y = tc.as_tensor(y)
    s, k = _check_batch(y, s, k)
    A = acceptable_pairs(s, k)
    if not A.any():
        return Tensor(0.0)
    F = tc.cumsum(y, axis=1)
    Fs = F[:, s]                      # Fs[j, i] = F(s_i | x_j)
    own = F[np.arange(len(s)), s]     # F(s_i | x_i)
    diff = tc.sub(own.reshape(-1, 1), tc.transpose(Fs))
    terms = tc.exp(tc.scale(diff, -1.0 / sigma))
    return tc.sum_(tc.mul(terms, A.astype(float)))


def total_loss(y: Tensor, s, k, w1: float = 1.0, w2: float = 1.0,
               sigma: float = RANK_SIGMA, eps: float = LOG_EPS) -> Tensor:
    if w1 < 0 or w2 < 0:
        raise ConfigurationError("loss weights must be non-negative")
    if w1 == 0 and w2 == 0:
        raise ConfigurationError("at least one loss weight must be positive")
    parts = []
    if w1:
        parts.append(tc.scale(loss_l1(y, s, k, eps), w1))
    if w2:
        parts.append(tc.scale(loss_l2(y, s, k, sigma), w2))
    return parts[0] if len(parts) == 1 else tc.add(parts[0], parts[1])


def loss_terms(y, s, k, sigma: float = RANK_SIGMA, eps: float = LOG_EPS):
    """Plain float values of (L1, L2) for reporting."""
    y = Tensor(np.asarray(getattr(y, "data", y)))
    return float(loss_l1(y, s, k, eps).data), float(loss_l2(y, s, k, sigma).data)
