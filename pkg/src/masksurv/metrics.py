"""Concordance metrics and the Kaplan-Meier estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .losses import acceptable_pairs


def ct_index(cif, time_bin, event, ties: str = "strict") -> float:
    """Time-dependent concordance of cumulative incidence rows.

    For every acceptable pair (i had the event strictly before j's observed
    bin) the pair is concordant when F(s_i | x_i) > F(s_i | x_j). Tied
    predictions score 0 (``ties="strict"``) or 1/2 (``ties="half"``).
    """
    F = np.asarray(cif, dtype=np.float64)
    s = np.asarray(time_bin, dtype=np.int64)
    k = np.asarray(event, dtype=np.int64)
    if F.ndim != 2 or F.shape[0] != len(s) or len(k) != len(s):
        raise ContractError("cif must be (N, T) with one bin and event per row")
    if ties not in ("strict", "half"):
        raise ContractError(f"unknown ties mode {ties!r}")
    A = acceptable_pairs(s, k)
    n_pairs = int(A.sum())
    if n_pairs == 0:
        raise UndefinedMetricError("no acceptable pair: concordance is undefined")
    own = F[np.arange(len(s)), s][:, None]   # F(s_i | x_i)
    other = F[:, s].T                        # other[i, j] = F(s_i | x_j)
    score = (own > other).astype(np.float64)
    if ties == "half":
        score += 0.5 * (own == other)
    return float((score * A).sum() / n_pairs)


def c_index(risk, times, events, ties: str = "strict") -> float:
    """Harrell's concordance for a time-constant risk score."""
    risk = np.asarray(risk, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    A = (events[:, None] == 1) & (times[:, None] < times[None, :])
    n_pairs = int(A.sum())
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pair: concordance is undefined")
    score = (risk[:, None] > risk[None, :]).astype(np.float64)
    if ties == "half":
        score += 0.5 * (risk[:, None] == risk[None, :])
    return float((score * A).sum() / n_pairs)


@dataclass(frozen=True)
class KaplanMeier:
    """Right-continuous product-limit survival curve."""

    times: np.ndarray      # distinct event times, ascending
    survival: np.ndarray   # S just after each time
    at_risk: np.ndarray
    deaths: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right")
        return np.concatenate([[1.0], self.survival])[idx]


def kaplan_meier(times, events) -> KaplanMeier:
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if times.size == 0:
        raise ContractError("empty cohort")
    event_times = np.unique(times[events == 1])
    at_risk = np.array([(times >= t).sum() for t in event_times], dtype=np.int64)
    deaths = np.array([((times == t) & (events == 1)).sum() for t in event_times], dtype=np.int64)
    surv = np.cumprod(1.0 - deaths / at_risk) if len(event_times) else np.empty(0)
    return KaplanMeier(event_times, surv, at_risk, deaths)


def mean_and_se(values) -> tuple:
    """Mean and standard error (sample sd / sqrt(n)) across folds."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se
