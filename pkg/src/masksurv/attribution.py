"""Exact Shapley attribution by coalition masking.

The encoder accepts any subset of available features, so the value of a
coalition S is simply the predicted cumulative incidence with only the
features in S marked available. The empty coalition cannot be evaluated (the
pooled mean would be empty); its value is the training-cohort mean CIF.
Players are original features: every one-hot column of a categorical
feature switches on and off together. Features already missing in a sample
are absent players with a value of exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import ComplexityError, EmptyPoolError

MAX_PLAYERS = 20


def _popcount(masks):
    counts = np.zeros_like(masks)
    m = masks.copy()
    while m.any():
        counts += m & 1
        m >>= 1
    return counts


def shapley_weights(n: int) -> np.ndarray:
    """w[s] = s! (n-s-1)! / n! for coalition sizes s = 0..n-1."""
    return np.array([factorial(s) * factorial(n - s - 1) / factorial(n) for s in range(n)])


def shapley_from_values(values: np.ndarray) -> np.ndarray:
    """Shapley values from a table of coalition values.

    ``values[m]`` is v(S) for the coalition encoded by bitmask ``m`` (bit i =
    player i); trailing axes are carried through. Returns (n_players, ...).
    """
    values = np.asarray(values, dtype=np.float64)
    n = int(np.log2(values.shape[0]))
    if 2 ** n != values.shape[0]:
        raise ValueError("values must have 2**n rows")
    masks = np.arange(2 ** n)
    sizes = _popcount(masks)
    w = shapley_weights(n) if n else np.empty(0)
    phi = np.zeros((n,) + values.shape[1:])
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        gain = values[without | (1 << i)] - values[without]
        phi[i] = np.tensordot(w[sizes[without]], gain, axes=(0, 0))
    return phi


def coalition_values(model, values, availability, groups, players, baseline, chunk: int = 2048):
    """CIF for every coalition of ``players`` (group indices); shape (2**n, T)."""
    n = len(players)
    masks = np.arange(2 ** n)
    T = len(baseline)
    out = np.empty((2 ** n, T))
    out[0] = baseline
    base_avail = np.zeros_like(availability, dtype=bool)
    rows = []
    for m in masks[1:]:
        a = base_avail.copy()
        for bit, g in enumerate(players):
            if (m >> bit) & 1:
                a[list(groups[g].columns)] = availability[list(groups[g].columns)]
        rows.append(a)
    if rows:
        A = np.array(rows)
        X = np.broadcast_to(values, A.shape)
        for start in range(0, len(A), chunk):
            out[1 + start:1 + start + chunk] = model.predict_cif(X[start:start + chunk], A[start:start + chunk])
    return out


def shapley_values(model, values, availability, groups, baseline, value_time=None,
                   max_players: int = MAX_PLAYERS) -> np.ndarray:
    """Exact Shapley values per original feature.

    Returns (n_groups, T), or (n_groups,) when ``value_time`` is given.
    Features missing in the sample receive zero.
    """
    values = np.asarray(values, dtype=np.float64)
    availability = np.asarray(availability, dtype=bool)
    players = [g for g, grp in enumerate(groups) if availability[grp.columns[0]]]
    if not players:
        raise EmptyPoolError("sample has no available feature to attribute")
    if len(players) > max_players:
        raise ComplexityError(
            f"{len(players)} available features exceed the exact limit of {max_players}; "
            "use a sampling estimator instead"
        )
    v = coalition_values(model, values, availability, groups, players, np.asarray(baseline, dtype=np.float64))
    phi = np.zeros((len(groups), v.shape[1]))
    phi[players] = shapley_from_values(v)
    return phi if value_time is None else phi[:, value_time]


def cohort_baseline(model, cohort) -> np.ndarray:
    """Mean CIF over the cohort's patients with at least one available feature."""
    ok = cohort.availability.any(axis=1)
    return model.predict_cif(cohort.features[ok], cohort.availability[ok]).mean(axis=0)


@dataclass(frozen=True, eq=False)
class AttributionReport:
    phi: np.ndarray          # patients x features x T
    features: tuple
    baseline: np.ndarray     # value of the empty coalition per time bin
    patients: np.ndarray     # row indices into the attributed cohort

    def summary(self):
        return summarize(self.phi, self.features)


def attribute(model, cohort, baseline, patients=None, max_players: int = MAX_PLAYERS) -> AttributionReport:
    if patients is None:
        patients = np.flatnonzero(cohort.availability.any(axis=1))
    patients = np.asarray(patients)
    phi = np.stack([
        shapley_values(model, cohort.features[i], cohort.availability[i], cohort.groups, baseline,
                       max_players=max_players)
        for i in patients
    ]) if len(patients) else np.zeros((0, len(cohort.groups), len(baseline)))
    return AttributionReport(phi, tuple(g.name for g in cohort.groups), np.asarray(baseline), patients)


def summarize(phi, features, group_map=None) -> list:
    """Global importance: mean |phi| over patients and times, descending.

    ``phi`` is (patients, features, T) or any array whose axis 1 indexes
    ``features``. With ``group_map`` (name -> member indices on that axis)
    member importances are averaged into one entry per group.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.size == 0:
        raise ValueError("empty attribution tensor")
    if phi.ndim == 1:
        phi = phi[None, :, None]
    elif phi.ndim == 2:
        phi = phi[None]
    per_feature = np.abs(phi).mean(axis=tuple(i for i in range(phi.ndim) if i != 1))
    if group_map is not None:
        table = [(name, float(per_feature[list(idx)].mean())) for name, idx in group_map.items()]
    else:
        table = [(name, float(v)) for name, v in zip(features, per_feature)]
    return sorted(table, key=lambda kv: (-kv[1], kv[0]))
