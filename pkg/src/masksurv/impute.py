"""Mean/mode and k-nearest-neighbour imputation for the baseline pipelines.

Both work on feature groups: a categorical feature's one-hot block is filled
as a unit with a single category. Available cells are never touched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CohortTable, EncodedCohort, FeatureGroup
from .errors import ContractError, FitError, ImputationError

STRATEGIES = ("mean", "knn")
DEFAULT_NEIGHBORS = 5


@dataclass(frozen=True, eq=False)
class ImputerState:
    strategy: str
    k_neighbors: int
    groups: tuple
    fill: np.ndarray                 # per-column fill values (mean strategy)
    train_X: np.ndarray | None = None
    train_A: np.ndarray | None = None


def _table_to_matrix(table: CohortTable):
    blocks, avail, groups, start = [], [], [], 0
    for col, v in zip(table.columns, table.values):
        if col.is_categorical:
            width = len(col.categories)
            block = np.zeros((len(table), width))
            ok = v >= 0
            block[np.flatnonzero(ok), v[ok]] = 1.0
        else:
            width = 1
            ok = ~np.isnan(v)
            block = np.where(ok, v, 0.0)[:, None]
        blocks.append(block)
        avail.append(np.repeat(ok[:, None], width, axis=1))
        groups.append(FeatureGroup(col.name, col.kind, tuple(range(start, start + width))))
        start += width
    return np.hstack(blocks), np.hstack(avail), tuple(groups)


def _matrix_to_table(table: CohortTable, X, groups) -> CohortTable:
    values = []
    for col, g in zip(table.columns, groups):
        block = X[:, list(g.columns)]
        if col.is_categorical:
            values.append(block.argmax(axis=1).astype(np.int64))
        else:
            values.append(block[:, 0].copy())
    return CohortTable(table.columns, tuple(values), table.survival_months, table.event)


def _as_matrix(cohort):
    if isinstance(cohort, EncodedCohort):
        return cohort.features, cohort.availability, cohort.groups
    if isinstance(cohort, CohortTable):
        return _table_to_matrix(cohort)
    raise ContractError(f"cannot impute a {type(cohort).__name__}")


def _mode_block(block):
    counts = block.sum(axis=0)
    onehot = np.zeros(block.shape[1])
    onehot[int(np.argmax(counts))] = 1.0   # lowest index wins ties
    return onehot


def fit(strategy: str, train, k_neighbors: int = DEFAULT_NEIGHBORS) -> ImputerState:
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown imputation strategy {strategy!r}; choose from {STRATEGIES}")
    if k_neighbors < 1:
        raise ContractError("k_neighbors must be positive")
    X, A, groups = _as_matrix(train)
    fill = np.zeros(X.shape[1])
    for g in groups:
        cols = list(g.columns)
        rows = A[:, cols[0]]
        if not rows.any():
            raise FitError(f"feature {g.name!r} has no available training cell")
        if g.kind == "cat":
            fill[cols] = _mode_block(X[rows][:, cols])
        else:
            fill[cols[0]] = X[rows, cols[0]].mean()
    if strategy == "knn":
        return ImputerState(strategy, k_neighbors, groups, fill, X.copy(), A.copy())
    return ImputerState(strategy, k_neighbors, groups, fill)


def nan_euclidean(x, ax, Y, AY) -> np.ndarray:
    """Distances from one row to many over shared coordinates, scaled by
    sqrt(d / n_shared); infinite when nothing is shared."""
    shared = AY & ax
    n_shared = shared.sum(axis=1)
    sq = np.where(shared, (Y - x) ** 2, 0.0).sum(axis=1)
    d = x.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(sq * d / n_shared)
    dist[n_shared == 0] = np.inf
    return dist


def _impute_knn(state: ImputerState, X, A):
    out = X.copy()
    tX, tA = state.train_X, state.train_A
    for i in np.flatnonzero(~A.all(axis=1)):
        dist = nan_euclidean(X[i], A[i], tX, tA)
        for g in state.groups:
            cols = list(g.columns)
            if A[i, cols[0]]:
                continue
            donors = np.flatnonzero(tA[:, cols[0]] & np.isfinite(dist))
            if donors.size == 0:
                raise ImputationError(
                    f"row {i} shares no available coordinate with any training row having {g.name!r}"
                )
            order = np.lexsort((donors, dist[donors]))  # distance, then training index
            chosen = donors[order[: state.k_neighbors]]
            if g.kind == "cat":
                out[i, cols] = _mode_block(tX[chosen][:, cols])
            else:
                out[i, cols[0]] = tX[chosen, cols[0]].mean()
    return out


def transform(state: ImputerState, cohort):
    """Return ``cohort`` (same type) with every missing cell filled."""
    X, A, groups = _as_matrix(cohort)
    if [g.columns for g in groups] != [g.columns for g in state.groups]:
        raise ContractError("column layout differs from the fitted imputer")
    if state.strategy == "mean":
        filled = np.where(A, X, state.fill[None, :])
    else:
        filled = _impute_knn(state, X, A)
    if isinstance(cohort, EncodedCohort):
        return cohort.replace(features=filled, availability=np.ones_like(A))
    return _matrix_to_table(cohort, filled, groups)


def fit_transform(strategy: str, train, others=(), k_neighbors: int = DEFAULT_NEIGHBORS):
    state = fit(strategy, train, k_neighbors)
    return state, transform(state, train), [transform(state, o) for o in others]
