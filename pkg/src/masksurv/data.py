"""Cohort tables, preprocessing, discretisation, synthetic cohorts and folds.

CSV layout (UTF-8, comma separated, ``.`` decimal point)::

    age,sex,ctv,stage,survival_months,event
    cont,cat,cont,cat[I|II|III],survival_months,event
    64,M,,III,22.5,1

The second header row declares each column's kind: ``cont``, ``cat`` (levels
inferred and sorted) or ``cat[A|B|C]`` (levels declared in order), plus the
reserved kinds ``survival_months`` and ``event``. An empty cell is missing.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateColumnError,
    EncodingError,
    ParameterError,
    SchemaError,
    StratificationError,
)

SURVIVAL = "survival_months"
EVENT = "event"
DEFAULT_HORIZON_MONTHS = 72.0


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "cont" or "cat"
    categories: tuple = ()

    @property
    def is_categorical(self):
        return self.kind == "cat"


@dataclass(frozen=True, eq=False)
class CohortTable:
    """Raw tabular cohort.

    ``values[j]`` holds column j: float64 with NaN for a missing continuous
    cell, int64 category codes with -1 for a missing categorical cell.
    """

    columns: tuple
    values: tuple
    survival_months: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        n = len(self.survival_months)
        if len(self.values) != len(self.columns):
            raise SchemaError("one value array per column is required")
        for col, v in zip(self.columns, self.values):
            if len(v) != n:
                raise SchemaError("column length differs from survival length", column=col.name)
        if np.any(self.survival_months < 0):
            raise SchemaError("negative survival time")
        if not np.isin(self.event, (0, 1)).all():
            raise SchemaError("event must be 0 or 1")

    def __len__(self):
        return len(self.survival_months)

    @property
    def names(self):
        return [c.name for c in self.columns]

    def missing(self) -> np.ndarray:
        """N x n_columns boolean missingness matrix."""
        cols = []
        for col, v in zip(self.columns, self.values):
            cols.append(v < 0 if col.is_categorical else np.isnan(v))
        return np.stack(cols, axis=1) if cols else np.zeros((len(self), 0), bool)

    def subset(self, idx) -> "CohortTable":
        idx = np.asarray(idx)
        return CohortTable(
            self.columns,
            tuple(v[idx] for v in self.values),
            self.survival_months[idx],
            self.event[idx],
        )

    def cell(self, i, j):
        """Human-readable value of one cell, None if missing."""
        col, v = self.columns[j], self.values[j][i]
        if col.is_categorical:
            return None if v < 0 else col.categories[v]
        return None if np.isnan(v) else float(v)


# --- CSV ---------------------------------------------------------------------

def _parse_kind(raw, name, col_idx):
    raw = raw.strip()
    if raw in ("cont", SURVIVAL, EVENT):
        return raw, ()
    if raw == "cat":
        return "cat", None
    if raw.startswith("cat[") and raw.endswith("]"):
        levels = tuple(s for s in raw[4:-1].split("|"))
        if not levels or any(s == "" for s in levels) or len(set(levels)) != len(levels):
            raise SchemaError(f"bad category list {raw!r}", row=2, column=name)
        return "cat", levels
    raise SchemaError(f"unknown column kind {raw!r}", row=2, column=name)


def read_csv(source) -> CohortTable:
    """Parse a cohort CSV from a path or a text stream."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise SchemaError("file needs a name row and a kind row")
    names, kinds = [s.strip() for s in rows[0]], rows[1]
    if len(kinds) != len(names):
        raise SchemaError("kind row length differs from header", row=2)
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise SchemaError("duplicate column name", row=1, column=dup)
    parsed = [_parse_kind(k, n, j) for j, (n, k) in enumerate(zip(names, kinds))]
    for reserved in (SURVIVAL, EVENT):
        hits = [j for j, (n, (k, _)) in enumerate(zip(names, parsed)) if k == reserved or n == reserved]
        if len(hits) != 1:
            raise SchemaError(f"exactly one {reserved!r} column is required", row=2)
    body = rows[2:]
    if not body:
        raise SchemaError("no patient rows")

    surv_j = next(j for j, (n, (k, _)) in enumerate(zip(names, parsed)) if k == SURVIVAL or n == SURVIVAL)
    event_j = next(j for j, (n, (k, _)) in enumerate(zip(names, parsed)) if k == EVENT or n == EVENT)
    surv, event = [], []
    raw_cols = {j: [] for j in range(len(names)) if j not in (surv_j, event_j)}
    for r, row in enumerate(body, start=3):
        if len(row) != len(names):
            raise SchemaError(f"expected {len(names)} cells, got {len(row)}", row=r)
        try:
            t = float(row[surv_j])
        except ValueError:
            raise SchemaError("survival time is not numeric", row=r, column=names[surv_j]) from None
        if not math.isfinite(t) or t < 0:
            raise SchemaError("survival time must be finite and non-negative", row=r, column=names[surv_j])
        ev = row[event_j].strip()
        if ev not in ("0", "1"):
            raise SchemaError("event must be 0 or 1", row=r, column=names[event_j])
        surv.append(t)
        event.append(int(ev))
        for j in raw_cols:
            raw_cols[j].append((r, row[j].strip()))

    columns, values = [], []
    for j, cells in raw_cols.items():
        kind, levels = parsed[j]
        name = names[j]
        if kind == "cont":
            arr = np.empty(len(cells))
            for n, (r, s) in enumerate(cells):
                if s == "":
                    arr[n] = np.nan
                    continue
                try:
                    arr[n] = float(s)
                except ValueError:
                    raise SchemaError(f"non-numeric value {s!r}", row=r, column=name) from None
                if not math.isfinite(arr[n]):
                    raise SchemaError(f"non-finite value {s!r}", row=r, column=name)
            columns.append(Column(name, "cont"))
        else:
            if levels is None:
                levels = tuple(sorted({s for _, s in cells if s != ""}))
            lookup = {s: i for i, s in enumerate(levels)}
            arr = np.empty(len(cells), dtype=np.int64)
            for n, (r, s) in enumerate(cells):
                if s == "":
                    arr[n] = -1
                elif s in lookup:
                    arr[n] = lookup[s]
                else:
                    raise SchemaError(f"undeclared category {s!r}", row=r, column=name)
            columns.append(Column(name, "cat", levels))
        values.append(arr)
    return CohortTable(tuple(columns), tuple(values), np.array(surv), np.array(event, dtype=np.int64))


load_csv = read_csv


def write_csv(table: CohortTable, dest) -> None:
    """Write a table in the two-header-row format; floats use repr (round-trip exact)."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.names + [SURVIVAL, EVENT])
    kinds = ["cont" if not c.is_categorical else "cat[" + "|".join(c.categories) + "]" for c in table.columns]
    w.writerow(kinds + [SURVIVAL, EVENT])
    for i in range(len(table)):
        row = []
        for j in range(len(table.columns)):
            v = table.cell(i, j)
            row.append("" if v is None else (repr(v) if isinstance(v, float) else v))
        row += [repr(float(table.survival_months[i])), str(int(table.event[i]))]
        w.writerow(row)
    text = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


# --- preprocessing -----------------------------------------------------------

@dataclass(frozen=True)
class FeatureGroup:
    name: str
    kind: str
    columns: tuple  # indices into the encoded matrix


@dataclass(frozen=True, eq=False)
class EncodedCohort:
    features: np.ndarray       # N x d, missing cells hold 0
    availability: np.ndarray   # N x d bool, constant within a group
    groups: tuple              # FeatureGroup per original feature
    column_names: tuple
    time_bin: np.ndarray       # int, 0..T-1
    event: np.ndarray          # int, event forced to 0 beyond the horizon
    time_months: np.ndarray    # survival clipped to the horizon
    T: int
    unit_months: float

    def __len__(self):
        return len(self.event)

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx) -> "EncodedCohort":
        idx = np.asarray(idx)
        return EncodedCohort(
            self.features[idx], self.availability[idx], self.groups, self.column_names,
            self.time_bin[idx], self.event[idx], self.time_months[idx], self.T, self.unit_months,
        )

    def group_availability(self) -> np.ndarray:
        """N x n_groups boolean."""
        return np.stack([self.availability[:, g.columns[0]] for g in self.groups], axis=1)

    def replace(self, **changes) -> "EncodedCohort":
        fields_ = dict(self.__dict__)
        fields_.update(changes)
        return EncodedCohort(**fields_)


def n_bins(unit_months: float, horizon_months: float) -> int:
    ratio = horizon_months / unit_months
    T = int(round(ratio))
    if unit_months <= 0 or abs(ratio - T) > 1e-9 or T < 1:
        raise ParameterError(f"unit {unit_months} does not divide horizon {horizon_months}")
    return T


def discretize(survival_months, event, unit_months: float, horizon_months: float = DEFAULT_HORIZON_MONTHS):
    """Map continuous survival to (bin, event, clipped months, T).

    Patients surviving to the horizon are kept as censored in the last bin.
    """
    T = n_bins(unit_months, horizon_months)
    surv = np.asarray(survival_months, dtype=np.float64)
    ev = np.asarray(event, dtype=np.int64).copy()
    beyond = surv >= horizon_months
    ev[beyond] = 0
    s = np.minimum(np.floor(surv / unit_months).astype(np.int64), T - 1)
    return s, ev, np.minimum(surv, horizon_months), T


@dataclass
class Preprocessor:
    """Train-fitted z-scoring and one-hot maps."""

    columns: tuple
    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)   # name -> tuple of category codes kept
    groups: tuple = ()
    column_names: tuple = ()

    @classmethod
    def fit(cls, train: CohortTable) -> "Preprocessor":
        pre = cls(train.columns)
        groups, names, start = [], [], 0
        for col, v in zip(train.columns, train.values):
            if col.is_categorical:
                seen = tuple(int(c) for c in range(len(col.categories)) if np.any(v == c))
                if not seen:
                    raise DegenerateColumnError(f"categorical column {col.name!r} has no available training cell")
                pre.levels[col.name] = seen
                width = len(seen)
                names += [f"{col.name}={col.categories[c]}" for c in seen]
            else:
                avail = v[~np.isnan(v)]
                if avail.size == 0:
                    raise DegenerateColumnError(f"column {col.name!r} has no available training cell")
                sd = avail.std()
                if not sd > 0:
                    raise DegenerateColumnError(f"column {col.name!r} has zero variance")
                pre.means[col.name] = float(avail.mean())
                pre.stds[col.name] = float(sd)
                width = 1
                names.append(col.name)
            groups.append(FeatureGroup(col.name, col.kind, tuple(range(start, start + width))))
            start += width
        pre.groups = tuple(groups)
        pre.column_names = tuple(names)
        return pre

    @property
    def d(self):
        return len(self.column_names)

    def to_dict(self) -> dict:
        return {
            "columns": [[c.name, c.kind, list(c.categories)] for c in self.columns],
            "means": self.means,
            "stds": self.stds,
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Preprocessor":
        columns = tuple(Column(n, k, tuple(c)) for n, k, c in raw["columns"])
        pre = cls(columns, dict(raw["means"]), dict(raw["stds"]),
                  {k: tuple(v) for k, v in raw["levels"].items()})
        groups, names, start = [], [], 0
        for col in columns:
            if col.is_categorical:
                kept = pre.levels[col.name]
                names += [f"{col.name}={col.categories[c]}" for c in kept]
                width = len(kept)
            else:
                names.append(col.name)
                width = 1
            groups.append(FeatureGroup(col.name, col.kind, tuple(range(start, start + width))))
            start += width
        pre.groups, pre.column_names = tuple(groups), tuple(names)
        return pre

    def transform(self, table: CohortTable):
        """Return (features, availability) for ``table``."""
        if [c.name for c in table.columns] != [c.name for c in self.columns]:
            raise EncodingError("column set differs from the fitted table")
        n = len(table)
        X = np.zeros((n, self.d))
        A = np.zeros((n, self.d), dtype=bool)
        for col, v, g in zip(table.columns, table.values, self.groups):
            if col.is_categorical:
                kept = self.levels[col.name]
                fitted = next(c for c in self.columns if c.name == col.name).categories
                for i, code in enumerate(v):
                    if code < 0:
                        continue
                    label = col.categories[code]
                    try:
                        pos = kept.index(fitted.index(label))
                    except ValueError:
                        raise EncodingError(
                            f"category {label!r} of column {col.name!r} unseen in training rows"
                        ) from None
                    X[i, g.columns[pos]] = 1.0
                    A[i, list(g.columns)] = True
            else:
                ok = ~np.isnan(v)
                j = g.columns[0]
                X[ok, j] = (v[ok] - self.means[col.name]) / self.stds[col.name]
                A[ok, j] = True
        return X, A

    def encode(self, table: CohortTable, unit_months: float,
               horizon_months: float = DEFAULT_HORIZON_MONTHS) -> EncodedCohort:
        X, A = self.transform(table)
        s, ev, months, T = discretize(table.survival_months, table.event, unit_months, horizon_months)
        return EncodedCohort(X, A, self.groups, self.column_names, s, ev, months, T, float(unit_months))


def fit_apply_preprocessor(train: CohortTable, eval: CohortTable, unit_months: float,
                           horizon_months: float = DEFAULT_HORIZON_MONTHS):
    pre = Preprocessor.fit(train)
    return (
        pre.encode(train, unit_months, horizon_months),
        pre.encode(eval, unit_months, horizon_months),
        pre,
    )


# --- synthetic cohorts -------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    """Weibull proportional-hazards cohort.

    Hazard ``scale * shape * t**(shape-1) * exp(beta . x)`` in months.
    ``levels[j] == 0`` makes feature j a standard-normal continuous feature;
    ``levels[j] >= 2`` makes it categorical with uniform levels whose integer
    code enters the linear predictor. Censoring is an independent exponential
    clock with rate ``censor_rate`` per month; cells go missing completely at
    random with probability ``missing_rate``.
    """

    beta: tuple = (1.0, -1.0, 0.5, 0.0, 0.0, 0.0)
    levels: tuple | None = None
    scale: float = 0.015
    shape: float = 1.2
    missing_rate: float = 0.3
    censor_rate: float = 0.01

    def feature_levels(self):
        return tuple(self.levels) if self.levels is not None else (0,) * len(self.beta)

    def validate(self):
        if not 0 <= self.missing_rate < 1:
            raise ParameterError("missing_rate must lie in [0, 1)")
        if self.scale <= 0 or self.shape <= 0 or self.censor_rate < 0:
            raise ParameterError("scale and shape must be positive, censor_rate non-negative")
        if len(self.feature_levels()) != len(self.beta):
            raise ParameterError("levels and beta differ in length")
        if any(k == 1 or k < 0 for k in self.feature_levels()):
            raise ParameterError("levels entries must be 0 (continuous) or >= 2")


def draw_covariates(rng: np.random.Generator, n: int, levels) -> np.ndarray:
    cols = []
    for k in levels:
        cols.append(rng.standard_normal(n) if k == 0 else rng.integers(0, k, n).astype(np.float64))
    return np.stack(cols, axis=1)


def generate_synthetic(n: int, spec: GeneratorSpec | None = None, seed: int = 0,
                       names: Sequence[str] | None = None) -> CohortTable:
    spec = spec or GeneratorSpec()
    spec.validate()
    if n < 1:
        raise ParameterError("n must be at least 1")
    rng = np.random.default_rng(seed)
    levels = spec.feature_levels()
    p = len(levels)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    X = draw_covariates(rng, n, levels)
    eta = X @ np.asarray(spec.beta, dtype=np.float64)
    u = rng.random(n)
    event_time = (-np.log1p(-u) / (spec.scale * np.exp(eta))) ** (1.0 / spec.shape)
    if spec.censor_rate > 0:
        censor_time = rng.exponential(1.0 / spec.censor_rate, n)
    else:
        censor_time = np.full(n, np.inf)
    observed = np.minimum(event_time, censor_time)
    event = (event_time <= censor_time).astype(np.int64)
    missing = rng.random((n, p)) < spec.missing_rate

    columns, values = [], []
    for j, k in enumerate(levels):
        if k == 0:
            v = X[:, j].copy()
            v[missing[:, j]] = np.nan
            columns.append(Column(names[j], "cont"))
        else:
            v = X[:, j].astype(np.int64)
            v[missing[:, j]] = -1
            columns.append(Column(names[j], "cat", tuple(f"L{c}" for c in range(k))))
        values.append(v)
    return CohortTable(tuple(columns), tuple(values), observed, event)


def true_risk(table: CohortTable, spec: GeneratorSpec) -> np.ndarray:
    """Generator linear predictor with missing cells at their population mean."""
    eta = np.zeros(len(table))
    for col, v, b, k in zip(table.columns, table.values, spec.beta, spec.feature_levels()):
        if col.is_categorical:
            x = np.where(v < 0, (k - 1) / 2.0, v.astype(np.float64))
        else:
            x = np.where(np.isnan(v), 0.0, v)
        eta += b * x
    return eta


# --- folds -------------------------------------------------------------------

class FoldSplit(NamedTuple):
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def stratified_kfold(event, k: int = 5, seed: int = 0, val_fraction: float = 0.2) -> list:
    """Stratified k-fold on the event indicator with a stratified validation
    hold-out carved from each training portion.

    ``event`` may be an event array or anything with an ``event`` attribute.
    """
    event = np.asarray(getattr(event, "event", event))
    if k < 2:
        raise StratificationError("k must be at least 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(event), dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.flatnonzero(event == c)
        if 0 < len(idx) < k:
            raise StratificationError(f"event class {c} has {len(idx)} members, fewer than k={k}")
        if len(idx) == 0:
            continue
        perm = rng.permutation(idx)
        fold_of[perm] = (offset + np.arange(len(perm))) % k
        offset = (offset + len(perm)) % k
    splits = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        rest = np.flatnonzero(fold_of != f)
        val_parts = []
        for c in (0, 1):
            idx = rest[event[rest] == c]
            n_val = int(round(val_fraction * len(idx)))
            val_parts.append(rng.permutation(idx)[:n_val])
        val = np.sort(np.concatenate(val_parts))
        train = np.setdiff1d(rest, val)
        splits.append(FoldSplit(train, val, test))
    return splits
