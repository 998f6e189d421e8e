"""Cross-validated comparison of the masked transformer against
imputation + baseline pipelines, and the loss-term ablation.

Every pipeline sees the same stratified folds. Patients with no available
feature at all cannot be scored by the transformer; they are dropped from
every pipeline's training and test sets so all rows stay paired, and the
count is reported per fold.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import impute
from .baselines import bin_right_edges, cox_predict_cif, fit_cox, fit_mlp_deephit
from .config import RunConfig, derive_seed, parse_time_unit, unit_label
from .data import CohortTable, Preprocessor, discretize, stratified_kfold
from .errors import MaskSurvError
from .metrics import ct_index, mean_and_se
from .model import MaskedSurvivalTransformer
from .training import TrainConfig, train

log = logging.getLogger(__name__)

TRANSFORMER = "transformer"
NO_IMPUTER = "-"
ABLATION_ARMS = ((1.0, 1.0), (1.0, 0.0), (0.0, 1.0))


@dataclass
class FoldReport:
    model: str
    imputer: str
    unit_months: float
    fold: int
    ct_index: float
    n_test: int
    n_unpredictable: int
    test_idx: list
    best_epoch: int | None = None
    epochs_run: int | None = None
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    lr_curve: list = field(default_factory=list)
    val_l1: float | None = None
    val_l2: float | None = None
    error_by_bin: list = field(default_factory=list)
    loss_weights: tuple | None = None
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def pipeline(self):
        return (self.model, self.imputer)

    def to_dict(self):
        return asdict(self)


def error_by_bin(cif, time_bin, event, time_months, unit_months) -> list:
    """Mean and standard error of |predicted - true| months for uncensored
    patients, grouped by their true bin. The point prediction is the centre
    of the most probable bin."""
    F = np.asarray(cif)
    y = np.diff(F, axis=1, prepend=0.0)
    pred = unit_months * (np.argmax(y, axis=1) + 0.5)
    err = np.abs(pred - np.asarray(time_months))
    rows = []
    dead = np.asarray(event) == 1
    for b in np.unique(np.asarray(time_bin)[dead]):
        sel = dead & (time_bin == b)
        m, se = mean_and_se(err[sel])
        rows.append({"bin": int(b), "n": int(sel.sum()), "mean_abs_error": m, "se": se})
    return rows


def _curves(result):
    return dict(
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        train_curve=list(result.train_curve),
        val_curve=list(result.val_curve),
        lr_curve=list(result.lr_curve),
        val_l1=result.best_val_terms[0],
        val_l2=result.best_val_terms[1],
    )


def _fold_data(table: CohortTable, split, unit, horizon):
    train_tab, val_tab, test_tab = (table.subset(ix) for ix in split)
    pre = Preprocessor.fit(train_tab)
    enc = [pre.encode(t, unit, horizon) for t in (train_tab, val_tab, test_tab)]
    keep = [e.availability.any(axis=1) for e in enc]
    tr, va, te = (e.subset(np.flatnonzero(k)) for e, k in zip(enc, keep))
    test_idx = np.asarray(split.test)[keep[2]]
    return tr, va, te, test_idx, int((~keep[2]).sum())


def run_fold(table: CohortTable, split, fold: int, unit: float, config: RunConfig,
             arms=None, baselines: bool = True) -> list:
    """All pipelines of one (time unit, fold) cell.

    ``arms`` lists (w1, w2) loss weightings for the transformer; the default
    is the single arm of the run's trainer config.
    """
    tr, va, te, test_idx, n_bad = _fold_data(table, split, unit, config.horizon_months)
    base_cfg = config.train_config()
    arms = arms or ((base_cfg.w1, base_cfg.w2),)
    common = dict(unit_months=unit, fold=fold, n_test=len(te), n_unpredictable=n_bad,
                  test_idx=[int(i) for i in test_idx])
    reports = []

    def score(cif):
        try:
            return ct_index(cif, te.time_bin, te.event)
        except MaskSurvError as exc:
            raise type(exc)(f"fold {fold}, unit {unit:g}: {exc}") from exc

    for w1, w2 in arms:
        model_seed = derive_seed(config.seed, "model", unit, fold)
        train_seed = derive_seed(config.seed, "train", unit, fold)
        mcfg = config.model_config(te.T, te.d, seed=model_seed)
        tcfg = config.train_config(w1=w1, w2=w2, seed=train_seed)
        model = MaskedSurvivalTransformer(mcfg)
        try:
            res = train(model, tr, va, tcfg)
        except MaskSurvError as exc:
            raise type(exc)(f"fold {fold}, unit {unit:g}, weights ({w1:g},{w2:g}): {exc}") from exc
        cif = model.predict_cif(te.features, te.availability)
        reports.append(FoldReport(
            model=TRANSFORMER, imputer=NO_IMPUTER, ct_index=score(cif), **common, **_curves(res),
            error_by_bin=error_by_bin(cif, te.time_bin, te.event, te.time_months, unit),
            loss_weights=(w1, w2), config={"model": asdict(mcfg), "train": tcfg.to_dict()},
            seeds={"model": model_seed, "train": train_seed},
        ))

    if not baselines:
        return reports
    bc = config.baselines
    for imp in bc.imputers:
        state = impute.fit(imp, tr, bc.knn_neighbors)
        tr_i, va_i, te_i = (impute.transform(state, c) for c in (tr, va, te))
        for name in bc.models:
            if name == "cox":
                cox = fit_cox(tr_i, max_iter=bc.cox_max_iter)
                cif = cox_predict_cif(cox, te_i.features, bin_right_edges(te.T, unit))
                extra = dict(config={"max_iter": bc.cox_max_iter, "converged": bool(cox.converged),
                                     "n_iter": cox.n_iter})
            elif name == "mlp":
                seed = derive_seed(config.seed, "mlp", imp, unit, fold)
                tcfg = config.train_config(seed=derive_seed(config.seed, "mlp-train", imp, unit, fold))
                mlp, res = fit_mlp_deephit(tr_i, va_i, tcfg, hidden=bc.mlp_hidden, seed=seed)
                cif = mlp.predict_cif(te_i.features)
                extra = dict(_curves(res), loss_weights=(tcfg.w1, tcfg.w2),
                             config={"hidden": list(bc.mlp_hidden), "train": tcfg.to_dict()},
                             seeds={"model": seed, "train": tcfg.seed})
            else:
                raise MaskSurvError(f"unknown baseline model {name!r}")
            reports.append(FoldReport(
                model=name, imputer=imp, ct_index=score(cif), **common,
                error_by_bin=error_by_bin(cif, te.time_bin, te.event, te.time_months, unit), **extra,
            ))
    return reports


def _run_task(args):
    return run_fold(*args[:5], **args[5])


def make_folds(table: CohortTable, config: RunConfig):
    _, event, _, _ = discretize(table.survival_months, table.event, config.horizon_months, config.horizon_months)
    return stratified_kfold(event, config.folds, seed=derive_seed(config.seed, "folds"))


def _execute(tasks, n_jobs):
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    return [r for batch in results for r in batch]


def _warn_profile(config):
    if config.profile == "paper":
        warnings.warn("the 'paper' profile (12 layers, 17 heads, up to 1500 epochs) is very slow "
                      "on a numpy engine", RuntimeWarning, stacklevel=3)


@dataclass
class CrossValResult:
    reports: list
    units: tuple
    folds: list

    def aggregate(self) -> dict:
        """(model, imputer) -> unit -> (mean, se, n_folds) of test Ct-index."""
        table = {}
        for r in self.reports:
            table.setdefault(r.pipeline, {}).setdefault(r.unit_months, []).append(r.ct_index)
        return {
            p: {u: (*mean_and_se(v), len(v)) for u, v in sorted(units.items())}
            for p, units in table.items()
        }

    def pipelines(self):
        seen = []
        for r in self.reports:
            if r.pipeline not in seen:
                seen.append(r.pipeline)
        baselines = [p for p in seen if p[0] != TRANSFORMER]
        return sorted(baselines, key=lambda p: (p[0], p[1])) + [p for p in seen if p[0] == TRANSFORMER]

    def table_rows(self) -> list:
        """Rows mirroring a model x imputer by time-unit results table,
        cells formatted as 'mean ± standard error' in percent."""
        agg = self.aggregate()
        header = ["model", "imputer"] + [unit_label(u) for u in self.units]
        rows = [header]
        for p in self.pipelines():
            cells = []
            for u in self.units:
                m, se, _ = agg[p][u]
                cells.append(f"{100 * m:.2f} ± {100 * se:.2f}")
            rows.append([p[0], p[1]] + cells)
        return rows


def cross_validate(table: CohortTable, config: RunConfig, units=None, baselines: bool = True) -> CrossValResult:
    _warn_profile(config)
    units = tuple(units) if units is not None else config.time_units
    folds = make_folds(table, config)
    tasks = [(table, split, f, u, config, {"baselines": baselines})
             for u in units for f, split in enumerate(folds)]
    reports = _execute(tasks, config.n_jobs)
    reports.sort(key=lambda r: (r.unit_months, r.fold))
    return CrossValResult(reports, units, folds)


@dataclass
class AblationResult:
    reports: list
    unit_months: float

    def summary(self) -> list:
        out = []
        for w1, w2 in ABLATION_ARMS:
            rs = [r for r in self.reports if tuple(r.loss_weights) == (w1, w2)]
            if not rs:
                continue
            ct_m, ct_se = mean_and_se([r.ct_index for r in rs])
            ep_m, ep_se = mean_and_se([r.best_epoch + 1 for r in rs])
            out.append({
                "arm": "+".join(n for n, w in (("L1", w1), ("L2", w2)) if w),
                "w1": w1, "w2": w2,
                "ct_index_mean": ct_m, "ct_index_se": ct_se,
                "epochs_to_best_mean": ep_m, "epochs_to_best_se": ep_se,
                "epochs_run_mean": float(np.mean([r.epochs_run for r in rs])),
                "val_l1_mean": float(np.mean([r.val_l1 for r in rs])),
                "val_l2_mean": float(np.mean([r.val_l2 for r in rs])),
                "folds": [r.fold for r in rs],
            })
        return out


def ablation(table: CohortTable, config: RunConfig, unit=None) -> AblationResult:
    """Train the transformer with (L1+L2), L1 only and L2 only on identical folds."""
    _warn_profile(config)
    unit = parse_time_unit(unit if unit is not None else config.ablation_unit)
    folds = make_folds(table, config)
    tasks = [(table, split, f, unit, config, {"arms": ABLATION_ARMS, "baselines": False})
             for f, split in enumerate(folds)]
    reports = _execute(tasks, config.n_jobs)
    reports.sort(key=lambda r: (r.fold, ABLATION_ARMS.index(tuple(r.loss_weights))))
    return AblationResult(reports, unit)


def resolved_protocol(table_or_d, config: RunConfig, units=None) -> dict:
    """Model and trainer settings per time unit, without training anything."""
    d = table_or_d if isinstance(table_or_d, int) else Preprocessor.fit(table_or_d).d
    units = tuple(units) if units is not None else config.time_units
    out = {"profile": config.profile, "folds": config.folds, "units": {}}
    for u in units:
        _, _, _, T = discretize(np.zeros(1), np.zeros(1, dtype=np.int64), u, config.horizon_months)
        out["units"][unit_label(u)] = {
            "unit_months": u,
            "T": T,
            "model": asdict(config.model_config(T, d)),
            "train": config.train_config().to_dict(),
        }
    out["baselines"] = asdict(config.baselines)
    return out
