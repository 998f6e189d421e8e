"""Writers for run outputs: fold JSON reports and CSV tables of plot data."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .config import unit_label


def _write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_fold_reports(out_dir, reports):
    """One ``fold_<k>.json`` per fold holding every pipeline and time unit."""
    by_fold = {}
    for r in reports:
        by_fold.setdefault(r.fold, []).append(r.to_dict())
    for fold, items in sorted(by_fold.items()):
        _dump(Path(out_dir) / f"fold_{fold}.json", {"fold": fold, "reports": items})


def write_loss_curves(out_dir, reports, name="loss_curves.csv"):
    rows = [["model", "imputer", "unit", "fold", "w1", "w2", "epoch", "train_loss", "val_loss", "lr"]]
    for r in reports:
        if not r.train_curve:
            continue
        w1, w2 = r.loss_weights
        for e, (tl, vl, lr) in enumerate(zip(r.train_curve, r.val_curve, r.lr_curve)):
            rows.append([r.model, r.imputer, unit_label(r.unit_months), r.fold, w1, w2, e, repr(tl), repr(vl), repr(lr)])
    _write_csv(Path(out_dir) / name, rows)


def write_error_by_bin(out_dir, reports, name="error_by_bin.csv"):
    rows = [["model", "imputer", "unit", "fold", "bin", "n", "mean_abs_error_months", "se"]]
    for r in reports:
        for e in r.error_by_bin:
            rows.append([r.model, r.imputer, unit_label(r.unit_months), r.fold, e["bin"], e["n"],
                         repr(e["mean_abs_error"]), repr(e["se"])])
    _write_csv(Path(out_dir) / name, rows)


def write_crossval(out_dir, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "aggregate.csv", result.table_rows())
    long_rows = [["model", "imputer", "unit", "ct_index_mean", "ct_index_se", "n_folds"]]
    for p, units in result.aggregate().items():
        for u, (m, se, n) in units.items():
            long_rows.append([p[0], p[1], unit_label(u), repr(m), repr(se), n])
    _write_csv(out / "aggregate_long.csv", long_rows)
    write_fold_reports(out, result.reports)
    write_loss_curves(out, result.reports)
    write_error_by_bin(out, result.reports)


def write_ablation(out_dir, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    keys = ["arm", "w1", "w2", "ct_index_mean", "ct_index_se", "epochs_to_best_mean",
            "epochs_to_best_se", "epochs_run_mean", "val_l1_mean", "val_l2_mean"]
    rows = [keys] + [[s[k] if isinstance(s[k], str) else repr(s[k]) for k in keys] for s in summary]
    _write_csv(out / "ablation.csv", rows)
    write_fold_reports(out, result.reports)
    write_loss_curves(out, result.reports)


def write_attribution(out_dir, report, cohort_ids=None):
    """Long-format CSV (patient, feature, time, phi) plus a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = cohort_ids if cohort_ids is not None else report.patients
    rows = [["patient", "feature", "time", "phi"]]
    for n, pid in enumerate(ids):
        for f, name in enumerate(report.features):
            for t in range(report.phi.shape[2]):
                rows.append([int(pid), name, t, repr(float(report.phi[n, f, t]))])
    _write_csv(out / "attribution.csv", rows)
    _dump(out / "attribution_summary.json", {
        "importance": [{"feature": k, "mean_abs_phi": v} for k, v in report.summary()],
        "empty_coalition_value": [float(v) for v in report.baseline],
        "empty_coalition_definition": "training-cohort mean cumulative incidence",
        "n_patients": int(len(ids)),
    })
