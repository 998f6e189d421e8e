"""Command-line entry point: ``masksurv <command> [options]``.

Commands: generate, train, evaluate, crossval, ablate, attribute, gradcheck.
Exit status is 0 on success, 2 for usage/configuration errors and 1 for
runtime failures (message prefixed with the module that raised).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import attribution, reporting
from .config import derive_seed, finish_manifest, load_config, parse_time_unit, start_manifest
from .data import Preprocessor, discretize, stratified_kfold, write_csv
from .errors import ConfigurationError, MaskSurvError
from .experiment import ablation, cross_validate, resolved_protocol
from .gradcheck import gradient_suite
from .metrics import ct_index
from .model import MaskedSurvivalTransformer, load_checkpoint, save_checkpoint
from .training import train

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if getattr(args, "time_unit", None):
        overrides["time_units"] = [parse_time_unit(u) for u in args.time_unit]
    if getattr(args, "data", None):
        overrides["data"] = {"csv": str(Path(args.data).resolve())}
    return load_config(args.config, **overrides)


def _out(args):
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def cmd_generate(args):
    cfg = _config(args)
    if "generator" not in cfg.data:
        raise UsageError("generate needs a generator section in the config")
    out = _out(args)
    manifest = start_manifest(out, cfg, "generate")
    n, spec, seed, names = cfg.generator()
    from .data import generate_synthetic
    table = generate_synthetic(n, spec, seed, names)
    write_csv(table, out / "cohort.csv")
    finish_manifest(out, manifest, n_patients=len(table), censored_fraction=float(1 - table.event.mean()))
    print(f"wrote {out / 'cohort.csv'} ({len(table)} patients)")


def cmd_train(args):
    cfg = _config(args)
    out = _out(args)
    unit = cfg.time_units[0]
    table = cfg.load_cohort()
    manifest = start_manifest(out, cfg, "train", resolved_protocol(table, cfg, [unit]))
    _, event, _, _ = discretize(table.survival_months, table.event, cfg.horizon_months, cfg.horizon_months)
    # hold out a stratified validation fraction for early stopping
    split = stratified_kfold(event, 5, seed=derive_seed(cfg.seed, "train-split"))[0]
    fit_idx = np.sort(np.concatenate([split.train, split.test]))
    pre = Preprocessor.fit(table.subset(fit_idx))
    tr = pre.encode(table.subset(fit_idx), unit, cfg.horizon_months)
    va = pre.encode(table.subset(split.val), unit, cfg.horizon_months)
    tr = tr.subset(np.flatnonzero(tr.availability.any(axis=1)))
    va = va.subset(np.flatnonzero(va.availability.any(axis=1)))
    model = MaskedSurvivalTransformer(cfg.model_config(tr.T, tr.d, seed=derive_seed(cfg.seed, "model")))
    res = train(model, tr, va, cfg.train_config(seed=derive_seed(cfg.seed, "train")))
    baseline = attribution.cohort_baseline(model, tr)
    save_checkpoint(out / "checkpoint.npz", model, extra={
        "preprocessor": pre.to_dict(),
        "unit_months": unit,
        "horizon_months": cfg.horizon_months,
        "empty_coalition_cif": baseline.tolist(),
        "best_epoch": res.best_epoch,
    })
    reporting._write_csv(out / "loss_curve.csv", [["epoch", "train_loss", "val_loss", "lr"]] + [
        [e, repr(a), repr(b), repr(c)] for e, (a, b, c) in enumerate(zip(res.train_curve, res.val_curve, res.lr_curve))
    ])
    finish_manifest(out, manifest, best_epoch=res.best_epoch, epochs_run=res.epochs_run)
    print(f"best epoch {res.best_epoch}, validation loss {res.best_val_loss:.4f}; checkpoint {out / 'checkpoint.npz'}")


def _load_for_eval(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    cfg = _config(args)
    model, extra = load_checkpoint(args.checkpoint)
    pre = Preprocessor.from_dict(extra["preprocessor"])
    table = cfg.load_cohort()
    cohort = pre.encode(table, extra["unit_months"], extra["horizon_months"])
    return cfg, model, extra, cohort


def cmd_evaluate(args):
    cfg, model, extra, cohort = _load_for_eval(args)
    ok = cohort.availability.any(axis=1)
    sub = cohort.subset(np.flatnonzero(ok))
    score = ct_index(model.predict_cif(sub.features, sub.availability), sub.time_bin, sub.event)
    result = {"ct_index": score, "n_scored": int(ok.sum()), "n_unpredictable": int((~ok).sum())}
    if args.out:
        out = Path(args.out)
        manifest = start_manifest(out, cfg, "evaluate")
        (out / "evaluation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        finish_manifest(out, manifest)
    print(f"Ct-index {score:.4f} on {result['n_scored']} patients ({result['n_unpredictable']} unpredictable)")


def cmd_attribute(args):
    cfg, model, extra, cohort = _load_for_eval(args)
    out = _out(args)
    manifest = start_manifest(out, cfg, "attribute")
    patients = np.flatnonzero(cohort.availability.any(axis=1))
    if args.max_patients is not None:
        patients = patients[: args.max_patients]
    report = attribution.attribute(model, cohort, np.array(extra["empty_coalition_cif"]), patients)
    reporting.write_attribution(out, report)
    finish_manifest(out, manifest)
    for name, value in report.summary():
        print(f"{name:>20s}  {value:.5f}")


def cmd_crossval(args):
    cfg = _config(args)
    out = _out(args)
    table = cfg.load_cohort()
    manifest = start_manifest(out, cfg, "crossval", resolved_protocol(table, cfg))
    if args.dry_run:
        finish_manifest(out, manifest, dry_run=True)
        print(f"resolved protocol written to {out / 'manifest.json'}")
        return
    result = cross_validate(table, cfg)
    reporting.write_crossval(out, result)
    finish_manifest(out, manifest)
    for row in result.table_rows():
        print("  ".join(f"{c:>16s}" for c in row))


def cmd_ablate(args):
    cfg = _config(args)
    out = _out(args)
    table = cfg.load_cohort()
    unit = parse_time_unit(args.time_unit[0]) if args.time_unit else cfg.ablation_unit
    manifest = start_manifest(out, cfg, "ablate", resolved_protocol(table, cfg, [unit]))
    result = ablation(table, cfg, unit)
    reporting.write_ablation(out, result)
    finish_manifest(out, manifest)
    for s in result.summary():
        print(f"{s['arm']:>6s}  Ct-index {s['ct_index_mean']:.4f} ± {s['ct_index_se']:.4f}  "
              f"epochs to best {s['epochs_to_best_mean']:.1f}")


def cmd_gradcheck(args):
    profile = args.profile or "toy"
    errors = gradient_suite(profile, max_coords=args.max_coords)
    worst = 0.0
    for name, err in errors.items():
        flag = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:>6s}  max relative error {err:.3e}  {flag}")
        worst = max(worst, err)
    if worst > GRADCHECK_TOLERANCE:
        raise MaskSurvError(f"gradient check exceeded {GRADCHECK_TOLERANCE:g}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
    "attribute": cmd_attribute,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="masksurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--profile", choices=["toy", "paper"])
        p.add_argument("--time-unit", action="append", help="1m, 1y, 2y, 6m, ... (repeatable)")
        p.add_argument("--data", help="cohort CSV (overrides the config's data section)")
        if name in ("evaluate", "attribute"):
            p.add_argument("--checkpoint")
        if name == "attribute":
            p.add_argument("--max-patients", type=int)
        if name == "crossval":
            p.add_argument("--dry-run", action="store_true", help="resolve and record the protocol only")
        if name == "gradcheck":
            p.add_argument("--max-coords", type=int, default=24,
                           help="coordinates sampled per parameter tensor")
    return parser


def _origin(exc):
    tb = exc.__traceback__
    module = "masksurv"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("masksurv"):
            module = name
        tb = tb.tb_next
    return module


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"masksurv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except MaskSurvError as exc:
        print(f"{_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"{_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
