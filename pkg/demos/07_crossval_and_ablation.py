"""
Cross-validated comparison and loss ablation
============================================

Every pipeline sees the same stratified folds. The table mirrors a model x
imputer by time-unit layout with mean ± standard error in percent. The
ablation retrains the transformer with L1+L2, L1 alone and L2 alone.
"""
from masksurv.config import RunConfig
from masksurv.experiment import ablation, cross_validate

config = RunConfig(
    seed=0,
    data={"generator": {"n": 600, "beta": [1.5, -1.5, 1.0, -1.0, 0.8, 0.0],
                        "levels": [0, 0, 0, 0, 3, 2], "missing_rate": 0.3, "seed": 1}},
    time_units=("1y", "2y"),
    profiles={"toy": {"train": {"max_epochs": 30, "early_stop_patience": 8, "lr_patience": 4}}},
    n_jobs=4,
)
table = config.load_cohort()

result = cross_validate(table, config)
for row in result.table_rows():
    print("  ".join(f"{c:>16s}" for c in row))

print()
for arm in ablation(table, config, "1y").summary():
    print(f"{arm['arm']:>6s}  Ct {arm['ct_index_mean']:.4f} ± {arm['ct_index_se']:.4f}  "
          f"epochs to best {arm['epochs_to_best_mean']:.1f}  "
          f"val L1 {arm['val_l1_mean']:.1f}  val L2 {arm['val_l2_mean']:.1f}")
