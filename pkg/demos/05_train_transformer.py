"""
Training the masked transformer
===============================

Mini-batch Adam on L1 + L2 with the learning rate cut by 10x when the
validation loss stalls, and early stopping back to the best epoch.
"""
import numpy as np

from masksurv.data import GeneratorSpec, Preprocessor, generate_synthetic, stratified_kfold
from masksurv.metrics import ct_index
from masksurv.model import MaskedSurvivalTransformer, profile_config
from masksurv.training import TrainConfig, train

spec = GeneratorSpec(beta=(1.5, -1.5, 1.0, -1.0, 0.8, 0.0), levels=(0, 0, 0, 0, 3, 2), missing_rate=0.3)
table = generate_synthetic(1000, spec, seed=1)
split = stratified_kfold(table.event, 5, seed=0)[0]
pre = Preprocessor.fit(table.subset(split.train))
tr, va, te = (pre.encode(table.subset(ix), 12) for ix in split)
tr, va, te = (c.subset(np.flatnonzero(c.availability.any(axis=1))) for c in (tr, va, te))

model = MaskedSurvivalTransformer(profile_config("toy", T=tr.T, d=tr.d, seed=0))
cfg = TrainConfig(lr=1e-3, max_epochs=40, early_stop_patience=10, lr_patience=5)
res = train(model, tr, va, cfg)

for e in range(res.epochs_run):
    print(f"epoch {e:2d}  train {res.train_curve[e]:.4f}  val {res.val_curve[e]:9.2f}  lr {res.lr_curve[e]:.0e}")
print("best epoch", res.best_epoch)
print("test Ct-index", round(ct_index(model.predict_cif(te.features, te.availability), te.time_bin, te.event), 4))
