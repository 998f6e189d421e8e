import numpy as np
import pytest

from masksurv.data import EncodedCohort, FeatureGroup
from masksurv.errors import ConfigurationError
from masksurv.gradcheck import toy_batch
from masksurv.model import MaskedSurvivalTransformer, profile_config
from masksurv.training import TrainConfig, evaluate_loss, train


def cohort(n, seed, d=6, T=6, events=None):
    X, A, s, k = toy_batch(n, d, T, seed)
    if events is not None:
        k = np.full(n, events)
    groups = tuple(FeatureGroup(f"f{j}", "cont", (j,)) for j in range(d))
    return EncodedCohort(X, A, groups, tuple(g.name for g in groups), s, k, 12.0 * s + 6, T, 12.0)


def model(seed=0):
    return MaskedSurvivalTransformer(profile_config("toy", T=6, d=6, seed=seed))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(max_epochs=10, early_stop_patience=10)
    with pytest.raises(ConfigurationError):
        TrainConfig(w1=0.0, w2=0.0)


def test_zero_learning_rate_changes_nothing():
    m = model()
    before = m.state()
    res = train(m, cohort(16, 1), cohort(8, 2), TrainConfig(lr=0.0, max_epochs=5, early_stop_patience=3,
                                                            lr_patience=2))
    for k, v in m.state().items():
        np.testing.assert_array_equal(v, before[k])
    assert len(set(res.val_curve)) == 1


def test_overfits_eight_patients():
    data = cohort(8, 3)
    m = model()
    cfg = TrainConfig(batch_size=8, lr=1e-3, max_epochs=500, early_stop_patience=499, lr_patience=498)
    initial, _, _ = evaluate_loss(m, data, cfg)
    res = train(m, data, data, cfg)
    assert res.train_curve[-1] * 8 < 0.1 * initial
    assert res.best_val_loss < 0.1 * initial


def test_deterministic():
    cfg = TrainConfig(lr=1e-3, max_epochs=6, early_stop_patience=5, lr_patience=4, seed=4)
    a, b = model(), model()
    ra = train(a, cohort(40, 5), cohort(10, 6), cfg)
    rb = train(b, cohort(40, 5), cohort(10, 6), cfg)
    assert ra.best_epoch == rb.best_epoch and ra.val_curve == rb.val_curve
    for k, v in a.state().items():
        np.testing.assert_array_equal(v, b.state()[k])


def test_schedule_and_checkpoint_invariants():
    cfg = TrainConfig(lr=3e-3, max_epochs=30, early_stop_patience=6, lr_patience=2, seed=1)
    m = model()
    val = cohort(12, 8)
    res = train(m, cohort(40, 7), val, cfg)
    assert np.all(np.diff(res.lr_curve) <= 0)
    assert res.best_val_loss == min(res.val_curve) == res.val_curve[res.best_epoch]
    # the model is left at the best-epoch parameters
    assert evaluate_loss(m, val, cfg)[0] == pytest.approx(res.best_val_loss, rel=1e-12)


def test_ranking_only_needs_pairs():
    with pytest.raises(ConfigurationError):
        train(model(), cohort(20, 9, events=0), cohort(8, 10),
              TrainConfig(w1=0.0, w2=1.0, max_epochs=3, early_stop_patience=2, lr_patience=1))


def test_likelihood_only_arm_runs():
    res = train(model(), cohort(20, 11), cohort(8, 12),
                TrainConfig(w1=1.0, w2=0.0, lr=1e-3, max_epochs=3, early_stop_patience=2, lr_patience=1))
    assert res.epochs_run >= 1 and np.isfinite(res.best_val_loss)
