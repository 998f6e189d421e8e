import numpy as np
import pytest

from masksurv import impute
from masksurv.baselines import (
    CoxModel,
    bin_right_edges,
    breslow_baseline,
    breslow_partial_loglik,
    cox_predict_cif,
    fit_cox,
    fit_mlp_deephit,
    newton_cox,
)
from masksurv.data import GeneratorSpec, Preprocessor, generate_synthetic, stratified_kfold
from masksurv.errors import DivergenceError, FitError
from masksurv.metrics import ct_index, kaplan_meier
from masksurv.training import TrainConfig


def two_group_cohort(n, hazard_ratio, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n).astype(float)
    t_event = rng.exponential(1.0 / (0.1 * hazard_ratio ** x))
    t_cens = rng.exponential(20.0, n)
    return x[:, None], np.minimum(t_event, t_cens), (t_event <= t_cens).astype(int)


def test_cox_recovers_log_two():
    X, t, e = two_group_cohort(2000, 2.0, 0)
    beta, history, converged, _ = newton_cox(X, t, e)
    assert converged
    assert abs(beta[0] - np.log(2)) < 0.1
    assert np.all(np.diff(history) >= -1e-12)


def test_cox_null_effect():
    X, t, e = two_group_cohort(2000, 1.0, 1)
    beta, *_ = newton_cox(X, t, e)
    assert abs(beta[0]) < 0.1


def test_breslow_partial_likelihood_by_hand():
    x = np.array([0.0, 1.0, 2.0, 1.0])
    t = np.array([1.0, 2.0, 2.0, 3.0])
    e = np.array([1, 1, 1, 0])
    b = 0.5
    w = np.exp(b * x)
    expected = (b * x[0] - np.log(w.sum())) + (b * x[1] + b * x[2] - 2 * np.log(w[1:].sum()))
    assert breslow_partial_loglik([b], x[:, None], t, e) == pytest.approx(expected, abs=1e-12)


def test_breslow_derivatives_match_finite_differences():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 3))
    t = rng.integers(1, 8, 30).astype(float)
    e = rng.integers(0, 2, 30)
    beta = rng.standard_normal(3) * 0.3
    _, g, H = breslow_partial_loglik(beta, X, t, e, with_derivatives=True)
    h = 1e-6
    for j in range(3):
        step = np.eye(3)[j] * h
        num = (breslow_partial_loglik(beta + step, X, t, e) - breslow_partial_loglik(beta - step, X, t, e)) / (2 * h)
        assert g[j] == pytest.approx(num, rel=1e-6, abs=1e-8)
        gp = breslow_partial_loglik(beta + step, X, t, e, True)[1]
        gm = breslow_partial_loglik(beta - step, X, t, e, True)[1]
        np.testing.assert_allclose(H[j], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-7)


def test_null_baseline_tracks_kaplan_meier():
    _, t, e = two_group_cohort(2000, 1.0, 3)
    times, H = breslow_baseline(np.zeros(1), np.zeros((len(t), 1)), t, e)
    km = kaplan_meier(t, e)
    grid = np.quantile(t[e == 1], [0.1, 0.3, 0.5, 0.7])
    S_na = np.exp(-H[np.searchsorted(times, grid, side="right") - 1])
    np.testing.assert_allclose(S_na, km(grid), rtol=0.02)


def test_separable_data_diverges():
    x = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    t = np.array([4.0, 5.0, 6.0, 1.0, 2.0, 3.0])
    with pytest.raises(DivergenceError):
        newton_cox(x[:, None], t, np.ones(6, int))


def test_no_events():
    with pytest.raises(FitError):
        newton_cox(np.ones((3, 1)), np.ones(3), np.zeros(3, int))


def test_cox_cif_exponential_case():
    model = CoxModel(np.zeros(1), np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    F = cox_predict_cif(model, np.zeros((1, 1)), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(F[0], 1 - np.exp(-np.array([1.0, 2.0, 3.0])))


def test_cox_cif_by_hand_and_monotone():
    model = CoxModel(np.array([np.log(2.0)]), np.array([5.0, 15.0]), np.array([0.1, 0.4]))
    edges = bin_right_edges(3, 10.0)
    np.testing.assert_array_equal(edges, [10.0, 20.0, 30.0])
    F = cox_predict_cif(model, np.array([[1.0], [0.0]]), edges)
    np.testing.assert_allclose(F[0], 1 - np.exp(-2 * np.array([0.1, 0.4, 0.4])))
    assert np.all(F[0] >= F[1])


def cohort(beta, seed, n=2000):
    spec = GeneratorSpec(beta=beta, missing_rate=0.2)
    t = generate_synthetic(n, spec, seed=seed)
    split = stratified_kfold(t.event, 5, seed=seed)[0]
    pre = Preprocessor.fit(t.subset(split.train))
    tr, va, te = (pre.encode(t.subset(ix), 12.0) for ix in split)
    state = impute.fit("mean", tr)
    return tuple(impute.transform(state, c) for c in (tr, va, te))


def test_fit_cox_on_encoded_cohort():
    tr, _, te = cohort((1.5, -1.5, 1.0, 0.0, 0.0, 0.0), 4)
    model = fit_cox(tr)
    F = cox_predict_cif(model, te.features, bin_right_edges(te.T, 12.0))
    assert ct_index(F, te.time_bin, te.event) > 0.7


FAST = TrainConfig(lr=1e-3, max_epochs=40, early_stop_patience=8, lr_patience=4, seed=0)


def test_mlp_learns_strong_signal():
    tr, va, _ = cohort((2.0, -2.0, 1.5, 0.0, 0.0, 0.0), 5)
    model, res = fit_mlp_deephit(tr, va, FAST, seed=1)
    assert ct_index(model.predict_cif(va.features), va.time_bin, va.event) > 0.65
    best = np.minimum.accumulate(res.val_curve)
    assert res.best_val_loss == best[-1]


def test_mlp_null_signal():
    tr, va, te = cohort((0.0,) * 6, 6)
    model, _ = fit_mlp_deephit(tr, va, FAST, seed=1)
    assert abs(ct_index(model.predict_cif(te.features), te.time_bin, te.event, ties="half") - 0.5) < 0.05
