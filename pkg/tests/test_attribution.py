import itertools

import numpy as np
import pytest

from masksurv.attribution import (
    attribute,
    cohort_baseline,
    shapley_from_values,
    shapley_values,
    summarize,
)
from masksurv.data import EncodedCohort, FeatureGroup
from masksurv.errors import ComplexityError, EmptyPoolError
from masksurv.model import MaskedSurvivalTransformer, profile_config


class AdditiveModel:
    """Hazard logits are a weighted sum over available features."""

    def __init__(self, W):
        self.W = np.asarray(W, dtype=float)   # d x T

    def predict_cif(self, values, availability):
        z = (np.where(availability, values, 0.0)) @ self.W
        y = np.exp(z - z.max(axis=1, keepdims=True))
        return np.cumsum(y / y.sum(axis=1, keepdims=True), axis=1)


def singletons(d):
    return tuple(FeatureGroup(f"f{j}", "cont", (j,)) for j in range(d))


def coalition_value(model, x, a, groups, members, baseline):
    if not members:
        return baseline
    avail = np.zeros_like(a)
    for g in members:
        avail[list(groups[g].columns)] = a[list(groups[g].columns)]
    return model.predict_cif(x[None], avail[None])[0]


def permutation_oracle(model, x, a, groups, baseline):
    players = [g for g, grp in enumerate(groups) if a[grp.columns[0]]]
    phi = np.zeros((len(groups), len(baseline)))
    perms = list(itertools.permutations(players))
    for order in perms:
        seen = []
        for p in order:
            before = coalition_value(model, x, a, groups, seen, baseline)
            seen.append(p)
            phi[p] += coalition_value(model, x, a, groups, seen, baseline) - before
    return phi / len(perms)


def test_from_values_two_player_game():
    # v(0)=0, v(1)=1, v(2)=2, v(12)=5: phi1 = (1 + 3)/2, phi2 = (2 + 4)/2
    np.testing.assert_allclose(shapley_from_values(np.array([0.0, 1.0, 2.0, 5.0])), [2.0, 3.0])


def test_null_player():
    W = np.random.default_rng(0).standard_normal((4, 5))
    W[2] = 0.0
    m = AdditiveModel(W)
    x = np.array([0.4, -1.2, 3.0, 0.7])
    phi = shapley_values(m, x, np.ones(4, bool), singletons(4), np.full(5, 0.2).cumsum())
    assert np.all(np.abs(phi[2]) <= 1e-10)


def random_transformer(d, seed, T=5):
    return MaskedSurvivalTransformer(profile_config("toy", T=T, d=d, seed=seed))


def test_efficiency_and_permutation_oracle():
    rng = np.random.default_rng(1)
    for seed in range(4):
        d = 3 + seed % 4          # up to 6 players
        m = random_transformer(d, seed)
        x = rng.standard_normal(d)
        a = np.ones(d, bool)
        base = np.cumsum(rng.dirichlet(np.ones(5)))
        phi = shapley_values(m, x, a, singletons(d), base)
        full = m.predict_cif(x[None], a[None])[0]
        np.testing.assert_allclose(phi.sum(axis=0), full - base, atol=1e-9)
        np.testing.assert_allclose(phi, permutation_oracle(m, x, a, singletons(d), base), atol=1e-12)


def test_symmetric_players_share_credit():
    W = np.random.default_rng(2).standard_normal((3, 4))
    W[1] = W[0]
    phi = shapley_values(AdditiveModel(W), np.array([1.0, 1.0, -0.5]), np.ones(3, bool), singletons(3),
                         np.array([0.25, 0.5, 0.75, 1.0]))
    np.testing.assert_allclose(phi[0], phi[1], atol=1e-12)


def test_missing_feature_gets_zero_and_groups_move_together():
    m = random_transformer(4, 7)
    groups = (FeatureGroup("a", "cont", (0,)), FeatureGroup("b", "cat", (1, 2)), FeatureGroup("c", "cont", (3,)))
    x = np.array([0.3, 0.0, 1.0, -2.0])
    a = np.array([True, True, True, False])
    base = np.linspace(0.2, 1.0, 5)
    phi = shapley_values(m, x, a, groups, base)
    assert phi.shape == (3, 5)
    assert np.all(phi[2] == 0.0)
    np.testing.assert_allclose(phi, permutation_oracle(m, x, a, groups, base), atol=1e-12)
    np.testing.assert_allclose(phi.sum(axis=0), m.predict_cif(x[None], a[None])[0] - base, atol=1e-9)
    assert shapley_values(m, x, a, groups, base, value_time=2).shape == (3,)


def test_limits():
    m = random_transformer(3, 0)
    with pytest.raises(EmptyPoolError):
        shapley_values(m, np.zeros(3), np.zeros(3, bool), singletons(3), np.ones(5))
    with pytest.raises(ComplexityError):
        shapley_values(m, np.zeros(3), np.ones(3, bool), singletons(3), np.ones(5), max_players=2)


def test_summaries():
    assert summarize(np.array([[[-0.3]], [[0.2]]]).reshape(1, 2, 1), ["b", "a"]) == [("b", 0.3), ("a", 0.2)]
    assert summarize(np.zeros((2, 3, 4)), ["c", "a", "b"]) == [("a", 0.0), ("b", 0.0), ("c", 0.0)]
    grouped = summarize(np.array([[[1.0], [3.0], [0.5]]]), ["x=A", "x=B", "y"], {"x": [0, 1], "y": [2]})
    assert grouped == [("x", 2.0), ("y", 0.5)]


def test_attribute_cohort():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 3))
    A = rng.random((6, 3)) > 0.3
    A[:, 0] = True
    n = 6
    cohort = EncodedCohort(np.where(A, X, 0), A, singletons(3), ("f0", "f1", "f2"), np.zeros(n, int),
                           np.zeros(n, int), np.ones(n), 5, 12.0)
    m = random_transformer(3, 1)
    base = cohort_baseline(m, cohort)
    np.testing.assert_allclose(base, m.predict_cif(X * A, A).mean(axis=0))
    report = attribute(m, cohort, base)
    assert report.phi.shape == (6, 3, 5)
    assert np.all(report.phi[~A] == 0.0)
    assert [name for name, _ in report.summary()][0] in ("f0", "f1", "f2")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="noise-feature tokens still shift the pooled mean; ratio is about 2")
def test_dominant_feature_margin():
    from masksurv.data import GeneratorSpec, Preprocessor, generate_synthetic, stratified_kfold
    from masksurv.training import TrainConfig, train

    table = generate_synthetic(1000, GeneratorSpec(beta=(2.0, 0.0, 0.0, 0.0, 0.0, 0.0), missing_rate=0.0), seed=6)
    split = stratified_kfold(table.event, 5, seed=6)[0]
    pre = Preprocessor.fit(table.subset(split.train))
    tr, va, te = (pre.encode(table.subset(ix), 12.0) for ix in split)
    m = MaskedSurvivalTransformer(profile_config("toy", T=tr.T, d=tr.d, seed=6))
    train(m, tr, va, TrainConfig(lr=1e-3, max_epochs=30, early_stop_patience=8, lr_patience=4, seed=6))
    base = cohort_baseline(m, tr)
    phi = np.stack([shapley_values(m, te.features[i], te.availability[i], te.groups, base) for i in range(60)])
    ranking = summarize(phi, [g.name for g in te.groups])
    assert ranking[0][0] == "x1"
    assert ranking[0][1] >= 3 * ranking[1][1]
