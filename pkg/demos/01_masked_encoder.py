"""
Masked transformer on a single patient
======================================

Each feature becomes a token: a one-hot position plus its value. Missing
features are masked out of attention and pooling, so whatever is stored in
their slot has no effect on the prediction.
"""
import numpy as np

from masksurv.model import MaskedSurvivalTransformer, cumulative_incidence, embed_tokens, profile_config

tokens, mask = embed_tokens([0.5, np.nan, 1.2], [True, False, True])
print("tokens\n", tokens[0])
print("mask", mask[0])

# a small randomly initialised encoder with six yearly bins
model = MaskedSurvivalTransformer(profile_config("toy", T=6, d=3, seed=0))
print("parameters:", model.n_parameters())

x = np.array([[0.5, 0.0, 1.2]])
a = np.array([[True, False, True]])
y = model.predict(x, a)
print("hazard per bin ", np.round(y[0], 4), "sum =", y.sum())
print("cumulative incidence", np.round(cumulative_incidence(y)[0], 4))

# the missing slot can hold anything
y_junk = model.predict(np.array([[0.5, 999.0, 1.2]]), a)
print("identical with junk in the masked slot:", np.array_equal(y, y_junk))
