"""Baseline survival models for the imputation pipelines.

* Cox proportional hazards, Breslow handling of tied event times, fitted by
  Newton-Raphson with step halving.
* A DeepHit-style MLP emitting a softmax hazard vector, trained with the same
  loss and loop as the transformer.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .data import EncodedCohort
from .errors import ContractError, DivergenceError, FitError
from .model import cumulative_incidence, xavier_uniform
from .tensor import Tensor

DIVERGENCE_NORM = 50.0


# --- Cox ---------------------------------------------------------------------

def _risk_set_sums(eta, X, times):
    """Per distinct event time: sum over the risk set {j: t_j >= t} of w, w x, w x x^T."""
    order = np.argsort(-times, kind="stable")
    w = np.exp(eta[order])
    Xo = X[order]
    cw = np.cumsum(w)
    cwx = np.cumsum(w[:, None] * Xo, axis=0)
    cwxx = np.cumsum(w[:, None, None] * Xo[:, :, None] * Xo[:, None, :], axis=0)
    return order, cw, cwx, cwxx


def _event_groups(times, events):
    """Distinct observed event times, ascending."""
    return np.unique(times[events == 1])


def breslow_partial_loglik(beta, X, times, events, with_derivatives=False):
    """Breslow partial log-likelihood (optionally gradient and Hessian)."""
    X = np.asarray(X, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    beta = np.asarray(beta, dtype=np.float64)
    eta = X @ beta
    order, cw, cwx, cwxx = _risk_set_sums(eta, X, times)
    sorted_desc = times[order]
    ev_times = _event_groups(times, events)
    # last position in descending order with time >= t
    pos = len(times) - 1 - np.searchsorted(sorted_desc[::-1], ev_times, side="left")
    ll = 0.0
    p = X.shape[1]
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    for t, j in zip(ev_times, pos):
        dead = (times == t) & (events == 1)
        d = dead.sum()
        W = cw[j]
        ll += eta[dead].sum() - d * np.log(W)
        if with_derivatives:
            xbar = cwx[j] / W
            grad += X[dead].sum(axis=0) - d * xbar
            hess -= d * (cwxx[j] / W - np.outer(xbar, xbar))
    if with_derivatives:
        return ll, grad, hess
    return ll


def breslow_baseline(beta, X, times, events):
    """Breslow cumulative baseline hazard at the distinct event times."""
    eta = np.asarray(X) @ beta
    ev_times = _event_groups(times, events)
    w = np.exp(eta)
    increments = np.array([
        ((times == t) & (events == 1)).sum() / w[times >= t].sum() for t in ev_times
    ])
    return ev_times, np.cumsum(increments)


@dataclass(frozen=True, eq=False)
class CoxModel:
    beta: np.ndarray               # over all encoded columns (reference columns hold 0)
    event_times: np.ndarray
    baseline_cumhaz: np.ndarray    # H0 just after each event time
    loglik_history: tuple = ()
    converged: bool = True
    n_iter: int = 0

    def cumulative_baseline(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.event_times, t, side="right")
        return np.concatenate([[0.0], self.baseline_cumhaz])[idx]

    def linear_predictor(self, X):
        return np.asarray(X) @ self.beta


def newton_cox(X, times, events, max_iter: int = 100, tol: float = 1e-6, max_halvings: int = 30):
    """Maximise the Breslow partial likelihood; returns (beta, history, converged, n_iter)."""
    X = np.asarray(X, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if not events.any():
        raise FitError("Cox fit needs at least one event")
    beta = np.zeros(X.shape[1])
    ll, g, H = breslow_partial_loglik(beta, X, times, events, with_derivatives=True)
    history = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eig = np.linalg.eigvalsh(-H)
        if eig.size and eig[0] <= 1e-12 * max(1.0, eig[-1]):
            raise DivergenceError(
                f"information matrix is singular at |beta| = {np.linalg.norm(beta):.1f}; "
                "data may be separable or columns collinear"
            )
        step = np.linalg.solve(-H, g)
        # a vanishing gradient alone is not enough: under separation the
        # gradient decays while Newton keeps taking unit-size steps
        if np.max(np.abs(g), initial=0.0) < tol and np.max(np.abs(step), initial=0.0) < np.sqrt(tol):
            converged = True
            it -= 1
            break
        t = 1.0
        for _ in range(max_halvings):
            cand = beta + t * step
            ll_new = breslow_partial_loglik(cand, X, times, events)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            converged = np.max(np.abs(g)) < 1e3 * tol
            break
        beta = cand
        if np.linalg.norm(beta) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"Cox coefficients diverged (|beta| = {np.linalg.norm(beta):.1f} > {DIVERGENCE_NORM}); "
                "data may be separable"
            )
        ll, g, H = breslow_partial_loglik(beta, X, times, events, with_derivatives=True)
        history.append(ll)
    else:
        converged = np.max(np.abs(g)) < tol
    if not converged:
        warnings.warn(f"Cox fit did not converge in {max_iter} iterations; returning best iterate",
                      RuntimeWarning, stacklevel=2)
    return beta, tuple(history), converged, it


def _identifiable_columns(cohort: EncodedCohort):
    """Drop the reference (first) column of each one-hot block and constant columns."""
    keep = np.ones(cohort.d, dtype=bool)
    for g in cohort.groups:
        if g.kind == "cat":
            keep[g.columns[0]] = False
    keep &= cohort.features.std(axis=0) > 0
    return keep


def fit_cox(train: EncodedCohort, max_iter: int = 100, tol: float = 1e-6) -> CoxModel:
    """Cox model on a fully imputed cohort using the (horizon-clipped) months."""
    if not train.availability.all():
        raise ContractError("Cox fit needs a fully imputed cohort")
    keep = _identifiable_columns(train)
    X = train.features[:, keep]
    beta_k, history, converged, n_iter = newton_cox(X, train.time_months, train.event, max_iter, tol)
    beta = np.zeros(train.d)
    beta[keep] = beta_k
    ev_times, H0 = breslow_baseline(beta_k, X, train.time_months, train.event)
    return CoxModel(beta, ev_times, H0, history, converged, n_iter)


def bin_right_edges(T: int, unit_months: float) -> np.ndarray:
    return unit_months * (np.arange(T) + 1.0)


def cox_predict_cif(model: CoxModel, X, edges) -> np.ndarray:
    """F(t | x) = 1 - exp(-H0(t) exp(beta . x)) at each edge; (N, T)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H0 = model.cumulative_baseline(edges)
    risk = np.exp(model.linear_predictor(X))
    return 1.0 - np.exp(-np.outer(risk, H0))


# --- DeepHit-style MLP -------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    d: int
    T: int
    hidden: tuple = (128, 128)
    seed: int = 0


class MlpHazardModel:
    """ReLU MLP on imputed features with a softmax head over T bins."""

    def __init__(self, config: MlpConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        c = self.config
        rng = np.random.default_rng(c.seed)
        sizes = (c.d, *c.hidden, c.T)
        p = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            p[f"fc{i}.w"] = Tensor(xavier_uniform(rng, a, b), requires_grad=True, name=f"fc{i}.w")
            p[f"fc{i}.b"] = Tensor(np.zeros(b), requires_grad=True, name=f"fc{i}.b")
        return p

    def forward(self, values, availability=None) -> Tensor:
        h = Tensor(np.atleast_2d(values))
        n = len(self.config.hidden) + 1
        for i in range(n):
            h = tc.add(tc.matmul(h, self.params[f"fc{i}.w"]), self.params[f"fc{i}.b"])
            if i < n - 1:
                h = tc.relu(h)
        return tc.softmax(h)

    def predict(self, values, availability=None) -> np.ndarray:
        return self.frozen().forward(values).data

    def predict_cif(self, values, availability=None) -> np.ndarray:
        return cumulative_incidence(self.predict(values))

    def frozen(self) -> "MlpHazardModel":
        return MlpHazardModel(self.config, {k: Tensor(v.data, name=k) for k, v in self.params.items()})

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    def n_parameters(self):
        return int(sum(t.data.size for t in self.params.values()))


def fit_mlp_deephit(train: EncodedCohort, val: EncodedCohort, train_cfg, hidden=(128, 128), seed: int = 0):
    """Train the MLP baseline on imputed cohorts; returns (model, TrainResult)."""
    from .training import train as run_training

    if not (train.availability.all() and val.availability.all()):
        raise ContractError("MLP baseline needs fully imputed cohorts")
    model = MlpHazardModel(MlpConfig(train.d, train.T, tuple(hidden), seed))
    result = run_training(model, train, val, train_cfg)
    return model, result
