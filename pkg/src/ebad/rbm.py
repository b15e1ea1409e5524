"""Binary restricted Boltzmann machine with contrastive divergence training.

The model assigns energy

    E(v, h) = -a.v - b.h - v.W.h

to a visible vector v in {0,1}^M and hidden vector h in {0,1}^K, with
factorized conditionals in both directions. Patch pixels in [0, 1] are
used directly in the data-dependent statistics (Bernoulli-mean
convention); Gibbs chains binarize by sampling.

Exact enumeration utilities (partition function, likelihood, gradient)
are provided for small models; they back the oracle tests and are not
used on real-size models.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .utils import all_binary_states, as_rng, bernoulli, sigmoid, softplus

# Exact enumeration is O(2^min(M, K)); keep it in test territory.
_MAX_ENUM_UNITS = 24


@dataclass(frozen=True)
class RbmParams:
    """RBM parameters: visible bias a (M,), hidden bias b (K,), weights W (M, K)."""

    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.visible_bias, dtype=np.float64)
        b = np.asarray(self.hidden_bias, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if a.ndim != 1 or b.ndim != 1 or w.shape != (a.size, b.size):
            raise ValueError("inconsistent parameter shapes")
        if not (np.isfinite(a).all() and np.isfinite(b).all() and np.isfinite(w).all()):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "visible_bias", a)
        object.__setattr__(self, "hidden_bias", b)
        object.__setattr__(self, "weights", w)

    @property
    def n_visible(self):
        return self.visible_bias.size

    @property
    def n_hidden(self):
        return self.hidden_bias.size


@dataclass(frozen=True)
class TrainConfig:
    """Contrastive-divergence training settings."""

    epochs: int = 500
    learning_rate: float = 0.1
    cd_steps: int = 1
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.cd_steps < 1 or self.batch_size < 1:
            raise ValueError("invalid training configuration")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def init_params(n_visible, n_hidden, rng, weight_scale=0.01):
    """Zero biases, Normal(0, weight_scale^2) weights."""
    rng = as_rng(rng)
    return RbmParams(
        visible_bias=np.zeros(n_visible),
        hidden_bias=np.zeros(n_hidden),
        weights=weight_scale * rng.standard_normal((n_visible, n_hidden)),
    )


def energy(v, h, params):
    """Joint energy of one (v, h) configuration."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return float(
        -params.visible_bias @ v
        - params.hidden_bias @ h
        - v @ params.weights @ h
    )


def hidden_cond(v, params):
    """P(h_k = 1 | v) for a vector (M,) or batch (N, M)."""
    v = np.asarray(v, dtype=np.float64)
    return sigmoid(params.hidden_bias + v @ params.weights)


def visible_cond(h, params):
    """P(v_m = 1 | h) for a vector (K,) or batch (N, K)."""
    h = np.asarray(h, dtype=np.float64)
    return sigmoid(params.visible_bias + h @ params.weights.T)


def gibbs_step(v, params, rng):
    """One alternating Gibbs step from visible state v.

    Samples h' ~ Bernoulli(P(h|v)) then v' ~ Bernoulli(P(v|h')) and
    returns (v', h'). Works on single vectors and batches.
    """
    rng = as_rng(rng)
    h_new = bernoulli(rng, hidden_cond(v, params))
    v_new = bernoulli(rng, visible_cond(h_new, params))
    return v_new, h_new


def reconstruct(v, params):
    """Deterministic reconstruction through hidden probabilities.

    h_r = P(h | v), v_r = P(v = 1 | h_r) with probabilities used as
    states. Returns (v_r, h_r).
    """
    h_r = hidden_cond(v, params)
    v_r = sigmoid(params.visible_bias + h_r @ params.weights.T)
    return v_r, h_r


def cd_update(batch, params, cfg, rng):
    """One contrastive-divergence parameter update on a minibatch.

    The data term uses the rows as-is with analytic hidden
    probabilities; the model term uses the binary chain state after
    ``cfg.cd_steps`` Gibbs steps started at each row. Returns updated
    parameters; the inputs are not modified.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if batch.shape[1] != params.n_visible:
        raise ValueError(f"batch has {batch.shape[1]} columns, model expects {params.n_visible}")
    rng = as_rng(rng)

    h_data = hidden_cond(batch, params)
    v_model = batch
    for _ in range(cfg.cd_steps):
        v_model, h_model = gibbs_step(v_model, params, rng)

    n = batch.shape[0]
    lr = cfg.learning_rate
    da = lr * (batch.mean(axis=0) - v_model.mean(axis=0))
    db = lr * (h_data.mean(axis=0) - h_model.mean(axis=0))
    dw = lr * (batch.T @ h_data - v_model.T @ h_model) / n
    return RbmParams(
        visible_bias=params.visible_bias + da,
        hidden_bias=params.hidden_bias + db,
        weights=params.weights + dw,
    )


def train_rbm(data, n_hidden, cfg, rng=None, init=None):
    """Train an RBM with minibatch CD.

    Rows are shuffled each epoch; minibatches of ``cfg.batch_size`` are
    consumed in order (a short final batch is used as-is).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    rng = as_rng(cfg.seed if rng is None else rng)
    params = init if init is not None else init_params(data.shape[1], n_hidden, rng)
    n = data.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            params = cd_update(batch, params, cfg, rng)
    return params


def free_energy(v, params):
    """F(v) = -a.v - sum_k softplus(b_k + v.W_k), rows or single vector."""
    v = np.asarray(v, dtype=np.float64)
    act = params.hidden_bias + v @ params.weights
    return -(v @ params.visible_bias) - softplus(act).sum(axis=-1)


def log_partition_exact(params):
    """log Z by exact enumeration of the smaller layer.

    The other layer is marginalized analytically, which equals the full
    double sum with log-sum-exp stabilization. Only valid for small
    models; raises for more than ~24 units in the enumerated layer pair.
    """
    m, k = params.n_visible, params.n_hidden
    if min(m, k) > _MAX_ENUM_UNITS:
        raise ValueError("model too large for exact enumeration")
    if k <= m:
        states = all_binary_states(k)
        act = params.visible_bias + states @ params.weights.T
        terms = states @ params.hidden_bias + softplus(act).sum(axis=1)
    else:
        states = all_binary_states(m)
        terms = -free_energy(states, params)
    return float(logsumexp(terms))


def exact_log_likelihood(data, params):
    """Mean log-likelihood of rows under the exactly normalized model."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return float(np.mean(-free_energy(data, params)) - log_partition_exact(params))


def exact_model_moments(params):
    """E[v], E[h], E[v h^T] under the model by visible enumeration."""
    states = all_binary_states(params.n_visible)
    log_w = -free_energy(states, params)
    p = np.exp(log_w - logsumexp(log_w))
    h_given_v = hidden_cond(states, params)
    ev = p @ states
    eh = p @ h_given_v
    evh = (states * p[:, None]).T @ h_given_v
    return ev, eh, evh


def exact_gradient(data, params):
    """Exact log-likelihood gradient (da, db, dW) by enumeration.

    Data statistics use the rows as-is with analytic hidden
    probabilities; model statistics come from full enumeration.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    h_data = hidden_cond(data, params)
    ev, eh, evh = exact_model_moments(params)
    da = data.mean(axis=0) - ev
    db = h_data.mean(axis=0) - eh
    dw = data.T @ h_data / data.shape[0] - evh
    return da, db, dw


class BernoulliRbm(BaseEstimator, TransformerMixin):
    """Sklearn-style estimator wrapper around the CD training loop.

    Parameters
    ----------
    n_hidden : int
        Hidden layer size.
    epochs, learning_rate, cd_steps, batch_size :
        Contrastive-divergence settings, see TrainConfig.
    random_state : int or numpy Generator, optional
        Seed for weight init, shuffling and Gibbs sampling.

    Attributes
    ----------
    params_ : RbmParams
        Trained parameters.
    """

    def __init__(self, n_hidden=100, epochs=500, learning_rate=0.1,
                 cd_steps=1, batch_size=100, random_state=None):
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.cd_steps = cd_steps
        self.batch_size = batch_size
        self.random_state = random_state

    def _validate(self, X):
        X = check_array(X, dtype=np.float64)
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("inputs must lie in [0, 1]")
        return X

    def fit(self, X, y=None):
        X = self._validate(X)
        cfg = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            cd_steps=self.cd_steps,
            batch_size=self.batch_size,
        )
        self.params_ = train_rbm(X, self.n_hidden, cfg, rng=as_rng(self.random_state))
        return self

    def transform(self, X):
        """Hidden unit probabilities for each row."""
        check_is_fitted(self, "params_")
        return hidden_cond(self._validate(X), self.params_)

    def reconstruct(self, X):
        """Deterministic reconstructions of each row."""
        check_is_fitted(self, "params_")
        v_r, _ = reconstruct(self._validate(X), self.params_)
        return v_r

    def reconstruction_errors(self, X):
        """Euclidean norm of v - v_r per row."""
        X = self._validate(X)
        check_is_fitted(self, "params_")
        v_r, _ = reconstruct(X, self.params_)
        return np.linalg.norm(X - v_r, axis=1)
