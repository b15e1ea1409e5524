"""Two-ended deep Boltzmann machine for joint clustering and reconstruction.

The chain is v1 - h1 - h2 - v2 where both visible ends are clamped to
the same patch during inference and training:

    E = -a1.v1 - a2.v2 - b1.h1 - b2.h2 - v1.W1.h1 - h1.W2.h2 - h2.W3.v2

h1 is a small clustering layer (its thresholded mean-field activations
are the scene-region code) and h2 a large reconstruction layer.
Training is persistent contrastive divergence with a mean-field data
term; initial weights come from greedy layer-wise CD pretraining.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import rbm
from .utils import all_binary_states, as_rng, bernoulli, sigmoid, softplus


@dataclass(frozen=True)
class CrDbmParams:
    """Parameters of the clustering-reconstruction DBM.

    Shapes: a1, a2 (M,); b1 (K1,); b2 (K2,); W1 (M, K1); W2 (K1, K2);
    W3 (K2, M).
    """

    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    def __post_init__(self):
        arrays = {k: np.asarray(getattr(self, k), dtype=np.float64) for k in
                  ("a1", "a2", "b1", "b2", "w1", "w2", "w3")}
        m = arrays["a1"].size
        k1 = arrays["b1"].size
        k2 = arrays["b2"].size
        expected = {"a2": (m,), "w1": (m, k1), "w2": (k1, k2), "w3": (k2, m)}
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ValueError(f"{name} has shape {arrays[name].shape}, expected {shape}")
        for name, arr in arrays.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)

    @property
    def n_visible(self):
        return self.a1.size

    @property
    def n_clustering(self):
        return self.b1.size

    @property
    def n_reconstruction(self):
        return self.b2.size


@dataclass(frozen=True)
class MeanField:
    """Converged (or truncated) mean-field posteriors for one input."""

    mu1: np.ndarray
    mu2: np.ndarray
    iterations_used: int
    converged: bool


@dataclass
class PcdState:
    """Persistent chain states.

    h1 carries binary samples; v1, h2 and v2 store probabilities as
    states. All arrays have the chain count as the leading dimension.
    """

    v1: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    v2: np.ndarray

    @property
    def n_chains(self):
        return self.v1.shape[0]


@dataclass(frozen=True)
class DbmTrainConfig:
    """PCD training settings, including the pretraining stage."""

    epochs: int = 500
    learning_rate: float = 0.001
    batch_size: int = 100
    n_chains: int = 100
    pretrain_epochs: int = 50
    pretrain_learning_rate: float = 0.1
    mf_tol: float = 1e-4
    mf_max_iters: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.n_chains < 1:
            raise ValueError("invalid training configuration")
        if self.learning_rate <= 0 or self.pretrain_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.pretrain_epochs < 0 or self.mf_max_iters < 1 or self.mf_tol <= 0:
            raise ValueError("invalid training configuration")


def init_params(n_visible, n_clustering, n_reconstruction, rng, weight_scale=0.01):
    rng = as_rng(rng)
    return CrDbmParams(
        a1=np.zeros(n_visible),
        a2=np.zeros(n_visible),
        b1=np.zeros(n_clustering),
        b2=np.zeros(n_reconstruction),
        w1=weight_scale * rng.standard_normal((n_visible, n_clustering)),
        w2=weight_scale * rng.standard_normal((n_clustering, n_reconstruction)),
        w3=weight_scale * rng.standard_normal((n_reconstruction, n_visible)),
    )


def mt_energy(v1, v2, h1, h2, params):
    """Energy of one full configuration of the two-ended model."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    return float(
        -params.a1 @ v1
        - params.a2 @ v2
        - params.b1 @ h1
        - params.b2 @ h2
        - v1 @ params.w1 @ h1
        - h1 @ params.w2 @ h2
        - h2 @ params.w3 @ v2
    )


def cond_h1(v1, h2, params):
    """P(h1 = 1 | v1, h2); batched over leading dimension."""
    return sigmoid(params.b1 + np.asarray(v1) @ params.w1 + np.asarray(h2) @ params.w2.T)


def cond_h2(h1, v2, params):
    """P(h2 = 1 | h1, v2)."""
    return sigmoid(params.b2 + np.asarray(h1) @ params.w2 + np.asarray(v2) @ params.w3.T)


def cond_v1(h1, params):
    """P(v1 = 1 | h1)."""
    return sigmoid(params.a1 + np.asarray(h1) @ params.w1.T)


def cond_v2(h2, params):
    """P(v2 = 1 | h2)."""
    return sigmoid(params.a2 + np.asarray(h2) @ params.w3)


def mean_field_batch(v, params, tol=1e-4, max_iters=30):
    """Clamped mean-field for a batch of inputs fed to both visible ends.

    Iterates
        mu1 = sigmoid(b1 + v.W1 + W2.mu2)
        mu2 = sigmoid(b2 + mu1.W2 + W3.v)
    from mu2 = 0.5. The loop stops once re-evaluating the first
    equation moves mu1 by less than ``tol`` in max-abs norm; the second
    equation holds exactly at that point, so ``converged=True``
    certifies both fixed-point residuals are below ``tol``.

    Returns (mu1, mu2, iterations_used, converged).
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    pre1 = params.b1 + v @ params.w1
    pre2 = params.b2 + v @ params.w3.T
    mu2 = np.full((v.shape[0], params.n_reconstruction), 0.5)
    mu1 = sigmoid(pre1 + mu2 @ params.w2.T)
    mu2 = sigmoid(pre2 + mu1 @ params.w2)
    iterations = 1
    converged = False
    while True:
        mu1_next = sigmoid(pre1 + mu2 @ params.w2.T)
        if np.max(np.abs(mu1_next - mu1)) < tol:
            converged = True
            break
        if iterations >= max_iters:
            break
        mu1 = mu1_next
        mu2 = sigmoid(pre2 + mu1 @ params.w2)
        iterations += 1
    return mu1, mu2, iterations, converged


def mean_field(v, params, tol=1e-4, max_iters=30):
    """Mean-field posteriors for a single input vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("mean_field takes a single vector; use mean_field_batch")
    mu1, mu2, iters, conv = mean_field_batch(v[None, :], params, tol, max_iters)
    return MeanField(mu1=mu1[0], mu2=mu2[0], iterations_used=iters, converged=conv)


def init_pcd_state(n_chains, params, rng):
    """Fresh persistent chains from Bernoulli(0.5) states."""
    rng = as_rng(rng)
    shape_v = (n_chains, params.n_visible)
    return PcdState(
        v1=bernoulli(rng, np.full(shape_v, 0.5)),
        h1=bernoulli(rng, np.full((n_chains, params.n_clustering), 0.5)),
        h2=bernoulli(rng, np.full((n_chains, params.n_reconstruction), 0.5)),
        v2=bernoulli(rng, np.full(shape_v, 0.5)),
    )


def advance_chains(state, params, rng, sweeps=1):
    """Alternating block Gibbs sweeps over the persistent chains.

    Each sweep updates (h1, v2) from the current (v1, h2), then
    (v1, h2) from the new (h1, v2). Only h1 is binarized; the other
    layers keep their conditional probabilities as states.
    """
    rng = as_rng(rng)
    v1, h1, h2, v2 = state.v1, state.h1, state.h2, state.v2
    for _ in range(sweeps):
        h1 = bernoulli(rng, cond_h1(v1, h2, params))
        v2 = cond_v2(h2, params)
        v1 = cond_v1(h1, params)
        h2 = cond_h2(h1, v2, params)
    return PcdState(v1=v1, h1=h1, h2=h2, v2=v2)


def pcd_update(batch, params, state, cfg, rng):
    """One persistent-CD update on a minibatch.

    The data term clamps each row to both visible ends and uses
    mean-field hidden statistics; the model term advances the
    persistent chains one sweep. Returns (new params, new state).
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if batch.shape[1] != params.n_visible:
        raise ValueError("batch width does not match the model")
    rng = as_rng(rng)

    mu1, mu2, _, _ = mean_field_batch(batch, params, cfg.mf_tol, cfg.mf_max_iters)
    state = advance_chains(state, params, rng, 1)

    ns = batch.shape[0]
    nc = state.n_chains
    lr = cfg.learning_rate
    new = CrDbmParams(
        a1=params.a1 + lr * (batch.mean(axis=0) - state.v1.mean(axis=0)),
        a2=params.a2 + lr * (batch.mean(axis=0) - state.v2.mean(axis=0)),
        b1=params.b1 + lr * (mu1.mean(axis=0) - state.h1.mean(axis=0)),
        b2=params.b2 + lr * (mu2.mean(axis=0) - state.h2.mean(axis=0)),
        w1=params.w1 + lr * (batch.T @ mu1 / ns - state.v1.T @ state.h1 / nc),
        w2=params.w2 + lr * (mu1.T @ mu2 / ns - state.h1.T @ state.h2 / nc),
        w3=params.w3 + lr * (mu2.T @ batch / ns - state.h2.T @ state.v2 / nc),
    )
    return new, state


def _cd1_pretrain(data, n_hidden, epochs, learning_rate, batch_size, rng, up_scale=1.0):
    """Plain CD1 loop with an optional doubled bottom-up activation.

    ``up_scale=2`` trains the layer-pair RBM with P(h|v) computed from
    doubled input, compensating for the second input the hidden layer
    will receive once assembled into the DBM.
    """
    m = data.shape[1]
    a = np.zeros(m)
    b = np.zeros(n_hidden)
    w = 0.01 * rng.standard_normal((m, n_hidden))
    n = data.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[order[start : start + batch_size]]
            h_data = sigmoid(b + up_scale * batch @ w)
            h_samp = bernoulli(rng, h_data)
            v_model = bernoulli(rng, sigmoid(a + h_samp @ w.T))
            h_model = bernoulli(rng, sigmoid(b + up_scale * v_model @ w))
            k = batch.shape[0]
            a += learning_rate * (batch.mean(axis=0) - v_model.mean(axis=0))
            b += learning_rate * (h_data.mean(axis=0) - h_model.mean(axis=0))
            w += learning_rate * (batch.T @ h_data - v_model.T @ h_model) / k
    return a, b, w


def pretrain(data, dims, cfg, rng=None):
    """Greedy layer-wise initialization of the two-ended DBM.

    Trains one CD1 RBM per visible end: the clustering end v -> h1 with
    doubled bottom-up input (h1 receives a second, comparable-size
    input once assembled) and the reconstruction end v -> h2 plain,
    transposed into W3. The middle coupling W2 keeps its small random
    init. Zero pretraining epochs reduce to the random init path.
    """
    data = np.asarray(data, dtype=np.float64)
    m, k1, k2 = dims
    if data.ndim != 2 or data.shape[1] != m:
        raise ValueError("data width must match the visible size")
    rng = as_rng(cfg.seed if rng is None else rng)
    params = init_params(m, k1, k2, rng)
    if cfg.pretrain_epochs == 0:
        return params
    a1, b1, w1 = _cd1_pretrain(
        data, k1, cfg.pretrain_epochs, cfg.pretrain_learning_rate,
        cfg.batch_size, rng, up_scale=2.0,
    )
    a2, b2, u = _cd1_pretrain(
        data, k2, cfg.pretrain_epochs, cfg.pretrain_learning_rate,
        cfg.batch_size, rng, up_scale=1.0,
    )
    return CrDbmParams(a1=a1, a2=a2, b1=b1, b2=b2, w1=w1, w2=params.w2, w3=u.T)


def train_dbm(data, dims, cfg, rng=None):
    """Pretrain then run minibatch PCD. Returns the trained parameters."""
    data = np.asarray(data, dtype=np.float64)
    rng = as_rng(cfg.seed if rng is None else rng)
    params = pretrain(data, dims, cfg, rng=rng)
    state = init_pcd_state(cfg.n_chains, params, rng)
    n = data.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            params, state = pcd_update(batch, params, state, cfg, rng)
    return params


def cluster_code(v, params, tol=1e-4, max_iters=30):
    """Binary clustering code: thresholded mean-field h1 activations."""
    mf = mean_field(v, params, tol, max_iters)
    return (mf.mu1 > 0.5).astype(np.int64)


def cluster_codes(v_rows, params, tol=1e-4, max_iters=30):
    """Batched clustering codes, one row per input."""
    mu1, _, _, _ = mean_field_batch(v_rows, params, tol, max_iters)
    return (mu1 > 0.5).astype(np.int64)


def reconstruct_dbm(v, params, tol=1e-4, max_iters=30):
    """Reconstruction through the h2 mean-field posterior.

    v_r = P(v2 = 1 | h2 = mu2) for a vector or batch. Returns (v_r, mu2).
    """
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    _, mu2, _, _ = mean_field_batch(v, params, tol, max_iters)
    v_r = cond_v2(mu2, params)
    if single:
        return v_r[0], mu2[0]
    return v_r, mu2


def reduce_to_rbm(params, data, n_keep):
    """Distill the reconstruction end into a smaller RBM.

    Builds the base RBM (a2, b2, W3^T), scores each hidden column by
    its mean absolute weighted activation over the data,

        alpha_n = sum_i sum_m |w_mn * h_n(v_i)| / (N * M),

    and keeps the ``n_keep`` highest-scoring columns (ties broken
    toward the lower index). Returns (RbmParams, kept column indices).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("reduction requires at least one data row")
    base = rbm.RbmParams(
        visible_bias=params.a2,
        hidden_bias=params.b2,
        weights=params.w3.T,
    )
    k = base.n_hidden
    if not (1 <= n_keep <= k):
        raise ValueError(f"n_keep must be in [1, {k}]")
    h_tilde = rbm.hidden_cond(data, base)
    column_l1 = np.abs(base.weights).sum(axis=0)
    n, m = data.shape
    alpha = h_tilde.sum(axis=0) * column_l1 / (n * m)
    order = np.lexsort((np.arange(k), -alpha))
    keep = order[:n_keep]
    reduced = rbm.RbmParams(
        visible_bias=base.visible_bias.copy(),
        hidden_bias=base.hidden_bias[keep],
        weights=base.weights[:, keep],
    )
    return reduced, keep


def finetune_region_rbms(reduced, region_data, cfg, rng):
    """CD-finetune one reduced RBM per region.

    ``reduced`` and ``region_data`` are parallel lists. Regions with an
    empty dataset keep their reduced parameters and are flagged False
    in the returned mask.
    """
    if len(reduced) != len(region_data):
        raise ValueError("reduced params and region datasets must align")
    rng = as_rng(rng)
    tuned = []
    trained = []
    for params, data in zip(reduced, region_data):
        data = np.asarray(data, dtype=np.float64)
        if data.size == 0:
            tuned.append(params)
            trained.append(False)
            continue
        tuned.append(rbm.train_rbm(data, params.n_hidden, cfg, rng=rng, init=params))
        trained.append(True)
    return tuned, trained


def log_partition_exact(params):
    """log Z of the two-ended model by hidden-pair enumeration.

    Both visible ends factorize given (h1, h2), so the double sum over
    hidden states with analytic visible marginals equals the full sum
    over all four layers. Test-size models only.
    """
    k1, k2 = params.n_clustering, params.n_reconstruction
    if k1 + k2 > 20:
        raise ValueError("model too large for exact enumeration")
    h1s = all_binary_states(k1)
    h2s = all_binary_states(k2)
    terms = np.empty((h1s.shape[0], h2s.shape[0]))
    for i, h1 in enumerate(h1s):
        for j, h2 in enumerate(h2s):
            t = params.b1 @ h1 + params.b2 @ h2 + h1 @ params.w2 @ h2
            t += softplus(params.a1 + params.w1 @ h1).sum()
            t += softplus(params.a2 + h2 @ params.w3).sum()
            terms[i, j] = t
    return float(logsumexp(terms))


def exact_log_likelihood(data, params):
    """Mean log p(v1 = v, v2 = v) over rows, by exact enumeration."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    k1, k2 = params.n_clustering, params.n_reconstruction
    h1s = all_binary_states(k1)
    h2s = all_binary_states(k2)
    log_z = log_partition_exact(params)
    total = 0.0
    for v in data:
        terms = []
        base = params.a1 @ v + params.a2 @ v
        for h1 in h1s:
            for h2 in h2s:
                terms.append(
                    base
                    + params.b1 @ h1 + params.b2 @ h2
                    + v @ params.w1 @ h1 + h1 @ params.w2 @ h2 + h2 @ params.w3 @ v
                )
        total += logsumexp(np.array(terms)) - log_z
    return float(total / data.shape[0])


def exact_gradient(data, params):
    """Exact gradient of the mean clamped log-likelihood.

    Returns a CrDbmParams-shaped tuple (da1, da2, db1, db2, dW1, dW2,
    dW3). Data-term hidden moments use the exact conditional posterior
    (not mean field); model moments use full enumeration over all four
    layers with analytic visible expectations given the hidden pair.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    k1, k2 = params.n_clustering, params.n_reconstruction
    h1s = all_binary_states(k1)
    h2s = all_binary_states(k2)
    pairs = [(h1, h2) for h1 in h1s for h2 in h2s]

    # Model term: p(h1, h2) with visibles marginalized, then E[v | h].
    log_w = np.array([
        params.b1 @ h1 + params.b2 @ h2 + h1 @ params.w2 @ h2
        + softplus(params.a1 + params.w1 @ h1).sum()
        + softplus(params.a2 + h2 @ params.w3).sum()
        for h1, h2 in pairs
    ])
    p = np.exp(log_w - logsumexp(log_w))
    m = params.n_visible
    ev1 = np.zeros(m); ev2 = np.zeros(m)
    eh1 = np.zeros(k1); eh2 = np.zeros(k2)
    ew1 = np.zeros_like(params.w1)
    ew2 = np.zeros_like(params.w2)
    ew3 = np.zeros_like(params.w3)
    for weight, (h1, h2) in zip(p, pairs):
        v1_mean = sigmoid(params.a1 + params.w1 @ h1)
        v2_mean = sigmoid(params.a2 + h2 @ params.w3)
        ev1 += weight * v1_mean
        ev2 += weight * v2_mean
        eh1 += weight * h1
        eh2 += weight * h2
        ew1 += weight * np.outer(v1_mean, h1)
        ew2 += weight * np.outer(h1, h2)
        ew3 += weight * np.outer(h2, v2_mean)

    # Data term: exact posterior over (h1, h2) given v on both ends.
    n = data.shape[0]
    dv = data.mean(axis=0)
    dh1 = np.zeros(k1); dh2 = np.zeros(k2)
    dw1 = np.zeros_like(params.w1)
    dw2 = np.zeros_like(params.w2)
    dw3 = np.zeros_like(params.w3)
    for v in data:
        log_c = np.array([
            params.b1 @ h1 + params.b2 @ h2 + h1 @ params.w2 @ h2
            + v @ params.w1 @ h1 + h2 @ params.w3 @ v
            for h1, h2 in pairs
        ])
        post = np.exp(log_c - logsumexp(log_c))
        for weight, (h1, h2) in zip(post, pairs):
            dh1 += weight * h1 / n
            dh2 += weight * h2 / n
            dw1 += weight * np.outer(v, h1) / n
            dw2 += weight * np.outer(h1, h2) / n
            dw3 += weight * np.outer(h2, v) / n

    return (dv - ev1, dv - ev2, dh1 - eh1, dh2 - eh2, dw1 - ew1, dw2 - ew2, dw3 - ew3)


class ClusteringReconstructionDbm(BaseEstimator, TransformerMixin):
    """Sklearn-style estimator for the two-ended DBM.

    ``transform`` returns the clustering-layer mean-field posteriors;
    ``reconstruct`` the visible reconstructions through h2.
    """

    def __init__(self, n_clustering=4, n_reconstruction=200, epochs=500,
                 learning_rate=0.001, batch_size=100, n_chains=100,
                 pretrain_epochs=50, pretrain_learning_rate=0.1,
                 mf_tol=1e-4, mf_max_iters=30, random_state=None):
        self.n_clustering = n_clustering
        self.n_reconstruction = n_reconstruction
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_chains = n_chains
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_learning_rate = pretrain_learning_rate
        self.mf_tol = mf_tol
        self.mf_max_iters = mf_max_iters
        self.random_state = random_state

    def _config(self):
        return DbmTrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            n_chains=self.n_chains,
            pretrain_epochs=self.pretrain_epochs,
            pretrain_learning_rate=self.pretrain_learning_rate,
            mf_tol=self.mf_tol,
            mf_max_iters=self.mf_max_iters,
        )

    def _validate(self, X):
        X = check_array(X, dtype=np.float64)
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("inputs must lie in [0, 1]")
        return X

    def fit(self, X, y=None):
        X = self._validate(X)
        dims = (X.shape[1], self.n_clustering, self.n_reconstruction)
        self.params_ = train_dbm(X, dims, self._config(), rng=as_rng(self.random_state))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        mu1, _, _, _ = mean_field_batch(self._validate(X), self.params_,
                                        self.mf_tol, self.mf_max_iters)
        return mu1

    def cluster_codes(self, X):
        check_is_fitted(self, "params_")
        return cluster_codes(self._validate(X), self.params_, self.mf_tol, self.mf_max_iters)

    def reconstruct(self, X):
        check_is_fitted(self, "params_")
        v_r, _ = reconstruct_dbm(self._validate(X), self.params_, self.mf_tol, self.mf_max_iters)
        return v_r
