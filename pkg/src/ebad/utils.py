"""Small numeric helpers shared across the package."""

import numpy as np
from scipy.special import expit

# Probabilities are clamped only where logs are taken.
_LOG_EPS = 1e-15


def sigmoid(x):
    """Overflow-safe logistic function.

    Delegates to scipy's expit, which branches on the sign of the
    argument so that neither exp overflow nor catastrophic cancellation
    occurs for any finite input.
    """
    return expit(np.asarray(x, dtype=np.float64))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def clamp_prob(p):
    """Clamp probabilities away from {0, 1} before taking logs."""
    return np.clip(p, _LOG_EPS, 1.0 - _LOG_EPS)


def bernoulli(rng, p):
    """Draw 0/1 samples with success probabilities ``p`` as float64."""
    p = np.asarray(p)
    return (rng.random(p.shape) < p).astype(np.float64)


def as_rng(seed_or_rng):
    """Return a numpy Generator from a seed, SeedSequence, Generator or None."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def all_binary_states(n):
    """Enumerate {0,1}^n as a (2**n, n) float64 array.

    Row index equals the big-endian integer encoding of the row, so
    state orderings are reproducible in tests.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    count = 1 << n
    if n == 0:
        return np.zeros((1, 0), dtype=np.float64)
    bits = (np.arange(count, dtype=np.int64)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return bits.astype(np.float64)
