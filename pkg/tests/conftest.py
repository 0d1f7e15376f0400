"""Shared helpers for the test suite: batched cone sampling, admissible
matrix construction, and the list of valid operator parameter triples."""

import numpy as np
import pytest

from hessquot import symfun
from hessquot.symfun import QuotientSpec


def cone_samples(rng, n, k, count):
    """Rejection-sample ``count`` eigenvalue vectors from the order-k cone,
    entries drawn from N(1, 1)."""
    out = np.empty((count, n))
    have = 0
    while have < count:
        draw = rng.normal(1.0, 1.0, size=(4 * (count - have) + 16, n))
        keep = draw[symfun.in_gamma_k(draw, k)]
        take = min(count - have, keep.shape[0])
        out[have : have + take] = keep[:take]
        have += take
    return out


def valid_triples(n_max=6):
    """All (n, k, l) with 0 <= l and l + 2 <= k <= n <= n_max."""
    out = []
    for n in range(2, n_max + 1):
        for k in range(2, n + 1):
            for l in range(0, k - 1):
                out.append((n, k, l))
    return out


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diagonal(r))


def admissible_matrix(rng, spec):
    """Symmetric matrix whose spectrum lies in the order-k cone."""
    lam = cone_samples(rng, spec.n, spec.k, 1)[0]
    q = random_orthogonal(rng, spec.n)
    return (q * lam) @ q.T


def inverse_eta(U, tau):
    """The matrix A with tau*tr(A)*I - A = U."""
    n = U.shape[-1]
    tr_a = np.trace(U) / (tau * n - 1.0)
    return tau * tr_a * np.eye(n) - U


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
