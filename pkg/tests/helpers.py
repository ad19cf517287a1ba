"""Model builders shared by the test modules."""

import numpy as np

from hmmduality import make_model


def random_generator(d, rng, density=1.0, scale=1.0):
    R = rng.exponential(scale, size=(d, d))
    if density < 1.0:
        R *= rng.random((d, d)) < density
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    return R


def irreducible_generator(d, rng, scale=1.0):
    """Random generator with a guaranteed cycle through every state."""
    A = random_generator(d, rng, density=0.5, scale=scale)
    for i in range(d):
        A[i, (i + 1) % d] += scale
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


def random_H(d, m, rng, levels=None, scale=1.0):
    """Observation matrix; ``levels < d`` repeats rows."""
    if levels is None or levels >= d:
        return scale * rng.standard_normal((d, m))
    rows = scale * rng.standard_normal((levels, m))
    idx = np.concatenate([np.arange(levels), rng.integers(levels, size=d - levels)])
    return rows[rng.permutation(idx)]


def swap_symmetric_model(d, m, rng, scale=1.0):
    """Model invariant under swapping states 0 and 1.

    Functions that are symmetric in the first two coordinates form an
    invariant subspace containing the constants, so ``C`` is a proper
    subspace of dimension at most ``d - 1``.
    """
    P = np.eye(d)
    P[[0, 1]] = P[[1, 0]]
    A = random_generator(d, rng)
    A = 0.5 * (A + P @ A @ P.T)
    H = scale * rng.standard_normal((d, m))
    H[1] = H[0]
    return make_model(A, H)


BLOCK_A = np.array(
    [
        [-1.0, 1.0, 0.0, 0.0],
        [1.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -2.0, 2.0],
        [0.0, 0.0, 1.0, -1.0],
    ]
)


def block_model(H=None):
    """Two closed 2-state classes; ``H`` defaults to zero."""
    if H is None:
        H = np.zeros((4, 1))
    return make_model(BLOCK_A, H)


def random_probability(d, rng):
    return rng.dirichlet(np.ones(d))


def orthogonal_observation(d, m, rng, scale=1.0, basis=None):
    """``m <= d - 1`` observation columns orthogonal to the constants.

    Columns are ``sqrt(d) * scale`` times orthonormal vectors drawn inside
    ``basis`` (default: all of ``R^d``), which keeps ``1 1^T + H H^T``
    well conditioned on that subspace.
    """
    B = np.eye(d) if basis is None else basis
    ones = np.ones(d) / np.sqrt(d)
    G = B @ rng.standard_normal((B.shape[1], m))
    Q, _ = np.linalg.qr(np.column_stack([ones, G]))
    return np.sqrt(d) * scale * Q[:, 1 : m + 1]


def conditioned_model(d, rng, scale=0.7, symmetric=False):
    """Random model whose gramian spectrum is resolvable by Monte Carlo.

    With ``symmetric`` the model is invariant under swapping states 0 and 1
    and ``C`` is exactly the ``(d - 1)``-dimensional space of symmetric
    functions.
    """
    A = random_generator(d, rng)
    if not symmetric:
        return make_model(A, orthogonal_observation(d, d - 1, rng, scale))
    P = np.eye(d)
    P[[0, 1]] = P[[1, 0]]
    A = 0.5 * (A + P @ A @ P.T)
    sym = np.eye(d)[:, 1:].copy()
    sym[0, 0] = 1.0
    sym /= np.linalg.norm(sym, axis=0)
    return make_model(A, orthogonal_observation(d, d - 2, rng, scale, basis=sym))
