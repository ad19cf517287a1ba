"""Linear-algebraic observability tests for finite-state HMMs.

The central object is the controllable subspace ``C``: the smallest subspace
of functions that contains the constant function and is closed under
``g -> A g`` and ``g -> H[:, j] * g``. The model is observable exactly when
``C`` is all of ``R^d``.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import subspace_angles

from .errors import DegenerateLevels

TOL_RANK = 1e-8
TOL_LEVEL = 1e-9

__all__ = [
    "ObservabilityResult",
    "ObservationLevels",
    "Subspace",
    "closure",
    "controllable_subspace",
    "inclusion_angle",
    "is_injective_observation",
    "is_observable",
    "largest_principal_angle",
    "linear_controllable_subspace",
    "observable_functions",
    "observation_levels",
    "vandermonde_full_rank_check",
]


@dataclass(frozen=True, eq=False)
class Subspace:
    """Subspace of ``R^d`` held as a ``d x k`` orthonormal basis."""

    basis: np.ndarray
    tol_rank: float = TOL_RANK

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    def project(self, v):
        Q = self.basis
        return Q @ (Q.T @ v)

    def residual(self, v):
        """Norm of the component of ``v`` orthogonal to the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v)))

    def contains(self, v, tol=None):
        tol = 10 * self.tol_rank if tol is None else tol
        v = np.asarray(v, dtype=float)
        return self.residual(v) <= tol * max(1.0, np.linalg.norm(v))

    def complement(self):
        """Orthogonal complement as a new Subspace."""
        d, k = self.basis.shape
        if k == 0:
            return Subspace(np.eye(d), self.tol_rank)
        U, _, _ = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(U[:, k:], self.tol_rank)


def _orthogonalize(v, Q):
    # classical Gram-Schmidt, applied twice
    for _ in range(2):
        if Q.shape[1]:
            v = v - Q @ (Q.T @ v)
    return v


def closure(seeds, maps, tol_rank=TOL_RANK, seed_scale=None):
    """Smallest subspace containing ``seeds`` and invariant under ``maps``.

    Parameters
    ----------
    seeds : sequence of 1-D arrays
        Initial vectors. A seed is admitted when its residual against the
        current basis exceeds ``tol_rank * seed_scale`` (default: the largest
        seed norm).
    maps : sequence of (callable, float)
        Each linear map is paired with its operator-norm bound. A candidate
        ``f(g)`` for a unit basis vector ``g`` is admitted when its residual
        exceeds ``tol_rank`` times that bound, which makes the rule invariant
        to rescaling any individual map.
    tol_rank : float
        Relative admission threshold.

    Returns
    -------
    Subspace
        Basis columns appear in admission order; maps are applied in the
        order given, to basis vectors in admission order.
    """
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    d = len(seeds[0]) if seeds else 0
    if seed_scale is None:
        seed_scale = max((np.linalg.norm(s) for s in seeds), default=0.0)
    cols = []
    Q = np.zeros((d, 0))

    def admit(v, scale):
        nonlocal Q
        if Q.shape[1] >= d or scale <= 0:
            return False
        r = _orthogonalize(v, Q)
        nr = np.linalg.norm(r)
        if nr > tol_rank * scale:
            cols.append(r / nr)
            Q = np.column_stack(cols)
            return True
        return False

    for s in seeds:
        admit(s, seed_scale)

    processed = 0
    while processed < len(cols):
        # one sweep over the vectors admitted since the last sweep
        stop = len(cols)
        for idx in range(processed, stop):
            g = cols[idx]
            for f, norm in maps:
                admit(f(g), norm)
        processed = stop
    return Subspace(Q if cols else np.zeros((d, 0)), tol_rank)


def _hmm_maps(model):
    A, H = model.A, model.H
    maps = [(lambda g, A=A: A @ g, float(np.linalg.norm(A, 2)))]
    for j in range(H.shape[1]):
        col = H[:, j]
        maps.append((lambda g, c=col: c * g, float(np.max(np.abs(col)))))
    return maps


def controllable_subspace(model, tol_rank=TOL_RANK, seeds=None):
    """Closure of the constant function under the generator and the
    entrywise products with the observation columns.

    ``seeds`` overrides the initial vectors (the constant function is always
    placed first).
    """
    d = model.d
    ones = np.ones(d) / np.sqrt(d)
    start = [ones] + ([] if seeds is None else [np.asarray(s, float) for s in seeds])
    return closure(start, _hmm_maps(model), tol_rank, seed_scale=1.0)


class ObservabilityResult(NamedTuple):
    observable: bool
    dim: int
    basis: Subspace


def is_observable(model, tol_rank=TOL_RANK):
    C = controllable_subspace(model, tol_rank)
    return ObservabilityResult(C.dim == model.d, C.dim, C)


def linear_controllable_subspace(A, H, tol_rank=TOL_RANK):
    """Span of ``H, AH, A^2 H, ...`` (Kalman controllability space)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != A.shape[0] or A.shape[0] != A.shape[1]:
        raise ValueError(f"shapes disagree: A {A.shape}, H {H.shape}")
    seeds = list(H.T)
    scale = float(np.linalg.norm(H, 2)) if H.size else 0.0
    maps = [(lambda g: A @ g, float(np.linalg.norm(A, 2)))]
    if scale == 0.0:
        return Subspace(np.zeros((A.shape[0], 0)), tol_rank)
    return closure(seeds, maps, tol_rank, seed_scale=scale)


@dataclass(frozen=True, eq=False)
class ObservationLevels:
    """Distinct rows of ``H`` and the level index of every state."""

    levels: np.ndarray
    assignment: np.ndarray

    @property
    def r(self):
        return self.levels.shape[0]

    def projection(self, k):
        """Diagonal of the projection onto states at level ``k``."""
        return (self.assignment == k).astype(float)


def observation_levels(H, tol_level=TOL_LEVEL):
    """Group rows of ``H`` that agree after rounding to ``tol_level``."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    keys = np.round(H / tol_level) if tol_level > 0 else H
    order = np.lexsort(keys.T[::-1])
    assignment = np.empty(H.shape[0], dtype=int)
    levels = []
    prev = None
    for i in order:
        key = keys[i]
        if prev is None or not np.array_equal(key, prev):
            levels.append(H[i])
            prev = key
        assignment[i] = len(levels) - 1
    return ObservationLevels(np.array(levels), assignment)


def observable_functions(model, tol_rank=TOL_RANK, tol_level=TOL_LEVEL):
    """Span of the words ``P_{n0} A P_{n1} ... A P_{nk} 1`` over the level
    projections of ``H``.

    Emits :class:`DegenerateLevels` (a warning) when every row of ``H`` falls
    in one level and ``A = 0``; the result is then the constant functions.
    """
    lv = observation_levels(model.H, tol_level)
    if lv.r == 1 and not np.any(model.A):
        warnings.warn(
            DegenerateLevels("all rows of H share one level and A = 0"), stacklevel=2
        )
    P = [lv.projection(k) for k in range(lv.r)]
    A = model.A
    normA = float(np.linalg.norm(A, 2))
    maps = [(lambda g, p=p: p * (A @ g), normA) for p in P]
    return closure(P, maps, tol_rank, seed_scale=1.0)


def is_injective_observation(H, tol_level=TOL_LEVEL):
    """True iff the rows of ``H`` are pairwise distinct at ``tol_level``."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    return observation_levels(H, tol_level).r == H.shape[0]


def vandermonde_full_rank_check(h_column, tol_level=TOL_LEVEL):
    """Whether ``[1, h, h^2, ..., h^(d-1)]`` (entrywise powers) has rank ``d``.

    Gaussian elimination on the Vandermonde matrix, subtracting the first
    row and then dividing each row by ``h_i - h_1`` (and so on), leaves an
    upper triangular matrix whose ``k``-th pivot is
    ``prod_{i<k} (h_k - h_i)``. The pivots are formed directly from these
    differences instead of by row operations, which lose all accuracy for
    moderate ``d``. Entries are rounded to ``tol_level`` first (the same
    rounding :func:`is_injective_observation` uses), so a pivot vanishes
    exactly when two rounded entries coincide.
    """
    h = np.asarray(h_column, dtype=float).ravel()
    keys = np.round(h / tol_level) if tol_level > 0 else h
    for k in range(1, h.size):
        pivot_factors = keys[k] - keys[:k]
        if np.any(pivot_factors == 0):
            return False
    return True


def inclusion_angle(X, Y):
    """Largest angle between vectors of ``X`` and the subspace ``Y``.

    Zero exactly when ``X`` is contained in ``Y``.
    """
    Xb = X.basis if isinstance(X, Subspace) else np.asarray(X, dtype=float)
    Yb = Y.basis if isinstance(Y, Subspace) else np.asarray(Y, dtype=float)
    if Xb.shape[1] == 0:
        return 0.0
    if Yb.shape[1] == 0:
        return float(np.pi / 2)
    Qx, _ = np.linalg.qr(Xb)
    R = Qx - Yb @ (Yb.T @ Qx)
    s = np.linalg.norm(R, 2)
    return float(np.arcsin(min(1.0, s)))


def largest_principal_angle(X, Y):
    """Largest principal angle; ``pi/2`` when the dimensions differ."""
    Xb = X.basis if isinstance(X, Subspace) else np.asarray(X, dtype=float)
    Yb = Y.basis if isinstance(Y, Subspace) else np.asarray(Y, dtype=float)
    if Xb.shape[1] != Yb.shape[1]:
        return float(np.pi / 2)
    if Xb.shape[1] == 0:
        return 0.0
    return float(np.max(subspace_angles(Xb, Yb)))
