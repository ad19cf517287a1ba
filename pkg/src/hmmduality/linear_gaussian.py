"""Deterministic linear duality: ``Lu = int_0^T e^{At} H u_t dt``.

The adjoint is ``(L^dagger xi)(t) = H^T e^{A^T t} xi`` and the gramian
``W = L L^dagger = int_0^T e^{At} H H^T e^{A^T t} dt``. All time integrals
use the composite trapezoidal rule on a uniform grid, so the discrete
pairing ``<xi, Lu> = <L^dagger xi, u>`` holds to rounding error.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import NonFinite, ShapeMismatch, ValidationError
from .model import SimConfig
from .subspaces import Subspace, largest_principal_angle, linear_controllable_subspace

RANGE_TOL = 1e-10

__all__ = [
    "ClosedRangeReport",
    "LinearPair",
    "exact_gramian",
    "lg_apply_L",
    "lg_apply_L_dagger",
    "lg_closed_range_check",
    "lg_gramian",
]


@dataclass(frozen=True, eq=False)
class LinearPair:
    """``(A, H)`` with no generator constraint, on the horizon ``[0, T]``."""

    A: np.ndarray
    H: np.ndarray
    T: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        H = np.asarray(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        if A.shape[0] != A.shape[1] or H.shape[0] != A.shape[0]:
            raise ShapeMismatch(f"A is {A.shape}, H is {H.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(H))):
            raise NonFinite("A and H must be finite")
        if not self.T > 0:
            raise ValidationError("T must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "T", float(self.T))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[1]

    @classmethod
    def from_model(cls, model, T):
        return cls(model.A, model.H, T)


def _grid(pair, dt):
    cfg = SimConfig(T=pair.T, dt=dt)
    w = np.full(cfg.n_steps + 1, cfg.step)
    w[0] = w[-1] = 0.5 * cfg.step
    return cfg, w


def _flow(pair, cfg):
    """``e^{A t_k}`` for every grid point, shape ``(N + 1, d, d)``."""
    E = expm(pair.A * cfg.step)
    P = np.empty((cfg.n_steps + 1, pair.d, pair.d))
    P[0] = np.eye(pair.d)
    for k in range(cfg.n_steps):
        P[k + 1] = P[k] @ E
    return P


def lg_apply_L(pair, u, dt):
    """``y_0`` of ``-y' = A y + H u``, ``y_T = 0``; ``u`` has one row per grid point."""
    cfg, w = _grid(pair, dt)
    u = np.asarray(u, dtype=float).reshape(cfg.n_steps + 1, -1)
    if u.shape[1] != pair.m:
        raise ShapeMismatch(f"control has {u.shape[1]} columns, need {pair.m}")
    P = _flow(pair, cfg)
    Hu = u @ pair.H.T
    return np.einsum("k,kij,kj->i", w, P, Hu)


def lg_apply_L_dagger(pair, xi, dt):
    """``H^T e^{A^T t} xi`` on the grid, shape ``(N + 1, m)``."""
    cfg, _ = _grid(pair, dt)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (pair.d,):
        raise ShapeMismatch(f"xi must have length {pair.d}")
    P = _flow(pair, cfg)
    return np.einsum("kji,j->ki", P, xi) @ pair.H


def lg_gramian(pair, dt):
    """Trapezoidal ``int e^{At} H H^T e^{A^T t} dt``."""
    cfg, w = _grid(pair, dt)
    P = _flow(pair, cfg)
    B = P @ pair.H
    W = np.einsum("k,kim,kjm->ij", w, B, B)
    return 0.5 * (W + W.T)


def exact_gramian(pair):
    """The same integral in closed form (Van Loan's block exponential)."""
    d = pair.d
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -pair.A
    M[:d, d:] = pair.H @ pair.H.T
    M[d:, d:] = pair.A.T
    F = expm(M * pair.T)
    W = F[d:, d:].T @ F[:d, d:]
    return 0.5 * (W + W.T)


def _complement(Q, d):
    """Orthonormal basis of the orthogonal complement of ``span(Q)``."""
    if Q.shape[1] == 0:
        return np.eye(d)
    U, _, _ = np.linalg.svd(Q, full_matrices=True)
    return U[:, Q.shape[1]:]


@dataclass(frozen=True, eq=False)
class ClosedRangeReport:
    """Compare ``Rsp(L)^perp`` with ``Nsp(L^dagger)``."""

    rank_L: int
    dim_range_perp: int
    dim_null_dagger: int
    angle: float
    W: np.ndarray

    def to_dict(self):
        return {
            "rank_L": self.rank_L,
            "dim_range_perp": self.dim_range_perp,
            "dim_null_dagger": self.dim_null_dagger,
            "angle": self.angle,
            "W": self.W.tolist(),
        }


def lg_closed_range_check(pair, dt=1e-3, tol=RANGE_TOL):
    """Largest principal angle between ``Rsp(L)^perp`` and ``Nsp(L^dagger)``.

    ``Rsp(L)`` is the left singular space of the sampled operator
    ``[sqrt(w_k) e^{A t_k} H]`` (whose Gram matrix is the quadrature
    gramian); working with the factor instead of the gramian keeps the
    rounding error proportional to its condition number rather than the
    square. ``Nsp(L^dagger)``, the functions ``xi`` with
    ``H^T e^{A^T t} xi = 0`` for all ``t``, is the orthogonal complement of
    the Krylov space of ``(A, H)``. Gramian eigenvalues below ``tol`` times
    the largest count as zero.
    """
    cfg, w = _grid(pair, dt)
    B = _flow(pair, cfg) @ pair.H
    F = (np.sqrt(w)[:, None, None] * B).transpose(1, 0, 2).reshape(pair.d, -1)
    U, s, _ = np.linalg.svd(F, full_matrices=True)
    r = int(np.sum(s > np.sqrt(tol) * s[0])) if s.size and s[0] > 0 else 0
    rng_perp = Subspace(U[:, r:])
    K = linear_controllable_subspace(pair.A, pair.H)
    null = Subspace(_complement(K.basis, pair.d))
    angle = largest_principal_angle(rng_perp, null)
    W = F @ F.T
    return ClosedRangeReport(r, pair.d - r, null.dim, angle, 0.5 * (W + W.T))
