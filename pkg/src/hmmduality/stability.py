"""Ergodic classes, the stable null space, and filter stability.

A model is stabilizable (equivalently detectable) when the null space
``S0 = {f : A f = 0}`` lies inside the controllable subspace ``C``. Total
variation distances use the convention ``sum_i |p_i - q_i|``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import AbsoluteContinuityViolation, ConfigError
from .model import TOL_MODEL, Measure, probability_vector
from .parallel import combine_moments, map_chunks
from .simulate import batch_steps
from .subspaces import TOL_RANK, Subspace, controllable_subspace

TV_CONVENTION = "sum_i |p_i - q_i|"

__all__ = [
    "DecayCurve",
    "ErgodicDecomposition",
    "StabilityReport",
    "check_absolute_continuity",
    "ergodic_decomposition",
    "filter_stability_experiment",
    "is_stabilizable",
    "stable_null_space",
]


@dataclass(frozen=True)
class ErgodicDecomposition:
    """Closed communicating classes and the leftover transient states.

    States are 0-based indices.
    """

    classes: list
    transient: list

    @property
    def r(self):
        return len(self.classes)


def ergodic_decomposition(model, tol_model=TOL_MODEL):
    """Strongly connected components of the graph ``i -> j`` iff
    ``A[i, j] > tol_model``; a component is a class when no edge leaves it.
    """
    A = model.A
    adj = (A > tol_model).astype(int)
    np.fill_diagonal(adj, 0)
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    classes, transient = [], []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(model.d), members)
        if adj[np.ix_(members, outside)].any():
            transient.extend(members.tolist())
        else:
            classes.append(members.tolist())
    classes.sort(key=lambda cl: cl[0])
    return ErgodicDecomposition(classes, sorted(transient))


def stable_null_space(model, tol_rank=TOL_RANK):
    """Orthonormal basis of the numerical right null space of ``A``."""
    A = model.A
    _, s, Vt = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return Subspace(np.eye(model.d), tol_rank)
    rank = int(np.sum(s > tol_rank * smax))
    return Subspace(Vt[rank:].T.copy(), tol_rank)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """``stabilizable`` and ``detectable`` are the same test and always agree.

    ``per_class_indicator_in_C`` is ``None`` when there are transient states.
    """

    S0: Subspace
    C: Subspace
    decomposition: ErgodicDecomposition
    stabilizable: bool
    detectable: bool
    per_class_indicator_in_C: list
    max_residual: float

    def to_dict(self):
        dec = self.decomposition
        return {
            "stabilizable": self.stabilizable,
            "detectable": self.detectable,
            "dim_S0": self.S0.dim,
            "dim_C": self.C.dim,
            "max_residual": self.max_residual,
            "ergodic_classes": [[i + 1 for i in c] for c in dec.classes],
            "transient_states": [i + 1 for i in dec.transient],
            "per_class_indicator_in_C": self.per_class_indicator_in_C,
        }


def is_stabilizable(model, tol_rank=TOL_RANK):
    """Test ``S0 subset C`` basis vector by basis vector."""
    S0 = stable_null_space(model, tol_rank)
    C = controllable_subspace(model, tol_rank)
    res = [C.residual(v) for v in S0.basis.T]
    max_res = max(res, default=0.0)
    ok = bool(max_res < 10 * tol_rank)
    dec = ergodic_decomposition(model)
    per_class = None
    if not dec.transient:
        per_class = []
        for cl in dec.classes:
            ind = np.zeros(model.d)
            ind[cl] = 1.0
            per_class.append(bool(C.residual(ind / np.linalg.norm(ind)) < 10 * tol_rank))
    return StabilityReport(S0, C, dec, ok, ok, per_class, float(max_res))


def check_absolute_continuity(mu, nu):
    """Raise unless ``nu_i = 0`` implies ``mu_i = 0``."""
    bad = np.flatnonzero((np.asarray(nu) == 0) & (np.asarray(mu) > 0))
    if bad.size:
        raise AbsoluteContinuityViolation(
            f"mu has mass on state(s) {(bad + 1).tolist()} where nu has none"
        )


def paired_filters(model, mu, nu, cfg, paths):
    """Yield ``(k, pi_mu, pi_nu)`` (each ``(n, d)``) for one batch of paths.

    Both filters run on the same observation paths; each is rescaled on
    its own after every step so neither can underflow.
    """
    X0 = np.column_stack([mu, nu])
    for st in batch_steps(model, cfg, paths, X0, renormalize="columns"):
        X = st.X
        mass = X.sum(axis=1)
        pi = X / mass[:, None, :]
        yield st.k, pi[:, :, 0], pi[:, :, 1]


def _physical_cfg(cfg, mu):
    if cfg.measure is Measure.TILDE:
        return cfg.with_prior(mu)
    if not np.allclose(cfg.prior, mu, rtol=0, atol=1e-12):
        raise ConfigError("cfg.prior must equal mu")
    return cfg


@dataclass(frozen=True)
class DecayCurve:
    t: np.ndarray
    mean_tv: np.ndarray
    stderr: np.ndarray
    n_paths: int
    tv_convention: str = TV_CONVENTION

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_tv", "stderr"])
            for row in zip(self.t, self.mean_tv, self.stderr):
                w.writerow([repr(float(v)) for v in row])


def filter_stability_experiment(model, mu, nu, cfg):
    """Mean ``TV(pi_t^mu, pi_t^nu)`` over paths simulated under ``P^mu``.

    ``cfg`` under the reference measure is switched to ``P^mu``.

    Raises
    ------
    AbsoluteContinuityViolation
        ``nu_i = 0 < mu_i`` for some state.
    """
    mu = probability_vector(mu, model.d)
    nu = probability_vector(nu, model.d)
    check_absolute_continuity(mu, nu)
    cfg = _physical_cfg(cfg, mu)
    N = cfg.n_steps

    def chunk(paths):
        s1 = np.zeros(N + 1)
        s2 = np.zeros(N + 1)
        for k, pm, pn in paired_filters(model, mu, nu, cfg, paths):
            tv = np.sum(np.abs(pm - pn), axis=1)
            s1[k] = tv.sum()
            s2[k] = (tv * tv).sum()
        return len(paths), s1, s2

    mean, se = combine_moments(map_chunks(chunk, cfg.n_paths))
    return DecayCurve(cfg.grid, mean, se, int(cfg.n_paths))
