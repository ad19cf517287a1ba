"""Observation paths, the Zakai propagator, and unnormalized / normalized
filters.

The propagator solves ``dPsi = A^T Psi dt + sum_j diag(H[:, j]) Psi dZ^j``
with ``Psi_0 = I`` using a Lie splitting that keeps every entry
nonnegative::

    Psi_{k+1} = exp(A^T dt) @ diag(exp(H_i . dZ_k - |H_i|^2 dt / 2)) @ Psi_k

The diagonal factor is the exact solution of the observation part, so the
scheme is exact when ``A = 0``. Under the reference measure the increments
``dZ_k`` are i.i.d. ``N(0, dt I_m)``; under ``P^mu`` a hidden path is drawn
first and ``dZ_k = int_{t_k}^{t_{k+1}} h(X_s) ds + dW_k``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, MassCollapse, ShapeMismatch
from .model import Measure, StatePath, _sample_jumps, probability_vector, signed_measure
from .parallel import (
    STREAM_NOISE_PRIOR,
    STREAM_NOISE_TILDE,
    STREAM_STATE,
    combine_moments,
    map_chunks,
    path_rng,
)

MASS_FLOOR = 1e-300

__all__ = [
    "BatchStep",
    "FilterPath",
    "SigmaPath",
    "ZakaiPath",
    "batch_steps",
    "export_trajectory_csv",
    "normalization_martingale",
    "observation_increments",
    "simulate_propagator",
    "tv_distance",
    "wonham_normalize",
    "zakai_from_prior",
]


def observation_increments(model, cfg, path_index):
    """Increments ``dZ`` (shape ``(n_steps, m)``) for one path.

    Returns ``(dZ, state_path)``; ``state_path`` is ``None`` under the
    reference measure.
    """
    N, dt, m = cfg.n_steps, cfg.step, model.m
    if cfg.measure is Measure.TILDE:
        rng = path_rng(cfg.seed, path_index, STREAM_NOISE_TILDE)
        return rng.standard_normal((N, m)) * np.sqrt(dt), None
    mu = probability_vector(cfg.prior, model.d)
    srng = path_rng(cfg.seed, path_index, STREAM_STATE)
    initial, times, states = _sample_jumps(model.A, mu, cfg.T, srng)
    grid = cfg.grid
    all_states = np.concatenate(([initial], states))
    sp = StatePath(
        grid=grid,
        states=all_states[np.searchsorted(times, grid, side="right")],
        jump_times=times,
        jump_states=states,
        initial_state=initial,
        seed=int(cfg.seed),
        path_index=int(path_index),
    )
    rng = path_rng(cfg.seed, path_index, STREAM_NOISE_PRIOR)
    noise = rng.standard_normal((N, m)) * np.sqrt(dt)
    return sp.integrate(model.H) + noise, sp


def _increments(model, cfg, paths):
    dZ = np.empty((len(paths), cfg.n_steps, model.m))
    state_paths = []
    for row, p in enumerate(paths):
        dZ[row], sp = observation_increments(model, cfg, p)
        state_paths.append(sp)
    return dZ, state_paths


@dataclass
class BatchStep:
    """State of a batch of paths at grid index ``k``.

    ``X`` holds the propagated block (``Psi_k @ X0`` per path, divided by
    ``exp(log_scale)`` when renormalizing), ``Z`` the observation value at
    ``t_k`` and ``dZ`` the full increment array of the batch; only
    ``dZ[:, :k]`` is known at time ``t_k``.
    """

    k: int
    t: float
    X: np.ndarray
    log_scale: np.ndarray
    Z: np.ndarray
    dZ: np.ndarray
    state_paths: list

    @property
    def dZ_past(self):
        return self.dZ[:, : self.k]


def step_operators(model, dt):
    """``(exp(A^T dt), |H_i|^2 dt / 2)`` shared by every step."""
    E = expm(model.A.T * dt)
    half = 0.5 * dt * np.sum(model.H**2, axis=1)
    return E, half


def batch_steps(model, cfg, paths, X0, renormalize=False):
    """Propagate ``X0`` (shape ``(d, q)``) along every path in ``paths``.

    Yields a :class:`BatchStep` for ``k = 0, ..., n_steps``. With
    ``renormalize=True`` each path's block is divided by its largest entry
    after every step and the logarithm of the factor accumulated in
    ``log_scale`` (shape ``(n,)``). With ``renormalize="columns"`` every
    column is scaled on its own and ``log_scale`` has shape ``(n, q)``.
    """
    dZ, state_paths = _increments(model, cfg, paths)
    n = len(paths)
    E, half = step_operators(model, cfg.step)
    HT = model.H.T
    X = np.broadcast_to(np.asarray(X0, dtype=float), (n,) + np.shape(X0)).copy()
    per_column = renormalize == "columns"
    log_scale = np.zeros((n, X.shape[2])) if per_column else np.zeros(n)
    Z = np.zeros((n, model.m))
    grid = cfg.grid
    yield BatchStep(0, float(grid[0]), X, log_scale, Z, dZ, state_paths)
    for k in range(cfg.n_steps):
        inc = dZ[:, k, :]
        D = np.exp(inc @ HT - half)
        X = np.matmul(E, D[:, :, None] * X)
        if per_column:
            scale = X.max(axis=1)
            scale = np.where(scale > 0, scale, 1.0)
            X = X / scale[:, None, :]
            log_scale = log_scale + np.log(scale)
        elif renormalize:
            scale = X.reshape(n, -1).max(axis=1)
            scale = np.where(scale > 0, scale, 1.0)
            X = X / scale[:, None, None]
            log_scale = log_scale + np.log(scale)
        Z = Z + inc
        yield BatchStep(k + 1, float(grid[k + 1]), X, log_scale, Z, dZ, state_paths)


@dataclass(frozen=True, eq=False)
class ZakaiPath:
    """One observation path with its propagator on the grid.

    The propagator at grid index ``k`` is ``exp(log_scale[k]) * Psi[k]``;
    ``log_scale`` is identically zero unless the path was simulated with
    ``renormalize=True``.
    """

    grid: np.ndarray
    dZ: np.ndarray
    Psi: np.ndarray
    log_scale: np.ndarray
    measure: Measure
    seed: int
    path_index: int
    state_path: StatePath = None

    @property
    def Z(self):
        return np.vstack([np.zeros((1, self.dZ.shape[1])), np.cumsum(self.dZ, axis=0)])

    def propagator(self, k):
        return np.exp(self.log_scale[k]) * self.Psi[k]


def simulate_propagator(model, cfg, path_index=0, renormalize=False):
    """Simulate path ``path_index`` of ``cfg`` and keep the whole propagator.

    The result is bit-identical to the same path inside any batched
    estimator.
    """
    d = model.d
    Psi = np.empty((cfg.n_steps + 1, d, d))
    logs = np.empty(cfg.n_steps + 1)
    for st in batch_steps(model, cfg, [path_index], np.eye(d), renormalize):
        Psi[st.k] = st.X[0]
        logs[st.k] = st.log_scale[0]
    dZ, sp = st.dZ, st.state_paths[0]
    return ZakaiPath(
        grid=cfg.grid,
        dZ=dZ[0].copy(),
        Psi=Psi,
        log_scale=logs,
        measure=cfg.measure,
        seed=int(cfg.seed),
        path_index=int(path_index),
        state_path=sp,
    )


@dataclass(frozen=True, eq=False)
class SigmaPath:
    """Unnormalized filter ``sigma_t = exp(log_scale) * values`` on a grid."""

    grid: np.ndarray
    values: np.ndarray
    log_scale: np.ndarray

    @property
    def sigma(self):
        return np.exp(self.log_scale)[:, None] * self.values

    def pair(self, f):
        """``sigma_t(f)`` for a function (``(d,)``) or matrix (``(d, m)``)."""
        f = np.asarray(f, dtype=float)
        return self.sigma @ f


def zakai_from_prior(path, mu):
    """``sigma_t = Psi_t mu`` along a simulated path."""
    mu = signed_measure(mu, path.Psi.shape[1])
    values = path.Psi @ mu
    return SigmaPath(path.grid, values, path.log_scale.copy())


@dataclass(frozen=True, eq=False)
class FilterPath:
    grid: np.ndarray
    pi: np.ndarray
    sigma_mass: np.ndarray
    log_sigma_mass: np.ndarray


def wonham_normalize(sigma, grid=None):
    """Normalized filter ``pi_t = sigma_t / sigma_t(1)``.

    Accepts a :class:`SigmaPath` or a raw ``(n_points, d)`` array.

    Raises
    ------
    MassCollapse
        If the (rescaled) mass is non-finite or below ``1e-300`` anywhere.
    """
    if isinstance(sigma, SigmaPath):
        values, logs, grid = sigma.values, sigma.log_scale, sigma.grid
    else:
        values = np.atleast_2d(np.asarray(sigma, dtype=float))
        logs = np.zeros(values.shape[0])
        if grid is None:
            grid = np.arange(values.shape[0], dtype=float)
    mass = values.sum(axis=1)
    bad = ~np.isfinite(mass) | (mass <= MASS_FLOOR)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise MassCollapse(
            f"sigma_t(1) = {mass[k]} at grid index {k}; reduce dt or T, or simulate "
            "with renormalize=True"
        )
    pi = np.maximum(values / mass[:, None], 0.0)
    pi = pi / pi.sum(axis=1, keepdims=True)
    log_mass = np.log(mass) + logs
    return FilterPath(np.asarray(grid), pi, np.exp(log_mass), log_mass)


def tv_distance(p, q):
    """Total variation distance ``sum_i |p_i - q_i|`` (range ``[0, 2]``)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    return float(np.sum(np.abs(p - q)))


@dataclass(frozen=True)
class MartingaleCurve:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int


def normalization_martingale(model, mu, cfg):
    """Reference-measure ensemble mean of ``sigma_t(1)`` on the grid.

    For a probability prior the mean is exactly one at every grid point for
    the splitting scheme, so deviations are pure Monte Carlo error.
    """
    if cfg.measure is not Measure.TILDE:
        raise ConfigError("the normalization check runs under the reference measure")
    mu = probability_vector(mu, model.d)

    def chunk(paths):
        s1 = np.zeros(cfg.n_steps + 1)
        s2 = np.zeros(cfg.n_steps + 1)
        for st in batch_steps(model, cfg, paths, mu[:, None]):
            x = st.X[:, :, 0].sum(axis=1) - 1.0
            s1[st.k] = x.sum()
            s2[st.k] = (x * x).sum()
        return len(paths), s1, s2

    mean, se = combine_moments(map_chunks(chunk, cfg.n_paths))
    return MartingaleCurve(cfg.grid, mean + 1.0, se, int(cfg.n_paths))


def export_trajectory_csv(path, zpath, mu):
    """Write ``t, Z_*, sigma_*, pi_*`` rows for one simulated path."""
    sig = zakai_from_prior(zpath, mu)
    filt = wonham_normalize(sig)
    Z = zpath.Z
    d, m = sig.values.shape[1], Z.shape[1]
    header = (
        ["t"]
        + [f"Z_{j + 1}" for j in range(m)]
        + [f"sigma_{i + 1}" for i in range(d)]
        + [f"pi_{i + 1}" for i in range(d)]
    )
    sigma = sig.sigma
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(zpath.grid):
            row = [t, *Z[k], *sigma[k], *filt.pi[k]]
            w.writerow([repr(float(v)) for v in row])
