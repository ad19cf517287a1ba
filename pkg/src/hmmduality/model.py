"""Finite-state HMM representation, validation, model files, and the two
forward evolutions of the hidden chain: the Kolmogorov forward equation and
exact-jump path sampling.

Conventions: ``A`` is the ``d x d`` rate matrix (rows indexed by the current
state, nonnegative off-diagonals, zero row sums) and ``H`` is ``d x m`` with
row ``i`` equal to ``h(i)``. Functions on the state space and measures are
both plain length-``d`` numpy vectors; ``mu(f) = mu @ f``.
"""

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConfigError,
    GeneratorViolation,
    NonFinite,
    ParseError,
    ShapeMismatch,
    ValidationError,
)
from .parallel import STREAM_STATE, path_rng

TOL_MODEL = 1e-9
MAX_STATES = 64

__all__ = [
    "FiniteHMM",
    "Measure",
    "SimConfig",
    "StatePath",
    "TOL_MODEL",
    "kolmogorov_forward",
    "load_model",
    "make_model",
    "model_from_dict",
    "probability_vector",
    "sample_ctmc",
    "signed_measure",
    "in_M0",
    "validate",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteHMM:
    """The pair (A, H). Use :func:`make_model` or :func:`validate` to obtain
    a checked instance; the constructor only coerces to read-only arrays."""

    A: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        H = np.asarray(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "H", _frozen(H))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[1]

    def to_dict(self):
        return {"d": self.d, "m": self.m, "A": self.A.tolist(), "H": self.H.tolist()}


def validate(model, tol_model=TOL_MODEL):
    """Check the generator invariants and return a cleaned copy.

    Off-diagonal entries in ``[-tol_model, 0)`` are clamped to zero and each
    diagonal entry is reset so that its row sums to exactly zero.

    Raises
    ------
    ShapeMismatch
        ``A`` is not square or ``H`` has a different number of rows.
    NonFinite
        Any entry is NaN or infinite.
    GeneratorViolation
        An off-diagonal entry is below ``-tol_model`` or a row sum exceeds
        ``tol_model`` in absolute value.
    """
    A, H = model.A, model.H
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch(f"A must be square, got shape {A.shape}")
    if H.ndim != 2 or H.shape[0] != A.shape[0]:
        raise ShapeMismatch(f"H must have {A.shape[0]} rows, got shape {H.shape}")
    if A.shape[0] < 1 or H.shape[1] < 1:
        raise ShapeMismatch("need d >= 1 and m >= 1")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(H))):
        raise NonFinite("model entries must be finite")

    d = A.shape[0]
    off = ~np.eye(d, dtype=bool)
    worst = A[off].min() if d > 1 else 0.0
    if worst < -tol_model:
        i, j = np.argwhere(off & (A == worst))[0]
        raise GeneratorViolation(f"negative rate A[{i}][{j}] = {worst}")
    rows = A.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows) > tol_model)
    if bad.size:
        raise GeneratorViolation(f"row {bad[0]} sums to {rows[bad[0]]}, not 0")

    clean = np.where(off, np.maximum(A, 0.0), 0.0)
    np.fill_diagonal(clean, -clean.sum(axis=1))
    return FiniteHMM(clean, H)


def make_model(A, H, tol_model=TOL_MODEL):
    """Build and validate a model from array-likes."""
    return validate(FiniteHMM(A, H), tol_model)


def probability_vector(values, d=None, tol=TOL_MODEL):
    """Validated probability vector as a float array."""
    p = np.asarray(values, dtype=float).ravel()
    if d is not None and p.size != d:
        raise ShapeMismatch(f"expected length {d}, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise NonFinite("probability vector has non-finite entries")
    if np.any(p < -tol):
        raise ValidationError(f"probability vector has negative entry {p.min()}")
    if abs(p.sum() - 1.0) > tol:
        raise ValidationError(f"probability vector sums to {p.sum()}, not 1")
    return np.maximum(p, 0.0)


def signed_measure(values, d=None):
    mu = np.asarray(values, dtype=float).ravel()
    if d is not None and mu.size != d:
        raise ShapeMismatch(f"expected length {d}, got {mu.size}")
    if not np.all(np.isfinite(mu)):
        raise NonFinite("measure has non-finite entries")
    return mu


def in_M0(mu, tol=TOL_MODEL):
    """True when the signed measure has zero total mass."""
    return abs(float(np.sum(mu))) <= tol


_SCHEMA_KEYS = {"d", "m", "A", "H", "priors"}


def model_from_dict(data, tol_model=TOL_MODEL, check_generator=True):
    """Parse the model-file schema; returns ``(model, priors)``."""
    if not isinstance(data, dict):
        raise ParseError("model file must contain a JSON object")
    unknown = set(data) - _SCHEMA_KEYS
    if unknown:
        raise ParseError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("d", "m", "A", "H"):
        if key not in data:
            raise ParseError(f"missing required field {key!r}")
    d, m = data["d"], data["m"]
    if not (isinstance(d, int) and isinstance(m, int)) or isinstance(d, bool) or isinstance(m, bool):
        raise ParseError("'d' and 'm' must be integers")
    if d < 1 or m < 1:
        raise ParseError("'d' and 'm' must be >= 1")
    if d > MAX_STATES:
        raise ParseError(f"d = {d} exceeds the supported maximum of {MAX_STATES}")
    try:
        A = np.array(data["A"], dtype=float)
        H = np.array(data["H"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"matrices must be rectangular lists of numbers: {exc}") from None
    if A.shape != (d, d):
        raise ShapeMismatch(f"A has shape {A.shape}, declared ({d}, {d})")
    if H.shape != (d, m):
        raise ShapeMismatch(f"H has shape {H.shape}, declared ({d}, {m})")
    model = FiniteHMM(A, H)
    if check_generator:
        model = validate(model, tol_model)
    elif not (np.all(np.isfinite(A)) and np.all(np.isfinite(H))):
        raise NonFinite("model entries must be finite")

    raw_priors = data.get("priors", {})
    if not isinstance(raw_priors, dict):
        raise ParseError("'priors' must be an object mapping names to vectors")
    priors = {}
    for name, values in raw_priors.items():
        try:
            priors[name] = probability_vector(values, d=d, tol=tol_model)
        except ValidationError as exc:
            raise type(exc)(f"prior {name!r}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"prior {name!r} is not a numeric vector: {exc}") from None
    return model, priors


def load_model(path, tol_model=TOL_MODEL, check_generator=True):
    """Read a JSON model file.

    Returns
    -------
    model : FiniteHMM
    priors : dict of str -> ndarray
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    return model_from_dict(data, tol_model, check_generator)


def kolmogorov_forward(model, mu0, t):
    """Forward Kolmogorov flow ``exp(A^T t) mu0``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    mu0 = signed_measure(mu0, model.d)
    if t == 0:
        return mu0.copy()
    out = expm(model.A.T * t) @ mu0
    if not np.all(np.isfinite(out)):
        raise NonFinite("matrix exponential overflowed")
    return out


class Measure(str, Enum):
    TILDE = "tilde"  # reference measure, Z is Brownian
    PRIOR = "prior"  # physical measure P^mu


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo configuration.

    ``prior`` is required (and only meaningful) when ``measure`` is
    ``Measure.PRIOR``. ``T / dt`` must be an integer up to rounding; the step
    is never adjusted silently.
    """

    T: float
    dt: float
    n_paths: int = 1000
    seed: int = 0
    measure: Measure = Measure.TILDE
    prior: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "measure", Measure(self.measure))
        if self.prior is not None:
            object.__setattr__(self, "prior", tuple(float(x) for x in np.ravel(self.prior)))
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be positive, got {self.T}")
        if not (0 < self.dt <= self.T):
            raise ConfigError(f"dt must satisfy 0 < dt <= T, got {self.dt}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(f"T / dt = {ratio} is not an integer")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be >= 1")
        if int(self.seed) < 0:
            raise ConfigError("seed must be nonnegative")
        if self.measure is Measure.PRIOR and self.prior is None:
            raise ConfigError("measure 'prior' needs a prior vector")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def step(self):
        """Grid step actually used, ``T / n_steps``."""
        return self.T / self.n_steps

    @property
    def grid(self):
        return np.arange(self.n_steps + 1) * self.step

    def with_prior(self, mu):
        return replace(self, measure=Measure.PRIOR, prior=tuple(np.ravel(mu)))

    def under_tilde(self):
        return replace(self, measure=Measure.TILDE, prior=None)

    def to_dict(self):
        return {
            "T": float(self.T),
            "dt": float(self.dt),
            "n_paths": int(self.n_paths),
            "seed": int(self.seed),
            "measure": self.measure.value,
            "prior": None if self.prior is None else list(self.prior),
        }


@dataclass(frozen=True, eq=False)
class StatePath:
    """One exact-jump trajectory of the hidden chain.

    ``initial_state`` is occupied on ``[0, jump_times[0])``; ``jump_states[k]``
    is entered at ``jump_times[k]``. ``states`` samples the path on ``grid``.
    """

    grid: np.ndarray
    states: np.ndarray
    jump_times: np.ndarray
    jump_states: np.ndarray
    initial_state: int
    seed: int
    path_index: int = 0

    def integrate(self, values):
        """Exact integrals of a state function over every grid step.

        ``values`` has one row per state (shape ``(d,)`` or ``(d, m)``);
        returns an array with one row per step.
        """
        values = np.asarray(values, dtype=float)
        starts = np.concatenate(([0.0], self.jump_times))
        occupied = np.concatenate(([self.initial_state], self.jump_states)).astype(int)
        seg_vals = values[occupied]
        lengths = np.diff(np.concatenate((starts, [self.grid[-1]])))
        if seg_vals.ndim == 1:
            cum = np.concatenate(([0.0], np.cumsum(seg_vals[:-1] * lengths[:-1])))
            j = np.searchsorted(starts, self.grid, side="right") - 1
            F = cum[j] + seg_vals[j] * (self.grid - starts[j])
        else:
            cum = np.vstack(
                [np.zeros(seg_vals.shape[1]), np.cumsum(seg_vals[:-1] * lengths[:-1, None], axis=0)]
            )
            j = np.searchsorted(starts, self.grid, side="right") - 1
            F = cum[j] + seg_vals[j] * (self.grid - starts[j])[:, None]
        return np.diff(F, axis=0)


def _sample_jumps(A, mu, T, rng):
    d = A.shape[0]
    x = int(np.searchsorted(np.cumsum(mu), rng.random() * mu.sum(), side="right"))
    x = min(x, d - 1)
    initial = x
    rates = -np.diag(A)
    cum_rows = np.cumsum(np.where(np.eye(d, dtype=bool), 0.0, A), axis=1)
    times, states = [], []
    t = 0.0
    while rates[x] > 0:
        t += rng.exponential(1.0 / rates[x])
        if t > T:
            break
        row = cum_rows[x]
        y = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        x = min(y, d - 1)
        times.append(t)
        states.append(x)
    return initial, np.array(times, dtype=float), np.array(states, dtype=int)


def sample_ctmc(model, mu, cfg, path_index=0):
    """Exact-jump sample of the hidden chain, reported on the config grid.

    Holding times are exponential with rate ``-A[i, i]``; the next state is
    drawn proportionally to the off-diagonal entries of row ``i``. The draw
    is a deterministic function of ``(cfg.seed, path_index)``.
    """
    mu = probability_vector(mu, model.d)
    rng = path_rng(cfg.seed, path_index, STREAM_STATE)
    initial, times, states = _sample_jumps(model.A, mu, cfg.T, rng)
    grid = cfg.grid
    all_states = np.concatenate(([initial], states))
    idx = np.searchsorted(times, grid, side="right")
    return StatePath(
        grid=grid,
        states=all_states[idx],
        jump_times=times,
        jump_states=states,
        initial_state=initial,
        seed=int(cfg.seed),
        path_index=int(path_index),
    )
