"""Dual control operator, its adjoint, and the controllability gramian.

For a control ``U`` adapted to the observations and a constant ``c`` the
dual operator returns the time-zero value of the backward equation

    -dY = (A Y + H U + sum_j diag(H[:, j]) V^j) dt - V dZ,    Y_T = c 1.

It is evaluated through the martingale representation

    L(U, c) = E~[ int_0^T Psi_t^T H U_t dt ] + c 1,

which is unbiased for this linear equation and needs no regression. The
adjoint maps a measure ``mu`` to ``(H^T Psi_t mu, mu(1))`` and the gramian is
``W = L L^dagger = 1 1^T + E~[int Psi^T H H^T Psi dt]``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, InconclusiveRank, NotInRange, ShapeMismatch
from .model import Measure, SimConfig, probability_vector, signed_measure
from .parallel import map_chunks, mean_and_stderr
from .simulate import batch_steps

RANK_FLOOR = 1e-8

__all__ = [
    "ControlFunctional",
    "DualityReport",
    "GramianEstimate",
    "MinNormResult",
    "PairingReport",
    "StepView",
    "apply_L",
    "apply_L_dagger",
    "check_adjoint",
    "constant_control",
    "deterministic_control",
    "deterministic_cost",
    "estimate_gramian",
    "fit_deterministic_control",
    "gramian_rank",
    "gramian_scheme_expectation",
    "gramian_second_moment",
    "min_norm_control",
    "named_control",
    "pairing_consistency_check",
    "sin_of_Z",
    "solve_dual_ode",
    "tanh_of_Z",
    "zero_control",
]


@dataclass(frozen=True)
class StepView:
    """What a control may look at when acting at grid time ``t_k``.

    Everything here is a function of the increments strictly before
    ``t_k``: ``Z`` is the observation value at ``t_k``, ``dZ_past`` the
    increments ``dZ_0 .. dZ_{k-1}`` (shape ``(n, k, m)``), and ``Psi`` the
    propagator at ``t_k`` (shape ``(n, d, d)``).
    """

    k: int
    t: float
    Z: np.ndarray
    dZ_past: np.ndarray
    Psi: np.ndarray


class ControlFunctional:
    """An adapted control ``U_t``, evaluated on batches of paths.

    Parameters
    ----------
    rule : callable
        ``rule(view) -> array`` of shape ``(n, m)`` (or broadcastable to it)
        for a :class:`StepView` ``view``.
    m : int
        Control dimension.
    name : str
    """

    def __init__(self, rule, m, name="feedback"):
        self.rule = rule
        self.m = int(m)
        self.name = name
        self._u = None

    @property
    def kind(self):
        return "deterministic" if self._u is not None else "feedback"

    def __call__(self, view):
        n = view.Z.shape[0]
        out = np.broadcast_to(np.asarray(self.rule(view), dtype=float), (n, self.m))
        if not np.all(np.isfinite(out)):
            raise ValueError(f"control {self.name!r} produced non-finite values at step {view.k}")
        return out

    def values(self, grid):
        """Table of a deterministic control on ``grid``, shape ``(len(grid), m)``."""
        if self._u is None:
            raise TypeError(f"control {self.name!r} depends on the observations")
        u = self._u
        if callable(u):
            table = np.array([np.broadcast_to(np.atleast_1d(u(t)), (self.m,)) for t in grid])
        else:
            table = np.asarray(u, dtype=float).reshape(-1, self.m)
            if table.shape[0] != len(grid):
                raise ShapeMismatch(
                    f"control table has {table.shape[0]} rows, grid has {len(grid)} points"
                )
        return table.astype(float)

    def __repr__(self):
        return f"ControlFunctional({self.name!r}, m={self.m}, kind={self.kind})"


def deterministic_control(u, m, name="deterministic"):
    """Control that ignores the observations.

    ``u`` is either a callable ``t -> (m,)`` or a table with one row per grid
    point of the configuration it is used with.
    """
    if callable(u):
        rule = lambda view: np.atleast_1d(u(view.t))
    else:
        table = np.asarray(u, dtype=float).reshape(-1, m)
        rule = lambda view: table[view.k]
    ctrl = ControlFunctional(rule, m, name)
    ctrl._u = u
    return ctrl


def zero_control(m):
    return deterministic_control(lambda t: np.zeros(m), m, "zero")


def constant_control(value, m=None):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    m = v.size if m is None else m
    v = np.broadcast_to(v, (m,)).copy()
    return deterministic_control(lambda t: v, m, f"const:{','.join(map(str, v))}")


def tanh_of_Z(m):
    return ControlFunctional(lambda view: np.tanh(view.Z), m, "tanh_of_Z")


def sin_of_Z(m):
    return ControlFunctional(lambda view: np.sin(view.Z), m, "sin_of_Z")


def named_control(spec, m, table_loader=None):
    """Parse ``zero | const:v[,v...] | sin_of_Z | tanh_of_Z | table:<file>``."""
    if spec == "zero":
        return zero_control(m)
    if spec == "sin_of_Z":
        return sin_of_Z(m)
    if spec == "tanh_of_Z":
        return tanh_of_Z(m)
    if spec.startswith("const:"):
        try:
            vals = [float(x) for x in spec[len("const:"):].split(",")]
        except ValueError:
            raise ValueError(f"bad constant control {spec!r}") from None
        if len(vals) not in (1, m):
            raise ValueError(f"constant control needs 1 or {m} values")
        return constant_control(vals, m)
    if spec.startswith("table:"):
        if table_loader is None:
            raise ValueError("table controls need a loader")
        return table_loader(spec[len("table:"):])
    raise ValueError(f"unknown control {spec!r}")


def _trapezoid_weights(cfg):
    w = np.full(cfg.n_steps + 1, cfg.step)
    w[0] = w[-1] = 0.5 * cfg.step
    return w


def _require_tilde(cfg):
    if cfg.measure is not Measure.TILDE:
        raise ConfigError("this estimator runs under the reference measure (measure='tilde')")


def _control_pass(model, U, cfg, mu=None, start=0):
    """Per-path functionals of one control along the paths of ``cfg``.

    Returns a dict of arrays with one row per path:
    ``y`` = int Psi^T H U dt, ``energy`` = int |U|^2 dt,
    ``pair`` = int U . H^T sigma^mu dt (if ``mu`` is given) and
    ``ito`` = sum_k U_k . dZ_k.
    """
    if U.m != model.m:
        raise ShapeMismatch(f"control has dimension {U.m}, model has m = {model.m}")
    d, H = model.d, model.H
    w = _trapezoid_weights(cfg)
    N = cfg.n_steps
    X0 = np.eye(d) if mu is None else np.column_stack([np.eye(d), mu])

    def chunk(paths):
        n = len(paths)
        y = np.zeros((n, d))
        energy = np.zeros(n)
        pair = np.zeros(n)
        ito = np.zeros(n)
        for st in batch_steps(model, cfg, paths, X0):
            Psi = st.X[:, :, :d]
            u = U(StepView(st.k, st.t, st.Z, st.dZ_past, Psi))
            wk = w[st.k]
            Hu = u @ H.T
            y += wk * np.matmul(Psi.transpose(0, 2, 1), Hu[:, :, None])[:, :, 0]
            energy += wk * np.sum(u * u, axis=1)
            if mu is not None:
                pair += wk * np.sum(u * (st.X[:, :, d] @ H), axis=1)
            if st.k < N:
                ito += np.sum(u * st.dZ[:, st.k, :], axis=1)
        return y, energy, pair, ito

    parts = map_chunks(chunk, cfg.n_paths, start=start)
    keys = ("y", "energy", "pair", "ito")
    return {k: np.concatenate([p[i] for p in parts]) for i, k in enumerate(keys)}


@dataclass(frozen=True, eq=False)
class GramianEstimate:
    W: np.ndarray
    stderr: np.ndarray
    n_paths: int
    cfg: SimConfig


def estimate_gramian(model, cfg, start=0):
    """Monte Carlo gramian ``1 1^T + E~ int Psi^T H H^T Psi dt``.

    The time integral is the trapezoidal rule on the simulation grid;
    standard errors come from the path-level spread.
    """
    _require_tilde(cfg)
    d, HT = model.d, model.H.T
    w = _trapezoid_weights(cfg)

    def chunk(paths):
        G = np.zeros((len(paths), d, d))
        for st in batch_steps(model, cfg, paths, np.eye(d)):
            B = np.matmul(HT, st.X)
            G += w[st.k] * np.matmul(B.transpose(0, 2, 1), B)
        return G

    G = np.concatenate(map_chunks(chunk, cfg.n_paths, start=start))
    mean, se = mean_and_stderr(G)
    W = np.ones((d, d)) + mean
    W = 0.5 * (W + W.T)
    se = 0.5 * (se + se.T)
    return GramianEstimate(W, se, int(cfg.n_paths), cfg)


def gramian_second_moment(model, T):
    """Exact gramian of the continuous-time system (no Monte Carlo).

    ``M(t) = E~[Psi_t^T M Psi_t]`` solves the linear matrix equation
    ``M' = A M + M A^T + (H H^T) * M`` (``*`` entrywise), so the time
    integral is one augmented matrix exponential of size ``d^2 + 1``.
    """
    d, A, H = model.d, model.A, model.H
    I = np.eye(d)
    L = np.kron(I, A) + np.kron(A, I)
    for j in range(model.m):
        Dj = np.diag(H[:, j])
        L += np.kron(Dj, Dj)
    n = d * d
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = L
    aug[:n, n] = (H @ H.T).ravel(order="F")
    integral = expm(aug * T)[:n, n]
    W = np.ones((d, d)) + integral.reshape(d, d, order="F")
    return 0.5 * (W + W.T)


def gramian_scheme_expectation(model, cfg):
    """Exact expectation of :func:`estimate_gramian` for the discrete scheme.

    With ``E = exp(A^T dt)`` and ``K_ij = exp(H_i . H_j dt)`` one step maps
    ``E~[Psi_k^T M Psi_k]`` to ``E~[Psi_k^T (K * (E^T M E)) Psi_k]``.
    """
    E = expm(model.A.T * cfg.step)
    HH = model.H @ model.H.T
    K = np.exp(HH * cfg.step)
    w = _trapezoid_weights(cfg)
    M = HH.copy()
    acc = w[0] * M
    for k in range(1, cfg.n_steps + 1):
        M = K * (E.T @ M @ E)
        acc += w[k] * M
    W = np.ones_like(HH) + acc
    return 0.5 * (W + W.T)


def gramian_rank(W, tol_rank=None):
    """Numerical rank of a gramian estimate.

    Singular values above ``tol_rank * s_max`` count. The default
    ``tol_rank = max(1e-8, 10 * max(stderr) / s_max)`` keeps Monte Carlo
    noise out of the count; singular values between ``1e-8 * s_max`` and
    that threshold cannot be told apart from noise.

    Raises
    ------
    InconclusiveRank
        A singular value lies inside that band.
    """
    if isinstance(W, GramianEstimate):
        M, se = W.W, W.stderr
    else:
        M = np.asarray(W, dtype=float)
        se = np.zeros_like(M)
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return 0
    explicit = tol_rank is not None
    if not explicit:
        tol_rank = max(RANK_FLOOR, 10.0 * float(np.max(se)) / smax)
    upper = tol_rank * smax
    lower = upper if explicit else RANK_FLOOR * smax
    in_band = (s > lower) & (s <= upper)
    if np.any(in_band):
        raise InconclusiveRank(
            f"{int(in_band.sum())} singular value(s) inside the noise band "
            f"({lower:.3g}, {upper:.3g}]",
            singular_values=s,
            band=(lower, upper),
        )
    return int(np.sum(s > upper))


def apply_L(model, U, c, cfg, return_stderr=False, start=0):
    """``L(U, c) = Y_0`` by Monte Carlo under the reference measure."""
    _require_tilde(cfg)
    res = _control_pass(model, U, cfg, start=start)
    mean, se = mean_and_stderr(res["y"])
    y0 = mean + c
    return (y0, se) if return_stderr else y0


def apply_L_dagger(model, mu, path):
    """``(H^T Psi_t mu on the grid, mu(1))`` along one simulated path."""
    mu = signed_measure(mu, model.d)
    sigma = np.exp(path.log_scale)[:, None] * (path.Psi @ mu)
    return sigma @ model.H, float(mu.sum())


@dataclass(frozen=True)
class DualityReport:
    """Both sides of ``mu(L(U, c)) = <L^dagger mu, (U, c)>``.

    ``z_score`` divides the gap by ``sqrt(stderr_lhs^2 + stderr_rhs^2)``.
    When both sides use the same paths, ``diff_mean`` and ``diff_stderr``
    describe the per-path difference.
    """

    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    z_score: float
    diff_mean: float
    diff_stderr: float
    n_paths: int
    common_paths: bool


def _z(a, b, se_a, se_b):
    gap = abs(a - b)
    denom = float(np.hypot(se_a, se_b))
    if denom > 0:
        return gap / denom
    return 0.0 if gap <= 1e-12 * max(1.0, abs(a), abs(b)) else float("inf")


def check_adjoint(model, mu, U, c, cfg, independent=False):
    """Estimate ``mu(Y_0)`` and ``E~ int U^T sigma_t^mu(h) dt + c mu(1)``.

    By default both sides are computed on the same paths (common random
    numbers). The right side propagates ``sigma^mu`` as its own vector
    rather than forming ``Psi mu``. With ``independent=True`` the right side
    uses the next ``n_paths`` paths instead, which turns the comparison into
    a two-sample test.
    """
    _require_tilde(cfg)
    mu = signed_measure(mu, model.d)
    mass = float(mu.sum())
    left = _control_pass(model, U, cfg, mu=mu)
    lhs_p = left["y"] @ mu + c * mass
    right = left if not independent else _control_pass(model, U, cfg, mu=mu, start=cfg.n_paths)
    rhs_p = right["pair"] + c * mass
    (lhs, rhs), (se_l, se_r) = mean_and_stderr(np.column_stack([lhs_p, rhs_p]))
    if independent:
        dm, dse = float(lhs - rhs), float(np.hypot(se_l, se_r))
    else:
        dm, dse = (float(v) for v in mean_and_stderr(lhs_p - rhs_p))
    return DualityReport(
        lhs=float(lhs),
        rhs=float(rhs),
        stderr_lhs=float(se_l),
        stderr_rhs=float(se_r),
        z_score=float(_z(lhs, rhs, se_l, se_r)),
        diff_mean=dm,
        diff_stderr=dse,
        n_paths=int(cfg.n_paths),
        common_paths=not independent,
    )


def _control_table(u, grid, m):
    if isinstance(u, ControlFunctional):
        return u.values(grid)
    if callable(u):
        return deterministic_control(u, m).values(grid)
    table = np.asarray(u, dtype=float).reshape(len(grid), -1)
    if table.shape[1] != m:
        raise ShapeMismatch(f"control table has {table.shape[1]} columns, need {m}")
    return table


def solve_dual_ode(model, u, c, T, dt):
    """``y_0`` for ``-y' = A y + H u``, ``y_T = c 1`` with deterministic ``u``.

    Backward steps use the exact propagator ``exp(A dt)`` and the
    trapezoidal rule for the source term, so the error is ``O(dt^2)``.
    """
    cfg = SimConfig(T=T, dt=dt)
    grid = cfg.grid
    table = _control_table(u, grid, model.m)
    E = expm(model.A * cfg.step)
    Hu = table @ model.H.T
    h = 0.5 * cfg.step
    y = np.full(model.d, float(c))
    for k in range(cfg.n_steps - 1, -1, -1):
        y = E @ (y + h * Hu[k + 1]) + h * Hu[k]
    return y


def fit_deterministic_control(model, f, basis, T, dt):
    """Deterministic control in ``span(basis)`` plus a constant ``c`` whose
    dual ODE solution reaches ``y_0 = f`` (least squares, minimum
    coefficient norm).

    Returns ``(table, c, residual)`` where ``table`` samples the control on
    the grid of ``(T, dt)``.
    """
    f = np.asarray(f, dtype=float)
    cfg = SimConfig(T=T, dt=dt)
    tables = [_control_table(b, cfg.grid, model.m) for b in basis]
    cols = [solve_dual_ode(model, tab, 0.0, T, dt) for tab in tables]
    cols.append(solve_dual_ode(model, np.zeros((len(cfg.grid), model.m)), 1.0, T, dt))
    M = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(M, f, rcond=None)
    table = sum(a * tab for a, tab in zip(coef[:-1], tables))
    return table, float(coef[-1]), float(np.linalg.norm(M @ coef - f))


def deterministic_cost(table, c, T, dt):
    """``int |u|^2 dt + c^2`` with the trapezoidal rule."""
    w = _trapezoid_weights(SimConfig(T=T, dt=dt))
    table = np.asarray(table, dtype=float).reshape(len(w), -1)
    return float(w @ np.sum(table**2, axis=1) + c * c)


@dataclass(frozen=True, eq=False)
class MinNormResult:
    """Minimum-energy control reaching ``Y_0 = f``.

    ``achieved_Y0`` is re-estimated on paths disjoint from the gramian
    estimate; ``residual_stderr`` combines its standard error with the
    propagated uncertainty of ``mu_star``.
    """

    mu_star: np.ndarray
    achieved_Y0: np.ndarray
    achieved_stderr: np.ndarray
    residual_stderr: np.ndarray
    cost: float
    cost_stderr: float
    cost_from_gramian: float
    residual: float
    solve_residual: float
    rank: int
    control: ControlFunctional


def min_norm_control(model, f, W, cfg, tol=1e-6, start=None):
    """Control ``U_t = H^T Psi_t mu*`` with ``mu* = W^+ f``.

    The pseudo-inverse drops directions below the :func:`gramian_rank`
    threshold. Applied with terminal constant ``mu*(1)`` the control
    transfers the dual system to ``f``; no other control reaching ``f`` has
    smaller ``E~ int |U|^2 dt + c^2``.

    Raises
    ------
    InconclusiveRank
        Propagated from :func:`gramian_rank`.
    NotInRange
        ``|W mu* - f| > tol * max(1, |f|)``.
    """
    _require_tilde(cfg)
    f = np.asarray(f, dtype=float)
    if f.shape != (model.d,):
        raise ShapeMismatch(f"f must have length {model.d}")
    rank = gramian_rank(W)
    Wm = W.W
    vals, vecs = np.linalg.eigh(Wm)
    order = np.argsort(-np.abs(vals))
    keep = order[:rank]
    V = vecs[:, keep]
    mu_star = V @ ((V.T @ f) / vals[keep])
    solve_res = float(np.linalg.norm(Wm @ mu_star - f))
    if solve_res > tol * max(1.0, float(np.linalg.norm(f))):
        raise NotInRange(f"f is not in the range of W (residual {solve_res:.3g})")

    HT = model.H.T
    ms = mu_star.copy()
    control = ControlFunctional(lambda view: (HT @ (view.Psi @ ms)[:, :, None])[:, :, 0], model.m, "min_norm")
    c = float(mu_star.sum())
    if start is None:
        start = W.n_paths if W.cfg.seed == cfg.seed else 0
    res = _control_pass(model, control, cfg, start=start)
    (y_mean, y_se) = mean_and_stderr(res["y"])
    achieved = y_mean + c
    e_mean, e_se = mean_and_stderr(res["energy"])
    prop = np.sqrt((W.stderr**2) @ (mu_star**2))
    return MinNormResult(
        mu_star=mu_star,
        achieved_Y0=achieved,
        achieved_stderr=y_se,
        residual_stderr=np.sqrt(y_se**2 + prop**2),
        cost=float(e_mean) + c * c,
        cost_stderr=float(e_se),
        cost_from_gramian=float(mu_star @ (Wm - 1.0) @ mu_star) + c * c,
        residual=float(np.linalg.norm(achieved - f)),
        solve_residual=solve_res,
        rank=rank,
        control=control,
    )


@dataclass(frozen=True)
class PairingReport:
    """``mu(Y_0)`` (reference measure) against ``c + E^mu int U^T dZ``."""

    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    z_score: float


def pairing_consistency_check(model, mu, U, c, cfg, lhs=None):
    """Check ``E^mu[Y_T(X_T)] = mu(Y_0) - E^mu int U^T dZ`` with ``Y_T = c 1``.

    ``cfg`` supplies the physical-measure paths (its prior must be ``mu``;
    a reference-measure ``cfg`` is switched to ``P^mu``). ``lhs`` is an
    optional precomputed ``(mu(Y_0), stderr)``; otherwise ``Y_0`` is
    estimated under the reference measure from an independent stream with
    the same seed and path count.
    """
    mu = probability_vector(mu, model.d)
    if cfg.measure is Measure.TILDE:
        cfg = cfg.with_prior(mu)
    elif not np.allclose(cfg.prior, mu, rtol=0, atol=1e-12):
        raise ConfigError("cfg.prior must equal mu")
    if lhs is None:
        res = _control_pass(model, U, cfg.under_tilde())
        lv, ls = mean_and_stderr(res["y"] @ mu + c)
        lhs = (float(lv), float(ls))
    res = _control_pass(model, U, cfg)
    rv, rs = mean_and_stderr(res["ito"] + c)
    return PairingReport(
        lhs=lhs[0],
        rhs=float(rv),
        stderr_lhs=lhs[1],
        stderr_rhs=float(rs),
        z_score=_z(lhs[0], float(rv), lhs[1], float(rs)),
    )
