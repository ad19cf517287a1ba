"""Command-line front end: ``hmmdual <subcommand> MODEL [options]``.

Reports go to stdout (or ``--out``) as JSON; diagnostics go to stderr.
Exit codes: 0 success (inconclusive statistics included), 2 input error,
3 numerical failure.
"""

import argparse
import csv
import hashlib
import json
import math
import sys

import numpy as np

from . import __version__
from .entropy import estimate_kl
from .errors import (
    ConfigError,
    HMMDualityError,
    InconclusiveRank,
    MassCollapse,
    NotInRange,
    ParseError,
    ValidationError,
)
from .gramian import (
    check_adjoint,
    deterministic_control,
    estimate_gramian,
    gramian_rank,
    gramian_scheme_expectation,
    named_control,
)
from .linear_gaussian import LinearPair, lg_apply_L, lg_apply_L_dagger, lg_closed_range_check
from .model import SimConfig, load_model, probability_vector
from .parallel import ENV_WORKERS, worker_count
from .stability import TV_CONVENTION, filter_stability_experiment, is_stabilizable
from .subspaces import (
    TOL_LEVEL,
    TOL_RANK,
    controllable_subspace,
    is_injective_observation,
    observable_functions,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _fmt(x):
    if isinstance(x, bool) or x is None:
        return "true" if x is True else "false" if x is False else "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(x, str):
        return _json_str(x)
    if isinstance(x, np.ndarray):
        return _fmt(x.tolist())
    if isinstance(x, dict):
        return "{" + ", ".join(f"{_json_str(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _json_str(s):
    return json.dumps(s)


def dumps(obj):
    """JSON with insertion-ordered keys and 17 significant digits per float."""
    return _fmt(obj) + "\n"


def _model_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _envelope(command, args, cfg=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "hmmdual",
        "version": __version__,
        "command": command,
        "model_sha256": _model_hash(args.model),
        "cfg": None if cfg is None else cfg.to_dict(),
    }


def _emit(report, args):
    text = dumps(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cfg(args, **kw):
    return SimConfig(T=args.T, dt=args.dt, n_paths=args.paths, seed=args.seed, **kw)


def _prior(spec, priors, d):
    if spec in priors:
        return priors[spec]
    try:
        values = [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"unknown prior {spec!r}; known: {sorted(priors)}") from None
    return probability_vector(values, d)


def load_control_table(path, m, grid):
    """Read ``t,u_1..u_m`` rows and interpolate linearly onto ``grid``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ParseError(f"cannot read control table {path}: {exc}") from None
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(f"control table {path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != m + 1 or data.shape[0] < 2:
        raise ParseError(f"control table {path} needs a header and rows t,u_1..u_{m}")
    t = data[:, 0]
    if np.any(np.diff(t) <= 0) or t[0] > grid[0] + 1e-12 or t[-1] < grid[-1] - 1e-12:
        raise ParseError(f"control table {path} must have increasing t covering [0, T]")
    return np.column_stack([np.interp(grid, t, data[:, j + 1]) for j in range(m)])


def cmd_analyze(args):
    model, _ = load_model(args.model)
    C = controllable_subspace(model, args.tol_rank)
    O = observable_functions(model, args.tol_rank, TOL_LEVEL)
    stab = is_stabilizable(model, args.tol_rank)
    report = _envelope("analyze", args)
    report.update(
        {
            "observable": C.dim == model.d,
            "d": model.d,
            "dim_C": C.dim,
            "dim_O": O.dim,
            "injective_H": is_injective_observation(model.H),
        }
    )
    report.update(stab.to_dict())
    return report


def cmd_gramian(args):
    model, _ = load_model(args.model)
    cfg = _cfg(args)
    W = estimate_gramian(model, cfg)
    s = np.linalg.svd(W.W, compute_uv=False)
    try:
        rank = gramian_rank(W)
    except InconclusiveRank:
        rank = "inconclusive"
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "singular_value"])
            for i, v in enumerate(s):
                w.writerow([i + 1, format(float(v), ".17g")])
    # the scheme expectation is exact for this estimator, so these are pure noise
    expected = gramian_scheme_expectation(model, cfg)
    live = W.stderr > 0
    z = np.abs(W.W - expected)[live] / W.stderr[live]
    report = _envelope("gramian", args, cfg)
    report.update(
        {
            "rank": rank,
            "dim_C": controllable_subspace(model).dim,
            "W": W.W,
            "stderr": W.stderr,
            "singular_values": s,
            "z_scores": {"max_entry_vs_scheme_expectation": float(z.max()) if z.size else 0.0},
        }
    )
    return report


def _control(args, model, cfg):
    if args.control.startswith("table:"):
        loader = lambda p: deterministic_control(load_control_table(p, model.m, cfg.grid), model.m, "table")
    else:
        loader = None
    try:
        return named_control(args.control, model.m, loader)
    except ValueError as exc:
        if isinstance(exc, HMMDualityError):
            raise
        raise ConfigError(str(exc)) from None


def cmd_duality(args):
    model, priors = load_model(args.model)
    cfg = _cfg(args)
    mu = _prior(args.prior, priors, model.d)
    U = _control(args, model, cfg)
    rep = check_adjoint(model, mu, U, args.c, cfg, independent=args.independent)
    report = _envelope("duality", args, cfg)
    report.update(
        {
            "prior": mu,
            "control": U.name,
            "c": args.c,
            "lhs": rep.lhs,
            "rhs": rep.rhs,
            "stderr_lhs": rep.stderr_lhs,
            "stderr_rhs": rep.stderr_rhs,
            "z_score": rep.z_score,
            "z_scores": {"adjoint": rep.z_score},
            "diff_mean": rep.diff_mean,
            "diff_stderr": rep.diff_stderr,
            "common_paths": rep.common_paths,
        }
    )
    print(f"z = {rep.z_score:.3f}", file=sys.stderr)
    return report


def cmd_filter(args):
    model, priors = load_model(args.model)
    mu = _prior(args.mu, priors, model.d)
    nu = _prior(args.nu, priors, model.d)
    cfg = _cfg(args)
    curve = filter_stability_experiment(model, mu, nu, cfg)
    if args.csv:
        curve.to_csv(args.csv)
    report = _envelope("filter", args, cfg.with_prior(mu))
    report.update(
        {
            "mu": mu,
            "nu": nu,
            "tv_convention": TV_CONVENTION,
            "initial_tv": curve.mean_tv[0],
            "final_tv": curve.mean_tv[-1],
            "final_stderr": curve.stderr[-1],
        }
    )
    return report


def cmd_entropy(args):
    model, priors = load_model(args.model)
    mu = _prior(args.mu, priors, model.d)
    nu = _prior(args.nu, priors, model.d)
    cfg = _cfg(args)
    est = estimate_kl(model, mu, nu, cfg)
    report = _envelope("entropy", args, cfg.with_prior(mu))
    report.update({"mu": mu, "nu": nu})
    report.update(est.to_dict())
    return report


def cmd_lg(args):
    model, _ = load_model(args.model, check_generator=False)
    pair = LinearPair(model.A, model.H, args.T)
    cr = lg_closed_range_check(pair, args.dt)
    rng = np.random.default_rng(args.seed)
    n = len(SimConfig(T=args.T, dt=args.dt).grid)
    xi = rng.standard_normal(model.d)
    u = rng.standard_normal((n, model.m))
    lhs = float(xi @ lg_apply_L(pair, u, args.dt))
    w = np.full(n, args.dt)
    w[0] = w[-1] = 0.5 * args.dt
    rhs = float(w @ np.sum(lg_apply_L_dagger(pair, xi, args.dt) * u, axis=1))
    report = _envelope("lg", args)
    report.update({"T": args.T, "dt": args.dt, "seed": args.seed, "pairing_lhs": lhs, "pairing_rhs": rhs,
                   "pairing_error": abs(lhs - rhs)})
    report.update(cr.to_dict())
    return report


def build_parser():
    p = argparse.ArgumentParser(
        prog="hmmdual",
        description="Observability, duality and filter-stability analysis of finite-state HMMs.",
        epilog=f"Worker threads: ${ENV_WORKERS} (default: all cores). Results do not depend on it.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mc=True, T=1.0, dt=1e-3, paths=10000):
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        if mc:
            sp.add_argument("--T", type=float, default=T)
            sp.add_argument("--dt", type=float, default=dt)
            sp.add_argument("--paths", type=int, default=paths)
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("analyze", help="subspace, observability and stabilizability tests")
    common(sp, mc=False)
    sp.add_argument("--tol-rank", type=float, default=TOL_RANK)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("gramian", help="Monte Carlo gramian and its rank")
    common(sp)
    sp.add_argument("--csv", help="write singular values here")
    sp.set_defaults(func=cmd_gramian)

    sp = sub.add_parser("duality", help="check the adjoint identity for one control")
    common(sp)
    sp.add_argument("--prior", required=True, help="prior name from the model file, or comma list")
    sp.add_argument("--control", default="zero", help="zero | const:v | sin_of_Z | tanh_of_Z | table:FILE")
    sp.add_argument("--c", type=float, default=0.0, help="terminal constant")
    sp.add_argument("--independent", action="store_true", help="use disjoint paths for the two sides")
    sp.set_defaults(func=cmd_duality)

    sp = sub.add_parser("filter", help="filter-stability decay curve")
    common(sp, T=10.0, dt=1e-2, paths=1000)
    sp.add_argument("--mu", required=True)
    sp.add_argument("--nu", required=True)
    sp.add_argument("--csv", help="write t, mean_tv, stderr here")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("entropy", help="relative entropy of observation laws")
    common(sp)
    sp.add_argument("--mu", required=True)
    sp.add_argument("--nu", required=True)
    sp.set_defaults(func=cmd_entropy)

    sp = sub.add_parser("lg", help="deterministic linear duality checks")
    common(sp, mc=False)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_lg)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        worker_count()
    except ValueError as exc:
        print(f"hmmdual: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        report = args.func(args)
        _emit(report, args)
    except (ParseError, ValidationError, ConfigError, OSError) as exc:
        print(f"hmmdual: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MassCollapse, NotInRange, FloatingPointError, np.linalg.LinAlgError, HMMDualityError, ValueError) as exc:
        print(f"hmmdual: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
