import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmmduality import (
    ConfigError,
    FiniteHMM,
    GeneratorViolation,
    NonFinite,
    ParseError,
    ShapeMismatch,
    SimConfig,
    ValidationError,
    kolmogorov_forward,
    load_model,
    make_model,
    model_from_dict,
    probability_vector,
    sample_ctmc,
    validate,
)
from hmmduality.model import Measure, in_M0, signed_measure

from helpers import irreducible_generator, random_generator

A2 = np.array([[-1.0, 1.0], [1.0, -1.0]])


def test_validate_symmetric_generator():
    m = make_model(A2, [[1.0], [-1.0]])
    assert m.d == 2 and m.m == 1
    np.testing.assert_array_equal(m.A, A2)


def test_row_sum_violation():
    with pytest.raises(GeneratorViolation):
        make_model([[-1.0, 1.0], [0.1, 0.0]], [[0.0], [0.0]])


def test_negative_off_diagonal():
    with pytest.raises(GeneratorViolation):
        make_model([[1.0, -1.0], [0.0, 0.0]], [0.0, 0.0])


def test_zero_generator_is_valid():
    m = make_model(np.zeros((2, 2)), [[1.0], [1.0]])
    assert not np.any(m.A)


def test_clamping_and_rebalancing():
    A = np.array([[-1.0, 1.0, -5e-10], [0.5, -1.0, 0.5], [0.0, 2.0, -2.0 + 3e-10]])
    m = make_model(A, np.zeros(3))
    assert m.A[0, 2] == 0.0
    np.testing.assert_array_equal(m.A.sum(axis=1), 0.0)


def test_shape_and_finiteness():
    with pytest.raises(ShapeMismatch):
        make_model(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeMismatch):
        make_model(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(NonFinite):
        make_model(np.zeros((2, 2)), [np.nan, 0.0])


def test_model_is_immutable():
    m = make_model(A2, [1.0, -1.0])
    with pytest.raises(ValueError):
        m.A[0, 0] = 3.0


def _write(tmp_path, data):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(data))
    return p


def test_load_three_state(tmp_path):
    A = [[-1, 1, 0], [0.5, -1, 0.5], [0, 2, -2]]
    p = _write(tmp_path, {"d": 3, "m": 1, "A": A, "H": [[0], [1], [3]], "priors": {"u": [1 / 3] * 3}})
    model, priors = load_model(p)
    assert model.d == 3
    np.testing.assert_allclose(priors["u"], 1 / 3)


def test_load_bad_prior(tmp_path):
    p = _write(tmp_path, {"d": 2, "m": 1, "A": A2.tolist(), "H": [[1], [-1]], "priors": {"p": [0.5, 0.4]}})
    with pytest.raises(ValidationError):
        load_model(p)


def test_load_missing_H(tmp_path):
    p = _write(tmp_path, {"d": 2, "m": 1, "A": A2.tolist()})
    with pytest.raises(ParseError):
        load_model(p)


def test_unknown_key_and_bad_json(tmp_path):
    with pytest.raises(ParseError):
        model_from_dict({"d": 2, "m": 1, "A": A2.tolist(), "H": [[1], [2]], "x": 0})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_model(p)
    with pytest.raises(ParseError):
        load_model(tmp_path / "missing.json")


def test_declared_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        model_from_dict({"d": 3, "m": 1, "A": A2.tolist(), "H": [[1], [2]]})


def test_size_limit():
    with pytest.raises(ParseError):
        model_from_dict({"d": 65, "m": 1, "A": [], "H": []})


def test_probability_and_signed_vectors():
    with pytest.raises(ValidationError):
        probability_vector([1.2, -0.2])
    assert in_M0(signed_measure([1.0, -1.0]))
    assert not in_M0(signed_measure([1.0, 0.0]))


def test_simconfig_validation():
    with pytest.raises(ConfigError):
        SimConfig(T=1.0, dt=0.3)
    with pytest.raises(ConfigError):
        SimConfig(T=1.0, dt=2.0)
    with pytest.raises(ConfigError):
        SimConfig(T=1.0, dt=0.1, n_paths=0)
    cfg = SimConfig(T=1.0, dt=0.1)
    assert cfg.n_steps == 10 and cfg.grid[-1] == 1.0
    assert cfg.with_prior([0.5, 0.5]).measure is Measure.PRIOR


def test_forward_identity_at_zero():
    m = make_model(A2, [1.0, -1.0])
    mu = np.array([0.3, 0.7])
    np.testing.assert_array_equal(kolmogorov_forward(m, mu, 0.0), mu)


def test_forward_two_state_limit():
    m = make_model(A2, [1.0, -1.0])
    mu = kolmogorov_forward(m, [1.0, 0.0], 20.0)
    np.testing.assert_allclose(mu, [0.5, 0.5], atol=1e-8)
    # gap e^{-2t}
    np.testing.assert_allclose(kolmogorov_forward(m, [1.0, 0.0], 0.3)[0], 0.5 + 0.5 * np.exp(-0.6), rtol=1e-12)


def test_forward_kills_M0_for_ergodic():
    rng = np.random.default_rng(1)
    m = make_model(irreducible_generator(4, rng), np.zeros(4))
    assert np.linalg.norm(kolmogorov_forward(m, [1.0, -1.0, 0.5, -0.5], 20.0)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(0.0, 5.0))
def test_forward_preserves_mass_and_positivity(d, seed, t):
    rng = np.random.default_rng(seed)
    m = make_model(random_generator(d, rng), np.zeros(d))
    mu = rng.dirichlet(np.ones(d))
    out = kolmogorov_forward(m, mu, t)
    assert abs(out.sum() - 1.0) < 1e-12
    assert out.min() >= -1e-12


def test_ctmc_no_jumps_when_A_zero():
    m = make_model(np.zeros((3, 3)), np.zeros(3))
    cfg = SimConfig(T=2.0, dt=0.1, seed=4)
    p = sample_ctmc(m, [0.2, 0.3, 0.5], cfg, path_index=7)
    assert len(p.jump_times) == 0
    assert np.all(p.states == p.states[0])


def test_ctmc_is_deterministic():
    rng = np.random.default_rng(2)
    m = make_model(random_generator(3, rng), np.zeros(3))
    cfg = SimConfig(T=3.0, dt=0.01, seed=11)
    a = sample_ctmc(m, [1 / 3] * 3, cfg, 5)
    b = sample_ctmc(m, [1 / 3] * 3, cfg, 5)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)
    np.testing.assert_array_equal(a.states, b.states)
    assert np.all(np.diff(a.jump_times) > 0)
    assert a.jump_times.size == 0 or (a.jump_times[0] > 0 and a.jump_times[-1] <= 3.0)


def test_ctmc_absorption_fraction():
    m = make_model([[-1.0, 1.0], [0.0, 0.0]], np.zeros(2))
    cfg = SimConfig(T=5.0, dt=0.05, seed=3)
    n = 10_000
    final = np.array([sample_ctmc(m, [1.0, 0.0], cfg, i).states[-1] for i in range(n)])
    frac = np.mean(final == 1)
    se = np.sqrt(frac * (1 - frac) / n)
    assert abs(frac - (1 - np.exp(-5.0))) < 3 * max(se, 1e-3)


def test_ctmc_marginal_matches_forward():
    rng = np.random.default_rng(5)
    m = make_model(irreducible_generator(3, rng), np.zeros(3))
    mu = np.array([0.6, 0.3, 0.1])
    cfg = SimConfig(T=0.8, dt=0.1, seed=9)
    n = 10_000
    states = np.array([sample_ctmc(m, mu, cfg, i).states[-1] for i in range(n)])
    emp = np.bincount(states, minlength=3) / n
    exact = kolmogorov_forward(m, mu, 0.8)
    se = np.sqrt(exact * (1 - exact) / n)
    assert np.all(np.abs(emp - exact) < 3 * se)


def test_finite_hmm_round_trip():
    m = make_model(A2, [[1.0], [-1.0]])
    again = model_from_dict(m.to_dict())[0]
    assert isinstance(again, FiniteHMM)
    np.testing.assert_array_equal(again.H, m.H)


def test_validate_idempotent():
    m = make_model(A2, [1.0, -1.0])
    np.testing.assert_array_equal(validate(m).A, m.A)
