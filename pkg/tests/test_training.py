import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from localind.datasets import DOMAIN_2D, Dataset, builtin_2d_cases, gen_confounded
from localind.models import MlpParams, mlp_init
from localind.training import (AdamState, EnsembleConfig, NumericalError, TrainingHistory,
                               adam_step, cos_squared, cross_entropy, diversity_penalty,
                               lit_objective, m_oversize_diagnostic, train_ensemble)

EPS = 1e-6


def linear(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return MlpParams((len(w), 1), "softplus", [w[None, :]], [np.array([b])])


# -- cross-entropy ------------------------------------------------------------

def test_cross_entropy_examples():
    assert cross_entropy(0.0, 1) == pytest.approx(math.log(2))
    assert cross_entropy(50.0, 1) < 1e-20
    # ln(1 + e^-3) to 30 digits via mpmath: 0.04858735157374205875892...
    assert cross_entropy(-3.0, 0) == pytest.approx(0.048587351573742059, rel=1e-14)


@settings(max_examples=50)
@given(z=st.floats(-700, 700), y=st.sampled_from([0, 1]))
def test_cross_entropy_finite_and_symmetric(z, y):
    ce = cross_entropy(z, y)
    assert np.isfinite(ce) and ce >= 0
    assert cross_entropy(-z, 1 - y) == pytest.approx(ce)


# -- cos^2 and the penalty ----------------------------------------------------

def test_cos_squared_examples():
    assert cos_squared([1, 0], [0, 1]) == 0
    assert cos_squared([1, 0], [2, 0]) == pytest.approx(4 / (4 + EPS))
    assert cos_squared([1, 1], [1, 0]) == pytest.approx(1 / (2 + EPS))


vectors = st.lists(st.floats(-100, 100), min_size=3, max_size=3).map(np.array)
scales = st.floats(0.5, 2) | st.floats(-2, -0.5)


@settings(max_examples=100)
@given(v=vectors, w=vectors, a=scales, b=scales)
def test_cos_squared_properties(v, w, a, b):
    c = cos_squared(v, w)
    assert 0 <= c <= 1
    assert c == cos_squared(w, v)
    if np.linalg.norm(v) >= 1 and np.linalg.norm(w) >= 1:
        scaled = cos_squared(a * v, b * w)
        assert abs(scaled - c) <= 1e-4 * max(c, 1e-300) or abs(scaled - c) < 1e-12


def test_cos_squared_batched():
    v = np.array([[1.0, 0.0], [1.0, 1.0]])
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(cos_squared(v, w), [0.0, 1 / (2 + EPS)])


def test_penalty_examples():
    x = np.array([0.3, -0.7])
    assert diversity_penalty([linear([1, 0]), linear([0, 1])], x) == 0
    same = linear([2, 3])
    assert diversity_penalty([same, same], x) == pytest.approx(1.0, abs=1e-6)
    three = [linear([1, 0]), linear([0, 1]), linear([1, 1])]
    assert diversity_penalty(three, x) == pytest.approx(1.0, abs=1e-6)


def test_penalty_is_permutation_invariant():
    models = [mlp_init((3, 4, 1), "softplus", 2, member=m) for m in range(3)]
    X = np.random.default_rng(0).normal(size=(5, 3))
    base = diversity_penalty(models, X)
    for perm in ([2, 0, 1], [1, 2, 0], [0, 2, 1]):
        np.testing.assert_allclose(diversity_penalty([models[i] for i in perm], X), base,
                                   rtol=1e-12)


# -- the objective ------------------------------------------------------------

def _batch(seed, D=2, n=16):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, D)), rng.integers(0, 2, n)


def test_objective_lambda_zero_is_ce_sum():
    X, Y = _batch(0)
    models = [mlp_init((2, 5, 1), "softplus", 1, member=m) for m in range(2)]
    cfg = EnsembleConfig(M=2, lam=0.0, hidden=(5,))
    value, _ = lit_objective(models, X, Y, cfg)
    expected = sum(np.mean(cross_entropy(m.logit(X), Y)) for m in models)
    assert value == pytest.approx(expected, rel=1e-12)


def test_objective_orthogonal_pair_is_ce_sum():
    X, Y = _batch(1)
    models = [linear([1, 0], 0.2), linear([0, 1], -0.1)]
    cfg = EnsembleConfig(M=2, lam=0.1, hidden=())
    value, _ = lit_objective(models, X, Y, cfg)
    expected = sum(np.mean(cross_entropy(m.logit(X), Y)) for m in models)
    assert value == pytest.approx(expected, rel=1e-12)


def test_objective_matches_numpy_reference():
    X, Y = _batch(2, D=3)
    models = [mlp_init((3, 4, 4, 1), "softplus", 5, member=m) for m in range(3)]
    cfg = EnsembleConfig(M=3, lam=0.3, hidden=(4, 4))
    value, _ = lit_objective(models, X, Y, cfg)
    ce = sum(np.mean(cross_entropy(m.logit(X), Y)) for m in models)
    pen = np.mean(diversity_penalty(models, X))
    assert value == pytest.approx(ce + 0.3 * pen, rel=1e-10)


def _fd_theta(models, X, Y, cfg, h=1e-5):
    out = []
    for m, model in enumerate(models):
        arrays = model.arrays()
        per = []
        for k, a in enumerate(arrays):
            g = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                for sign in (1, -1):
                    b = [x.copy() for x in arrays]
                    b[k][idx] += sign * h
                    trial = list(models)
                    trial[m] = model.with_arrays(b)
                    g[idx] += sign * lit_objective(trial, X, Y, cfg)[0] / (2 * h)
            per.append(g)
        out.append(per)
    return out


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10**6), width=st.integers(1, 6), act=st.sampled_from(["softplus"]))
def test_objective_theta_gradient_matches_finite_differences(seed, width, act):
    X, Y = _batch(seed, D=2, n=6)
    models = [mlp_init((2, width, 1), act, seed, member=m) for m in range(2)]
    cfg = EnsembleConfig(M=2, lam=0.5, hidden=(width,), activation=act)
    _, grads = lit_objective(models, X, Y, cfg)
    num = _fd_theta(models, X, Y, cfg)
    for ga, gn in zip(grads, num):
        for a, n in zip(ga, gn):
            assert np.max(np.abs(a - n)) <= 1e-3 * max(np.max(np.abs(n)), 1e-8)


# -- Adam ---------------------------------------------------------------------

def test_adam_first_step():
    cfg = EnsembleConfig(learning_rate=1e-3)
    p = [np.array([1.0, -2.0])]
    new, state = adam_step(p, [np.ones(2)], AdamState.zeros(p), cfg)
    np.testing.assert_allclose(new[0], p[0] - 1e-3, rtol=0, atol=1e-10)
    assert state.step == 1


def test_adam_zero_gradient_is_fixed_point():
    cfg = EnsembleConfig()
    p = [np.array([0.5, 3.0])]
    state = AdamState.zeros(p)
    for _ in range(50):
        p, state = adam_step(p, [np.zeros(2)], state, cfg)
    np.testing.assert_array_equal(p[0], [0.5, 3.0])


# -- training -----------------------------------------------------------------

@pytest.fixture(scope="module")
def case1():
    return gen_confounded(builtin_2d_cases()["case1"], DOMAIN_2D, 300, seed=1)


def test_training_is_deterministic(case1):
    cfg = EnsembleConfig(M=2, hidden=(8,), epochs=3, seed=4)
    m1, h1 = train_ensemble(case1, cfg)
    m2, h2 = train_ensemble(case1, cfg)
    for a, b in zip(m1, m2):
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)
    assert h1.objective == h2.objective


def test_single_model_fits_case1(case1):
    cfg = EnsembleConfig(M=1, lam=0.0, hidden=(16,), epochs=40, seed=1)
    _, history = train_ensemble(case1, cfg)
    assert history.final_accuracy()[0] >= 1 - cfg.accuracy_epsilon
    assert history.mean_cos2 == [0.0] * 40


def test_history_contents(case1, tmp_path):
    cfg = EnsembleConfig(M=2, hidden=(4,), epochs=2, seed=0)
    models, history = train_ensemble(case1, cfg)
    assert len(models) == 2 and history.epochs == 2
    assert set(history.initial) == {"cross_entropy", "penalty", "penalty_to_ce_ratio"}
    path = tmp_path / "h.csv"
    history.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,ce_0,ce_1,train_acc_0,train_acc_1,mean_cos2,objective"
    assert len(lines) == 3


def test_m_above_dimension_runs_and_is_reported(case1, caplog):
    cfg = EnsembleConfig(M=3, hidden=(4,), epochs=2)
    with caplog.at_level("WARNING", logger="localind"):
        models, history = train_ensemble(case1, cfg)
    assert len(models) == 3 and "exceeds the input dimension" in caplog.text
    _, report = m_oversize_diagnostic(history, cfg, input_dim=2)
    assert report["m_exceeds_input_dim"] is True


def test_non_finite_objective_raises():
    X = np.array([[1.0, 2.0], [np.inf, 0.0], [-1.0, -1.0]])
    ds = Dataset(X, [1, 0, 0], DOMAIN_2D)
    with pytest.raises(NumericalError):
        train_ensemble(ds, EnsembleConfig(M=2, hidden=(4,), epochs=1))


def test_config_validation():
    for bad in (dict(M=0), dict(lam=-1), dict(eps_stab=0), dict(accuracy_epsilon=1.5),
                dict(learning_rate=0), dict(activation="tanh")):
        with pytest.raises(ValueError):
            EnsembleConfig(**bad)


# -- M-oversize diagnostic ----------------------------------------------------

def _history(final):
    h = TrainingHistory()
    h.accuracy.append(list(final))
    return h


def test_diagnostic_no_flag_when_all_accurate():
    flag, report = m_oversize_diagnostic(_history([1.0, 1.0]), EnsembleConfig())
    assert flag is False and report["low_accuracy_models"] == []


def test_diagnostic_flags_low_accuracy_model():
    cfg = EnsembleConfig(M=3, accuracy_epsilon=0.05)
    flag, report = m_oversize_diagnostic(_history([1.0, 0.6, 0.99]), cfg)
    assert flag is True and report["low_accuracy_models"] == [1]
    assert "M=3" in report["message"]
