import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lagstep as L
from lagstep import ConfigurationError, DelayLine, DivergenceError, InputError, RangeError

import _runs


def zero_lines(delays, dt):
    return [DelayLine(d, dt) for d in delays]


def test_unicycle_zero_histories():
    model = _runs.unicycle()
    X = np.array(_runs.X0)
    res = L.compute_predictors(model, 0.0, X, zero_lines(model.delays, 1e-3))
    np.testing.assert_array_equal(res.profile[0], X)
    np.testing.assert_array_equal(res.P[0], X)
    assert res.P[1][2] != X[2]
    fine = L.compute_predictors(model, 0.0, X, zero_lines(model.delays, 5e-4))
    np.testing.assert_allclose(res.P[1], fine.P[1], atol=1e-6)
    np.testing.assert_array_equal(res.at(0.5), res.P[0])
    assert res.nodes == (500, 1000)


def test_equal_delays_zero_input_keeps_state():
    f = lambda x, u: np.array([-x[0] * x[1] + u[0], x[0] * x[0] - x[1] + u[1]])
    model = L.SystemModel.from_functions(2, [0.3, 0.3], f, [lambda t, x: -x[0], lambda t, x: -x[1]])
    res = L.compute_predictors(model, 0.0, [0.0, 0.0], zero_lines(model.delays, 0.01))
    np.testing.assert_array_equal(res.P, np.zeros((2, 2)))


def test_pure_delay_integrator():
    model = L.SystemModel.from_functions(1, [0.3], lambda x, u: np.array([u[0]]), [lambda t, x: -x[0]])
    res = L.compute_predictors(model, 0.0, [1.0], [DelayLine(0.3, 0.01, 2.0)])
    assert res.P[0][0] == pytest.approx(1.0 + 2.0 * 0.3, abs=1e-10)


def test_interpreted_matches_compiled():
    import oracles

    def f(x, u):
        return np.array([u[1] * math.cos(x[2]), u[1] * math.sin(x[2]), u[0]])
    py = L.SystemModel.from_functions(3, [0.5, 1.0], f, [oracles.pomet_turn, oracles.pomet_speed])
    hist = [lambda th: 0.3 * math.sin(4 * th), lambda th: 0.2 * th]
    lines = [DelayLine(d, 0.01, h) for d, h in zip(py.delays, hist)]
    X = np.array([0.2, -0.4, 0.9])
    a = L.compute_predictors(py, 0.0, X, lines, closed_loop=True)
    b = L.compute_predictors(_runs.unicycle(), 0.0, X, lines, closed_loop=True)
    np.testing.assert_allclose(a.profile, b.profile, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(a.endpoint_inputs, b.endpoint_inputs, rtol=1e-12, atol=1e-13)


def test_closed_loop_endpoint_is_fixed_point():
    model = _runs.unicycle()
    lines = [DelayLine(0.5, 1e-3, 0.1), DelayLine(1.0, 1e-3, -0.2)]
    X = np.array([0.3, -0.1, 0.4])
    res = L.compute_predictors(model, 0.0, X, lines, closed_loop=True)
    for i, d in enumerate(model.delays):
        assert res.endpoint_inputs[i] == pytest.approx(model.eval_kappa(i, d, res.P[i]), abs=1e-14)


def test_line_validation():
    model = _runs.unicycle()
    X = np.zeros(3)
    with pytest.raises(ConfigurationError):
        L.compute_predictors(model, 0.0, X, [DelayLine(0.5, 1e-3)])
    with pytest.raises(ConfigurationError):
        L.compute_predictors(model, 0.0, X, [DelayLine(0.5, 1e-3), DelayLine(0.5, 1e-3)])
    with pytest.raises(ConfigurationError):
        L.compute_predictors(model, 0.0, X, [DelayLine(0.5, 1e-3), DelayLine(1.0, 5e-4)])
    with pytest.raises(ConfigurationError):
        L.compute_predictors(model, 0.1, X, zero_lines(model.delays, 1e-3))
    with pytest.raises(ConfigurationError):
        L.compute_predictors(model, 0.0, np.zeros(2), zero_lines(model.delays, 1e-3))
    with pytest.raises(InputError):
        L.compute_predictors(model, 0.0, [math.nan, 0, 0], zero_lines(model.delays, 1e-3))


def test_escape_reports_position():
    model = L.make_unicycle(1.0, 0.01, allow_reversed=True)
    with pytest.raises(DivergenceError) as info:
        L.compute_predictors(model, 0.0, [-12.0, -1.0, 0.0], zero_lines(model.delays, 1e-3), closed_loop=True)
    # the scalar blow-up escapes 0.0958 after the speed channel switches to feedback at x = 0.01
    assert 0.09 < info.value.position < 0.12
    assert info.value.position < math.log(2) / 3


# --- explicit linear route ---------------------------------------------------

def test_linear_zero_dynamics():
    model = L.make_linear([[0.0]], [(1.0,)], [(-1.0,)], [1.0])
    res = L.compute_predictors_linear(model, 0.0, [2.0], [DelayLine(1.0, 0.01)])
    assert res.P[0][0] == 2.0


@pytest.mark.parametrize("a", [-1.5, 0.0, 0.7])
def test_linear_homogeneous(a):
    model = L.make_linear([[a]], [(1.0,)], [(-abs(a) - 1.0,)], [0.8])
    res = L.compute_predictors_linear(model, 0.0, [1.0], [DelayLine(0.8, 0.01)])
    assert res.P[0][0] == pytest.approx(math.exp(a * 0.8), rel=1e-13)


@pytest.mark.parametrize("dt", [5e-3, 2.5e-3])
def test_linear_matches_generic_on_affine_histories(dt):
    # RK4 with interpolated affine inputs and Simpson are both O(dt^4) here;
    # odd nodes end in a trapezoid interval, so compare even nodes
    model = _runs.lti()
    lines = [DelayLine(0.25, dt, lambda th: 0.3 + 0.8 * th), DelayLine(0.5, dt, lambda th: -0.2 + 0.5 * th)]
    X = [1.0, -0.5]
    a = L.compute_predictors(model, 0.0, X, lines)
    b = L.compute_predictors_linear(model, 0.0, X, lines)
    assert np.max(np.abs(a.profile[::2] - b.profile[::2])) <= 10 * dt ** 4
    assert np.max(np.abs(a.P - b.P)) <= 10 * dt ** 4


def test_linear_matches_generic_on_smooth_histories_at_second_order():
    model = _runs.lti()
    diffs = []
    for dt in (5e-3, 2.5e-3, 1.25e-3):
        lines = [DelayLine(0.25, dt, lambda th: math.sin(7 * th)), DelayLine(0.5, dt, lambda th: math.cos(5 * th))]
        a = L.compute_predictors(model, 0.0, [1.0, -0.5], lines)
        b = L.compute_predictors_linear(model, 0.0, [1.0, -0.5], lines)
        diffs.append(np.max(np.abs(a.P - b.P)))
    assert diffs[0] / diffs[1] >= 3.5 and diffs[1] / diffs[2] >= 3.5


def test_linear_closed_loop_solves_endpoint():
    model = _runs.lti()
    lines = [DelayLine(0.25, 1e-3, 0.2), DelayLine(0.5, 1e-3, -0.1)]
    res = L.compute_predictors_linear(model, 0.0, [1.0, 0.0], lines, closed_loop=True)
    for i in range(2):
        assert res.endpoint_inputs[i] == pytest.approx(model.k[i] @ res.P[i], abs=1e-14)


def test_linear_partial_profile():
    model = _runs.lti()
    lines = [DelayLine(0.25, 1e-3, 0.2), DelayLine(0.5, 1e-3, -0.1)]
    full = L.compute_predictors_linear(model, 0.0, [1.0, 0.0], lines)
    ends = L.compute_predictors_linear(model, 0.0, [1.0, 0.0], lines, full_profile=False)
    np.testing.assert_allclose(ends.P, full.P, rtol=1e-13, atol=1e-15)
    assert np.isnan(ends.profile[100]).all()


def test_linear_requires_linear_model():
    model = _runs.unicycle()
    with pytest.raises(ConfigurationError):
        L.compute_predictors_linear(model, 0.0, np.zeros(3), zero_lines(model.delays, 1e-3))


# --- quadrature and matrix functions -------------------------------------------

@pytest.mark.parametrize("intervals", [2, 4, 10, 50])
def test_simpson_exact_on_cubics(intervals):
    h = 0.3
    x = np.arange(intervals + 1) * h
    w = L.simpson_weights(intervals, h)
    p = 2 * x ** 3 - x ** 2 + 3 * x - 1
    end = x[-1]
    exact = end ** 4 / 2 - end ** 3 / 3 + 1.5 * end ** 2 - end
    assert w @ p == pytest.approx(exact, rel=1e-13)


@pytest.mark.parametrize("intervals", [1, 3, 7])
def test_simpson_odd_tail_is_trapezoid(intervals):
    w = L.simpson_weights(intervals, 1.0)
    assert w.sum() == pytest.approx(intervals)
    x = np.arange(intervals + 1, dtype=float)
    assert w @ x == pytest.approx(intervals ** 2 / 2)


def test_expm_examples():
    np.testing.assert_array_equal(L.matrix_exponential(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(L.matrix_exponential(np.diag([1.0, -1.0])), np.diag([math.e, 1 / math.e]),
                               rtol=1e-15)
    np.testing.assert_allclose(L.matrix_exponential([[0, 1], [0, 0]]), [[1, 1], [0, 1]], rtol=1e-15, atol=1e-16)


def test_expm_rejects_bad_input():
    with pytest.raises(InputError):
        L.matrix_exponential([[math.nan]])
    with pytest.raises(ConfigurationError):
        L.matrix_exponential(np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 6), scale=st.floats(0.01, 10))
def test_expm_against_high_precision(seed, n, scale):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    M *= scale / np.linalg.norm(M, 1)
    mpmath.mp.dps = 40
    ref = np.array(mpmath.expm(mpmath.matrix(M.tolist())).tolist(), dtype=float)
    err = np.linalg.norm(L.matrix_exponential(M) - ref, 1) / np.linalg.norm(ref, 1)
    assert err <= 1e-12


def test_phi_examples():
    model = _runs.lti()
    for x in (0.0, 0.1, 0.25, 0.4, 0.5):
        np.testing.assert_array_equal(L.phi_transition(model, x, x), np.eye(2))
    single = L.make_linear([[0, 1], [-2, -3]], [(0, 1)], [(-1, 0)], [0.7])
    np.testing.assert_allclose(L.phi_transition(single, 0.7, 0.0), L.matrix_exponential(single.A * 0.7),
                               rtol=1e-15)
    np.testing.assert_allclose(L.phi_transition(model, 0.5, 0.0),
                               L.matrix_exponential(model.A_closed[1] * 0.25) @ L.matrix_exponential(model.A * 0.25),
                               rtol=1e-14)
    with pytest.raises(RangeError):
        L.phi_transition(model, 0.1, 0.2)
    with pytest.raises(RangeError):
        L.phi_transition(model, 0.6, 0.0)


@settings(max_examples=60, deadline=None)
@given(pts=st.lists(st.floats(0, 0.5), min_size=3, max_size=3))
def test_phi_semigroup(pts):
    model = _runs.lti()
    z, y, x = sorted(pts)
    lhs = L.phi_transition(model, x, y) @ L.phi_transition(model, y, z)
    np.testing.assert_allclose(lhs, L.phi_transition(model, x, z), rtol=1e-10, atol=1e-12)


def test_phi_propagates_homogeneous_cascade():
    # zero histories: the linear predictor profile is Phi(x, 0) X
    model = _runs.lti()
    X = np.array([0.7, -0.3])
    res = L.compute_predictors_linear(model, 0.0, X, zero_lines(model.delays, 1e-3))
    for x in (0.1, 0.25, 0.4, 0.5):
        np.testing.assert_allclose(res.at(x), L.phi_transition(model, x, 0.0) @ X, rtol=1e-12, atol=1e-14)
