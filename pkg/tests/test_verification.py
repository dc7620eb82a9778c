import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lagstep as L
from lagstep import ConfigurationError, DelayLine, Scenario
from lagstep.verification import (backstepping_transform, compensation_error, decay_fit, fit_decay,
                                  format_report, inverse_transform, lines_from_trace, parse_report,
                                  predictor_consistency, round_trip_residual, verification_report)

import _runs
import oracles


def line_at(delay, dt, t, fn):
    n = round(delay / dt)
    return DelayLine.from_samples(delay, dt, [fn(t - delay + j * dt) for j in range(n + 1)], now=t)


def smooth_lines(model, dt, t=0.0):
    return [line_at(d, dt, t, lambda s, a=0.3 * (i + 1): a * math.sin(2 * s) + 0.1)
            for i, d in enumerate(model.delays)]


# ---- transform identities -------------------------------------------------

def test_boundary_identity_on_committed_controls():
    tr = _runs.unicycle_run()
    model = _runs.unicycle()
    for k in (0, 1, 250, 500, 999, 1000, 4000, 40000):
        snap = backstepping_transform(model, tr.times[k], tr.states[k], lines_from_trace(tr, k))
        assert np.max(np.abs(snap.boundary)) <= 1e-12


def test_transform_vanishes_at_equilibrium():
    model = _runs.unicycle()
    lines = [DelayLine(d, 1e-3) for d in model.delays]
    snap = backstepping_transform(model, 0.0, np.zeros(3), lines)
    assert all(not np.any(w) for w in snap.w)


def test_w_after_compensation_is_second_order():
    model = _runs.unicycle()
    sups = []
    for dt in (1e-3, 5e-4):
        tr = _runs.unicycle_run(dt=dt, horizon=2.0)
        k = round(1.5 / dt)
        snap = backstepping_transform(model, tr.times[k], tr.states[k], lines_from_trace(tr, k))
        s = float(np.max(snap.sup_w()))
        assert s <= 5 * dt ** 2
        sups.append(s)
    assert sups[0] / sups[1] >= 3.5


def test_inverse_of_zero_is_zero():
    model = _runs.unicycle()
    zeros = [np.zeros(501), np.zeros(1001)]
    u, pi = inverse_transform(model, 0.0, np.zeros(3), zeros, 1e-3)
    assert all(not np.any(ui) for ui in u)
    assert not np.any(pi)


def test_inverse_of_zero_gives_nominal_controls():
    model = _runs.unicycle()
    dt = 1e-3
    t = 2.0
    X = np.array([0.2, -0.3, 0.4])
    u, pi = inverse_transform(model, t, X, [np.zeros(501), np.zeros(1001)], dt)
    nominal = L.simulate_nominal_from(model, t, X, 1.0, dt)
    np.testing.assert_allclose(pi, nominal.states, atol=1e-12)
    for i in range(2):
        n = u[i].size
        np.testing.assert_allclose(u[i], nominal.controls[:n, i], atol=1e-12)


def test_round_trip_is_second_order():
    model = _runs.unicycle()
    X = np.array([0.5, -0.2, 0.3])
    r = [round_trip_residual(model, 0.7, X, smooth_lines(model, dt, 0.7)) for dt in (1e-3, 5e-4, 2.5e-4)]
    assert r[0] / r[1] >= 3.5 and r[1] / r[2] >= 3.5


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-1, 1), st.floats(-1, 1),
       st.integers(0, 5000))
def test_forward_inverse_round_trip_property(x, a, b, k):
    model = _runs.unicycle()
    t = k * 1e-3
    lines = [line_at(0.5, 1e-3, t, lambda s: a * math.cos(3 * s)),
             line_at(1.0, 1e-3, t, lambda s: b * math.sin(s) + a * b)]
    assert round_trip_residual(model, t, np.array(x), lines) <= 1e-5


def test_transform_input_validation():
    model = _runs.unicycle()
    with pytest.raises(ConfigurationError):
        inverse_transform(model, 0.0, np.zeros(3), [np.zeros(501)], 1e-3)
    with pytest.raises(ConfigurationError):
        inverse_transform(model, 0.0, np.zeros(3), [np.zeros(500), np.zeros(1001)], 1e-3)
    with pytest.raises(ConfigurationError):
        inverse_transform(model, 0.0, np.zeros(2), [np.zeros(501), np.zeros(1001)], 1e-3)


# ---- predictor consistency --------------------------------------------------

def test_predictor_consistency_halving():
    full = predictor_consistency(_runs.unicycle_run(dt=1e-3, horizon=5.0))
    half = predictor_consistency(_runs.unicycle_run(dt=5e-4, horizon=5.0))
    # the first channel sees only stored inputs, so P_1 reproduces the plant step for step
    assert full[0] <= 1e-13 and half[0] <= 1e-13
    assert half[1] * 3.5 <= full[1]
    assert full[1] <= 1e-6


def test_consistency_requires_predictors():
    tr = _runs.unicycle_run("nominal_uncompensated")
    with pytest.raises(ConfigurationError):
        predictor_consistency(tr)


def test_compensation_error_small():
    assert compensation_error(_runs.unicycle_run(), _runs.unicycle()) <= 1e-6


def test_lines_from_trace_rejects_missing_rows():
    tr = _runs.unicycle_run("nominal_uncompensated")
    with pytest.raises(ConfigurationError):
        lines_from_trace(tr, tr.times.size - 1)


# ---- linear plant: generic vs explicit -------------------------------------

def test_generic_matches_explicit_after_largest_delay():
    gen = _runs.lti_run()
    model = _runs.lti()
    k0 = round(0.5 / gen.dt)
    worst = 0.0
    for k in range(k0, gen.times.size, 397):
        res = L.compute_predictors_linear(model, gen.times[k], gen.states[k], lines_from_trace(gen, k),
                                          closed_loop=True, full_profile=False)
        worst = max(worst, float(np.max(np.abs(res.endpoint_inputs - gen.controls[k]))))
    assert worst <= 1e-6


def test_separate_runs_agree_once_history_is_flushed():
    gen = _runs.lti_run()
    exp = _runs.lti_run(predictor="linear-explicit")
    # the zero history meets U(0) at a corner; both schemes resolve it to
    # first order, and the gap decays with the closed loop
    k5 = round(5.0 / gen.dt)
    assert np.max(np.abs(gen.states - exp.states)) <= 1e-3
    assert np.max(np.abs(gen.states[k5:] - exp.states[k5:])) <= 1e-6


def test_explicit_controls_match_closed_form_oracle():
    tr = _runs.lti_run(predictor="linear-explicit")
    A, (b1, b2), (k1, k2) = _runs.LTI["A"], _runs.LTI["b"], _runs.LTI["k"]
    worst = 0.0
    for k in (0, 100, 250, 499, 500, 1000, 5000, 20000):
        U = oracles.explicit_two_input_controls(A, b1, b2, k1, k2, 0.25, 0.5, tr.states[k],
                                                tr.window(0, k), tr.window(1, k), tr.dt)
        worst = max(worst, float(np.max(np.abs(np.array(U) - tr.controls[k]))))
    assert worst <= 1e-9


def test_generic_linear_predictor_matches_explicit_on_smooth_lines():
    model = _runs.lti()
    X = np.array([0.4, -0.7])
    gaps = []
    for dt in (1e-3, 5e-4):
        lines = smooth_lines(model, dt)
        g = L.compute_predictors(model, 0.0, X, lines)
        e = L.compute_predictors_linear(model, 0.0, X, lines)
        gaps.append(float(np.max(np.abs(g.P - e.P))))
        # midpoint inputs are linear interpolants, so the gap is second order
        assert gaps[-1] <= 5 * dt ** 2
    assert gaps[0] / gaps[1] >= 3.5


# ---- decay fitting ------------------------------------------------------------

def test_fit_decay_exact_exponential():
    t = np.linspace(0, 10, 1001)
    mu, lam = fit_decay(t, 3.0 * np.exp(-t))
    assert lam == pytest.approx(1.0, abs=1e-3)
    assert mu == pytest.approx(1.0, abs=1e-3)


def test_fit_decay_uses_positive_prefix():
    t = np.linspace(0, 10, 101)
    g = 2.0 * np.exp(-2 * t)
    g[60:] = 0.0
    g[80] = 5.0
    mu, lam = fit_decay(t, g)
    assert lam == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(ConfigurationError):
        fit_decay(t, np.zeros_like(t))


def test_fit_decay_start_time():
    t = np.linspace(0, 10, 1001)
    g = np.where(t < 1, 1.0, np.exp(-(t - 1)))
    mu, lam = fit_decay(t, g, t_start=1.0)
    assert lam == pytest.approx(1.0, abs=1e-9)
    assert mu == pytest.approx(math.e, rel=1e-9)


def test_linear_decay_rate_near_closed_loop_rate():
    mu, lam = decay_fit(_runs.lti_run())
    assert lam == pytest.approx(1.0, rel=0.25)
    assert mu >= 1.0


def test_uncompensated_long_delays_do_not_decay():
    tr = _runs.lti_run("nominal_uncompensated", delays=(0.5, 1.0))
    _, lam = decay_fit(tr)
    assert lam < 0


# ---- reports -------------------------------------------------------------------

def test_report_round_trip():
    report = verification_report(_runs.lti_run(), _runs.lti())
    for key in ("predictor_consistency_1", "predictor_consistency_2", "compensation_error",
                "boundary_residual_max", "w_sup_after_compensation", "decay_mu", "decay_lambda",
                "closed_loop_rate"):
        assert key in report
    assert report["closed_loop_rate"] == pytest.approx(1.0)
    text = format_report(report)
    back = parse_report(text)
    for key, value in report.items():
        assert back[key] == value
    assert format_report(back) == text


def test_report_for_diverged_run_is_basic():
    report = verification_report(_runs.unicycle_run("nominal_uncompensated"), _runs.unicycle())
    assert report["status"] == "diverged"
    assert "compensation_error" not in report
