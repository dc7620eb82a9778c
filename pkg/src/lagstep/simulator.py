"""Closed-loop simulation of plants with per-channel input delays.

The plant is advanced with fixed-step RK4. Delayed inputs are read from the
channel delay lines, linearly interpolated at the half step. Controls are
computed once per step at t_k and written as the newest line sample
U_i(t_k); the line then gets a provisional value for t_{k+1} that is
overwritten on the next step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _backend
from . import _kernels as _k
from ._kernels import OK, SAMPLED
from .delay_line import DelayLine, steps_in
from .errors import ConfigurationError, DivergenceError, InputError
from .model import LinearModel, SystemModel
from .predictor import (DIVERGENCE_LIMIT, PredictorResult, compute_predictors_linear, run_cascade,
                        stack_lines)

CONTROLLERS = ("predictor_feedback", "nominal_uncompensated", "open_loop_zero", "nominal_delay_free")
PREDICTORS = ("generic", "linear-explicit")

# incompatibility of the initial history with the first control
_COMPAT_TOL = 1e-9


class IncompatibleHistoryWarning(UserWarning):
    """Initial input history does not match the first computed control."""


@dataclass
class Scenario:
    """One simulation run.

    ``histories`` holds one entry per channel: a function of theta in
    [-D_i, 0] or a constant. It defaults to zero histories.
    """

    model: SystemModel
    x0: Sequence[float]
    controller: str = "predictor_feedback"
    histories: Sequence[Callable[[float], float] | float] | None = None
    dt: float = 1e-3
    horizon: float = 40.0
    record_predictors: bool = False
    predictor: str = "generic"
    name: str = "scenario"

    def validate(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.predictor not in PREDICTORS:
            raise ConfigurationError(f"unknown predictor {self.predictor!r}; choose from {PREDICTORS}")
        if self.predictor == "linear-explicit" and not isinstance(self.model, LinearModel):
            raise ConfigurationError("the linear-explicit predictor needs a linear model")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.model.n,):
            raise ConfigurationError(f"x0 must have length {self.model.n}")
        if not np.all(np.isfinite(x0)):
            raise InputError("x0 contains non-finite values")
        if self.histories is not None and len(self.histories) != self.model.m:
            raise ConfigurationError(f"need {self.model.m} initial histories, got {len(self.histories)}")
        for d in self.model.delays:
            steps_in(d, self.dt)
        horizon_steps(self.horizon, self.dt)


def horizon_steps(horizon: float, dt: float) -> int:
    if not (horizon >= 0 and math.isfinite(horizon)):
        raise ConfigurationError(f"horizon must be finite and non-negative, got {horizon}")
    if horizon == 0:
        return 0
    return steps_in(horizon, dt)


@dataclass
class SimTrace:
    """Recorded run.

    Attributes:
        times: (K,) sample times.
        states: (K, n) X(t_k).
        controls: (K, m) U_i(t_k) as committed to the delay lines.
        predictors: (K, m, n) P_i(t_k), or None when not recorded.
        history: initial windows U_i(theta), theta in [-D_i, 0], per channel.
        status: ``"completed"`` or ``"diverged"``.
        diverged_at: time of the divergence step.
        reason: human-readable cause of divergence.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    delays: tuple
    dt: float
    history: tuple = ()
    predictors: np.ndarray | None = None
    status: str = "completed"
    diverged_at: float | None = None
    reason: str = ""
    controller: str = ""
    model_name: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.controls.shape[1]

    def index_of(self, t: float) -> int:
        k = round((t - self.times[0]) / self.dt)
        if abs((t - self.times[0]) / self.dt - k) > 1e-6 or not 0 <= k < self.times.size:
            raise ConfigurationError(f"t={t} is not a recorded grid time")
        return k

    def state_at(self, t: float) -> np.ndarray:
        return self.states[self.index_of(t)]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def input_signal(self, i: int) -> np.ndarray:
        """U_i on the grid from -D_i to the last recorded time.

        The history value at theta = 0 is superseded by the first control.
        """
        N = steps_in(self.delays[i], self.dt)
        past = self.history[i][:N] if self.history else np.zeros(N)
        return np.concatenate([past, self.controls[:, i]])

    def window(self, i: int, k: int) -> np.ndarray:
        """Actuator state u_i(x_j, t_k), j = 0..N_i."""
        N = steps_in(self.delays[i], self.dt)
        return self.input_signal(i)[k:k + N + 1]

    def xi(self) -> np.ndarray:
        """|X(t)| + sum_i sup_x |u_i(x, t)| at every recorded time."""
        total = self.norms().copy()
        for i in range(self.m):
            N = steps_in(self.delays[i], self.dt)
            sig = np.abs(self.input_signal(i))
            total += np.lib.stride_tricks.sliding_window_view(sig, N + 1).max(axis=1)
        return total

    def omega(self) -> np.ndarray:
        """|X(t)| + sum_i sup over [t - D_i, t] of |U_i|; equals :meth:`xi` on the grid."""
        return self.xi()

    def gamma(self) -> np.ndarray:
        """|X(t)| + sum_i int_0^{D_i} u_i(x, t)^2 dx, trapezoid over each window."""
        total = self.norms().copy()
        for i in range(self.m):
            N = steps_in(self.delays[i], self.dt)
            sq = self.input_signal(i) ** 2
            csum = np.concatenate([[0.0], np.cumsum(sq)])
            inner = csum[N + 1:] - csum[:-N - 1]
            total += self.dt * (inner - 0.5 * (sq[:sq.size - N] + sq[N:]))
        return total

    def columns(self) -> list[str]:
        cols = ["t"] + [f"x{c + 1}" for c in range(self.n)] + [f"u{i + 1}" for i in range(self.m)]
        if self.predictors is not None:
            cols += [f"p{i + 1}_{c + 1}" for i in range(self.m) for c in range(self.n)]
        return cols

    def table(self) -> np.ndarray:
        parts = [self.times[:, None], self.states, self.controls]
        if self.predictors is not None:
            parts.append(self.predictors.reshape(self.times.size, -1))
        return np.hstack(parts)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.table(), fmt="%.17g", delimiter=",", header=",".join(self.columns()), comments="")


def read_trace_csv(path):
    """Load the columns of a trace CSV as a dict of arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, j] for j, name in enumerate(header)}


def _history_callable(h):
    return h if callable(h) else (lambda theta, c=float(h): c)


def compute_control(model: SystemModel, t: float, X, lines, *, predictor: str = "generic"
                    ) -> tuple[np.ndarray, PredictorResult]:
    """Predictor feedback U_i(t) = kappa_i(t + D_i, P_i(t)).

    The newest line samples are ignored: u_i(D_i, t) is the control itself,
    so it is solved jointly with the last cascade step of its channel.

    Returns:
        ``(U, predictors)``.
    """
    if predictor == "linear-explicit":
        res = compute_predictors_linear(model, t, X, lines, closed_loop=True, full_profile=False)
    else:
        X = np.ascontiguousarray(X, dtype=float)
        samples, nsteps, dt = stack_lines(model, t, lines)
        profile, u_end = run_cascade(model, t, X, samples, nsteps, dt, closed_loop=True)
        res = PredictorResult(np.arange(profile.shape[0]) * dt, profile, profile[nsteps].copy(), u_end,
                              tuple(int(v) for v in nsteps))
    return res.endpoint_inputs.copy(), res


class Simulation:
    """Stepwise closed loop; :func:`simulate` drives it to the horizon.

    One step is ``control()`` (compute and commit U(t_k)) followed by
    ``advance()`` (plant step to t_{k+1}). Between the two, the delay lines
    hold the committed window [t_k - D_i, t_k], which is what the
    verification snapshots inspect.
    """

    def __init__(self, scenario: Scenario):
        scenario.validate()
        if scenario.controller == "nominal_delay_free":
            raise ConfigurationError("the delay-free loop has no delay lines; use simulate()")
        self.scenario = scenario
        self.model = scenario.model
        self.dt = float(scenario.dt)
        self.k = 0
        self.X = np.array(scenario.x0, dtype=float)
        hist = scenario.histories if scenario.histories is not None else [0.0] * self.model.m
        self.lines = [DelayLine(d, self.dt, _history_callable(h)) for d, h in zip(self.model.delays, hist)]
        self.initial_history = tuple(line.samples.copy() for line in self.lines)
        self.last_predictors: PredictorResult | None = None
        self._kern = _backend.kernels(self.model.jit)
        self._mode = np.full(self.model.m, SAMPLED, dtype=np.int64)

    @property
    def t(self) -> float:
        return self.k * self.dt

    def control(self) -> np.ndarray:
        """Compute U(t_k), write it into the lines, return it."""
        kind = self.scenario.controller
        if kind == "predictor_feedback":
            U, self.last_predictors = compute_control(self.model, self.t, self.X, self.lines,
                                                      predictor=self.scenario.predictor)
        elif kind == "nominal_uncompensated":
            U = self.model.feedback(self.t, self.X)
        else:
            U = np.zeros(self.model.m)
        if self.k == 0:
            self._check_compatibility(U)
        for line, u in zip(self.lines, U):
            line.replace_latest(u)
        return U

    def advance(self) -> np.ndarray:
        """Plant step t_k -> t_{k+1}; returns the new state."""
        left = np.array([line.samples[0] for line in self.lines])
        right = np.array([line.samples[1] for line in self.lines])
        out = np.empty(self.model.n)
        self._kern.plant_step(self.model.f_kernel, self.model.kappa_kernel, self.model.params, self._mode,
                              left, right, self.t, self.X, self.dt, out)
        for line in self.lines:
            line.push(line.samples[-1])
        self.X = out
        self.k += 1
        return out

    def _check_compatibility(self, U):
        _warn_incompatible(U, self.initial_history, stacklevel=4)


def _warn_incompatible(U, history, stacklevel):
    for i, (u, hist) in enumerate(zip(U, history)):
        if abs(u - hist[-1]) > _COMPAT_TOL * (1.0 + abs(u)):
            warnings.warn(f"channel {i}: initial history ends at {hist[-1]:.6g} but the first control is "
                          f"{u:.6g}; the input is discontinuous at t=0", IncompatibleHistoryWarning,
                          stacklevel=stacklevel + 1)


def simulate(scenario: Scenario) -> SimTrace:
    """Run ``scenario`` to its horizon.

    Divergence (non-finite state, state norm above 1e9, or predictor escape)
    ends the trace at the offending step with ``status="diverged"``. The
    loop runs inside one kernel call and matches :class:`Simulation`
    stepping bit for bit.
    """
    scenario.validate()
    model = scenario.model
    hist = scenario.histories if scenario.histories is not None else [0.0] * model.m
    lines = [DelayLine(d, scenario.dt, _history_callable(h)) for d, h in zip(model.delays, hist)]
    history = tuple(line.samples.copy() for line in lines)
    if scenario.controller == "nominal_delay_free":
        trace = simulate_nominal_from(model, 0.0, scenario.x0, scenario.horizon, scenario.dt)
        trace.history = history
        return trace
    if scenario.predictor == "linear-explicit" and scenario.controller == "predictor_feedback":
        return _simulate_stepwise(scenario)
    steps = horizon_steps(scenario.horizon, scenario.dt)
    n, m = model.n, model.m
    nsteps = np.array([line.intervals for line in lines], dtype=np.int64)
    width = int(nsteps.max())
    sig = np.full((m, width + steps + 1), np.nan)
    for i, h in enumerate(history):
        sig[i, width - nsteps[i]:width + 1] = h
    states = np.full((steps + 1, n), np.nan)
    record = scenario.record_predictors and scenario.controller == "predictor_feedback"
    preds = np.full((steps + 1, m, n), np.nan) if scenario.record_predictors else np.empty((0, m, n))
    code = {"predictor_feedback": _k.PREDICTOR, "nominal_uncompensated": _k.NOMINAL,
            "open_loop_zero": _k.ZERO}[scenario.controller]
    kern = _backend.kernels(model.jit)
    outcome, last, j = kern.closed_loop(model.f_kernel, model.kappa_kernel, model.params, code,
                                        np.ascontiguousarray(scenario.x0, dtype=float), sig, nsteps,
                                        float(scenario.dt), steps, DIVERGENCE_LIMIT, states, preds, record)
    controls = sig[:, width:width + last + 1].T.copy()
    if outcome == _k.PREDICTOR_DIVERGED:
        controls[last] = np.nan
    if last > 0 or outcome != _k.PREDICTOR_DIVERGED:
        _warn_incompatible(controls[0], history, stacklevel=2)
    status, diverged_at, reason = "completed", None, ""
    if outcome == _k.PLANT_DIVERGED:
        status, diverged_at = "diverged", last * scenario.dt
        reason = f"state norm exceeded {DIVERGENCE_LIMIT:g} at t={diverged_at:.6g}"
    elif outcome == _k.PREDICTOR_DIVERGED:
        status, diverged_at = "diverged", last * scenario.dt
        x = (j + 1) * scenario.dt
        reason = f"predictor profile diverged at x={x:.6g} (predicted time {diverged_at + x:.6g})"
    return SimTrace(
        times=np.arange(last + 1) * scenario.dt,
        states=states[:last + 1],
        controls=controls,
        delays=model.delays,
        dt=scenario.dt,
        history=history,
        predictors=preds[:last + 1] if scenario.record_predictors else None,
        status=status,
        diverged_at=diverged_at,
        reason=reason,
        controller=scenario.controller,
        model_name=model.name,
    )


def _simulate_stepwise(scenario: Scenario) -> SimTrace:
    steps = horizon_steps(scenario.horizon, scenario.dt)
    sim = Simulation(scenario)
    model = sim.model
    n, m = model.n, model.m
    states = np.full((steps + 1, n), np.nan)
    controls = np.full((steps + 1, m), np.nan)
    preds = np.full((steps + 1, m, n), np.nan) if scenario.record_predictors else None
    status, diverged_at, reason = "completed", None, ""
    last = steps
    for k in range(steps + 1):
        states[k] = sim.X
        try:
            controls[k] = sim.control()
        except DivergenceError as exc:
            status, diverged_at, reason, last = "diverged", sim.t, str(exc), k
            break
        if preds is not None and sim.last_predictors is not None:
            preds[k] = sim.last_predictors.P
        if k == steps:
            break
        X = sim.advance()
        if not np.all(np.isfinite(X)) or np.linalg.norm(X) > DIVERGENCE_LIMIT:
            states[k + 1] = X
            status, diverged_at, last = "diverged", sim.t, k + 1
            reason = f"state norm exceeded {DIVERGENCE_LIMIT:g} at t={sim.t:.6g}"
            break
    sl = slice(0, last + 1)
    return SimTrace(
        times=np.arange(last + 1) * scenario.dt,
        states=states[sl],
        controls=controls[sl],
        delays=model.delays,
        dt=scenario.dt,
        history=sim.initial_history,
        predictors=None if preds is None else preds[sl],
        status=status,
        diverged_at=diverged_at,
        reason=reason,
        controller=scenario.controller,
        model_name=model.name,
    )


def simulate_uncompensated(scenario: Scenario) -> SimTrace:
    """Nominal laws U_i(t) = kappa_i(t, X(t)) fed straight into the delays."""
    return simulate(replace(scenario, controller="nominal_uncompensated", record_predictors=False))


def simulate_nominal_from(model: SystemModel, t0: float, x0, horizon: float, dt: float = 1e-3) -> SimTrace:
    """Delay-free closed loop X' = f(X, kappa(t, X)) started at (t0, x0)."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ConfigurationError(f"x0 must have length {model.n}")
    steps = horizon_steps(horizon, dt)
    states = np.full((steps + 1, model.n), np.nan)
    controls = np.full((steps + 1, model.m), np.nan)
    k = _backend.kernels(model.jit)
    status = k.march(model.f_kernel, model.kappa_kernel, model.params, model.m, float(t0), x0, float(dt), steps,
                     DIVERGENCE_LIMIT, states, controls)
    last = steps if status == OK else status
    trace = SimTrace(
        times=t0 + np.arange(last + 1) * dt,
        states=states[:last + 1],
        controls=controls[:last + 1],
        delays=model.delays,
        dt=dt,
        controller="nominal_delay_free",
        model_name=model.name,
    )
    if status != OK:
        trace.status = "diverged"
        trace.diverged_at = float(trace.times[-1])
        trace.reason = f"state norm exceeded {DIVERGENCE_LIMIT:g}"
    return trace
