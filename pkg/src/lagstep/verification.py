"""Numerical checks of the closed-loop structure.

The identities checked here hold exactly for the continuous-time system; on
the grid they hold up to the discretization order, so callers compare
residuals across step halvings. The one algebraic exception is the boundary
value w_i(D_i, t) = 0, which holds to rounding for controls produced by
:func:`lagstep.simulator.compute_control`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import SHIFTED
from .delay_line import DelayLine, steps_in
from .errors import ConfigurationError
from .model import LinearModel, SystemModel
from .predictor import compute_predictors, run_cascade
from .simulator import SimTrace, simulate_nominal_from


@dataclass(frozen=True)
class TransformSnapshot:
    """Backstepping variables at one time.

    Attributes:
        t: snapshot time.
        X: plant state X(t).
        dt: grid spacing.
        grid: spatial nodes over [0, D_max].
        u: per-channel actuator states u_i(x_j, t), j = 0..N_i.
        w: per-channel transformed states w_i(x_j, t).
        p: predictor profile p(x_j) used by the transform.
    """

    t: float
    X: np.ndarray
    dt: float
    grid: np.ndarray
    u: tuple
    w: tuple
    p: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        """w_i(D_i, t) per channel."""
        return np.array([w[-1] for w in self.w])

    def sup_w(self) -> np.ndarray:
        return np.array([np.max(np.abs(w)) for w in self.w])


def lines_from_trace(trace: SimTrace, k: int) -> list[DelayLine]:
    """Delay lines as they stood after the control at t_k was committed."""
    if not 0 <= k < trace.times.size or np.any(np.isnan(trace.controls[k])):
        raise ConfigurationError(f"no committed controls at row {k}")
    return [DelayLine.from_samples(d, trace.dt, trace.window(i, k), now=k * trace.dt)
            for i, d in enumerate(trace.delays)]


def _feedback_on_grid(model, t, i, profile, count, dt):
    return np.array([model.kappa_kernel(i, t + j * dt, profile[j], model.params) for j in range(count + 1)])


def backstepping_transform(model: SystemModel, t: float, X, lines) -> TransformSnapshot:
    """w_i(x) = u_i(x) - kappa_i(t + x, p(x)) on every channel grid.

    ``p`` is the predictor profile built from the stored windows, so past D_j
    it already carries the feedback substitution for channel j.
    """
    lines = list(lines)
    res = compute_predictors(model, t, X, lines)
    dt = lines[0].step
    u = tuple(line.samples.copy() for line in lines)
    w = tuple(ui - _feedback_on_grid(model, t, i, res.profile, res.nodes[i], dt) for i, ui in enumerate(u))
    return TransformSnapshot(float(t), np.array(X, dtype=float), dt, res.grid, u, w, res.profile)


def inverse_transform(model: SystemModel, t: float, X, w_grids, dt: float) -> tuple[tuple, np.ndarray]:
    """Recover u_i from w_i.

    Integrates pi' = f(pi, w + kappa(t + x, pi)) over the same cascade as the
    predictor (channels past their delay are pure feedback) and returns
    ``(u_grids, pi)`` with u_i(x) = w_i(x) + kappa_i(t + x, pi(x)).
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.shape != (model.n,):
        raise ConfigurationError(f"state must have shape ({model.n},)")
    if len(w_grids) != model.m:
        raise ConfigurationError(f"expected {model.m} w grids, got {len(w_grids)}")
    nsteps = np.array([steps_in(d, dt) for d in model.delays], dtype=np.int64)
    samples = np.zeros((model.m, int(nsteps.max()) + 1))
    for i, wi in enumerate(w_grids):
        wi = np.asarray(wi, dtype=float)
        if wi.shape != (nsteps[i] + 1,):
            raise ConfigurationError(f"w grid {i} must have {nsteps[i] + 1} nodes, got {wi.shape}")
        samples[i, :nsteps[i] + 1] = wi
    pi, _ = run_cascade(model, t, X, samples, nsteps, dt, active_mode=SHIFTED)
    u = tuple(samples[i, :nsteps[i] + 1] + _feedback_on_grid(model, t, i, pi, nsteps[i], dt)
              for i in range(model.m))
    return u, pi


def round_trip_residual(model: SystemModel, t: float, X, lines) -> float:
    """max_i sup_x |u_i - inverse(forward(u))_i|."""
    lines = list(lines)
    snap = backstepping_transform(model, t, X, lines)
    u_rec, _ = inverse_transform(model, t, X, snap.w, snap.dt)
    return float(max(np.max(np.abs(a - b)) for a, b in zip(u_rec, snap.u)))


def predictor_consistency(trace: SimTrace) -> np.ndarray:
    """Per channel, max_k |P_i(t_k) - X(t_k + D_i)| over t_k + D_i <= T."""
    if trace.predictors is None:
        raise ConfigurationError("trace has no recorded predictors")
    K = trace.times.size
    errors = np.zeros(trace.m)
    for i, d in enumerate(trace.delays):
        N = steps_in(d, trace.dt)
        if K <= N:
            continue
        diff = trace.predictors[:K - N, i, :] - trace.states[N:]
        errors[i] = np.max(np.linalg.norm(diff, axis=1))
    return errors


def compensation_error(trace: SimTrace, model: SystemModel) -> float:
    """sup over t >= D_max of |X(t) - X_nominal(t)|, X_nominal restarted from X(D_max)."""
    D = max(trace.delays)
    k0 = steps_in(D, trace.dt)
    if trace.times.size <= k0:
        raise ConfigurationError(f"trace ends before t = {D}")
    x0 = trace.states[k0]
    nominal = simulate_nominal_from(model, float(trace.times[k0]), x0, (trace.times.size - 1 - k0) * trace.dt,
                                    trace.dt)
    rows = min(nominal.states.shape[0], trace.times.size - k0)
    return float(np.max(np.linalg.norm(trace.states[k0:k0 + rows] - nominal.states[:rows], axis=1)))


def fit_decay(times, gamma, t_start: float = 0.0, gamma0: float | None = None) -> tuple[float, float]:
    """Least-squares fit gamma(t) ~ mu * gamma0 * exp(-lam * t) on t >= t_start.

    Only the leading run of strictly positive samples in the window is used.
    ``gamma0`` defaults to ``gamma[0]``.
    """
    times = np.asarray(times, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sel = times >= t_start - 1e-12
    tt, gg = times[sel], gamma[sel]
    bad = np.flatnonzero(~(gg > 0))
    if bad.size:
        tt, gg = tt[:bad[0]], gg[:bad[0]]
    if tt.size < 2:
        raise ConfigurationError("need at least two positive samples to fit a decay rate")
    slope, intercept = np.polyfit(tt, np.log(gg), 1)
    g0 = gamma[0] if gamma0 is None else gamma0
    return float(np.exp(intercept) / g0), float(-slope)


def decay_fit(trace: SimTrace) -> tuple[float, float]:
    """(mu, lambda) fitted to Gamma(t) over [D_max, T]."""
    return fit_decay(trace.times, trace.gamma(), t_start=max(trace.delays))


def verification_report(trace: SimTrace, model: SystemModel, snapshots: int = 5) -> dict:
    """Checks applicable to ``trace``, as an ordered dict of scalars."""
    norms = trace.norms()
    report = {
        "model": model.name,
        "controller": trace.controller,
        "status": trace.status,
        "diverged_at": trace.diverged_at if trace.diverged_at is not None else "none",
        "dt": trace.dt,
        "horizon": float(trace.times[-1]),
        "initial_norm": float(norms[0]),
        "final_norm": float(norms[-1]),
        "max_norm": float(np.max(norms)),
    }
    if trace.status != "completed":
        return report
    D = max(trace.delays)
    compensated = trace.controller == "predictor_feedback" and trace.times[-1] > D
    if trace.predictors is not None and compensated:
        for i, e in enumerate(predictor_consistency(trace)):
            report[f"predictor_consistency_{i + 1}"] = float(e)
    if compensated:
        report["compensation_error"] = compensation_error(trace, model)
        rows = np.linspace(0, trace.times.size - 1, snapshots).round().astype(int)
        worst_boundary = 0.0
        worst_w = 0.0
        for k in rows:
            snap = backstepping_transform(model, trace.times[k], trace.states[k], lines_from_trace(trace, k))
            worst_boundary = max(worst_boundary, float(np.max(np.abs(snap.boundary))))
            if trace.times[k] >= D:
                worst_w = max(worst_w, float(np.max(snap.sup_w())))
        report["boundary_residual_max"] = worst_boundary
        report["w_sup_after_compensation"] = worst_w
    if isinstance(model, LinearModel) and trace.times[-1] > D:
        mu, lam = decay_fit(trace)
        report["decay_mu"] = mu
        report["decay_lambda"] = lam
        report["closed_loop_rate"] = float(-np.max(np.linalg.eigvals(model.A_closed[-1]).real))
    return report


def format_report(report: dict) -> str:
    def fmt(v):
        return f"{v:.17g}" if isinstance(v, float) else str(v)
    return "".join(f"{k}: {fmt(v)}\n" for k, v in report.items())


def parse_report(text: str) -> dict:
    """Inverse of :func:`format_report`; numeric values come back as floats."""
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        value = value.strip()
        try:
            out[key.strip()] = float(value)
        except ValueError:
            out[key.strip()] = value
    return out
