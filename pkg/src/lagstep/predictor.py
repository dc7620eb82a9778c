"""State predictors P_i(t) = X(t + D_i) for plants with distinct input delays.

The generic route marches the segment cascade in the spatial variable x:

* on [0, D_(1)] every channel is read from its delay line;
* on each later segment, channels whose delay has already been passed are
  replaced by their feedback law evaluated at the running profile and at
  time t + x, the others are still read from their lines.

P_i is the profile value at x = D_i. Linear plants additionally get the
closed-form route built from matrix exponentials of A_i = A + sum b_j k_j^T
and Simpson quadrature of the convolution integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._kernels import OK, SAMPLED
from .delay_line import DelayLine, steps_in
from .errors import ConfigurationError, DivergenceError, InputError, RangeError
from .model import LinearModel, SystemModel

# state norm beyond which integration is declared divergent
DIVERGENCE_LIMIT = 1e9

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class PredictorResult:
    """Predictor profile on the spatial grid.

    Attributes:
        grid: nodes x_0 = 0 < ... < x_N = D_max at spacing dt.
        profile: (N + 1, n) array, p(x_j) with p(0) = X(t).
        P: (m, n) array, P[i] = p(D_i).
        endpoint_inputs: u_i(D_i, t) as used by the integration; in
            closed-loop mode these are the controls U_i(t).
        nodes: index of D_i on the grid, per channel.
    """

    grid: np.ndarray
    profile: np.ndarray
    P: np.ndarray
    endpoint_inputs: np.ndarray
    nodes: tuple

    def at(self, x: float) -> np.ndarray:
        """Profile value at a grid position."""
        step = self.grid[1] - self.grid[0] if self.grid.size > 1 else 1.0
        j = round(x / step)
        if abs(x / step - j) > 1e-9 or not 0 <= j < self.grid.size:
            raise RangeError(f"x={x} is not a grid node")
        return self.profile[j]


def stack_lines(model: SystemModel, t: float, lines) -> tuple[np.ndarray, np.ndarray, float]:
    """Validate ``lines`` against ``model`` and pack their windows.

    Returns ``(samples, nsteps, dt)`` where ``samples[i, j]`` is
    u_i(j * dt, t) for j <= nsteps[i].
    """
    lines = list(lines)
    if len(lines) != model.m:
        raise ConfigurationError(f"expected {model.m} delay lines, got {len(lines)}")
    dt = lines[0].step
    nsteps = np.empty(model.m, dtype=np.int64)
    for i, (line, delay) in enumerate(zip(lines, model.delays)):
        if line.step != dt:
            raise ConfigurationError("all delay lines must share one step")
        nsteps[i] = steps_in(delay, dt)
        if nsteps[i] != line.intervals:
            raise ConfigurationError(f"line {i} holds delay {line.delay}, model expects {delay}")
        if abs(line.now - t) > _TIME_TOL * max(1.0, abs(t)):
            raise ConfigurationError(f"line {i} is at t={line.now}, predictor asked for t={t}")
    samples = np.zeros((model.m, int(nsteps.max()) + 1))
    for i, line in enumerate(lines):
        samples[i, :nsteps[i] + 1] = line.samples
    return samples, nsteps, dt


def _state(model, X):
    X = np.ascontiguousarray(X, dtype=float)
    if X.shape != (model.n,):
        raise ConfigurationError(f"state must have shape ({model.n},)")
    if not np.all(np.isfinite(X)):
        raise InputError("state contains non-finite values")
    return X


def run_cascade(model, t, X, samples, nsteps, dt, *, active_mode=SAMPLED, closed_loop=False):
    """Low-level cascade call returning ``(profile, endpoint_inputs)``.

    Raises:
        DivergenceError: if the profile leaves the divergence bound.
    """
    profile = np.empty((int(nsteps.max()) + 1, model.n))
    u_end = np.empty(model.m)
    k = _backend.kernels(model.jit)
    status = k.cascade(model.f_kernel, model.kappa_kernel, model.params, float(t), X, samples,
                       nsteps, float(dt), active_mode, bool(closed_loop), DIVERGENCE_LIMIT, profile, u_end)
    if status != OK:
        x = (status + 1) * dt
        raise DivergenceError(f"predictor profile diverged at x={x:.6g} (predicted time {t + x:.6g})",
                              position=x, time=t, state=profile[status].copy())
    return profile, u_end


def _result(profile, nsteps, dt, u_end):
    grid = np.arange(profile.shape[0]) * dt
    P = profile[nsteps].copy()
    return PredictorResult(grid, profile, P, u_end, tuple(int(v) for v in nsteps))


def compute_predictors(model: SystemModel, t: float, X, lines, *, closed_loop: bool = False) -> PredictorResult:
    """Predictors from the spatial ODE cascade, one RK4 step per grid cell.

    Args:
        model: plant and feedback laws.
        t: current time; every line must be at ``now == t``.
        X: current state X(t).
        lines: one :class:`DelayLine` per channel, in model order.
        closed_loop: treat u_i(D_i, t) as the unknown control
            kappa_i(t + D_i, P_i(t)) instead of reading the newest sample.

    Raises:
        DivergenceError: carrying the x at which the profile escaped.
    """
    X = _state(model, X)
    samples, nsteps, dt = stack_lines(model, t, lines)
    profile, u_end = run_cascade(model, t, X, samples, nsteps, dt, closed_loop=closed_loop)
    return _result(profile, nsteps, dt, u_end)


# --- matrix exponential ----------------------------------------------------

_PADE13 = (64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
           129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
           40840800.0, 960960.0, 16380.0, 182.0, 1.0)
_THETA13 = 5.371920351148152


def matrix_exponential(M) -> np.ndarray:
    """e^M by scaling and squaring with the degree-13 Pade approximant."""
    M = np.array(M, dtype=float, ndmin=2)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError("matrix contains non-finite entries")
    n = M.shape[0]
    norm = np.linalg.norm(M, 1)
    if norm == 0:
        return np.eye(n)
    s = int(math.ceil(math.log2(norm / _THETA13))) if norm > _THETA13 else 0
    A = M / 2.0 ** s
    b = _PADE13
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


# --- explicit linear predictors --------------------------------------------

def simpson_weights(intervals: int, h: float) -> np.ndarray:
    """Quadrature weights on ``intervals + 1`` equispaced nodes.

    Composite Simpson on pairs of intervals; an odd trailing interval gets
    the trapezoid rule.
    """
    w = np.zeros(intervals + 1)
    pairs = intervals // 2
    if pairs:
        w[0:2 * pairs + 1:2] += 2.0 * h / 3.0
        w[1:2 * pairs:2] += 4.0 * h / 3.0
        w[0] -= h / 3.0
        w[2 * pairs] -= h / 3.0
    if intervals % 2:
        w[-2] += 0.5 * h
        w[-1] += 0.5 * h
    return w


def _segments(model, nsteps):
    """(start node, end node, channels already passed) per cascade segment."""
    bounds = sorted({0, *(int(v) for v in nsteps)})
    out = []
    for a, b in zip(bounds, bounds[1:]):
        passed = tuple(i for i in range(model.m) if nsteps[i] <= a)
        out.append((a, b, passed))
    return out


def _segment_matrix(model: LinearModel, passed):
    A = model.A.copy()
    for i in passed:
        A += np.outer(model.b[i], model.k[i])
    return A


def _exp_table(model: LinearModel, A_seg, length, dt):
    cache = model.__dict__.setdefault("_exp_tables", {})
    key = (A_seg.tobytes(), length, dt)
    if key not in cache:
        cache[key] = np.stack([matrix_exponential(A_seg * (l * dt)) for l in range(length + 1)])
    return cache[key]


def compute_predictors_linear(model: LinearModel, t: float, X, lines, *, closed_loop: bool = False,
                              full_profile: bool = True) -> PredictorResult:
    """Closed-form predictors for a linear plant.

    On the segment [D_a, D_b] with matrix A_s,
    p(x) = e^{A_s (x - D_a)} p(D_a) + int_{D_a}^x e^{A_s (x - y)} sum_active b_i u_i(y) dy,
    with the integral evaluated by :func:`simpson_weights` on the grid.

    With ``full_profile=False`` only segment endpoints are filled in (other
    rows of ``profile`` are NaN); the simulator uses this in its loop.
    """
    if not isinstance(model, LinearModel):
        raise ConfigurationError("explicit predictors need a LinearModel")
    X = _state(model, X)
    samples, nsteps, dt = stack_lines(model, t, lines)
    total = int(nsteps.max())
    profile = np.full((total + 1, model.n), np.nan)
    profile[0] = X
    u_end = samples[np.arange(model.m), nsteps].copy()
    for a, b, passed in _segments(model, nsteps):
        length = b - a
        A_seg = _segment_matrix(model, passed)
        E = _exp_table(model, A_seg, length, dt)
        active = [i for i in range(model.m) if i not in passed]
        forcing = samples[active, a:b + 1].T @ np.column_stack([model.b[i] for i in active]).T
        ending = [i for i in active if nsteps[i] == b] if closed_loop else []
        if ending:
            for i in ending:
                forcing[-1] -= model.b[i] * samples[i, b]
        start = profile[a]
        rows = range(1, length + 1) if full_profile else (length,)
        for l in rows:
            w = simpson_weights(l, dt)
            conv = np.einsum("j,jab,jb->a", w, E[l::-1], forcing[:l + 1])
            profile[a + l] = E[l] @ start + conv
        if ending:
            w_end = simpson_weights(length, dt)[-1]
            base = profile[b].copy()
            K = np.vstack([model.k[i] for i in ending])
            Bg = np.column_stack([model.b[i] for i in ending])
            U = np.linalg.solve(np.eye(len(ending)) - w_end * (K @ Bg), K @ base)
            profile[b] = base + w_end * (Bg @ U)
            u_end[ending] = U
        if not np.all(np.isfinite(profile[b])) or np.linalg.norm(profile[b]) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"linear predictor diverged by x={b * dt:.6g}", position=b * dt, time=t)
    return _result(profile, nsteps, dt, u_end)


def phi_transition(model: LinearModel, x: float, y: float) -> np.ndarray:
    """Transition matrix of the linear predictor cascade from y to x.

    Product of e^{A_s * length} over the pieces of [y, x] cut at the delays,
    where A_s includes b_i k_i^T for every channel whose delay lies at or
    below the start of the piece.
    """
    D = model.max_delay
    if y > x:
        raise RangeError(f"need y <= x, got y={y}, x={x}")
    if y < 0 or x > D * (1 + 1e-12):
        raise RangeError(f"arguments must lie in [0, {D}], got x={x}, y={y}")
    bounds = sorted({0.0, *model.delays})
    result = np.eye(model.n)
    pos = y
    while pos < x:
        nxt = min([b for b in bounds if b > pos] + [x])
        nxt = min(nxt, x)
        passed = [i for i in range(model.m) if model.delays[i] <= pos]
        result = matrix_exponential(_segment_matrix(model, passed) * (nxt - pos)) @ result
        pos = nxt
    return result
