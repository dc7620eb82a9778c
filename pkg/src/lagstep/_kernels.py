"""Fixed-step RK4 kernels shared by the plant, the predictor and the transforms.

Every routine here is written so numba can compile it with the model's
dynamics and feedback kernels passed in as first-class functions. Models
built from plain Python callables run the same source uncompiled: see
:func:`lagstep._backend.kernels`, which loads this file a second time with
``njit`` bound to the identity.

Kernel conventions:

``f(y, u, params, out)``
    writes the vector field f(y, u) into ``out``.
``kappa(i, tau, y, params) -> float``
    nominal feedback of channel ``i`` (0-based) at time ``tau``.

Each input channel is fed in one of three ways during a step:

SAMPLED
    linear interpolation between the step's left and right samples.
FEEDBACK
    kappa evaluated at the stage time and stage state.
SHIFTED
    interpolated sample plus kappa at the stage (inverse transform, where
    the samples hold w_i and u_i = w_i + kappa_i).
"""

import numpy as np

njit = globals().get("njit")
if njit is None:
    from numba import njit

SAMPLED = 0
FEEDBACK = 1
SHIFTED = 2

OK = -1

# closed-loop endpoint fixed point
_FP_TOL = 1e-15
_FP_MAX_ITER = 60


@njit(inline="always")
def _stage_inputs(kappa, params, mode, left, right, frac, tau, y, u):
    for i in range(mode.shape[0]):
        md = mode[i]
        if md == FEEDBACK:
            u[i] = kappa(i, tau, y, params)
        else:
            if frac == 0:
                v = left[i]
            elif frac == 2:
                v = right[i]
            else:
                v = 0.5 * left[i] + 0.5 * right[i]
            if md == SHIFTED:
                v += kappa(i, tau, y, params)
            u[i] = v


@njit(inline="always")
def rk4_step(f, kappa, params, mode, left, right, tau, y, h, out, work, u):
    """One classical RK4 step of y' = f(y, u) from ``tau`` to ``tau + h``.

    ``work`` is an (5, n) scratch array, ``u`` an (m,) scratch array.
    ``out`` may not alias ``y``.
    """
    n = y.shape[0]
    half = 0.5 * h
    _stage_inputs(kappa, params, mode, left, right, 0, tau, y, u)
    f(y, u, params, work[0])
    for c in range(n):
        work[4, c] = y[c] + half * work[0, c]
    _stage_inputs(kappa, params, mode, left, right, 1, tau + half, work[4], u)
    f(work[4], u, params, work[1])
    for c in range(n):
        work[4, c] = y[c] + half * work[1, c]
    _stage_inputs(kappa, params, mode, left, right, 1, tau + half, work[4], u)
    f(work[4], u, params, work[2])
    for c in range(n):
        work[4, c] = y[c] + h * work[2, c]
    _stage_inputs(kappa, params, mode, left, right, 2, tau + h, work[4], u)
    f(work[4], u, params, work[3])
    for c in range(n):
        out[c] = y[c] + (h / 6.0) * (work[0, c] + 2.0 * work[1, c] + 2.0 * work[2, c] + work[3, c])


@njit(inline="always", cache=True)
def is_bad(y, limit):
    s = 0.0
    for c in range(y.shape[0]):
        v = y[c]
        if not np.isfinite(v):
            return True
        s += v * v
    return s > limit * limit


@njit
def cascade(f, kappa, params, t, x0, samples, nsteps, h, active_mode, closed_loop, limit, profile, u_end):
    """March the segment ODE cascade in x over [0, max(nsteps) * h].

    Channel ``i`` uses ``active_mode`` while x < D_i = nsteps[i] * h, reading
    ``samples[i, j]`` at node j, and FEEDBACK (kappa at time t + x) beyond.

    With ``closed_loop`` set, the sample at x = D_i is not read. It is the
    control being computed, u_i(D_i, t) = U_i(t) = kappa_i(t + D_i, p(D_i)),
    and is solved by fixed-point iteration on the step that ends at D_i. The
    converged values are written to ``u_end``; otherwise ``u_end`` receives
    the stored endpoint samples.

    Returns ``OK`` or the index j of the step whose result diverged.
    """
    n = x0.shape[0]
    m = nsteps.shape[0]
    total = 0
    for i in range(m):
        if nsteps[i] > total:
            total = nsteps[i]
    for c in range(n):
        profile[0, c] = x0[c]
    mode = np.empty(m, dtype=np.int64)
    left = np.zeros(m)
    right = np.zeros(m)
    ending = np.zeros(m, dtype=np.bool_)
    work = np.empty((5, n))
    u = np.empty(m)
    for i in range(m):
        u_end[i] = samples[i, nsteps[i]]
    for j in range(total):
        closing = False
        for i in range(m):
            ending[i] = False
            if nsteps[i] > j:
                mode[i] = active_mode
                left[i] = samples[i, j]
                right[i] = samples[i, j + 1]
                if closed_loop and nsteps[i] == j + 1:
                    ending[i] = True
                    closing = True
            else:
                mode[i] = FEEDBACK
                left[i] = 0.0
                right[i] = 0.0
        tau = t + j * h
        y = profile[j]
        out = profile[j + 1]
        if closing:
            t_end = t + (j + 1) * h
            for _ in range(_FP_MAX_ITER):
                rk4_step(f, kappa, params, mode, left, right, tau, y, h, out, work, u)
                if is_bad(out, limit):
                    return j
                delta = 0.0
                for i in range(m):
                    if ending[i]:
                        new = kappa(i, t_end, out, params)
                        d = abs(new - right[i]) / (1.0 + abs(new))
                        if d > delta:
                            delta = d
                        right[i] = new
                if delta <= _FP_TOL:
                    break
            for i in range(m):
                if ending[i]:
                    u_end[i] = right[i]
        rk4_step(f, kappa, params, mode, left, right, tau, y, h, out, work, u)
        if is_bad(out, limit):
            return j
    return OK


@njit
def plant_step(f, kappa, params, mode, left, right, tau, y, h, out):
    """Single plant step with freshly allocated scratch space."""
    work = np.empty((5, y.shape[0]))
    u = np.empty(mode.shape[0])
    rk4_step(f, kappa, params, mode, left, right, tau, y, h, out, work, u)


@njit
def march(f, kappa, params, m, t0, x0, h, steps, limit, states, controls):
    """Delay-free closed loop y' = f(y, kappa(t, y)) for ``steps`` steps.

    Fills ``states[0..steps]`` and ``controls[k, i] = kappa_i(t_k, y_k)``.
    Returns ``OK`` or the index of the first diverged row; rows past it are
    left untouched.
    """
    n = x0.shape[0]
    mode = np.full(m, FEEDBACK, dtype=np.int64)
    zeros = np.zeros(m)
    work = np.empty((5, n))
    u = np.empty(m)
    for c in range(n):
        states[0, c] = x0[c]
    for k in range(steps + 1):
        tau = t0 + k * h
        for i in range(m):
            controls[k, i] = kappa(i, tau, states[k], params)
        if k == steps:
            break
        rk4_step(f, kappa, params, mode, zeros, zeros, tau, states[k], h, states[k + 1], work, u)
        if is_bad(states[k + 1], limit):
            return k + 1
    return OK


# controller codes for closed_loop
PREDICTOR = 0
NOMINAL = 1
ZERO = 2

# closed_loop outcome codes
DONE = 0
PLANT_DIVERGED = 1
PREDICTOR_DIVERGED = 2


@njit
def closed_loop(f, kappa, params, controller, x0, sig, nsteps, h, steps, limit, states, preds, record):
    """Whole delayed closed loop in one call.

    ``sig[i]`` is U_i on the grid theta = (c - width) * h, c = 0..width+steps,
    where width = max(nsteps): the initial history occupies the columns up to
    ``width`` and each step writes its control to column ``width + k``.

    Returns ``(code, k, j)``: ``DONE``; ``PLANT_DIVERGED`` with the row k of
    the divergent state; or ``PREDICTOR_DIVERGED`` at step k, cascade step j.
    """
    n = x0.shape[0]
    m = nsteps.shape[0]
    width = 0
    for i in range(m):
        if nsteps[i] > width:
            width = nsteps[i]
    samples = np.zeros((m, width + 1))
    profile = np.empty((width + 1, n))
    u_end = np.empty(m)
    mode = np.full(m, SAMPLED, dtype=np.int64)
    left = np.empty(m)
    right = np.empty(m)
    work = np.empty((5, n))
    u = np.empty(m)
    for c in range(n):
        states[0, c] = x0[c]
    for k in range(steps + 1):
        t = k * h
        x = states[k]
        if controller == PREDICTOR:
            for i in range(m):
                if k > 0:
                    # provisional hold, the fixed-point starting guess
                    sig[i, width + k] = sig[i, width + k - 1]
                base = width - nsteps[i] + k
                for j in range(nsteps[i] + 1):
                    samples[i, j] = sig[i, base + j]
            st = cascade(f, kappa, params, t, x, samples, nsteps, h, SAMPLED, True, limit, profile, u_end)
            if st != OK:
                return PREDICTOR_DIVERGED, k, st
            for i in range(m):
                sig[i, width + k] = u_end[i]
                if record:
                    for c in range(n):
                        preds[k, i, c] = profile[nsteps[i], c]
        elif controller == NOMINAL:
            for i in range(m):
                sig[i, width + k] = kappa(i, t, x, params)
        else:
            for i in range(m):
                sig[i, width + k] = 0.0
        if k == steps:
            break
        for i in range(m):
            base = width - nsteps[i] + k
            left[i] = sig[i, base]
            right[i] = sig[i, base + 1]
        rk4_step(f, kappa, params, mode, left, right, t, x, h, states[k + 1], work, u)
        if is_bad(states[k + 1], limit):
            return PLANT_DIVERGED, k + 1, 0
    return DONE, steps, 0
