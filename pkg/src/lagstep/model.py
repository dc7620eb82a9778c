"""Plant models: dynamics, per-channel feedback laws and input delays.

A model is described by two small kernels (see :mod:`lagstep._kernels`) so
the predictor cascade can be compiled around it. The builtins ship numba
kernels; :meth:`SystemModel.from_functions` wraps arbitrary Python callables
and runs on the interpreted kernels instead.

Channels are indexed from 0. Feedback laws always take a time argument,
kappa_i(t, X); time-invariant laws ignore it.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError, InputError, NumericError

_EQUILIBRIUM_TOL = 1e-12
_EQUILIBRIUM_TIMES = np.linspace(0.0, 2.0 * np.pi, 9)


class SystemModel:
    """Plant X' = f(X, U_1(t - D_1), ..., U_m(t - D_m)) with feedback laws.

    Args:
        n: state dimension.
        delays: per-channel input delays, ascending unless ``ordered=False``.
        f_kernel: ``f(y, u, params, out)`` writing the vector field.
        kappa_kernel: ``kappa(i, t, y, params) -> float``.
        params: flat parameter vector handed to both kernels.
        jit: whether the kernels are numba-compiled.
        ordered: require D_1 <= ... <= D_m. Only the unicycle counterexample
            turns this off.
        name: label used in reports.
    """

    def __init__(self, n, delays, f_kernel, kappa_kernel, params=None, *, jit=True,
                 ordered=True, name="model"):
        delays = tuple(float(d) for d in delays)
        if n < 1 or not delays:
            raise ConfigurationError("need at least one state and one input channel")
        if any(not (d > 0 and math.isfinite(d)) for d in delays):
            raise ConfigurationError(f"delays must be positive and finite, got {delays}")
        if ordered and any(b < a for a, b in zip(delays, delays[1:])):
            raise ConfigurationError(f"delays must be sorted ascending, got {delays}")
        self.n = int(n)
        self.m = len(delays)
        self.delays = delays
        self.f_kernel = f_kernel
        self.kappa_kernel = kappa_kernel
        self.params = np.ascontiguousarray(params if params is not None else np.zeros(0), dtype=float)
        self.jit = jit
        self.ordered = ordered
        self.name = name
        self._check_equilibrium()

    @classmethod
    def from_functions(cls, n: int, delays: Sequence[float],
                       f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       kappa: Sequence[Callable[[float, np.ndarray], float]], **kwargs) -> "SystemModel":
        """Model from plain callables ``f(X, u)`` and ``kappa[i](t, X)``."""
        if len(kappa) != len(delays):
            raise ConfigurationError(f"{len(kappa)} feedback laws for {len(delays)} delays")
        laws = tuple(kappa)

        def f_kernel(y, u, params, out):
            out[:] = f(y, u)

        def kappa_kernel(i, t, y, params):
            return float(laws[i](t, y))

        kwargs.setdefault("name", "custom")
        return cls(n, delays, f_kernel, kappa_kernel, jit=False, **kwargs)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, n={self.n}, delays={self.delays})"

    @property
    def max_delay(self) -> float:
        return max(self.delays)

    def delay_gap(self, j: int, i: int) -> float:
        """D_j - D_i."""
        return self.delays[j] - self.delays[i]

    def eval_f(self, X, u) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        u = np.asarray(u, dtype=float)
        if X.shape != (self.n,) or u.shape != (self.m,):
            raise ConfigurationError(f"expected X of shape ({self.n},) and u of shape ({self.m},)")
        out = np.empty(self.n)
        self.f_kernel(np.ascontiguousarray(X), np.ascontiguousarray(u), self.params, out)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"f({X}, {u}) is not finite", state=X, inputs=u)
        return out

    def eval_kappa(self, i: int, t: float, X) -> float:
        if not 0 <= i < self.m:
            raise ConfigurationError(f"channel {i} out of range for m={self.m}")
        X = np.ascontiguousarray(X, dtype=float)
        if X.shape != (self.n,):
            raise ConfigurationError(f"expected X of shape ({self.n},)")
        if not (np.all(np.isfinite(X)) and math.isfinite(t)):
            raise InputError("non-finite state or time passed to feedback law")
        return float(self.kappa_kernel(i, float(t), X, self.params))

    def feedback(self, t: float, X) -> np.ndarray:
        """All nominal controls kappa_i(t, X)."""
        return np.array([self.eval_kappa(i, t, X) for i in range(self.m)])

    def _check_equilibrium(self):
        zero_x = np.zeros(self.n)
        drift = self.eval_f(zero_x, np.zeros(self.m))
        if np.max(np.abs(drift)) > _EQUILIBRIUM_TOL:
            raise ConfigurationError(f"f(0, 0) = {drift} is not zero")
        for t in _EQUILIBRIUM_TIMES:
            for i in range(self.m):
                v = self.eval_kappa(i, t, zero_x)
                if abs(v) > _EQUILIBRIUM_TOL:
                    raise ConfigurationError(f"kappa_{i}({t}, 0) = {v} is not zero")


# --- unicycle -------------------------------------------------------------

@njit(cache=True)
def _unicycle_f(y, u, params, out):
    out[0] = u[1] * math.cos(y[2])
    out[1] = u[1] * math.sin(y[2])
    out[2] = u[0]


@njit(cache=True)
def _unicycle_kappa(i, t, y, params):
    ch = math.cos(y[2])
    sh = math.sin(y[2])
    along = y[0] * ch + y[1] * sh
    across = y[0] * sh - y[1] * ch
    c = math.cos(t)
    turn = -along * along * c - along * across * (1.0 + c * c) - y[2]
    if i == 0:
        return turn
    return -along + across * (math.sin(t) - c) + across * turn


def body_frame_position(X) -> tuple[float, float]:
    """Position of the unicycle in its own heading frame.

    Returns ``(M, Q)`` with M = X1 cos X3 + X2 sin X3 and
    Q = X1 sin X3 - X2 cos X3, so M**2 + Q**2 == X1**2 + X2**2.
    """
    x1, x2, x3 = (float(v) for v in X)
    return x1 * math.cos(x3) + x2 * math.sin(x3), x1 * math.sin(x3) - x2 * math.cos(x3)


def make_unicycle(D1: float, D2: float, *, allow_reversed: bool = False, jit: bool = True) -> SystemModel:
    """Unicycle X1' = U2 cos X3, X2' = U2 sin X3, X3' = U1 with Pomet's law.

    Channel 0 is the turning rate U1 (delay ``D1``), channel 1 the speed U2
    (delay ``D2``). The standing assumption is D1 < D2; the reverse order is
    only accepted with ``allow_reversed`` (it is the finite-escape
    counterexample, not a stabilizable configuration).
    """
    if D1 >= D2 and not allow_reversed:
        raise ConfigurationError(f"unicycle needs D1 < D2 (got {D1}, {D2}); pass allow_reversed for the escape demo")
    f, kappa = (_unicycle_f, _unicycle_kappa) if jit else (_unicycle_f.py_func, _unicycle_kappa.py_func)
    return SystemModel(3, (D1, D2), f, kappa, jit=jit, ordered=not allow_reversed, name="unicycle")


# --- linear time-invariant ------------------------------------------------

@njit(cache=True)
def _linear_f(y, u, params, out):
    n = int(params[0])
    m = int(params[1])
    a0 = 2
    b0 = a0 + n * n
    for r in range(n):
        s = 0.0
        for c in range(n):
            s += params[a0 + r * n + c] * y[c]
        for i in range(m):
            s += params[b0 + r * m + i] * u[i]
        out[r] = s


@njit(cache=True)
def _linear_kappa(i, t, y, params):
    n = int(params[0])
    m = int(params[1])
    k0 = 2 + n * n + n * m
    s = 0.0
    for c in range(n):
        s += params[k0 + i * n + c] * y[c]
    return s


class LinearModel(SystemModel):
    """X' = A X + sum_i b_i U_i(t - D_i) with U_i = k_i^T X in the delay-free loop.

    ``A_closed[i] = A + sum_{j<i} b_j k_j^T`` (so ``A_closed[0] = A`` and
    ``A_closed[m]`` is the fully compensated closed-loop matrix).
    """

    def __init__(self, A, b, k, delays, *, jit=True, name="linear"):
        A = np.array(A, dtype=float, ndmin=2)
        b = [np.array(v, dtype=float).reshape(-1) for v in b]
        k = [np.array(v, dtype=float).reshape(-1) for v in k]
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got shape {A.shape}")
        if len(b) != len(delays) or len(k) != len(delays):
            raise ConfigurationError(f"need one b_i and one k_i per delay ({len(delays)}), got {len(b)} and {len(k)}")
        for name_, vecs in (("b", b), ("k", k)):
            for i, v in enumerate(vecs):
                if v.shape != (n,):
                    raise ConfigurationError(f"{name_}[{i}] has length {v.size}, expected {n}")
        mats = [A, *b, *k]
        if not all(np.all(np.isfinite(x)) for x in mats):
            raise InputError("linear model matrices must be finite")
        self.A = A
        self.b = b
        self.k = k
        self.B = np.column_stack(b)
        self.K = np.vstack(k)
        closed = [A.copy()]
        for bi, ki in zip(b, k):
            closed.append(closed[-1] + np.outer(bi, ki))
        self.A_closed = closed
        params = np.concatenate([[n, len(b)], A.ravel(), self.B.ravel(), self.K.ravel()])
        f, kappa = (_linear_f, _linear_kappa) if jit else (_linear_f.py_func, _linear_kappa.py_func)
        super().__init__(n, delays, f, kappa, params, jit=jit, name=name)


def make_linear(A, b: Sequence, k: Sequence, delays: Sequence[float], **kwargs) -> LinearModel:
    """Build a :class:`LinearModel`; ``b`` and ``k`` are lists of n-vectors."""
    return LinearModel(A, b, k, delays, **kwargs)
