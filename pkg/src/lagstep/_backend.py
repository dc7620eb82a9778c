"""Compiled and interpreted copies of the integration kernels."""

import importlib.util
import pathlib

from . import _kernels as compiled

_interpreted = None


def _no_jit(fn=None, **options):
    return fn if fn is not None else _no_jit


def _load_interpreted():
    path = pathlib.Path(compiled.__file__)
    spec = importlib.util.spec_from_file_location("lagstep._kernels_py", path)
    module = importlib.util.module_from_spec(spec)
    module.njit = _no_jit
    spec.loader.exec_module(module)
    return module


def kernels(jit: bool):
    """Kernel module to use for a model; ``jit`` selects the numba build."""
    global _interpreted
    if jit:
        return compiled
    if _interpreted is None:
        _interpreted = _load_interpreted()
    return _interpreted
