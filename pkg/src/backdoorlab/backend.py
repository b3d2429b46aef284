"""Kernel backend selection.

The hot convolution kernels exist twice: numba-jitted direct loops
(default) and a pure-numpy shifted-matmul fallback.  The environment
variable ``BACKDOORLAB_BACKEND`` selects one at import time
(``numba`` | ``numpy``); :func:`set_backend` switches at runtime, which
the benchmark and the cross-backend tests rely on.  Both backends
produce the same results up to float summation order.
"""

import os
import warnings

from . import _kernels_numpy

_IMPLS = {"numpy": _kernels_numpy}

try:
    from . import _kernels_numba

    _IMPLS["numba"] = _kernels_numba
    _DEFAULT = "numba"
except ImportError:  # pragma: no cover - exercised only without numba
    _DEFAULT = "numpy"

_active = os.environ.get("BACKDOORLAB_BACKEND", _DEFAULT).lower()
if _active not in _IMPLS:
    warnings.warn(
        f"unknown BACKDOORLAB_BACKEND={_active!r}, falling back to {_DEFAULT!r}"
    )
    _active = _DEFAULT


def available_backends():
    return sorted(_IMPLS)


def active_backend():
    return _active


def set_backend(name):
    """Switch kernel implementations. Returns the previously active name."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    prev = _active
    _active = name
    return prev


def conv3x3(xp, w, stride=1):
    return _IMPLS[_active].conv3x3(xp, w, stride)


def conv3x3_input_grad(dy, w, xp_shape, stride=1):
    return _IMPLS[_active].conv3x3_input_grad(dy, w, xp_shape, stride)


def conv3x3_weight_grad(xp, dy, stride=1):
    return _IMPLS[_active].conv3x3_weight_grad(xp, dy, stride)
