"""Backend dispatch for the convolution kernels.

Two interchangeable implementations exist: a compiled one (numba) and a
pure-numpy fallback.  The active backend is chosen by the BSNN_BACKEND
environment variable ("numba" or "numpy"); when unset, the compiled lane
is used if numba imports cleanly.  `set_backend` overrides the choice at
runtime for tests and benchmarks.
"""

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_impl

_BACKENDS = {"numpy": numpy_impl}

try:
    from . import numba_impl

    _BACKENDS["numba"] = numba_impl
    _default = "numba"
except ImportError:  # pragma: no cover - numba is a declared dependency
    _default = "numpy"

_env = os.environ.get("BSNN_BACKEND", "").strip().lower()
if _env:
    if _env not in _BACKENDS:
        raise ConfigError(
            f"BSNN_BACKEND={_env!r} is not available; choose from {sorted(_BACKENDS)}"
        )
    _default = _env

_active = _default


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ConfigError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}")
    _active = name


def conv2d_forward(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Correlate pre-padded input (N,Cin,Hp,Wp) with weights (Cout,Cin,kh,kw)."""
    return _BACKENDS[_active].conv2d_forward(xp, w, stride)


def conv2d_grad_weights(
    grad_y: np.ndarray, xp: np.ndarray, kh: int, kw: int, stride: int
) -> np.ndarray:
    return _BACKENDS[_active].conv2d_grad_weights(grad_y, xp, kh, kw, stride)


def conv2d_grad_input(
    grad_y: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int
) -> np.ndarray:
    """Gradient w.r.t. the pre-padded input; caller crops the padding."""
    return _BACKENDS[_active].conv2d_grad_input(grad_y, w, stride, hp, wp)
