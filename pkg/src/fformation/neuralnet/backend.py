"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise, or when
``FFORMATION_BACKEND=numpy`` is set, the NumPy implementation takes over.
Both expose ``lstm_forward(xproj, U)``, ``lstm_backward(dhidden, gates,
cell, tcell, U)`` and ``lstm_weight_grads(dz, inp, hidden)``.
"""

import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("cython", "numpy")


def available() -> list:
    return [name for name in BACKENDS if name == "numpy" or _compiled is not None]


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('cython', 'numpy' or 'auto'/None)."""
    if name in (None, "auto"):
        name = os.environ.get("FFORMATION_BACKEND", "auto")
    if name == "auto":
        return _compiled if _compiled is not None else _fallback
    if name == "numpy":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; reinstall with a C compiler and Cython")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; choose from {BACKENDS} or 'auto'")


def default_name() -> str:
    return get_backend().NAME
