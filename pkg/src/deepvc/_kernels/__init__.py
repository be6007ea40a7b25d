"""Hot inner loops, compiled when available.

The Cython extensions are built by ``setup.py``. When they are missing (or
``DEEPVC_PURE_PYTHON=1`` is set) the pure-Python twins are used instead;
``BACKEND`` names the active implementation.
"""
import os

from . import _pyfuzzy, _pylayout

_force_python = os.environ.get("DEEPVC_PURE_PYTHON", "").strip() not in ("", "0")

if _force_python:
    _cfuzzy = _clayout = None
else:
    try:
        from . import _cfuzzy, _clayout
    except ImportError:  # extension not built
        _cfuzzy = _clayout = None

if _cfuzzy is not None and _clayout is not None:
    BACKEND = "cython"
    fuzzy_filter_kernel = _cfuzzy.fuzzy_filter_kernel
    optimize_layout = _clayout.optimize_layout
else:
    BACKEND = "python"
    fuzzy_filter_kernel = _pyfuzzy.fuzzy_filter_kernel
    optimize_layout = _pylayout.optimize_layout

PYTHON_KERNELS = {
    "fuzzy_filter_kernel": _pyfuzzy.fuzzy_filter_kernel,
    "optimize_layout": _pylayout.optimize_layout,
}
COMPILED_KERNELS = (
    {"fuzzy_filter_kernel": _cfuzzy.fuzzy_filter_kernel,
     "optimize_layout": _clayout.optimize_layout}
    if BACKEND == "cython" else None
)


def seed_state(seed):
    """Expand an integer seed into a non-zero 64-bit xorshift state (splitmix64)."""
    mask = 0xFFFFFFFFFFFFFFFF
    z = (int(seed) + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z ^= z >> 31
    return z or 0x9E3779B97F4A7C15


__all__ = ["BACKEND", "fuzzy_filter_kernel", "optimize_layout", "seed_state",
           "PYTHON_KERNELS", "COMPILED_KERNELS"]
