"""Top-k kernel selection: the compiled extension when importable, else pure Python.

Set ``SPLADE_LAB_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("cython", "python" or None for the default)."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("splade_lab._kernels is not built; reinstall with Cython available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


BACKEND = "python" if (_compiled is None or os.environ.get("SPLADE_LAB_PURE_PYTHON")) else "cython"
