"""Backend selection for the model-field integrator.

The compiled extension is used when importable.  Setting the environment
variable ``SHILNIKOV_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

python_backend = _kernels_py

if os.environ.get("SHILNIKOV_PURE_PYTHON", "") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _kernels as compiled_backend  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"


def get_backend(name: str | None = None):
    """Return a backend module by name (``"compiled"``, ``"python"`` or the default)."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not available")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
