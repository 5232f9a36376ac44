"""Selects the compiled kernels when importable, else the numpy fallback.

Set ``TRIPLANETOK_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

kernels = _kernels_py
if os.environ.get("TRIPLANETOK_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py


def backend_name() -> str:
    return kernels.NAME


def use(name: str) -> None:
    """Switch kernels at runtime ("cython" or "numpy")."""
    global kernels
    if name == "numpy":
        kernels = _kernels_py
    elif name == "cython":
        from . import _kernels
        kernels = _kernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["numpy"]
    try:
        from . import _kernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names
