"""Kernel backend selection.

The compiled extension is preferred when importable; set MESHKIT_KERNELS to
"python" or "cython" to force a backend. Both expose the same functions and
produce bit-identical results.
"""

from __future__ import annotations

import os

from . import _kernels_py


def _load():
    forced = os.environ.get("MESHKIT_KERNELS", "").strip().lower()
    if forced == "python":
        return _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    except ImportError:
        if forced == "cython":
            raise ImportError("compiled kernel extension requested but not built")
        return _kernels_py


kernels = _load()


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "python")."""
    return kernels.BACKEND_NAME


def available_backends():
    """All importable kernel modules, compiled first."""
    mods = []
    try:
        from . import _kernels  # type: ignore[attr-defined]

        mods.append(_kernels)
    except ImportError:
        pass
    mods.append(_kernels_py)
    return mods
