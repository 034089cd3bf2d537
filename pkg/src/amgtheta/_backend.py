"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy/scipy twins
are the fallback.  ``AMGTHETA_BACKEND`` overrides the choice with either
``compiled`` or ``python``.
"""

from __future__ import annotations

import os

_requested = os.environ.get("AMGTHETA_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise ImportError(
        f"AMGTHETA_BACKEND must be 'compiled' or 'python', got {_requested!r}"
    )

if _requested == "python":
    from amgtheta import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from amgtheta import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from amgtheta import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"


def backend_name() -> str:
    """Name of the kernel backend in use: ``compiled`` or ``python``."""
    return BACKEND
