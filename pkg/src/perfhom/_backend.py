"""Kernel backend selection.

Imports the compiled Cython kernels when available and falls back to the
pure-NumPy implementations otherwise.  Setting ``PERFHOM_FORCE_PY=1`` in the
environment forces the fallback (used by the parity tests and benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("PERFHOM_FORCE_PY") == "1":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on build toolchain
        kernels = _kernels_py

BACKEND: str = kernels.BACKEND
stiffness_values = kernels.stiffness_values
locate_scan = kernels.locate_scan
