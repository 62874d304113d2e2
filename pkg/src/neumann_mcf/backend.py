"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
kernels are used.  ``NEUMANN_MCF_BACKEND=python`` forces the fallback and
``NEUMANN_MCF_BACKEND=compiled`` makes a missing extension an error.
"""
from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _kernels_py

logger = logging.getLogger(__name__)


def _load() -> ModuleType:
    choice = os.environ.get("NEUMANN_MCF_BACKEND", "auto").lower()
    if choice == "python":
        return _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        if choice == "compiled":
            raise
        logger.info("compiled kernels unavailable; using numpy fallback")
        return _kernels_py
    return _kernels


kernels: ModuleType = _load()


def available() -> dict[str, ModuleType]:
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
