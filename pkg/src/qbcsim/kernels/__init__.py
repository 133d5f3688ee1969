"""Amplitude kernels with a compiled core and a NumPy fallback.

The compiled Cython module is preferred when available; setting the
environment variable ``QBCSIM_PURE=1`` before import forces the NumPy
implementation. The active choice is exposed as ``BACKEND``.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("QBCSIM_PURE", "0") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

apply_matrix = _impl.apply_matrix
controlled_permute = _impl.controlled_permute
cross_gram = _impl.cross_gram


def available_backends() -> dict:
    """Importable kernel modules keyed by backend name (for tests/benchmarks)."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels

        backends["compiled"] = _ckernels
    except ImportError:
        pass
    return backends


__all__ = [
    "BACKEND",
    "apply_matrix",
    "controlled_permute",
    "cross_gram",
    "available_backends",
]
