"""Selects the kernel backend at import time.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module takes over.  Set ``KCN_PURE_PYTHON=1`` to force
the fallback.
"""

import os
import warnings

from . import _pykernels

try:
    from . import _ckernels
except ImportError:          # extension not built
    _ckernels = None

if os.environ.get("KCN_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    kernels = _pykernels
    if _ckernels is None and not os.environ.get("KCN_PURE_PYTHON"):
        warnings.warn("compiled kernels unavailable; using the pure-Python fallback", RuntimeWarning)
else:
    kernels = _ckernels

BACKEND = kernels.NAME


def available():
    """Name -> module for every importable backend."""
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out
