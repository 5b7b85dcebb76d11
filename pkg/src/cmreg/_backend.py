"""Pick the compiled kernels when importable, else the NumPy fallback.

Set ``CMREG_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("CMREG_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    ContactKernel = _compiled.ContactKernel
    kd_query = _compiled.kd_query
    BACKEND = "compiled"
else:
    ContactKernel = _fallback.ContactKernel
    kd_query = _fallback.kd_query
    BACKEND = "python"

FallbackContactKernel = _fallback.ContactKernel
fallback_kd_query = _fallback.kd_query


def compiled_available() -> bool:
    return _compiled is not None
