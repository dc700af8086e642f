"""Backend selection for the recurrent-scan kernels.

The compiled Cython extension is preferred when importable; the numpy
implementation is the fallback. Set ``DIFFTRAIN_RECURRENT=numpy`` to force the
fallback (useful for benchmarking) or ``DIFFTRAIN_RECURRENT=compiled`` to fail
loudly when the extension is missing.
"""
from __future__ import annotations

import os

from . import _recurrent_np

_requested = os.environ.get("DIFFTRAIN_RECURRENT", "auto").strip().lower()

if _requested in ("auto", "", "compiled"):
    try:
        from . import _recurrent_cy as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "DIFFTRAIN_RECURRENT=compiled but the extension is not built; "
                "reinstall with a C compiler available")
        _impl = _recurrent_np
        BACKEND = "numpy"
elif _requested in ("numpy", "python"):
    _impl = _recurrent_np
    BACKEND = "numpy"
else:
    raise ValueError(f"unknown DIFFTRAIN_RECURRENT value {_requested!r}")

gru_forward_scan = _impl.gru_forward_scan
gru_backward_scan = _impl.gru_backward_scan


def available_backends() -> dict:
    """Name -> module for every importable backend (used by the benchmark)."""
    backends = {"numpy": _recurrent_np}
    try:
        from . import _recurrent_cy
        backends["compiled"] = _recurrent_cy
    except ImportError:
        pass
    return backends
