"""Hot-loop kernels, compiled when the Cython extension is built.

Set ``AIRFLUX_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the implementation that was picked at import time.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("AIRFLUX_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

fnv1a_64 = _impl.fnv1a_64
sgns_grad = _impl.sgns_grad
apply_rows = _impl.apply_rows

__all__ = ["BACKEND", "fnv1a_64", "sgns_grad", "apply_rows"]
