"""Backend selection for the hot numerical kernels.

The compiled extension ``_kernels`` is used when it imports; otherwise the
numpy fallback ``_kernels_py`` is used. Setting the environment variable
``BNPSPATIAL_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("BNPSPATIAL_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

bvn_upper = _impl.bvn_upper
rect_prob_std = _impl.rect_prob_std
trunc_norm_std = _impl.trunc_norm_std
car_sweep = _impl.car_sweep
mcar_sweep = _impl.mcar_sweep

__all__ = ["BACKEND", "bvn_upper", "rect_prob_std", "trunc_norm_std", "car_sweep", "mcar_sweep"]
