"""Backend selection for the hot kernels.

The compiled extension ``_core`` is used when it imports; otherwise the numpy
implementation in ``_fallback`` is used. Setting ``SURFGBPM_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _fallback

if os.environ.get("SURFGBPM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

knn = _impl.knn
pinv_batch = _impl.pinv_batch
poly_stencils = _impl.poly_stencils
quad_fits = _impl.quad_fits
rbf_stencils = _impl.rbf_stencils
closest_on_quadratic = _impl.closest_on_quadratic

__all__ = [
    "BACKEND",
    "knn",
    "pinv_batch",
    "poly_stencils",
    "quad_fits",
    "rbf_stencils",
    "closest_on_quadratic",
]
