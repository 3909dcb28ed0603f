"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise, or when
``KSNS_PURE_PYTHON=1`` is set, the numpy fallback is loaded.
"""

import os

if os.environ.get("KSNS_PURE_PYTHON", "") not in ("", "0"):
    from ksns import _kernels_py as _impl
else:
    try:
        from ksns import _kernels as _impl
    except ImportError:  # extension not built
        from ksns import _kernels_py as _impl

BACKEND = _impl.BACKEND
stencil_apply = _impl.stencil_apply
pcg_smoothed = _impl.pcg_smoothed
upwind_flux = _impl.upwind_flux

__all__ = ["BACKEND", "stencil_apply", "pcg_smoothed", "upwind_flux"]
