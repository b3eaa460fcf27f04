"""Kernel backend selection.

Prefers the compiled Cython extension and falls back to the numpy
implementation when it is missing. ``ADVSIM_BACKEND=python`` or
``ADVSIM_BACKEND=compiled`` forces a backend explicitly; forcing the
compiled one raises if the extension was never built.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_choice = os.environ.get("ADVSIM_BACKEND", "").strip().lower()
if _choice == "python":
    _impl = _kernels_py
elif _choice == "compiled":
    if _compiled is None:
        raise RuntimeError(
            "ADVSIM_BACKEND=compiled but the advsim._kernels extension is not built"
        )
    _impl = _compiled
elif _choice == "":
    _impl = _compiled if _compiled is not None else _kernels_py
else:
    raise RuntimeError(f"unknown ADVSIM_BACKEND value: {_choice!r}")

BACKEND = "compiled" if _impl is not _kernels_py else "python"

bev_density = _impl.bev_density
bev_moments = _impl.bev_moments
bev_point_gradient = _impl.bev_point_gradient
# bev_cache returns (density, ...backend-private cache...); only pass it back
# into the same backend's bev_gradient_from_cache
bev_cache = _impl.bev_cache
bev_gradient_from_cache = _impl.bev_gradient_from_cache
nearest_sq = _impl.nearest_sq
