"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the environment variable
SACNET_BACKEND: "numba", "numpy", or "auto" (default; numba when it
imports, numpy otherwise).  Both backends implement identical contracts,
tested against each other, so everything above this layer is oblivious
to the choice.  `BACKEND` records which one is active.
"""

import os

from ..errors import ParameterError

_CHOICE = os.environ.get("SACNET_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ParameterError(
        f"SACNET_BACKEND must be 'auto', 'numba' or 'numpy', got {_CHOICE!r}")

if _CHOICE == "numpy":
    from . import numpy_backend as _active
else:
    try:
        from . import numba_backend as _active
    except ImportError:
        if _CHOICE == "numba":
            raise
        from . import numpy_backend as _active

BACKEND = _active.NAME

conv2d_fwd = _active.conv2d_fwd
conv2d_bwd_x = _active.conv2d_bwd_x
conv2d_bwd_w = _active.conv2d_bwd_w
upsample_fwd = _active.upsample_fwd
upsample_bwd = _active.upsample_bwd
bilin_gather = _active.bilin_gather
bilin_gather_bwd = _active.bilin_gather_bwd
nearest_fg = _active.nearest_fg


def get_backend(name):
    """Return a backend module by name; used by tests and benchmarks."""
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ParameterError(f"unknown backend {name!r}")
