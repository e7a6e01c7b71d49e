"""Backend selection for the numeric hot kernels.

``EPIMISR_BACKEND=numpy`` forces the pure-numpy path; ``numba`` (the
default) uses the jitted kernels, falling back to numpy when numba is
not importable. The choice is made once at import time.
"""

import logging
import os
import warnings

_log = logging.getLogger("epimisr")

_requested = os.environ.get("EPIMISR_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"EPIMISR_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        # The kernels never use the parallel target, so pin the threading
        # layer to workqueue; probing TBB warns on older installs.
        os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
        warnings.filterwarnings("ignore", message=".*TBB.*", module=r"numba(\..*)?")
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        _log.warning("numba unavailable, falling back to numpy kernels")
        from . import numpy_backend as _impl

        BACKEND = "numpy"
else:
    from . import numpy_backend as _impl

    BACKEND = "numpy"

bicubic_gather = _impl.bicubic_gather
bicubic_scatter = _impl.bicubic_scatter
conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel
value_noise = _impl.value_noise


def active_backend() -> str:
    return BACKEND
