"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when it imports; set
``PQXPLAIN_BACKEND=numpy`` or ``PQXPLAIN_BACKEND=compiled`` to force a
backend (forcing ``compiled`` raises if the extension is missing).
Within one backend all kernels are bit-deterministic; across backends
results agree to floating-point rounding only.
"""

import os

_requested = os.environ.get("PQXPLAIN_BACKEND", "auto")
if _requested not in ("auto", "compiled", "numpy"):
    raise RuntimeError(
        f"PQXPLAIN_BACKEND must be auto, compiled or numpy (got {_requested!r})"
    )

if _requested in ("auto", "compiled"):
    try:
        from . import _convolve as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import reference as _impl

        BACKEND = "numpy"
else:
    from . import reference as _impl

    BACKEND = "numpy"

conv1d_forward = _impl.conv1d_forward
conv1d_backward_input = _impl.conv1d_backward_input
conv1d_backward_weights = _impl.conv1d_backward_weights
maxpool1d_forward = _impl.maxpool1d_forward
maxpool1d_backward = _impl.maxpool1d_backward

__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_backward_input",
    "conv1d_backward_weights",
    "maxpool1d_forward",
    "maxpool1d_backward",
]
