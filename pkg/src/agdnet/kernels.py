"""Backend selection for the depthwise 3x3 kernels.

The compiled extension is used when it imports; ``AGDNET_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

from . import _kernels_py

if os.environ.get("AGDNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

dwconv3x3_forward = _impl.dwconv3x3_forward
dwconv3x3_grad_input = _impl.dwconv3x3_grad_input
dwconv3x3_grad_weight = _impl.dwconv3x3_grad_weight

__all__ = [
    "BACKEND",
    "dwconv3x3_forward",
    "dwconv3x3_grad_input",
    "dwconv3x3_grad_weight",
]
