"""Backend selection for the hot resampling and pooling loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy versions in ``_npkernels`` take over. Set ``ANYTIMECV_KERNELS=numpy``
to force the fallback.
"""
import os

import numpy as np

from . import _npkernels

BACKEND = "numpy"
_impl = _npkernels

if os.environ.get("ANYTIMECV_KERNELS", "").lower() != "numpy":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _npkernels


def resize_bilinear(img, out_h, out_w):
    """Half-pixel-centred bilinear resize of an (H, W, C) float64 image."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.shape[0] == out_h and img.shape[1] == out_w:
        return img.copy()
    return _impl.resize_bilinear(img, int(out_h), int(out_w))


def warp_affine(img, inverse_matrix, fill=0.0):
    """Resample ``img`` where output pixel (x, y) reads source ``M @ (x, y, 1)``.

    ``inverse_matrix`` holds the six coefficients ``(a, b, c, d, e, f)`` of the
    output-to-source map. Taps falling outside the frame read ``fill``.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    m = np.ascontiguousarray(inverse_matrix, dtype=np.float64).reshape(6)
    return _impl.warp_affine(img, m, float(fill))


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(np.ascontiguousarray(x, dtype=np.float64))


def maxpool2x2_backward(dout, arg, in_h, in_w):
    return _impl.maxpool2x2_backward(
        np.ascontiguousarray(dout, dtype=np.float64),
        np.ascontiguousarray(arg, dtype=np.int8),
        int(in_h),
        int(in_w),
    )
