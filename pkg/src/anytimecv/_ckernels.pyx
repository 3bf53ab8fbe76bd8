# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for image resampling and 2x2 max pooling.

Every function here has a numpy twin in ``_npkernels`` that evaluates the
same arithmetic in the same order; ``kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def resize_bilinear(const double[:, :, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    out = np.empty((out_h, out_w, c), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double scale_y = <double>h / <double>out_h
    cdef double scale_x = <double>w / <double>out_w
    cdef Py_ssize_t y, x, k, y0, y1, x0, x1
    cdef double sy, sx, wy, wx, top, bot
    with nogil:
        for y in range(out_h):
            sy = (y + 0.5) * scale_y - 0.5
            if sy < 0.0:
                sy = 0.0
            if sy > h - 1:
                sy = h - 1
            y0 = <Py_ssize_t>floor(sy)
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            wy = sy - y0
            for x in range(out_w):
                sx = (x + 0.5) * scale_x - 0.5
                if sx < 0.0:
                    sx = 0.0
                if sx > w - 1:
                    sx = w - 1
                x0 = <Py_ssize_t>floor(sx)
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                wx = sx - x0
                for k in range(c):
                    top = (1.0 - wx) * img[y0, x0, k] + wx * img[y0, x1, k]
                    bot = (1.0 - wx) * img[y1, x0, k] + wx * img[y1, x1, k]
                    o[y, x, k] = (1.0 - wy) * top + wy * bot
    return out


def warp_affine(const double[:, :, ::1] img, const double[::1] m, double fill):
    """Inverse-map each output pixel through ``m`` and sample bilinearly."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    out = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t y, x, k, x0, y0
    cdef double sx, sy, wx, wy, a, b, cc, d, top, bot
    cdef bint in00, in01, in10, in11
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = m[0] * x + m[1] * y + m[2]
                sy = m[3] * x + m[4] * y + m[5]
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                wx = sx - x0
                wy = sy - y0
                in00 = 0 <= y0 < h and 0 <= x0 < w
                in01 = 0 <= y0 < h and 0 <= x0 + 1 < w
                in10 = 0 <= y0 + 1 < h and 0 <= x0 < w
                in11 = 0 <= y0 + 1 < h and 0 <= x0 + 1 < w
                for k in range(c):
                    a = img[y0, x0, k] if in00 else fill
                    b = img[y0, x0 + 1, k] if in01 else fill
                    cc = img[y0 + 1, x0, k] if in10 else fill
                    d = img[y0 + 1, x0 + 1, k] if in11 else fill
                    top = (1.0 - wx) * a + wx * b
                    bot = (1.0 - wx) * cc + wx * d
                    o[y, x, k] = (1.0 - wy) * top + wy * bot
    return out


def maxpool2x2_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1] // 2, w = x.shape[2] // 2, c = x.shape[3]
    out = np.empty((n, h, w, c), dtype=np.float64)
    arg = np.empty((n, h, w, c), dtype=np.int8)
    cdef double[:, :, :, ::1] o = out
    cdef signed char[:, :, :, ::1] a = arg
    cdef Py_ssize_t i, y, xx, k
    cdef double best, v
    cdef signed char bi
    with nogil:
        for i in range(n):
            for y in range(h):
                for xx in range(w):
                    for k in range(c):
                        best = x[i, 2 * y, 2 * xx, k]
                        bi = 0
                        v = x[i, 2 * y, 2 * xx + 1, k]
                        if v > best:
                            best = v
                            bi = 1
                        v = x[i, 2 * y + 1, 2 * xx, k]
                        if v > best:
                            best = v
                            bi = 2
                        v = x[i, 2 * y + 1, 2 * xx + 1, k]
                        if v > best:
                            best = v
                            bi = 3
                        o[i, y, xx, k] = best
                        a[i, y, xx, k] = bi
    return out, arg


def maxpool2x2_backward(const double[:, :, :, ::1] dout, const signed char[:, :, :, ::1] arg,
                        Py_ssize_t in_h, Py_ssize_t in_w):
    cdef Py_ssize_t n = dout.shape[0], h = dout.shape[1], w = dout.shape[2], c = dout.shape[3]
    dx = np.zeros((n, in_h, in_w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] d = dx
    cdef Py_ssize_t i, y, xx, k
    cdef signed char bi
    with nogil:
        for i in range(n):
            for y in range(h):
                for xx in range(w):
                    for k in range(c):
                        bi = arg[i, y, xx, k]
                        d[i, 2 * y + (bi >> 1), 2 * xx + (bi & 1), k] = dout[i, y, xx, k]
    return dx
