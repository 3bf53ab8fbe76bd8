"""Pure-numpy kernels, arithmetic-for-arithmetic twins of ``_ckernels``."""
import numpy as np


def _axis_weights(n_in, n_out):
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def resize_bilinear(img, out_h, out_w):
    h, w = img.shape[:2]
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    wx = wx[None, :, None]
    wy = wy[:, None, None]
    top = (1.0 - wx) * img[y0][:, x0] + wx * img[y0][:, x1]
    bot = (1.0 - wx) * img[y1][:, x0] + wx * img[y1][:, x1]
    return (1.0 - wy) * top + wy * bot


def warp_affine(img, m, fill):
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = m[0] * xs + m[1] * ys + m[2]
    sy = m[3] * xs + m[4] * ys + m[5]
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]

    def tap(yy, xx):
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        v = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(ok[..., None], v, fill)

    top = (1.0 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)
    bot = (1.0 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1)
    return (1.0 - wy) * top + wy * bot


def maxpool2x2_forward(x):
    n, h2, w2, c = x.shape
    h, w = h2 // 2, w2 // 2
    win = (
        x[:, : 2 * h, : 2 * w]
        .reshape(n, h, 2, w, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h, w, c, 4)
    )
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int8)


def maxpool2x2_backward(dout, arg, in_h, in_w):
    n, h, w, c = dout.shape
    win = np.zeros((n, h, w, c, 4), dtype=np.float64)
    np.put_along_axis(win, arg[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = np.zeros((n, in_h, in_w, c), dtype=np.float64)
    dx[:, : 2 * h, : 2 * w] = (
        win.reshape(n, h, w, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h, 2 * w, c)
    )
    return dx
