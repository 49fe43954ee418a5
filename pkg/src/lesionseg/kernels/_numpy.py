"""Pure-numpy kernel implementations.

Every function here has a numba twin in ``_numba.py`` with the same
signature and semantics; the dispatch module picks one pair at import time.
Layout is channels-last throughout: images are (n, h, w, c) and volumes
(n, h, w, d, c).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


# ---------------------------------------------------------------------------
# im2col / col2im (stride-1 convolutions on pre-padded inputs)
# ---------------------------------------------------------------------------

def im2col2d(xp, kh, kw):
    """Patch matrix of a padded (n, hp, wp, c) image.

    Returns (n, ho, wo, kh*kw*c) with the flattened patch ordered
    (kh, kw, c) to match weight tensors of shape (kh, kw, c, f).
    """
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # windows: (n, ho, wo, c, kh, kw) -> (n, ho, wo, kh, kw, c)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    n, ho, wo = cols.shape[:3]
    return cols.reshape(n, ho, wo, kh * kw * xp.shape[3])


def col2im2d(dcols, n, hp, wp, c, kh, kw):
    """Scatter-add inverse of :func:`im2col2d` onto the padded image."""
    ho = hp - kh + 1
    wo = wp - kw + 1
    d = dcols.reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, hp, wp, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + ho, j:j + wo, :] += d[:, :, :, i, j, :]
    return dxp


def im2col3d(xp, kh, kw, kd):
    """3D analog of :func:`im2col2d` for (n, hp, wp, dp, c) volumes."""
    windows = sliding_window_view(xp, (kh, kw, kd), axis=(1, 2, 3))
    # (n, ho, wo, do, c, kh, kw, kd) -> (n, ho, wo, do, kh, kw, kd, c)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 3, 5, 6, 7, 4))
    n, ho, wo, do = cols.shape[:4]
    return cols.reshape(n, ho, wo, do, kh * kw * kd * xp.shape[4])


def col2im3d(dcols, n, hp, wp, dp, c, kh, kw, kd):
    ho = hp - kh + 1
    wo = wp - kw + 1
    do = dp - kd + 1
    d = dcols.reshape(n, ho, wo, do, kh, kw, kd, c)
    dxp = np.zeros((n, hp, wp, dp, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            for k in range(kd):
                dxp[:, i:i + ho, j:j + wo, k:k + do, :] += d[:, :, :, :, i, j, k, :]
    return dxp


# ---------------------------------------------------------------------------
# Max pooling (non-overlapping windows, dims divisible by the factors)
# ---------------------------------------------------------------------------

def maxpool2d_fwd(x, fh, fw):
    """(y, idx): pooled output plus flat within-window argmax indices."""
    n, h, w, c = x.shape
    ho, wo = h // fh, w // fw
    win = x.reshape(n, ho, fh, wo, fw, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, ho, wo, c, fh * fw)
    idx = win.argmax(axis=4).astype(np.int8)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=4)[..., 0]
    return y, idx


def maxpool2d_bwd(dy, idx, fh, fw):
    n, ho, wo, c = dy.shape
    dwin = np.zeros((n, ho, wo, c, fh * fw), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.int64), dy[..., None], axis=4)
    dwin = dwin.reshape(n, ho, wo, c, fh, fw).transpose(0, 1, 4, 2, 5, 3)
    return dwin.reshape(n, ho * fh, wo * fw, c)


def maxpool3d_fwd(x, fh, fw, fd):
    n, h, w, d, c = x.shape
    ho, wo, do = h // fh, w // fw, d // fd
    win = x.reshape(n, ho, fh, wo, fw, do, fd, c)
    win = win.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(n, ho, wo, do, c, fh * fw * fd)
    idx = win.argmax(axis=5).astype(np.int8)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=5)[..., 0]
    return y, idx


def maxpool3d_bwd(dy, idx, fh, fw, fd):
    n, ho, wo, do, c = dy.shape
    dwin = np.zeros((n, ho, wo, do, c, fh * fw * fd), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.int64), dy[..., None], axis=5)
    dwin = dwin.reshape(n, ho, wo, do, c, fh, fw, fd)
    dwin = dwin.transpose(0, 1, 5, 2, 6, 3, 7, 4)
    return dwin.reshape(n, ho * fh, wo * fw, do * fd, c)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def bilinear_resize2d(img, oh, ow):
    """Resize a 2D grid with bilinear interpolation (half-pixel centers)."""
    h, w = img.shape
    sy = h / oh
    sx = w / ow
    ys = (np.arange(oh) + 0.5) * sy - 0.5
    xs = (np.arange(ow) + 0.5) * sx - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = img[y0c][:, x0c] * (1 - wx) + img[y0c][:, x1c] * wx
    bot = img[y1c][:, x0c] * (1 - wx) + img[y1c][:, x1c] * wx
    return top * (1 - wy[:, None]) + bot * wy[:, None]


def affine_bilinear2d(img, m00, m01, m10, m11, t0, t1, fill):
    """Warp a 2D grid: out[i, j] = img(m @ [i, j] + t), bilinear, `fill` outside."""
    h, w = img.shape
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    src_i = m00 * ii + m01 * jj + t0
    src_j = m10 * ii + m11 * jj + t1
    i0 = np.floor(src_i).astype(np.int64)
    j0 = np.floor(src_j).astype(np.int64)
    wi = (src_i - i0)
    wj = (src_j - j0)

    def gather(iy, ix):
        inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        vals = img[np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
        return np.where(inside, vals, fill)

    v00 = gather(i0, j0)
    v01 = gather(i0, j0 + 1)
    v10 = gather(i0 + 1, j0)
    v11 = gather(i0 + 1, j0 + 1)
    out = (v00 * (1 - wi) * (1 - wj) + v01 * (1 - wi) * wj
           + v10 * wi * (1 - wj) + v11 * wi * wj)
    return out.astype(img.dtype)
