"""Numba-jitted kernel implementations (see ``_numpy.py`` for semantics)."""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col2d(xp, kh, kw):
    n, hp, wp, c = xp.shape
    ho = hp - kh + 1
    wo = wp - kw + 1
    cols = np.empty((n, ho, wo, kh * kw * c), dtype=xp.dtype)
    for b in range(n):
        for y in range(ho):
            for x in range(wo):
                p = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            cols[b, y, x, p] = xp[b, y + i, x + j, ch]
                            p += 1
    return cols


@njit(cache=True)
def col2im2d(dcols, n, hp, wp, c, kh, kw):
    ho = hp - kh + 1
    wo = wp - kw + 1
    d = dcols.reshape(n, ho, wo, kh * kw * c)
    dxp = np.zeros((n, hp, wp, c), dtype=dcols.dtype)
    for b in range(n):
        for y in range(ho):
            for x in range(wo):
                p = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            dxp[b, y + i, x + j, ch] += d[b, y, x, p]
                            p += 1
    return dxp


@njit(cache=True)
def im2col3d(xp, kh, kw, kd):
    n, hp, wp, dp, c = xp.shape
    ho = hp - kh + 1
    wo = wp - kw + 1
    do = dp - kd + 1
    cols = np.empty((n, ho, wo, do, kh * kw * kd * c), dtype=xp.dtype)
    for b in range(n):
        for y in range(ho):
            for x in range(wo):
                for z in range(do):
                    p = 0
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(kd):
                                for ch in range(c):
                                    cols[b, y, x, z, p] = xp[b, y + i, x + j, z + k, ch]
                                    p += 1
    return cols


@njit(cache=True)
def col2im3d(dcols, n, hp, wp, dp, c, kh, kw, kd):
    ho = hp - kh + 1
    wo = wp - kw + 1
    do = dp - kd + 1
    d = dcols.reshape(n, ho, wo, do, kh * kw * kd * c)
    dxp = np.zeros((n, hp, wp, dp, c), dtype=dcols.dtype)
    for b in range(n):
        for y in range(ho):
            for x in range(wo):
                for z in range(do):
                    p = 0
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(kd):
                                for ch in range(c):
                                    dxp[b, y + i, x + j, z + k, ch] += d[b, y, x, z, p]
                                    p += 1
    return dxp


@njit(cache=True)
def maxpool2d_fwd(x, fh, fw):
    n, h, w, c = x.shape
    ho = h // fh
    wo = w // fw
    y = np.empty((n, ho, wo, c), dtype=x.dtype)
    idx = np.empty((n, ho, wo, c), dtype=np.int8)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for ch in range(c):
                    best = x[b, oy * fh, ox * fw, ch]
                    arg = 0
                    p = 0
                    for i in range(fh):
                        for j in range(fw):
                            v = x[b, oy * fh + i, ox * fw + j, ch]
                            if v > best:
                                best = v
                                arg = p
                            p += 1
                    y[b, oy, ox, ch] = best
                    idx[b, oy, ox, ch] = arg
    return y, idx


@njit(cache=True)
def maxpool2d_bwd(dy, idx, fh, fw):
    n, ho, wo, c = dy.shape
    dx = np.zeros((n, ho * fh, wo * fw, c), dtype=dy.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for ch in range(c):
                    p = idx[b, oy, ox, ch]
                    i = p // fw
                    j = p % fw
                    dx[b, oy * fh + i, ox * fw + j, ch] = dy[b, oy, ox, ch]
    return dx


@njit(cache=True)
def maxpool3d_fwd(x, fh, fw, fd):
    n, h, w, d, c = x.shape
    ho = h // fh
    wo = w // fw
    do = d // fd
    y = np.empty((n, ho, wo, do, c), dtype=x.dtype)
    idx = np.empty((n, ho, wo, do, c), dtype=np.int8)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for oz in range(do):
                    for ch in range(c):
                        best = x[b, oy * fh, ox * fw, oz * fd, ch]
                        arg = 0
                        p = 0
                        for i in range(fh):
                            for j in range(fw):
                                for k in range(fd):
                                    v = x[b, oy * fh + i, ox * fw + j, oz * fd + k, ch]
                                    if v > best:
                                        best = v
                                        arg = p
                                    p += 1
                        y[b, oy, ox, oz, ch] = best
                        idx[b, oy, ox, oz, ch] = arg
    return y, idx


@njit(cache=True)
def maxpool3d_bwd(dy, idx, fh, fw, fd):
    n, ho, wo, do, c = dy.shape
    dx = np.zeros((n, ho * fh, wo * fw, do * fd, c), dtype=dy.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for oz in range(do):
                    for ch in range(c):
                        p = idx[b, oy, ox, oz, ch]
                        i = p // (fw * fd)
                        rem = p % (fw * fd)
                        j = rem // fd
                        k = rem % fd
                        dx[b, oy * fh + i, ox * fw + j, oz * fd + k, ch] = dy[b, oy, ox, oz, ch]
    return dx


@njit(cache=True)
def bilinear_resize2d(img, oh, ow):
    h, w = img.shape
    sy = h / oh
    sx = w / ow
    out = np.empty((oh, ow), dtype=img.dtype)
    for y in range(oh):
        fy = (y + 0.5) * sy - 0.5
        y0 = int(np.floor(fy))
        wy = fy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for x in range(ow):
            fx = (x + 0.5) * sx - 0.5
            x0 = int(np.floor(fx))
            wx = fx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            top = img[y0c, x0c] * (1 - wx) + img[y0c, x1c] * wx
            bot = img[y1c, x0c] * (1 - wx) + img[y1c, x1c] * wx
            out[y, x] = top * (1 - wy) + bot * wy
    return out


@njit(cache=True)
def affine_bilinear2d(img, m00, m01, m10, m11, t0, t1, fill):
    h, w = img.shape
    out = np.empty((h, w), dtype=img.dtype)
    for i in range(h):
        for j in range(w):
            si = m00 * i + m01 * j + t0
            sj = m10 * i + m11 * j + t1
            i0 = int(np.floor(si))
            j0 = int(np.floor(sj))
            wi = si - i0
            wj = sj - j0
            acc = 0.0
            for di in range(2):
                for dj in range(2):
                    iy = i0 + di
                    ix = j0 + dj
                    if 0 <= iy < h and 0 <= ix < w:
                        v = img[iy, ix]
                    else:
                        v = fill
                    wgt = (wi if di == 1 else 1 - wi) * (wj if dj == 1 else 1 - wj)
                    acc += v * wgt
            out[i, j] = acc
    return out
