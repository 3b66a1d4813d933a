"""Numba-jitted kernels (default backend).

Contracts match `kernels_numpy`.  Loops are ordered so that results are
independent of the numba thread count: gather/compositing write disjoint
output rows, scatter-adds run serially.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _axis_corner(x, k):
    g = (x + 1.0) * 0.5 * (k - 1)
    if g < 0.0:
        g = 0.0
    elif g > k - 1:
        g = float(k - 1)
    i0 = int(g)
    if i0 > k - 2:
        i0 = k - 2
    return i0, g - i0


@njit(cache=True, parallel=True)
def plane_gather(planes, pts):
    n = pts.shape[0]
    k = planes.shape[1]
    f = planes.shape[3]
    out = np.zeros((n, f), dtype=planes.dtype)
    for i in prange(n):
        x, y, z = pts[i, 0], pts[i, 1], pts[i, 2]
        for p in range(3):
            if p == 0:
                u, v = x, y
            elif p == 1:
                u, v = x, z
            else:
                u, v = y, z
            i0, fu = _axis_corner(u, k)
            j0, fv = _axis_corner(v, k)
            w00 = (1.0 - fu) * (1.0 - fv)
            w01 = fu * (1.0 - fv)
            w10 = (1.0 - fu) * fv
            w11 = fu * fv
            for c in range(f):
                out[i, c] += (w00 * planes[p, j0, i0, c]
                              + w01 * planes[p, j0, i0 + 1, c]
                              + w10 * planes[p, j0 + 1, i0, c]
                              + w11 * planes[p, j0 + 1, i0 + 1, c])
    return out


@njit(cache=True)
def plane_scatter(shape, pts, dout):
    grad = np.zeros(shape, dtype=dout.dtype)
    n = pts.shape[0]
    k = shape[1]
    f = shape[3]
    # serial on purpose: scatter-add order fixes the floating-point result
    for i in range(n):
        x, y, z = pts[i, 0], pts[i, 1], pts[i, 2]
        for p in range(3):
            if p == 0:
                u, v = x, y
            elif p == 1:
                u, v = x, z
            else:
                u, v = y, z
            i0, fu = _axis_corner(u, k)
            j0, fv = _axis_corner(v, k)
            w00 = (1.0 - fu) * (1.0 - fv)
            w01 = fu * (1.0 - fv)
            w10 = (1.0 - fu) * fv
            w11 = fu * fv
            for c in range(f):
                g = dout[i, c]
                grad[p, j0, i0, c] += w00 * g
                grad[p, j0, i0 + 1, c] += w01 * g
                grad[p, j0 + 1, i0, c] += w10 * g
                grad[p, j0 + 1, i0 + 1, c] += w11 * g
    return grad


@njit(cache=True, parallel=True)
def composite_fwd(colors, sigmas, deltas, bg):
    r, s, c = colors.shape
    pix = np.zeros((r, c), dtype=colors.dtype)
    trans = np.empty(r, dtype=colors.dtype)
    for i in prange(r):
        t = 1.0
        for j in range(s):
            e = np.exp(-sigmas[i, j] * deltas[i, j])
            w = t * (1.0 - e)
            for ch in range(c):
                pix[i, ch] += w * colors[i, j, ch]
            t *= e
        for ch in range(c):
            pix[i, ch] += t * bg[ch]
        trans[i] = t
    return pix, trans


@njit(cache=True, parallel=True)
def composite_bwd(colors, sigmas, deltas, bg, dpix, dtrans):
    r, s, c = colors.shape
    dcolors = np.empty_like(colors)
    dsig = np.empty_like(sigmas)
    for i in prange(r):
        # forward sweep for weights and final transmittance
        t = 1.0
        for j in range(s):
            e = np.exp(-sigmas[i, j] * deltas[i, j])
            w = t * (1.0 - e)
            for ch in range(c):
                dcolors[i, j, ch] = w * dpix[i, ch]
            t *= e
        bgdot = 0.0
        for ch in range(c):
            bgdot += bg[ch] * dpix[i, ch]
        tail = t * (bgdot + dtrans[i])
        # second forward sweep keeps T_k * e_k * p_k and w_k * p_k per step,
        # then a reverse sweep builds the suffix sums
        wp = np.empty(s, dtype=colors.dtype)
        te = np.empty(s, dtype=colors.dtype)
        tk = 1.0
        for j in range(s):
            e = np.exp(-sigmas[i, j] * deltas[i, j])
            p = 0.0
            for ch in range(c):
                p += colors[i, j, ch] * dpix[i, ch]
            wp[j] = tk * (1.0 - e) * p
            te[j] = tk * e * p
            tk *= e
        suffix = 0.0
        for j in range(s - 1, -1, -1):
            dsig[i, j] = deltas[i, j] * (te[j] - suffix - tail)
            suffix += wp[j]
    return dcolors, dsig


@njit(cache=True)
def col2im(cols, xshape, ksize, stride, pad):
    b, h, w, c = xshape
    ho, wo = cols.shape[1], cols.shape[2]
    padded = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    cr = cols.reshape(b, ho, wo, ksize, ksize, c)
    for bi in range(b):
        for i in range(ho):
            for j in range(wo):
                for kh in range(ksize):
                    for kw in range(ksize):
                        for ch in range(c):
                            padded[bi, i * stride + kh, j * stride + kw, ch] += \
                                cr[bi, i, j, kh, kw, ch]
    if pad:
        return padded[:, pad:pad + h, pad:pad + w, :].copy()
    return padded
