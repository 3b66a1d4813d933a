"""Pure-numpy kernels (fallback backend).

Same contracts as `kernels_numba`; see that module for the jitted twins.
All functions are deterministic for identical inputs.

Tri-plane layout: planes[p, v, u, f] with p in {0: XY, 1: XZ, 2: YZ},
row-major, v-major within a plane.  Points live in [-1, 1]^3 and are
clamped at the plane borders.
"""

import numpy as np

# (u, v) projection axes per plane: XY, XZ, YZ
_PROJ = ((0, 1), (0, 2), (1, 2))


def _corner_data(pts_axis: np.ndarray, k: int):
    """Grid index pair and interpolation weight along one axis."""
    g = (pts_axis + 1.0) * 0.5 * (k - 1)
    g = np.clip(g, 0.0, float(k - 1))
    i0 = np.minimum(g.astype(np.int64), k - 2)
    frac = g - i0
    return i0, frac


def plane_gather(planes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sum of bilinear samples of the three planes at projected points.

    planes: (3, K, K, F); pts: (n, 3) -> (n, F)
    """
    k = planes.shape[1]
    n = pts.shape[0]
    out = np.zeros((n, planes.shape[3]), dtype=planes.dtype)
    for p, (ua, va) in enumerate(_PROJ):
        i0, fu = _corner_data(pts[:, ua], k)
        j0, fv = _corner_data(pts[:, va], k)
        fu = fu[:, None].astype(planes.dtype)
        fv = fv[:, None].astype(planes.dtype)
        pl = planes[p]
        c00 = pl[j0, i0]
        c01 = pl[j0, i0 + 1]
        c10 = pl[j0 + 1, i0]
        c11 = pl[j0 + 1, i0 + 1]
        top = c00 * (1.0 - fu) + c01 * fu
        bot = c10 * (1.0 - fu) + c11 * fu
        out += top * (1.0 - fv) + bot * fv
    return out


def plane_scatter(shape: tuple, pts: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Adjoint of plane_gather: scatter-add dout back into plane grads."""
    k = shape[1]
    grad = np.zeros(shape, dtype=dout.dtype)
    for p, (ua, va) in enumerate(_PROJ):
        i0, fu = _corner_data(pts[:, ua], k)
        j0, fv = _corner_data(pts[:, va], k)
        fu = fu[:, None].astype(dout.dtype)
        fv = fv[:, None].astype(dout.dtype)
        np.add.at(grad[p], (j0, i0), dout * (1.0 - fu) * (1.0 - fv))
        np.add.at(grad[p], (j0, i0 + 1), dout * fu * (1.0 - fv))
        np.add.at(grad[p], (j0 + 1, i0), dout * (1.0 - fu) * fv)
        np.add.at(grad[p], (j0 + 1, i0 + 1), dout * fu * fv)
    return grad


def composite_fwd(colors: np.ndarray, sigmas: np.ndarray, deltas: np.ndarray,
                  bg: np.ndarray):
    """Emission-absorption quadrature along each ray.

    colors: (R, S, C); sigmas, deltas: (R, S); bg: (C,)
    Returns (pixels (R, C), transmittance (R,)).
    """
    dt = sigmas * deltas
    att = np.exp(-np.cumsum(dt, axis=1))
    t = np.concatenate([np.ones_like(att[:, :1]), att[:, :-1]], axis=1)
    alpha = 1.0 - np.exp(-dt)
    w = t * alpha
    pix = np.einsum("rs,rsc->rc", w, colors) + att[:, -1:] * bg[None, :]
    return pix, att[:, -1]


def composite_bwd(colors: np.ndarray, sigmas: np.ndarray, deltas: np.ndarray,
                  bg: np.ndarray, dpix: np.ndarray, dtrans: np.ndarray):
    """Adjoint of composite_fwd w.r.t. colors and sigmas."""
    dt = sigmas * deltas
    e = np.exp(-dt)
    att = np.exp(-np.cumsum(dt, axis=1))
    t = np.concatenate([np.ones_like(att[:, :1]), att[:, :-1]], axis=1)
    w = t * (1.0 - e)
    tf = att[:, -1]

    dcolors = w[:, :, None] * dpix[:, None, :]
    p = np.einsum("rsc,rc->rs", colors, dpix)
    wp = w * p
    suffix = np.flip(np.cumsum(np.flip(wp, axis=1), axis=1), axis=1) - wp
    tail = tf * (dpix @ bg + dtrans)
    dsig = deltas * (t * e * p - suffix - tail[:, None])
    return dcolors, dsig


def col2im(cols: np.ndarray, xshape: tuple, ksize: int, stride: int,
           pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter column gradients back to image layout.

    cols: (B, Ho, Wo, ksize*ksize*C); xshape: (B, H, W, C)
    """
    b, h, w, c = xshape
    ho, wo = cols.shape[1], cols.shape[2]
    padded = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    cols = cols.reshape(b, ho, wo, ksize, ksize, c)
    for kh in range(ksize):
        for kw in range(ksize):
            patch = padded[:, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :]
            patch += cols[:, :, :, kh, kw, :]
    if pad:
        return padded[:, pad:pad + h, pad:pad + w, :].copy()
    return padded
