"""Reverse-mode differentiation over a fixed operation set.

Not a general graph engine: the training pipeline's graph is static and
small, so this module provides exactly the operations it needs (elementwise
arithmetic, matmul, smooth activations, reductions, concat/slice, bilinear
tri-plane gather, ray compositing, convolution pieces) and a linear tape.

Every operation accepts plain ndarrays and `Var` nodes interchangeably.
With no `Var` among the inputs the ndarray result is returned directly, so
the same code path serves gradient-free evaluation.
"""

import numpy as np

from .backend import get_kernels
from .params import Gradients, ParamStore

_K = get_kernels()


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN/Inf; names the offending op."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by operation '{op}'")
        self.op = op


class Tape:
    """Linear record of operations, replayed in reverse for gradients."""

    def __init__(self, check_finite: bool = True):
        self._bwd = []
        self.check_finite = check_finite

    def var(self, value, op: str) -> "Var":
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
        return Var(value, self)

    def record(self, bwd) -> None:
        self._bwd.append(bwd)

    def backward(self, out: "Var") -> None:
        if out.value.ndim != 0 and out.value.size != 1:
            raise ValueError("backward requires a scalar output")
        out.grad = np.ones_like(out.value)
        for bwd in reversed(self._bwd):
            bwd()

    def release(self) -> None:
        """Drop recorded closures so the graph frees by reference count.

        Closures hold their output variables and those hold this tape, so
        a finished graph is one large reference cycle that would otherwise
        sit around until a full garbage collection.
        """
        self._bwd.clear()


class Var:
    """Array plus accumulated gradient, attached to a tape."""

    __slots__ = ("value", "grad", "tape")

    def __init__(self, value: np.ndarray, tape: Tape):
        self.value = np.asarray(value)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def _acc(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def val(x):
    """Underlying ndarray of a Var, or the input itself."""
    return x.value if isinstance(x, Var) else x


def _tape(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    g = np.asarray(g)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, out_val, da, db, op: str):
    t = _tape(a, b)
    if t is None:
        return out_val
    out = t.var(out_val, op)

    def bwd():
        g = out.grad
        if isinstance(a, Var):
            a._acc(_unbroadcast(da(g), a.shape))
        if isinstance(b, Var):
            b._acc(_unbroadcast(db(g), b.shape))

    t.record(bwd)
    return out


def add(a, b):
    return _binary(a, b, val(a) + val(b), lambda g: g, lambda g: g, "add")


def sub(a, b):
    return _binary(a, b, val(a) - val(b), lambda g: g, lambda g: -g, "sub")


def mul(a, b):
    av, bv = val(a), val(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av, "mul")


def matmul(a, b):
    av, bv = val(a), val(b)
    return _binary(a, b, av @ bv, lambda g: g @ bv.T, lambda g: av.T @ g, "matmul")


def neg(a):
    return mul(a, -1.0)


def _unary(a, out_val, da, op: str):
    t = _tape(a)
    if t is None:
        return out_val
    out = t.var(out_val, op)

    def bwd():
        a._acc(da(out.grad))

    t.record(bwd)
    return out


def exp(a):
    ev = np.exp(val(a))
    return _unary(a, ev, lambda g: g * ev, "exp")


def tanh(a):
    tv = np.tanh(val(a))
    return _unary(a, tv, lambda g: g * (1.0 - tv * tv), "tanh")


def sigmoid(a):
    av = val(a)
    sv = 1.0 / (1.0 + np.exp(-np.abs(av)))
    sv = np.where(av >= 0, sv, 1.0 - sv)
    return _unary(a, sv, lambda g: g * sv * (1.0 - sv), "sigmoid")


def softplus(a):
    av = val(a)
    out_val = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    sig = 1.0 / (1.0 + np.exp(-np.abs(av)))
    sig = np.where(av >= 0, sig, 1.0 - sig)
    return _unary(a, out_val, lambda g: g * sig, "softplus")


def sum_(a):
    av = val(a)
    return _unary(a, np.asarray(av.sum()), lambda g: np.broadcast_to(g, av.shape), "sum")


def mean(a):
    av = val(a)
    n = av.size
    return _unary(a, np.asarray(av.mean()),
                  lambda g: np.broadcast_to(g / n, av.shape), "mean")


def reshape(a, shape):
    av = val(a)
    return _unary(a, av.reshape(shape), lambda g: g.reshape(av.shape), "reshape")


def concat_last(parts):
    """Concatenate along the final axis."""
    vals = [val(p) for p in parts]
    out_val = np.concatenate(vals, axis=-1)
    t = _tape(*parts)
    if t is None:
        return out_val
    out = t.var(out_val, "concat_last")
    widths = [v.shape[-1] for v in vals]

    def bwd():
        g = out.grad
        start = 0
        for p, w in zip(parts, widths):
            if isinstance(p, Var):
                p._acc(g[..., start:start + w])
            start += w

    t.record(bwd)
    return out


def take_last(a, start: int, stop: int):
    """Slice [start:stop] of the final axis."""
    av = val(a)

    def da(g):
        full = np.zeros_like(av)
        full[..., start:stop] = g
        return full

    return _unary(a, av[..., start:stop], da, "take_last")


def mse(a, b):
    """Mean squared error over all elements."""
    d = sub(a, b)
    return mean(mul(d, d))


def basis_combine(coeffs, basis):
    """Weighted sum of basis tri-planes: (M,) x (M, 3, K, K, F) -> (3, K, K, F)."""
    cv, bv = val(coeffs), val(basis)
    out_val = np.tensordot(cv, bv, axes=1)
    t = _tape(coeffs, basis)
    if t is None:
        return out_val
    out = t.var(out_val, "basis_combine")

    def bwd():
        g = out.grad
        if isinstance(coeffs, Var):
            coeffs._acc(np.tensordot(bv, g, axes=([1, 2, 3, 4], [0, 1, 2, 3])))
        if isinstance(basis, Var):
            basis._acc(cv[:, None, None, None, None] * g[None])

    t.record(bwd)
    return out


def triplane_gather(planes, pts: np.ndarray):
    """Bilinear tri-plane lookup summed over the three projections.

    planes: (3, K, K, F); pts: constant (n, 3) array in [-1, 1]^3.
    Differentiable w.r.t. planes only; points are quadrature nodes.
    """
    pv = val(planes)
    pts = np.ascontiguousarray(pts, dtype=pv.dtype)
    pv_c = np.ascontiguousarray(pv)
    out_val = _K.plane_gather(pv_c, pts)
    t = _tape(planes)
    if t is None:
        return out_val
    out = t.var(out_val, "triplane_gather")

    def bwd():
        g = np.ascontiguousarray(out.grad)
        planes._acc(_K.plane_scatter(pv.shape, pts, g))

    t.record(bwd)
    return out


def composite(colors, sigmas, deltas: np.ndarray, bg):
    """Emission-absorption compositing of per-sample colors and densities.

    colors: (R, S, C); sigmas: (R, S); deltas: constant (R, S); bg: (C,).
    Returns (pixels (R, C), transmittance (R,)).
    """
    cv = np.ascontiguousarray(val(colors))
    sv = np.ascontiguousarray(val(sigmas))
    dv = np.ascontiguousarray(np.broadcast_to(deltas, sv.shape)).astype(sv.dtype)
    bgv = np.ascontiguousarray(val(bg), dtype=cv.dtype)
    pix_val, trans_val = _K.composite_fwd(cv, sv, dv, bgv)
    t = _tape(colors, sigmas, bg)
    if t is None:
        return pix_val, trans_val
    pix = t.var(pix_val, "composite")
    trans = t.var(trans_val, "composite")

    def bwd():
        dpix = pix.grad if pix.grad is not None else np.zeros_like(pix_val)
        dtr = trans.grad if trans.grad is not None else np.zeros_like(trans_val)
        dcolors, dsig = _K.composite_bwd(cv, sv, dv, bgv,
                                         np.ascontiguousarray(dpix),
                                         np.ascontiguousarray(dtr))
        if isinstance(colors, Var):
            colors._acc(dcolors)
        if isinstance(sigmas, Var):
            sigmas._acc(dsig)
        if isinstance(bg, Var):
            bg._acc(trans_val @ dpix)

    t.record(bwd)
    return pix, trans


def _im2col(x: np.ndarray, ksize: int, stride: int, pad: int) -> np.ndarray:
    b, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - ksize) // stride + 1
    wo = (w + 2 * pad - ksize) // stride + 1
    s = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (b, ho, wo, ksize, ksize, c),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]))
    return np.ascontiguousarray(win).reshape(b, ho, wo, ksize * ksize * c)


def conv2d(x, weight, bias, stride: int = 1, pad: int = 1):
    """2D convolution, NHWC in, weight (ksize, ksize, Cin, Cout)."""
    xv, wv, bv = val(x), val(weight), val(bias)
    ksize = wv.shape[0]
    cin, cout = wv.shape[2], wv.shape[3]
    cols = _im2col(xv, ksize, stride, pad)
    wmat = wv.reshape(ksize * ksize * cin, cout)
    out_val = cols @ wmat + bv
    t = _tape(x, weight, bias)
    if t is None:
        return out_val
    out = t.var(out_val, "conv2d")

    def bwd():
        g = out.grad
        gmat = g.reshape(-1, cout)
        if isinstance(weight, Var):
            cmat = cols.reshape(-1, ksize * ksize * cin)
            weight._acc((cmat.T @ gmat).reshape(wv.shape))
        if isinstance(bias, Var):
            bias._acc(gmat.sum(axis=0))
        if isinstance(x, Var):
            dcols = (g @ wmat.T).reshape(cols.shape)
            x._acc(_K.col2im(np.ascontiguousarray(dcols), xv.shape,
                             ksize, stride, pad))

    t.record(bwd)
    return out


def upsample2(x, factor: int = 2):
    """Nearest-neighbour upsampling on NHWC arrays."""
    xv = val(x)
    out_val = xv.repeat(factor, axis=1).repeat(factor, axis=2)
    b, h, w, c = xv.shape

    def da(g):
        return g.reshape(b, h, factor, w, factor, c).sum(axis=(2, 4))

    return _unary(x, out_val, da, "upsample2")


def value_and_grad(objective, params: ParamStore, active_groups):
    """Evaluate a scalar objective and its reverse-mode gradients.

    `objective` receives a lookup callable p(group, name); parameters in
    `active_groups` arrive as tape variables, the rest as plain arrays.
    Returns (value, Gradients) where every active parameter has an entry,
    zero-filled if the objective never touched it. Frozen groups carry no
    entry at all.
    """
    active = set(active_groups)
    unknown = active - set(params.groups())
    if unknown:
        raise KeyError(f"active groups not in store: {sorted(unknown)}")
    tape = Tape(check_finite=True)
    leaves: dict[tuple[str, str], Var] = {}
    for (g, n), v in params.items():
        if g in active:
            leaves[(g, n)] = tape.var(v, op=f"param {g}/{n}")

    def lookup(group, name):
        leaf = leaves.get((group, name))
        return leaf if leaf is not None else params.get(group, name)

    try:
        out = objective(lookup)
        grads = Gradients()
        if isinstance(out, Var):
            value = float(np.asarray(out.value).reshape(()))
            tape.backward(out)
            for (g, n), leaf in leaves.items():
                grads.set(g, n, leaf.grad if leaf.grad is not None
                          else np.zeros_like(leaf.value))
        else:
            value = float(np.asarray(out).reshape(()))
            for (g, n), leaf in leaves.items():
                grads.set(g, n, np.zeros_like(leaf.value))
        return value, grads
    finally:
        tape.release()


def finite_difference_grad(objective, params: ParamStore, epsilon: float,
                           groups=None, coords=None) -> Gradients:
    """Central-difference gradients: (f(p+eps) - f(p-eps)) / (2 eps).

    Verification oracle, evaluated on a float64 copy of the store so the
    step survives the arithmetic regardless of the store's dtype. By
    default every coordinate of every group is perturbed; for expensive
    objectives `coords` maps (group, name) to the flat coordinate indices
    to probe (entries stay zero elsewhere, and the caller knows which
    positions carry real values).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    store64 = ParamStore()
    for (g, n), v in params.items():
        store64.add(g, n, v.astype(np.float64))
    targets = set(groups) if groups is not None else None

    def evaluate():
        def lookup(group, name):
            return store64.get(group, name)
        out = objective(lookup)
        return float(np.asarray(val(out)).reshape(()))

    grads = Gradients()
    for (g, n), v in store64.items():
        if targets is not None and g not in targets:
            continue
        flat = v.reshape(-1)
        gflat = np.zeros_like(flat)
        idx = range(flat.size)
        if coords is not None and (g, n) in coords:
            idx = coords[(g, n)]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = evaluate()
            flat[i] = orig - epsilon
            fm = evaluate()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * epsilon)
        grads.set(g, n, gflat.reshape(v.shape))
    return grads
