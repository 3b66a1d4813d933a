"""Tri-plane scene representation and its micro-macro decomposition.

A scene is three axis-aligned K x K feature planes. A 3D point's feature
vector is the sum of bilinear samples at its three projections. Scenes
split their feature channels into a per-scene micro part and a macro part
formed as a coefficient-weighted sum of globally shared basis planes;
composition concatenates the two along the feature axis.

Layout: planes[p, v, u, f] with p in {0: XY, 1: XZ, 2: YZ}; within each
projection pair the first coordinate maps to u, the second to v.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

VARIANTS = ("ours", "ours-micro", "ours-macro", "ours-m1", "ours-rgb",
            "rgb-baseline")


def _check_planes(planes: np.ndarray, what: str) -> None:
    if planes.ndim != 4 or planes.shape[0] != 3:
        raise ValueError(f"{what} must have shape (3, K, K, F), "
                         f"got {planes.shape}")
    if planes.shape[1] != planes.shape[2]:
        raise ValueError(f"{what} planes must be square, got {planes.shape}")
    if planes.shape[1] < 2:
        raise ValueError(f"{what} resolution must be at least 2")
    if not np.all(np.isfinite(planes)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass
class TriPlane:
    """Three K x K x F feature planes (XY, XZ, YZ) as one (3,K,K,F) array."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        _check_planes(self.planes, "TriPlane")

    @property
    def k(self) -> int:
        return self.planes.shape[1]

    @property
    def f(self) -> int:
        return self.planes.shape[3]


@dataclass
class BasisSet:
    """M shared tri-planes as one (M,3,K,K,F_mac) array."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        if self.planes.ndim != 5 or self.planes.shape[0] < 1:
            raise ValueError("BasisSet must have shape (M, 3, K, K, F_mac) "
                             f"with M >= 1, got {self.planes.shape}")
        _check_planes(self.planes[0], "BasisSet")
        if not np.all(np.isfinite(self.planes)):
            raise ValueError("BasisSet contains non-finite values")

    @property
    def m(self) -> int:
        return self.planes.shape[0]

    @property
    def k(self) -> int:
        return self.planes.shape[2]

    @property
    def f_mac(self) -> int:
        return self.planes.shape[4]


@dataclass
class MicroMacroTriPlane:
    """Per-scene state: micro planes plus one coefficient per basis element."""

    micro: TriPlane
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        if self.coeffs.ndim != 1:
            raise ValueError("coeffs must be a flat vector")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coeffs contain non-finite values")


def _axis_corner(x: np.ndarray, k: int):
    g = np.clip((x + 1.0) * 0.5 * (k - 1), 0.0, float(k - 1))
    i0 = np.minimum(g.astype(np.int64), k - 2)
    return i0, g - i0


def sample_plane(plane, uv):
    """Bilinear sample of one K x K x F plane at uv in [-1,1]^2.

    Coordinates outside the square clamp to the border. uv may be a single
    (2,) point or an (n, 2) batch; output is (F,) or (n, F) accordingly.
    Differentiable with respect to the plane.
    """
    pv = ad.val(plane)
    uv_arr = np.asarray(uv, dtype=np.float64)
    single = uv_arr.ndim == 1
    uv_arr = np.atleast_2d(uv_arr)
    if not np.all(np.isfinite(uv_arr)):
        raise ValueError("uv must be finite")
    k = pv.shape[0]
    i0, fu = _axis_corner(uv_arr[:, 0], k)
    j0, fv = _axis_corner(uv_arr[:, 1], k)
    fu = fu[:, None].astype(pv.dtype)
    fv = fv[:, None].astype(pv.dtype)
    top = pv[j0, i0] * (1.0 - fu) + pv[j0, i0 + 1] * fu
    bot = pv[j0 + 1, i0] * (1.0 - fu) + pv[j0 + 1, i0 + 1] * fu
    out_val = top * (1.0 - fv) + bot * fv
    if not isinstance(plane, ad.Var):
        return out_val[0] if single else out_val
    tape = plane.tape
    out = tape.var(out_val, "sample_plane")

    def bwd():
        g = out.grad
        full = np.zeros_like(pv)
        np.add.at(full, (j0, i0), g * (1.0 - fu) * (1.0 - fv))
        np.add.at(full, (j0, i0 + 1), g * fu * (1.0 - fv))
        np.add.at(full, (j0 + 1, i0), g * (1.0 - fu) * fv)
        np.add.at(full, (j0 + 1, i0 + 1), g * fu * fv)
        plane._acc(full)

    tape.record(bwd)
    if single:
        return ad.reshape(out, (pv.shape[2],))
    return out


def query_point(tri, x):
    """Feature of a 3D point: sum of the three projected plane samples.

    tri: TriPlane, (3,K,K,F) array, or Var of that shape. x: (3,) point or
    (n, 3) batch in [-1,1]^3 (clamped). Returns (F,) or (n, F).
    """
    planes = tri.planes if isinstance(tri, TriPlane) else tri
    x_arr = np.asarray(ad.val(x), dtype=np.float64)
    single = x_arr.ndim == 1
    x_arr = np.atleast_2d(x_arr)
    if not np.all(np.isfinite(x_arr)):
        raise ValueError("query point must be finite")
    out = ad.triplane_gather(planes, x_arr)
    if single:
        f = ad.val(out).shape[1]
        return ad.reshape(out, (f,)) if isinstance(out, ad.Var) else out[0]
    return out


def compose_planes(micro, coeffs, basis):
    """Functional micro-macro composition on raw arrays or tape variables.

    micro: (3,K,K,F_mic) or None; coeffs: (M,); basis: (M,3,K,K,F_mac) or
    None. Returns (3,K,K,F_mic+F_mac). Either side may be absent.
    """
    if basis is None:
        if micro is None:
            raise ValueError("compose needs a micro part or a basis")
        return micro
    bv = ad.val(basis)
    cv = ad.val(coeffs)
    if cv.shape[0] != bv.shape[0]:
        raise ValueError(f"coefficient count {cv.shape[0]} does not match "
                         f"basis size {bv.shape[0]}")
    macro = ad.basis_combine(coeffs, basis)
    if micro is None or ad.val(micro).shape[3] == 0:
        return macro
    mv = ad.val(micro)
    if mv.shape[1] != bv.shape[2]:
        raise ValueError(f"micro resolution {mv.shape[1]} does not match "
                         f"basis resolution {bv.shape[2]}")
    return ad.concat_last([micro, macro])


def compose(mm: MicroMacroTriPlane, basis: BasisSet) -> TriPlane:
    """Compose a scene's micro planes and basis coefficients into one TriPlane."""
    if mm.coeffs.shape[0] != basis.m:
        raise ValueError(f"scene has {mm.coeffs.shape[0]} coefficients but "
                         f"the basis holds {basis.m} elements")
    if mm.micro.k != basis.k:
        raise ValueError(f"micro resolution {mm.micro.k} does not match "
                         f"basis resolution {basis.k}")
    full = compose_planes(mm.micro.planes, mm.coeffs, basis.planes)
    return TriPlane(full)


def trainable_count(config, stage: str, variant: str):
    """Per-scene trainable parameter count and byte size (float32 storage).

    Stage "two" counts what one additional scene stores: micro planes plus
    basis coefficients (a full plane set for the unshared baselines).
    Stage "one" adds each scene's amortized share of the basis, bytes of
    basis divided by the stage-1 scene count, so the per-scene cost of the
    first stage strictly exceeds the second whenever macro features exist.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    if stage not in ("one", "two"):
        raise ValueError(f"stage must be 'one' or 'two', got '{stage}'")
    k = config.k
    f_mic = config.f_mic
    f_mac = config.f_mac
    f_total = f_mic + f_mac
    if variant in ("ours-micro", "rgb-baseline"):
        mic, m_eff = f_total, 0
    elif variant == "ours-macro":
        mic, m_eff = 0, config.m
    elif variant == "ours-m1":
        mic, m_eff = f_mic, 1
    else:  # ours, ours-rgb
        mic, m_eff = f_mic, config.m
    count = 3 * k * k * mic + m_eff
    if stage == "one" and m_eff > 0:
        count = count + (m_eff * 3 * k * k * f_mac) / config.n1
    return count, count * 4


def init_micro(rng: np.random.Generator, k: int, f_mic: int,
               dtype=np.float32) -> np.ndarray:
    """Micro planes start uniform in [-1e-2, 1e-2]."""
    return rng.uniform(-1e-2, 1e-2, size=(3, k, k, f_mic)).astype(dtype)


def init_basis(rng: np.random.Generator, m: int, k: int, f_mac: int,
               dtype=np.float32) -> np.ndarray:
    """Basis planes start uniform in [-1e-2, 1e-2]."""
    return rng.uniform(-1e-2, 1e-2, size=(m, 3, k, k, f_mac)).astype(dtype)


def init_coeffs(rng: np.random.Generator, m: int,
                dtype=np.float32) -> np.ndarray:
    """Coefficients start uniform in [-1/sqrt(M), 1/sqrt(M)].

    Keeps the initial macro magnitude on the micro scale: a sum of M terms
    with these coefficients has the variance of a single basis plane.
    """
    s = 1.0 / np.sqrt(m)
    return rng.uniform(-s, s, size=(m,)).astype(dtype)
