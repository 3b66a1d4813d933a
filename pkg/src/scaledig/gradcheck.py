"""Finite-difference verification of every differentiable operation.

Each case builds a small random parameter point, evaluates the reverse-mode
gradient, and compares it against central differences taken on a float64
copy of the parameters. Cheap operations check every coordinate; expensive
ones (full renders, the joint objective) probe a seeded random coordinate
subset per point, drawn fresh each point so coverage accumulates across
the run.

The reported number is max |grad - fd| / max(max |fd|, 1e-8) over the
checked coordinates, worst case across points.
"""

import math
import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import renderer as rnd
from . import training
from .autoencoder import AEConfig, decode, encode, init_decoder_params, \
    init_encoder_params, params_from
from .config import TrainConfig
from .data import generate_dataset
from .params import ParamStore
from .renderer import CameraPose, RenderHead, head_forward, init_head_params, \
    look_at
from .triplane import query_point, sample_plane

DEFAULT_POINTS = 100
TOL_64 = 1e-5
TOL_32 = 1e-3


@dataclass
class CaseResult:
    op: str
    points: int
    coords_checked: int
    max_rel_err: float
    seconds: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def _to_dtype(store: ParamStore, dtype) -> ParamStore:
    out = ParamStore()
    for (group, name), arr in store.items():
        out.add(group, name, arr.astype(dtype))
    return out


def _pick_coords(rng, store: ParamStore, per_array):
    """Random coordinate subset: up to per_array flat indices per parameter."""
    if per_array is None:
        return None
    coords = {}
    for (group, name), arr in store.items():
        take = min(per_array, arr.size)
        idx = rng.choice(arr.size, size=take, replace=False)
        coords[(group, name)] = np.sort(idx)
    return coords


def _compare_point(objective, store, rng, per_array, epsilon):
    _, grads = ad.value_and_grad(objective, store, store.groups())
    coords = _pick_coords(rng, store, per_array)
    fd = ad.finite_difference_grad(objective, store, epsilon, coords=coords)
    diff = 0.0
    scale = 0.0
    checked = 0
    for (group, name), _ in store.items():
        g = np.asarray(grads.get(group, name), dtype=np.float64).ravel()
        f = np.asarray(fd.get(group, name), dtype=np.float64).ravel()
        if coords is not None:
            idx = coords[(group, name)]
            g = g[idx]
            f = f[idx]
        checked += g.size
        if g.size:
            diff = max(diff, float(np.max(np.abs(g - f))))
            scale = max(scale, float(np.max(np.abs(f))))
    return diff / max(scale, 1e-8), checked


# ---------------------------------------------------------------------------
# case builders: each returns (store, objective) at one random point
# ---------------------------------------------------------------------------

def _weighted_mean(out, w):
    return ad.mean(ad.mul(out, w))


def _case_sample_plane(rng, dtype):
    store = ParamStore()
    store.add("op", "plane", rng.normal(size=(5, 5, 3)).astype(dtype))
    uv = rng.uniform(-1.2, 1.2, size=(7, 2))
    w = rng.normal(size=(7, 3))

    def objective(lookup):
        return _weighted_mean(sample_plane(lookup("op", "plane"), uv), w)

    return store, objective


def _case_query_point(rng, dtype):
    store = ParamStore()
    store.add("op", "planes", rng.normal(size=(3, 4, 4, 3)).astype(dtype))
    pts = rng.uniform(-1.1, 1.1, size=(6, 3))
    w = rng.normal(size=(6, 3))

    def objective(lookup):
        return _weighted_mean(query_point(lookup("op", "planes"), pts), w)

    return store, objective


def _head_store(rng, dtype, f_in, c_out, hidden):
    store = ParamStore()
    for name, arr in init_head_params(rng, f_in, c_out, hidden=hidden).items():
        store.add("head", name, arr.astype(dtype))
    return store


def _head_from_store(lookup, c_out, bounded=False):
    return RenderHead(
        w0=lookup("head", "w0"), b0=lookup("head", "b0"),
        w1=lookup("head", "w1"), b1=lookup("head", "b1"),
        w2=lookup("head", "w2"), b2=lookup("head", "b2"),
        c_out=c_out, bounded=bounded,
    )


def _case_head_forward(rng, dtype):
    c_out = 4
    store = _head_store(rng, dtype, f_in=6, c_out=c_out, hidden=64)
    feats = rng.normal(size=(8, 6))
    wc = rng.normal(size=(8, c_out))
    ws = rng.normal(size=(8, 1))

    def objective(lookup):
        colors, sigma = head_forward(feats, _head_from_store(lookup, c_out))
        sig2 = ad.reshape(sigma, (8, 1))
        return ad.add(_weighted_mean(colors, wc), _weighted_mean(sig2, ws))

    return store, objective


def _case_composite(rng, dtype):
    n_rays, n_samples, c = 3, 5, 4
    store = ParamStore()
    store.add("op", "colors",
              rng.normal(size=(n_rays, n_samples, c)).astype(dtype))
    store.add("op", "sigmas",
              rng.uniform(0.01, 2.0, size=(n_rays, n_samples)).astype(dtype))
    store.add("op", "background",
              rng.uniform(0.1, 0.9, size=(c,)).astype(dtype))
    deltas = rng.uniform(0.05, 0.3, size=(n_rays, n_samples))
    wp = rng.normal(size=(n_rays, c))
    wt = rng.normal(size=(n_rays, 1))

    def objective(lookup):
        pix, trans = rnd.composite(
            lookup("op", "colors"), lookup("op", "sigmas"), deltas,
            lookup("op", "background"))
        return ad.add(_weighted_mean(pix, wp),
                      _weighted_mean(ad.reshape(trans, (n_rays, 1)), wt))

    return store, objective


def _case_render(rng, dtype):
    k, f, size, n_samples, hidden, c_out = 6, 4, 5, 16, 16, 3
    store = ParamStore()
    store.add("scene", "planes",
              (0.3 * rng.normal(size=(3, k, k, f))).astype(dtype))
    head = _head_store(rng, dtype, f_in=f, c_out=c_out, hidden=hidden)
    for (_, name), arr in head.items("head"):
        store.add("head", name, arr)
    store.add("scene", "background",
              rng.uniform(0.2, 0.8, size=(c_out,)).astype(dtype))
    eye = rng.normal(size=3)
    eye = 2.5 * eye / np.linalg.norm(eye)
    pose = CameraPose(look_at(eye), math.radians(60.0), size, size)
    w = rng.normal(size=(size, size, c_out))

    def objective(lookup):
        img = rnd.render(lookup("scene", "planes"),
                         pose, _head_from_store(lookup, c_out),
                         lookup("scene", "background"), n_samples=n_samples)
        return _weighted_mean(img, w)

    return store, objective


_AE_CASE_CFG = AEConfig(stages=((3, 2),), c_lat=2)


def _case_encode(rng, dtype):
    cfg = _AE_CASE_CFG
    store = ParamStore()
    for name, arr in init_encoder_params(rng, cfg).items():
        store.add("enc", name, arr.astype(dtype))
    img = rng.uniform(0.0, 1.0, size=(6, 6, 3))
    w = rng.normal(size=(3, 3, cfg.c_lat))

    def objective(lookup):
        phi = params_from(lookup, "enc", cfg)
        return _weighted_mean(encode(img, phi, cfg), w)

    return store, objective


def _case_decode(rng, dtype):
    cfg = _AE_CASE_CFG
    store = ParamStore()
    for name, arr in init_decoder_params(rng, cfg).items():
        store.add("dec", name, arr.astype(dtype))
    lat = rng.normal(size=(3, 3, cfg.c_lat))
    w = rng.normal(size=(6, 6, 3))

    def objective(lookup):
        psi = params_from(lookup, "dec", cfg)
        return _weighted_mean(decode(lat, psi, cfg), w)

    return store, objective


def _mse_store(rng, dtype, shape):
    store = ParamStore()
    store.add("op", "a", rng.normal(size=shape).astype(dtype))
    store.add("op", "b", rng.normal(size=shape).astype(dtype))
    return store


def _case_loss_latent(rng, dtype):
    store = _mse_store(rng, dtype, (4, 4, 2))

    def objective(lookup):
        return training.loss_latent(lookup("op", "a"), lookup("op", "b"))

    return store, objective


def _case_loss_rgb(rng, dtype):
    store = _mse_store(rng, dtype, (5, 5, 3))

    def objective(lookup):
        return training.loss_rgb(lookup("op", "a"), lookup("op", "b"))

    return store, objective


def _case_loss_ae(rng, dtype):
    store = _mse_store(rng, dtype, (6, 6, 3))

    def objective(lookup):
        return training.loss_ae(lookup("op", "a"), lookup("op", "b"))

    return store, objective


def _case_stage1_objective(rng, dtype):
    seed = int(rng.integers(1, 2**31 - 1))
    cfg = TrainConfig(
        variant="ours", n1=1, n2=1, v=2, image_size=8, k=4,
        f_mic=2, f_mac=2, m=2, c_lat=2, ae_stages=((2, 2),),
        n_samples=8, seed=seed)
    dataset = generate_dataset(cfg.n1, cfg.v, cfg.image_size,
                               family_seed=seed)
    store = _to_dtype(training.init_params(cfg, cfg.n1, seed_tag=1), dtype)
    view = dataset.scenes[0].views[0]
    batch = [(0, view.image, view.pose)]

    def objective(lookup):
        return training.stage1_objective(batch, lookup, cfg)

    return store, objective


# name -> (builder, coords per array; None checks every coordinate)
CASES = {
    "sample_plane": (_case_sample_plane, None),
    "query_point": (_case_query_point, None),
    "head_forward": (_case_head_forward, 24),
    "composite": (_case_composite, None),
    "render": (_case_render, 8),
    "encode": (_case_encode, None),
    "decode": (_case_decode, None),
    "loss_latent": (_case_loss_latent, None),
    "loss_rgb": (_case_loss_rgb, None),
    "loss_ae": (_case_loss_ae, None),
    "stage1_objective": (_case_stage1_objective, 4),
}


def check_op(name: str, bits: int = 64, n_points: int = DEFAULT_POINTS,
             seed: int = 0) -> CaseResult:
    """Compare reverse-mode and finite-difference gradients for one op."""
    if name not in CASES:
        raise KeyError(f"unknown gradcheck case {name!r}")
    builder, per_array = CASES[name]
    dtype = np.float64 if bits == 64 else np.float32
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    worst = 0.0
    checked = 0
    t0 = time.perf_counter()
    for _ in range(n_points):
        store, objective = builder(rng, dtype)
        rel, n = _compare_point(objective, store, rng, per_array,
                                epsilon=1e-5)
        worst = max(worst, rel)
        checked += n
    return CaseResult(op=name, points=n_points, coords_checked=checked,
                      max_rel_err=worst, seconds=time.perf_counter() - t0)


def run_all(bits: int = 64, n_points: int = DEFAULT_POINTS, seed: int = 0,
            ops=None) -> list:
    names = list(CASES) if ops is None else list(ops)
    return [check_op(name, bits=bits, n_points=n_points, seed=seed)
            for name in names]


def tolerance(bits: int) -> float:
    return TOL_64 if bits == 64 else TOL_32
