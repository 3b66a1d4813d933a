"""Differentiable volume rendering of a tri-plane through a pinhole camera.

Pipeline per ray: generate -> sample along the segment -> tri-plane feature
lookup -> small MLP head (color features + density) -> emission-absorption
compositing against a constant background. Differentiable with respect to
the planes, the head parameters, and the background.

Camera convention: camera-to-world matrix with columns (right, up, back);
the camera looks along its local -z. World up is +z (scenes sit on the
z=0 plane and poses sample the upper hemisphere).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import glorot
from .triplane import TriPlane

# bounding sphere of the [-1,1]^3 scene box, with 10% margin
SCENE_RADIUS = 1.1 * math.sqrt(3.0)
HIDDEN_WIDTH = 64


@dataclass
class CameraPose:
    """Camera-to-world transform plus pinhole intrinsics."""

    cam_to_world: np.ndarray
    fov: float
    height: int
    width: int

    def __post_init__(self):
        self.cam_to_world = np.asarray(self.cam_to_world, dtype=np.float64)
        if self.cam_to_world.shape != (4, 4):
            raise ValueError("cam_to_world must be 4x4")
        r = self.cam_to_world[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block is not orthonormal")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be at least 1")

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]


@dataclass
class RayBatch:
    """Per-pixel rays: origins, unit directions, and the march segment."""

    origins: np.ndarray
    dirs: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        norms = np.linalg.norm(self.dirs, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("ray directions must be unit length")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be below t_far")

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class RenderHead:
    """Two-hidden-layer MLP: F features -> C_out color channels + density.

    bounded heads squash color channels to (0,1) for direct RGB rendering;
    latent-feature heads leave them unconstrained.
    """

    w0: object
    b0: object
    w1: object
    b1: object
    w2: object
    b2: object
    c_out: int
    bounded: bool = False

    @property
    def f_in(self) -> int:
        return ad.val(self.w0).shape[0]


def init_head_params(rng: np.random.Generator, f_in: int, c_out: int,
                     hidden: int = HIDDEN_WIDTH, dtype=np.float32) -> dict:
    """Fresh head parameter arrays keyed by name."""
    return {
        "w0": glorot(rng, f_in, hidden, (f_in, hidden), dtype),
        "b0": np.zeros(hidden, dtype=dtype),
        "w1": glorot(rng, hidden, hidden, (hidden, hidden), dtype),
        "b1": np.zeros(hidden, dtype=dtype),
        "w2": glorot(rng, hidden, c_out + 1, (hidden, c_out + 1), dtype),
        "b2": np.zeros(c_out + 1, dtype=dtype),
    }


def head_from(lookup, c_out: int, bounded: bool = False) -> RenderHead:
    """Assemble a head from a parameter lookup over group 'renderer_mlp'."""
    names = ("w0", "b0", "w1", "b1", "w2", "b2")
    return RenderHead(*(lookup("renderer_mlp", n) for n in names),
                      c_out=c_out, bounded=bounded)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    back = eye - target
    nb = np.linalg.norm(back)
    if nb < 1e-12:
        raise ValueError("eye and target coincide")
    back /= nb
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, back)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross((0.0, 1.0, 0.0), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = true_up
    m[:3, 2] = back
    m[:3, 3] = eye
    return m


def generate_rays(pose: CameraPose, t_near: float | None = None,
                  t_far: float | None = None) -> RayBatch:
    """One ray per pixel center, row-major pixel order.

    The march segment defaults to the intersection of the camera distance
    with the scene bounding sphere (10% margin on the unit box).
    """
    if not 0.0 < pose.fov < math.pi:
        raise ValueError("vertical fov must lie in (0, pi)")
    h, w = pose.height, pose.width
    focal = 0.5 * h / math.tan(0.5 * pose.fov)
    xs = (np.arange(w) + 0.5) - 0.5 * w
    ys = (np.arange(h) + 0.5) - 0.5 * h
    px, py = np.meshgrid(xs, ys)
    dirs_cam = np.stack([px / focal, -py / focal, -np.ones_like(px)], axis=-1)
    r = pose.cam_to_world[:3, :3]
    dirs = dirs_cam.reshape(-1, 3) @ r.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    dist = float(np.linalg.norm(pose.position))
    if t_near is None:
        t_near = max(dist - SCENE_RADIUS, 0.05)
    if t_far is None:
        t_far = dist + SCENE_RADIUS
    return RayBatch(origins, dirs, float(t_near), float(t_far))


def sample_along(rays: RayBatch, n_samples: int, stratified: bool = False,
                 rng: np.random.Generator | None = None):
    """Quadrature nodes along every ray.

    Returns (points (R,S,3), ts (R,S), deltas (R,S)). Each ray's segment
    [t_near, t_far] splits into S equal bins; deterministic mode takes bin
    midpoints, stratified mode one uniform draw per bin. Segment lengths
    are the bin widths, so they always sum to t_far - t_near.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    n_rays = len(rays)
    width = (rays.t_far - rays.t_near) / n_samples
    base = rays.t_near + np.arange(n_samples) * width
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        jitter = rng.random((n_rays, n_samples))
    else:
        jitter = np.full((n_rays, n_samples), 0.5)
    ts = base[None, :] + jitter * width
    pts = rays.origins[:, None, :] + ts[:, :, None] * rays.dirs[:, None, :]
    deltas = np.full((n_rays, n_samples), width)
    return pts, ts, deltas


def head_forward(features, head: RenderHead):
    """MLP forward: (n,F) or (F,) features -> ((n,C_out) colors, (n,) sigma).

    tanh hidden layers; density through softplus so it stays positive with
    a smooth gradient everywhere.
    """
    single = ad.val(features).ndim == 1
    x = ad.reshape(features, (1, -1)) if single else features
    h = ad.tanh(ad.add(ad.matmul(x, head.w0), head.b0))
    h = ad.tanh(ad.add(ad.matmul(h, head.w1), head.b1))
    out = ad.add(ad.matmul(h, head.w2), head.b2)
    colors = ad.take_last(out, 0, head.c_out)
    if head.bounded:
        colors = ad.sigmoid(colors)
    sigma = ad.softplus(ad.take_last(out, head.c_out, head.c_out + 1))
    n = ad.val(x).shape[0]
    sigma = ad.reshape(sigma, (n,))
    if single:
        colors = ad.reshape(colors, (head.c_out,))
        sigma = ad.reshape(sigma, ())
    return colors, sigma


def composite(colors, densities, deltas, background):
    """Emission-absorption quadrature for one ray or a batch of rays.

    colors (S,C) or (R,S,C); densities (S,) or (R,S); deltas likewise;
    background (C,). Returns (pixel, transmittance) with the batch axis
    mirrored from the input.
    """
    cv = ad.val(colors)
    single = cv.ndim == 2
    dens_v = ad.val(densities)
    if np.any(dens_v < 0):
        raise ValueError("densities must be nonnegative")
    deltas = np.asarray(deltas, dtype=np.float64)
    if np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    if single:
        colors = ad.reshape(colors, (1,) + cv.shape)
        densities = ad.reshape(densities, (1,) + dens_v.shape)
        deltas = deltas.reshape((1,) + deltas.shape)
    pix, trans = ad.composite(colors, densities, deltas, background)
    if single:
        c = ad.val(pix).shape[1]
        pix = ad.reshape(pix, (c,))
        trans = ad.reshape(trans, ())
    return pix, trans


def composite_weights(sigmas: np.ndarray, deltas: np.ndarray):
    """Diagnostic quadrature weights w_k and final transmittance (numpy only)."""
    dt = np.asarray(sigmas) * np.asarray(deltas)
    att = np.exp(-np.cumsum(dt, axis=-1))
    t = np.concatenate([np.ones_like(att[..., :1]), att[..., :-1]], axis=-1)
    w = t * (1.0 - np.exp(-dt))
    return w, att[..., -1]


def render(tri, pose: CameraPose, head: RenderHead, background,
           n_samples: int = 64, stratified: bool = False,
           rng: np.random.Generator | None = None, head_fn=None,
           t_near: float | None = None, t_far: float | None = None):
    """Render an (H, W, C_out) image from a tri-plane.

    `tri` is a TriPlane or a (3,K,K,F) array/tape variable. `head_fn`, when
    given, replaces the MLP with a callable features -> (colors, densities)
    so compositing can be driven with controlled values in tests.
    """
    planes = tri.planes if isinstance(tri, TriPlane) else tri
    f = ad.val(planes).shape[3]
    if head_fn is None and f != head.f_in:
        raise ValueError(f"tri-plane has {f} features but the head "
                         f"expects {head.f_in}")
    rays = generate_rays(pose, t_near=t_near, t_far=t_far)
    pts, _, deltas = sample_along(rays, n_samples, stratified, rng)
    n_rays = len(rays)
    flat_pts = pts.reshape(-1, 3)
    feats = ad.triplane_gather(planes, flat_pts)
    if head_fn is not None:
        colors, sigma = head_fn(feats)
    else:
        colors, sigma = head_forward(feats, head)
    c_out = ad.val(colors).shape[-1]
    colors = ad.reshape(colors, (n_rays, n_samples, c_out))
    sigma = ad.reshape(sigma, (n_rays, n_samples))
    pix, _ = composite(colors, sigma, deltas, background)
    return ad.reshape(pix, (pose.height, pose.width, c_out))
