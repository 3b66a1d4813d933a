"""Procedural multi-scene dataset: toy vehicles, posed views, binary I/O.

Scenes come from a shared family (box body, box cabin, sphere wheels) with
per-scene size and color jitter, so cross-scene structure genuinely exists
for the shared basis to pick up. Ground truth is an analytic ray tracer:
nearest primitive hit, flat albedo with a Lambert term, white background.

Image blobs are a fixed binary format (magic "SIGT") and the dataset is a
directory of blobs plus one JSON manifest; the round trip is byte-exact.
"""

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .renderer import CameraPose, generate_rays, look_at

MAGIC = b"SIGT"
BLOB_VERSION = 1
_DTYPE_CODES = {0: np.float32}

# light direction has zero x-component on purpose: shading is then
# invariant under x-mirroring, which the symmetry tests rely on
LIGHT_DIR = np.array([0.0, 0.35, 0.9]) / math.sqrt(0.35 ** 2 + 0.9 ** 2)
AMBIENT = 0.35
DIFFUSE = 0.65

DEFAULT_RADIUS = 2.5
DEFAULT_FOV = math.radians(60.0)


@dataclass
class Primitive:
    """Solid primitive: sphere (size = [radius]) or box (size = half extents)."""

    kind: str
    center: np.ndarray
    size: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind '{self.kind}'")
        extent = self.size[0] if self.kind == "sphere" else self.size
        if np.any(np.abs(self.center) + extent > 1.0):
            raise ValueError("primitive leaves the [-1,1]^3 scene box")
        if np.any((self.albedo < 0) | (self.albedo > 1)):
            raise ValueError("albedo must lie in [0,1]")


@dataclass
class SceneSpec:
    """One scene: a seed and its primitive list."""

    seed: int
    primitives: list


@dataclass
class ViewRecord:
    pose: CameraPose
    image: np.ndarray
    split: str


@dataclass
class SceneRecord:
    spec: SceneSpec
    views: list


@dataclass
class SceneDataset:
    family_seed: int
    mode: str
    size: int
    scenes: list

    @property
    def n_scenes(self) -> int:
        return len(self.scenes)

    @property
    def n_views(self) -> int:
        return len(self.scenes[0].views) if self.scenes else 0

    def view_indices(self, split: str) -> list:
        out = []
        for i, scene in enumerate(self.scenes):
            for j, view in enumerate(scene.views):
                if view.split == split:
                    out.append((i, j))
        return out


def _vehicle_family(family_seed: int) -> dict:
    """Family-level layout and palette, drawn once per dataset."""
    rng = np.random.default_rng([family_seed, 0])
    scale = rng.uniform(0.85, 1.1)
    return {
        "body_half": np.array([0.50, 0.28, 0.16]) * scale,
        "cabin_half": np.array([0.22, 0.20, 0.12]) * scale,
        "wheel_radius": 0.14 * scale,
        "body_color": rng.uniform(0.25, 0.85, size=3),
        "cabin_color": rng.uniform(0.25, 0.85, size=3),
        "wheel_color": np.array([0.15, 0.15, 0.18]),
    }


def _jitter(rng, base: np.ndarray, rel: float) -> np.ndarray:
    return base * rng.uniform(1.0 - rel, 1.0 + rel, size=np.shape(base))


def make_vehicle_scene(family: dict, scene_seed: int) -> SceneSpec:
    """Per-scene perturbation of the shared vehicle layout."""
    rng = np.random.default_rng([scene_seed, 1])
    body = _jitter(rng, family["body_half"], 0.12)
    cabin = _jitter(rng, family["cabin_half"], 0.12)
    cabin[0] = min(cabin[0], 0.9 * body[0])
    cabin[1] = min(cabin[1], 0.9 * body[1])
    rw = float(_jitter(rng, family["wheel_radius"], 0.15))
    body_color = np.clip(family["body_color"] + rng.uniform(-0.15, 0.15, 3),
                         0.05, 0.95)
    cabin_color = np.clip(family["cabin_color"] + rng.uniform(-0.15, 0.15, 3),
                          0.05, 0.95)
    wheel_color = np.clip(family["wheel_color"] + rng.uniform(-0.05, 0.05, 3),
                          0.05, 0.95)
    cabin_z = body[2] + cabin[2]
    wx = 0.6 * body[0]
    wy = body[1]
    wz = -body[2] - 0.45 * rw
    prims = [
        Primitive("box", (0.0, 0.0, 0.0), body, body_color),
        Primitive("box", (-0.15 * body[0], 0.0, cabin_z), cabin, cabin_color),
    ]
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            prims.append(Primitive("sphere", (sx * wx, sy * wy, wz),
                                   [rw], wheel_color))
    return SceneSpec(seed=scene_seed, primitives=prims)


def _intersect(spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit query: returns (t, normal, albedo, hit mask) per ray."""
    n = origins.shape[0]
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for prim in spec.primitives:
        if prim.kind == "sphere":
            r = prim.size[0]
            oc = origins - prim.center
            b = np.einsum("ij,ij->i", oc, dirs)
            c = np.einsum("ij,ij->i", oc, oc) - r * r
            disc = b * b - c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t = -b - sq
            hit = ok & (t > 1e-6) & (t < t_best)
            if np.any(hit):
                p = origins[hit] + t[hit, None] * dirs[hit]
                normal[hit] = (p - prim.center) / r
                albedo[hit] = prim.albedo
                t_best[hit] = t[hit]
        else:
            lo = prim.center - prim.size
            hi = prim.center + prim.size
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - origins) / dirs
                t2 = (hi - origins) / dirs
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tmax >= tmin) & (tmin > 1e-6) & (tmin < t_best)
            if np.any(hit):
                p = origins[hit] + tmin[hit, None] * dirs[hit]
                off = (p - prim.center) / prim.size
                axis = np.argmax(np.abs(off), axis=1)
                nrm = np.zeros_like(p)
                nrm[np.arange(len(axis)), axis] = np.sign(
                    off[np.arange(len(axis)), axis])
                normal[hit] = nrm
                albedo[hit] = prim.albedo
                t_best[hit] = tmin[hit]
    return t_best, normal, albedo, np.isfinite(t_best)


def render_ground_truth(spec: SceneSpec, pose: CameraPose) -> np.ndarray:
    """Analytic RGB rendering of a scene: Lambert shading, white background."""
    rays = generate_rays(pose)
    _, normal, albedo, hit = _intersect(spec, rays.origins, rays.dirs)
    lam = np.maximum(normal @ LIGHT_DIR, 0.0)
    shade = albedo * (AMBIENT + DIFFUSE * lam)[:, None]
    img = np.ones((len(rays), 3))
    img[hit] = np.clip(shade[hit], 0.0, 1.0)
    return img.reshape(pose.height, pose.width, 3).astype(np.float32)


def sample_pose(rng: np.random.Generator, mode: str, size: int,
                radius: float = DEFAULT_RADIUS,
                fov: float = DEFAULT_FOV) -> CameraPose:
    """Camera at fixed radius looking at the origin.

    hemisphere: uniform azimuth, elevation bounded away from pole and
    horizon. front-facing: a narrow cone around the +x axis.
    """
    if mode == "hemisphere":
        az = rng.uniform(0.0, 2.0 * math.pi)
        z = rng.uniform(0.12, 0.92)
    elif mode == "front-facing":
        az = rng.uniform(-0.5, 0.5)
        z = rng.uniform(0.05, 0.5)
    else:
        raise ValueError(f"unknown pose mode '{mode}'")
    rho = math.sqrt(1.0 - z * z)
    eye = radius * np.array([rho * math.cos(az), rho * math.sin(az), z])
    return CameraPose(look_at(eye), fov, size, size)


def split_views(v: int, train_fraction: float = 0.9,
                seed: int = 0) -> tuple[list, list]:
    """Deterministic disjoint train/test view indices; train = floor(fv)."""
    if v < 2:
        raise ValueError("need at least 2 views to split")
    n_train = int(math.floor(v * train_fraction + 1e-9))
    n_train = min(max(n_train, 1), v - 1)
    perm = np.random.default_rng([seed, 2]).permutation(v)
    return sorted(int(i) for i in perm[:n_train]), \
        sorted(int(i) for i in perm[n_train:])


def generate_dataset(n_scenes: int, n_views: int, size: int,
                     family_seed: int, mode: str = "hemisphere",
                     radius: float = DEFAULT_RADIUS,
                     fov: float = DEFAULT_FOV,
                     train_fraction: float = 0.9,
                     scene_offset: int = 0) -> SceneDataset:
    """N scenes x V posed views with per-scene train/test splits.

    scene_offset shifts the per-scene seeds so a later call can extend the
    same family with fresh scenes (the second-stage scene set).
    """
    if n_scenes < 1 or n_views < 1:
        raise ValueError("need at least one scene and one view")
    family = _vehicle_family(family_seed)
    scenes = []
    for idx in range(n_scenes):
        i = idx + scene_offset
        spec = make_vehicle_scene(family, family_seed * 1000 + i)
        pose_rng = np.random.default_rng([family_seed, 3, i])
        if n_views >= 2:
            train_idx, _ = split_views(n_views, train_fraction,
                                       seed=family_seed * 1000 + i)
            train_set = set(train_idx)
        else:
            train_set = {0}
        views = []
        for j in range(n_views):
            pose = sample_pose(pose_rng, mode, size, radius, fov)
            img = render_ground_truth(spec, pose)
            views.append(ViewRecord(
                pose, img, "train" if j in train_set else "test"))
        scenes.append(SceneRecord(spec, views))
    return SceneDataset(family_seed, mode, size, scenes)


def save_blob(path: str, array: np.ndarray) -> None:
    """Write one tensor: magic, version, dtype code, rank, dims, LE payload."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", BLOB_VERSION))
        f.write(struct.pack("<B", 0))
        f.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(arr.astype("<f4").tobytes())


def load_blob(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a tensor blob")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != BLOB_VERSION:
        raise ValueError(f"{path}: unsupported blob version {version}")
    (code,) = struct.unpack_from("<B", data, off)
    off += 1
    if code not in _DTYPE_CODES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    (rank,) = struct.unpack_from("<I", data, off)
    off += 4
    if rank > 8:
        raise ValueError(f"{path}: implausible rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = data[off:]
    if len(payload) != count * 4:
        raise ValueError(f"{path}: truncated payload, expected {count * 4} "
                         f"bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32)


def _spec_to_json(spec: SceneSpec) -> dict:
    return {"seed": spec.seed,
            "primitives": [{"kind": p.kind,
                            "center": p.center.tolist(),
                            "size": p.size.tolist(),
                            "albedo": p.albedo.tolist()}
                           for p in spec.primitives]}


def _spec_from_json(d: dict) -> SceneSpec:
    prims = [Primitive(p["kind"], p["center"], p["size"], p["albedo"])
             for p in d["primitives"]]
    return SceneSpec(seed=d["seed"], primitives=prims)


def save_dataset(ds: SceneDataset, path: str) -> None:
    """Directory layout: manifest.json + blobs/scene_{i}/view_{j}.sigt."""
    os.makedirs(path, exist_ok=True)
    manifest = {"version": 1, "family_seed": ds.family_seed, "mode": ds.mode,
                "size": ds.size, "scenes": []}
    for i, scene in enumerate(ds.scenes):
        sdir = os.path.join(path, "blobs", f"scene_{i}")
        os.makedirs(sdir, exist_ok=True)
        views = []
        for j, view in enumerate(scene.views):
            rel = f"blobs/scene_{i}/view_{j}.sigt"
            save_blob(os.path.join(path, rel), view.image)
            views.append({"pose": [float(x) for x in
                                   view.pose.cam_to_world.reshape(-1)],
                          "fov": view.pose.fov,
                          "height": view.pose.height,
                          "width": view.pose.width,
                          "split": view.split,
                          "blob": rel})
        manifest["scenes"].append({"index": i,
                                   "spec": _spec_to_json(scene.spec),
                                   "views": views})
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def load_dataset(path: str) -> SceneDataset:
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise ValueError(f"{mpath}: dataset manifest not found")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("version") != 1:
        raise ValueError(f"{mpath}: unsupported manifest version")
    scenes = []
    for sd in manifest["scenes"]:
        views = []
        for vd in sd["views"]:
            pose = CameraPose(np.array(vd["pose"]).reshape(4, 4),
                              vd["fov"], vd["height"], vd["width"])
            img = load_blob(os.path.join(path, vd["blob"]))
            views.append(ViewRecord(pose, img, vd["split"]))
        scenes.append(SceneRecord(_spec_from_json(sd["spec"]), views))
    return SceneDataset(manifest["family_seed"], manifest["mode"],
                        manifest["size"], scenes)
