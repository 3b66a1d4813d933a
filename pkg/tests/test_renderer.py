"""Rays, quadrature, the MLP head, compositing, and full renders."""

import math

import numpy as np
import pytest

import scaledig.autodiff as ad
from scaledig.renderer import (CameraPose, RenderHead, SCENE_RADIUS,
                               composite, composite_weights, generate_rays,
                               head_forward, init_head_params, look_at,
                               render, sample_along)
from scaledig.triplane import TriPlane

EYE = (0.0, 0.0, 2.5)
FOV = math.radians(60.0)


def _pose(size=3, eye=EYE, fov=FOV):
    return CameraPose(look_at(eye), fov, size, size)


def _head(rng, f_in, c_out=3, hidden=16, bounded=False, dtype=np.float64):
    arrs = init_head_params(rng, f_in, c_out, hidden=hidden, dtype=dtype)
    return RenderHead(arrs["w0"], arrs["b0"], arrs["w1"], arrs["b1"],
                      arrs["w2"], arrs["b2"], c_out=c_out, bounded=bounded)


def test_look_at_straight_down_uses_fallback_up():
    m = look_at(EYE)
    np.testing.assert_allclose(m[:3, 0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(m[:3, 1], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(m[:3, 2], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(m[:3, 3], EYE)


def test_look_at_points_minus_z_at_target():
    eye = np.array([1.2, -0.7, 1.9])
    target = np.array([0.1, 0.3, 0.0])
    m = look_at(eye, target)
    r = m[:3, :3]
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    fwd = r @ np.array([0.0, 0.0, -1.0])
    want = (target - eye) / np.linalg.norm(target - eye)
    np.testing.assert_allclose(fwd, want, atol=1e-12)


def test_look_at_coincident_eye_target_raises():
    with pytest.raises(ValueError):
        look_at((0.3, 0.3, 0.3), (0.3, 0.3, 0.3))


def test_camera_pose_validation():
    with pytest.raises(ValueError):
        CameraPose(np.eye(3), FOV, 4, 4)
    skew = np.eye(4)
    skew[0, 1] = 0.5
    with pytest.raises(ValueError):
        CameraPose(skew, FOV, 4, 4)
    with pytest.raises(ValueError):
        CameraPose(np.eye(4), FOV, 0, 4)


def test_center_ray_of_odd_image_hits_target():
    rays = generate_rays(_pose(size=3))
    np.testing.assert_allclose(rays.dirs[4], [0, 0, -1], atol=1e-12)
    np.testing.assert_allclose(rays.origins[4], EYE)


def test_corner_ray_matches_pinhole_geometry():
    rays = generate_rays(_pose(size=3))
    focal = 0.5 * 3 / math.tan(0.5 * FOV)
    # top-left pixel center offsets: px = -1, py = -1 (y flips to +1/f)
    d = np.array([-1.0 / focal, 1.0 / focal, -1.0])
    d /= np.linalg.norm(d)
    np.testing.assert_allclose(rays.dirs[0], d, atol=1e-12)


def test_ray_segment_brackets_scene_sphere():
    rays = generate_rays(_pose())
    assert rays.t_near == pytest.approx(2.5 - SCENE_RADIUS)
    assert rays.t_far == pytest.approx(2.5 + SCENE_RADIUS)
    inside = CameraPose(look_at((0.0, 0.5, 0.0), (0.0, -1.0, 0.0)),
                        FOV, 2, 2)
    assert generate_rays(inside).t_near == pytest.approx(0.05)


def test_generate_rays_rejects_bad_fov():
    with pytest.raises(ValueError):
        generate_rays(_pose(fov=0.0))
    with pytest.raises(ValueError):
        generate_rays(_pose(fov=math.pi))


def test_sample_along_midpoints_and_delta_sum():
    rays = generate_rays(_pose(size=2))
    pts, ts, deltas = sample_along(rays, 8)
    width = (rays.t_far - rays.t_near) / 8
    np.testing.assert_allclose(ts[:, 0], rays.t_near + 0.5 * width)
    np.testing.assert_allclose(np.diff(ts, axis=1), width)
    np.testing.assert_allclose(deltas.sum(axis=1),
                               rays.t_far - rays.t_near, rtol=1e-12)
    want = rays.origins[0] + ts[0, 3] * rays.dirs[0]
    np.testing.assert_allclose(pts[0, 3], want, rtol=1e-12)


def test_sample_along_stratified_stays_in_bins():
    rays = generate_rays(_pose(size=4))
    pts, ts, _ = sample_along(rays, 16, stratified=True,
                              rng=np.random.default_rng(0))
    width = (rays.t_far - rays.t_near) / 16
    lo = rays.t_near + np.arange(16) * width
    assert np.all(ts >= lo) and np.all(ts <= lo + width)
    assert np.all(np.diff(ts, axis=1) > 0)
    with pytest.raises(ValueError):
        sample_along(rays, 4, stratified=True)
    with pytest.raises(ValueError):
        sample_along(rays, 0)


def test_head_forward_single_matches_batch():
    rng = np.random.default_rng(1)
    head = _head(rng, f_in=5)
    x = rng.normal(size=(6, 5))
    colors, sigma = head_forward(x, head)
    c1, s1 = head_forward(x[2], head)
    np.testing.assert_allclose(c1, colors[2], rtol=1e-12)
    np.testing.assert_allclose(s1, sigma[2], rtol=1e-12)
    assert np.all(sigma >= 0)


def test_bounded_head_clamps_colors():
    rng = np.random.default_rng(2)
    head = _head(rng, f_in=4, bounded=True)
    colors, _ = head_forward(rng.normal(size=(10, 4)) * 50.0, head)
    assert np.all(colors > 0) and np.all(colors < 1)


def test_composite_homogeneous_medium_closed_form():
    rng = np.random.default_rng(3)
    sigma = 0.7
    deltas = rng.uniform(0.05, 0.3, size=12)
    length = deltas.sum()
    color = np.array([0.9, 0.1, 0.4])
    bg = np.array([0.2, 0.3, 0.5])
    colors = np.broadcast_to(color, (12, 3)).copy()
    pix, trans = composite(colors, np.full(12, sigma), deltas, bg)
    absorb = math.exp(-sigma * length)
    np.testing.assert_allclose(pix, color * (1 - absorb) + bg * absorb,
                               rtol=1e-12)
    assert trans == pytest.approx(absorb, rel=1e-12)


def test_composite_weights_partition_of_unity():
    rng = np.random.default_rng(4)
    sigmas = rng.uniform(0.0, 5.0, size=(2000, 32))
    deltas = rng.uniform(0.01, 0.2, size=(2000, 32))
    w, t_final = composite_weights(sigmas, deltas)
    np.testing.assert_allclose(w.sum(axis=1) + t_final, 1.0, atol=1e-12)
    assert np.all(w >= 0)


def test_composite_vacuum_shows_background():
    bg = np.array([0.25, 0.5, 0.75])
    colors = np.ones((4, 8, 3))
    pix, trans = composite(colors, np.zeros((4, 8)),
                           np.full((4, 8), 0.1), bg)
    np.testing.assert_allclose(pix, np.broadcast_to(bg, (4, 3)), atol=1e-15)
    np.testing.assert_allclose(trans, 1.0)


def test_composite_opaque_front_sample_wins():
    colors = np.zeros((1, 6, 3))
    colors[0, 0] = (0.8, 0.6, 0.1)
    sig = np.zeros((1, 6))
    sig[0, 0] = 1e4
    pix, trans = composite(colors, sig, np.full((1, 6), 0.1), np.ones(3))
    np.testing.assert_allclose(pix[0], colors[0, 0], atol=1e-9)
    assert trans[0] < 1e-12


def test_composite_channel_permutation_equivariance():
    rng = np.random.default_rng(5)
    colors = rng.uniform(size=(3, 10, 4))
    sig = rng.uniform(0, 2, size=(3, 10))
    deltas = np.full((3, 10), 0.15)
    bg = rng.uniform(size=4)
    perm = np.array([2, 0, 3, 1])
    pix, _ = composite(colors, sig, deltas, bg)
    pix_p, _ = composite(colors[:, :, perm], sig, deltas, bg[perm])
    np.testing.assert_allclose(pix_p, pix[:, perm], rtol=1e-12)


def test_composite_validation():
    with pytest.raises(ValueError):
        composite(np.ones((2, 3)), np.array([-0.1, 0.0]),
                  np.full(2, 0.1), np.zeros(3))
    with pytest.raises(ValueError):
        composite(np.ones((2, 3)), np.zeros(2), np.zeros(2), np.zeros(3))


def test_render_matches_manual_pipeline():
    rng = np.random.default_rng(6)
    tri = TriPlane(rng.normal(size=(3, 4, 4, 3)))
    head = _head(rng, f_in=3, c_out=2)
    bg = np.array([0.1, 0.9])
    pose = _pose(size=4)
    img = render(tri, pose, head, bg, n_samples=8)
    assert img.shape == (4, 4, 2)

    rays = generate_rays(pose)
    pts, _, deltas = sample_along(rays, 8)
    feats = ad.triplane_gather(tri.planes, pts.reshape(-1, 3))
    colors, sig = head_forward(feats, head)
    pix, _ = composite(colors.reshape(16, 8, 2), sig.reshape(16, 8),
                       deltas, bg)
    np.testing.assert_allclose(img, pix.reshape(4, 4, 2), rtol=1e-12)


def test_render_vacuum_head_paints_background():
    def head_fn(feats):
        n = ad.val(feats).shape[0]
        return np.zeros((n, 3)), np.zeros(n)

    tri = TriPlane(np.random.default_rng(7).normal(size=(3, 4, 4, 2)))
    bg = np.array([0.3, 0.6, 0.9])
    img = render(tri, _pose(size=5), None, bg, n_samples=4, head_fn=head_fn)
    np.testing.assert_allclose(img, np.broadcast_to(bg, (5, 5, 3)),
                               atol=1e-15)


def test_render_rejects_feature_mismatch():
    rng = np.random.default_rng(8)
    tri = TriPlane(rng.normal(size=(3, 4, 4, 5)))
    head = _head(rng, f_in=3)
    with pytest.raises(ValueError):
        render(tri, _pose(), head, np.zeros(3))


def test_render_gradients_match_finite_differences():
    # tiny scene: 8^2 planes, 16x16 image, 32 samples per ray; the mean
    # pixel must agree with central differences at every plane value and
    # every head weight
    rng = np.random.default_rng(9)
    k, f, size, n_samples, hidden, c_out = 8, 4, 16, 32, 16, 3
    planes0 = rng.normal(scale=0.5, size=(3, k, k, f))
    head0 = init_head_params(rng, f, c_out, hidden=hidden, dtype=np.float64)
    bg = np.array([0.4, 0.5, 0.6])
    pose = _pose(size=size)
    names = ("w0", "b0", "w1", "b1", "w2", "b2")

    def forward(planes, head_arrs):
        head = RenderHead(*(head_arrs[n] for n in names), c_out=c_out)
        img = render(planes, pose, head, bg, n_samples=n_samples)
        return ad.mean(img)

    tape = ad.Tape()
    pvar = tape.var(planes0.copy(), "planes")
    hvars = {n: tape.var(head0[n].copy(), n) for n in names}
    out = forward(pvar, hvars)
    tape.backward(out)
    grads = {"planes": pvar.grad.copy()}
    grads.update({n: hvars[n].grad.copy() for n in names})

    eps = 1e-5
    arrays = {"planes": planes0}
    arrays.update(head0)
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = forward(arrays["planes"],
                         {n: arrays[n] for n in names})
            flat[i] = keep - eps
            lo = forward(arrays["planes"],
                         {n: arrays[n] for n in names})
            flat[i] = keep
            fd[i] = (hi - lo) / (2 * eps)
        scale = max(np.abs(fd).max(), 1e-8)
        rel = np.abs(grads[name].reshape(-1) - fd) / scale
        worst = max(worst, float(rel.max()))
    assert worst < 1e-5, f"worst relative gradient error {worst:.3e}"
