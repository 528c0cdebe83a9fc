import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lift_one, painter_splat
from rgbtkit.errors import ValidationError
from rgbtkit.geometry import Calibration, CameraModel, RigidTransform
from rgbtkit.registration import (SplatSamples, alpha_blend, lift_rgb, register_pair,
                                  zbuffer_splat)
from rgbtkit.synthetic import random_rig, two_plane_scene


def one(u, v, d, payload):
    return SplatSamples(np.array([u], float), np.array([v], float), np.array([d], float),
                        np.array([[payload]], float))


def test_splat_integer_landing():
    r = zbuffer_splat(one(5.0, 7.0, 2.0, 100.0), (12, 10))
    assert r.payload[7, 5, 0] == 100.0 and r.mask[7, 5] == 1.0
    assert (r.mask > 0).sum() == 1


def test_splat_half_pixel_split():
    r = zbuffer_splat(one(5.5, 7.0, 2.0, 100.0), (12, 10))
    assert r.mask[7, 5] == 0.5 and r.mask[7, 6] == 0.5
    assert r.payload[7, 5, 0] == 100.0 and r.payload[7, 6, 0] == 100.0
    assert (r.mask > 0).sum() == 2


def test_splat_far_sample_rejected():
    s = SplatSamples(np.array([3.0, 3.0]), np.array([4.0, 4.0]), np.array([1.0, 3.0]),
                     np.array([[10.0], [200.0]]))
    r = zbuffer_splat(s, (8, 8), depth_tol=0.01)
    assert r.payload[4, 3, 0] == 10.0 and r.mask[4, 3] == 1.0 and r.depth[4, 3] == 1.0


def test_splat_coplanar_samples_blend_within_tolerance():
    s = SplatSamples(np.array([3.0, 3.0]), np.array([4.0, 4.0]), np.array([2.0, 2.01]),
                     np.array([[10.0], [30.0]]))
    r = zbuffer_splat(s, (8, 8), depth_tol=0.01)
    assert r.payload[4, 3, 0] == pytest.approx(20.0) and r.mask[4, 3] == 2.0


def test_splat_validates_arguments():
    with pytest.raises(ValidationError):
        zbuffer_splat(one(1, 1, 1, 1), (4, 4), depth_tol=1.0)
    with pytest.raises(ValidationError):
        zbuffer_splat(one(1, 1, 1, 1), (0, 4))


def random_samples(rng, n=400, size=(20, 16)):
    return SplatSamples(rng.uniform(-0.9, size[0] - 0.1, n), rng.uniform(-0.9, size[1] - 0.1, n),
                        rng.choice([1.0, 1.005, 2.0, 5.0], n) * rng.uniform(1, 1.002, n),
                        rng.integers(0, 256, (n, 3)).astype(float))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_splat_properties(seed):
    rng = np.random.default_rng(seed)
    s = random_samples(rng)
    r = zbuffer_splat(s, (20, 16), 0.01)
    # convex combination of inputs where covered
    covered = r.mask > 0
    assert (r.payload[covered] >= s.payload.min(0) - 1e-9).all()
    assert (r.payload[covered] <= s.payload.max(0) + 1e-9).all()
    assert (r.payload[~covered] == 0).all()
    # each sample spreads at most unit weight
    assert r.mask.sum() <= len(s) + 1e-9
    # order independence, bit for bit
    perm = rng.permutation(len(s))
    r2 = zbuffer_splat(s.take(perm), (20, 16), 0.01)
    np.testing.assert_array_equal(r.payload, r2.payload)
    np.testing.assert_array_equal(r.mask, r2.mask)


def test_splat_matches_painter_oracle_on_random_samples():
    rng = np.random.default_rng(1)
    s = random_samples(rng, 600)
    r = zbuffer_splat(s, (20, 16), 0.01)
    payload, mask, zbuf, _ = painter_splat(s, 20, 16, 0.01)
    np.testing.assert_allclose(r.mask, mask, rtol=0, atol=1e-12)
    np.testing.assert_allclose(r.payload, payload, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(r.depth, zbuf)


def test_mask_sum_equals_sample_count_when_all_visible():
    rng = np.random.default_rng(2)
    n = 50
    s = SplatSamples(rng.uniform(1, 18, n), rng.uniform(1, 14, n), np.full(n, 3.0), np.ones((n, 1)))
    r = zbuffer_splat(s, (20, 16), 0.0)
    assert r.mask.sum() == pytest.approx(n, abs=1e-9)


# ---- lifting -------------------------------------------------------------------------

CAM = CameraModel(60.0, 60.0, 15.5, 15.5, 32, 32)


def test_lift_identity_rig_lands_on_source_pixels():
    rng = np.random.default_rng(3)
    depth = rng.uniform(0.5, 20, (32, 32))
    rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    s = lift_rgb(depth, CAM, RigidTransform.identity(), CAM, rgb)
    assert len(s) == 32 * 32
    np.testing.assert_array_equal(s.u, s.src_index % 32)
    np.testing.assert_array_equal(s.v, s.src_index // 32)


def test_lift_planar_shift():
    h, d = 0.1, 4.0
    depth = np.full((32, 32), d)
    rgb = np.zeros((32, 32, 3), np.uint8)
    T = RigidTransform(np.eye(3), [0.0, -h, 0.0])
    s = lift_rgb(depth, CAM, T, CAM, rgb)
    du = s.u - s.src_index % 32
    dv = s.v - s.src_index // 32
    assert np.abs(du).max() < 1e-9
    assert np.abs(dv - (-CAM.fy * h / d)).max() < 1e-6


def test_lift_sign_thermal_below_rgb():
    # a camera mounted below sees the same point higher up in its image
    depth = np.full((32, 32), 2.0)
    T = RigidTransform(np.eye(3), [0.0, -0.2, 0.0])
    s = lift_rgb(depth, CAM, T, CAM, np.zeros((32, 32, 3), np.uint8))
    assert (s.v < s.src_index // 32).all()


def test_lift_matches_pixel_at_a_time_oracle():
    rng = np.random.default_rng(4)
    cam_t = CameraModel(55.0, 57.0, 14.0, 16.5, 30, 34)
    T = random_rig(rng)
    depth = rng.uniform(1.0, 10.0, (32, 32))
    depth[3, 4] = np.nan
    depth[5, 6] = -1
    rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    s = lift_rgb(depth, CAM, T, cam_t, rgb)
    got = {int(k): (u, v, z) for k, u, v, z in zip(s.src_index, s.u, s.v, s.depth)}
    expected = {}
    for v in range(32):
        for u in range(32):
            d = depth[v, u]
            if not (np.isfinite(d) and d > 0):
                continue
            r = lift_one(u, v, d, CAM, T.rotation, T.translation, cam_t)
            if r and -1 < r[0] < cam_t.width and -1 < r[1] < cam_t.height:
                expected[v * 32 + u] = r
    assert got.keys() == expected.keys()
    for k, (u, v, z) in expected.items():
        gu, gv, gz = got[k]
        assert abs(gu - u) < 1e-6 and abs(gv - v) < 1e-6 and abs(gz - z) < 1e-9


def test_lift_rejects_size_mismatch():
    with pytest.raises(ValidationError):
        lift_rgb(np.ones((31, 32)), CAM, RigidTransform.identity(), CAM, np.zeros((32, 32, 3)))


# ---- register_pair -------------------------------------------------------------------

def calib_for(cam_rgb, cam_thr, T):
    return Calibration({"rgb": cam_rgb, "thermal": cam_thr}, {"rgb_to_thermal": T})


def test_register_identity_rig_plane():
    rng = np.random.default_rng(5)
    rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    pair = register_pair(rgb, np.full((32, 32), 3.0), calib_for(CAM, CAM, RigidTransform.identity()))
    assert (pair.mask == 1).all()
    np.testing.assert_array_equal(pair.warped, rgb)


def test_register_identity_rig_any_depth():
    rng = np.random.default_rng(6)
    rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    depth = rng.uniform(0.2, 50, (32, 32))
    pair = register_pair(rgb, depth, calib_for(CAM, CAM, RigidTransform.identity()))
    np.testing.assert_array_equal(pair.warped[pair.mask == 1], rgb[pair.mask == 1])
    assert (pair.mask == 1).all()


def test_register_two_plane_occlusion_against_painter():
    rng = np.random.default_rng(7)
    cam = CameraModel(70.0, 70.0, 31.5, 31.5, 64, 64)
    for _ in range(3):
        depth, rgb, plane = two_plane_scene(rng, 64, 64)
        T = random_rig(rng)
        s = lift_rgb(depth, cam, T, cam, rgb)
        res = zbuffer_splat(s, (64, 64), 0.01)
        _, _, zbuf, contributors = painter_splat(s, 64, 64, 0.01)
        plane_of = plane.ravel()[s.src_index]
        for (py, px), ids in contributors.items():
            labels = {int(plane_of[i]) for i in ids}
            assert len(labels) == 1  # never mixes planes
            assert res.depth[py, px] == zbuf[py, px]


def test_register_ground_plane_bottom_rows_empty():
    cam = CameraModel(40.0, 40.0, 23.5, 17.5, 48, 36)
    h, ground = 0.15, 1.0  # thermal 15 cm below RGB; ground 1 m below RGB
    v = np.arange(36, dtype=float)[:, None] * np.ones((1, 48))
    depth = np.where(v > cam.cy, cam.fy * ground / np.maximum(v - cam.cy, 1e-9), np.nan)
    rgb = np.full((36, 48, 3), 120, np.uint8)
    pair = register_pair(rgb, depth, calib_for(cam, cam, RigidTransform(np.eye(3), [0, -h, 0])))
    lowest = cam.cy + (1 - h / ground) * (35 - cam.cy)  # lowest projected thermal row
    empty_rows = np.arange(36) > np.floor(lowest) + 1
    assert empty_rows.any()
    assert (pair.mask[empty_rows] == 0).all()
    assert (pair.warped[empty_rows] == 0).all()
    assert (pair.mask[int(np.floor(lowest))] > 0).any()


def test_register_checks_thermal_size():
    with pytest.raises(ValidationError):
        register_pair(np.zeros((32, 32, 3), np.uint8), np.ones((32, 32)),
                      calib_for(CAM, CAM, RigidTransform.identity()), np.zeros((10, 10), np.uint8))


# ---- alpha blend -------------------------------------------------------------------------

def test_alpha_blend_endpoints_and_midpoint():
    rng = np.random.default_rng(8)
    a = rng.integers(0, 256, (5, 6, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (5, 6, 3), dtype=np.uint8)
    np.testing.assert_array_equal(alpha_blend(a, b, 0.0), a)
    np.testing.assert_array_equal(alpha_blend(a, b, 1.0), b)
    mid = alpha_blend(np.full((2, 2), 100, np.uint8), np.full((2, 2, 3), 200, np.uint8), 0.5)
    assert mid.shape == (2, 2, 3) and (mid == 150).all()


def test_alpha_blend_rounds_half_away():
    out = alpha_blend(np.array([[100]], np.uint8), np.array([[101]], np.uint8), 0.5)
    assert out[0, 0] == 101


def test_alpha_blend_errors():
    with pytest.raises(ValidationError):
        alpha_blend(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)
    with pytest.raises(ValidationError):
        alpha_blend(np.zeros((2, 2)), np.zeros((2, 2)), 1.5)
