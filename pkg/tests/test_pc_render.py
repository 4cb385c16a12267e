import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from eqa_forge.env_model import (
    COLOR_TABLE,
    Box3,
    EnvGenSpec,
    Environment,
    ObjectInstance,
    PointCloud,
    generate_environment,
)
from eqa_forge.geometry import Rect3, pack_rects
from eqa_forge.pc_render import (
    Camera,
    Observation,
    RenderConfig,
    Renderer,
    camera_coords,
    frustum_cull,
    load_observation,
    raster_depth_buffer,
    raster_occlusion_filter,
    ray_occlusion_filter,
    render_observation,
    save_observation,
)


def _pack(rects):
    axes, params = pack_rects(rects)
    corners = np.stack([r.corners() for r in rects])
    return axes, params, corners


def test_camera_basis_frozen():
    fwd, right, up = Camera((0, 0, 0), yaw=0.0).basis()
    assert np.allclose(fwd, [1, 0, 0])
    assert np.allclose(right, [0, -1, 0])
    assert np.allclose(up, [0, 0, 1])
    fwd, right, up = Camera((0, 0, 0), yaw=math.pi / 2).basis()
    assert np.allclose(fwd, [0, 1, 0], atol=1e-15)
    assert np.allclose(right, [1, 0, 0], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    yaw=st.floats(-10, 10, allow_nan=False),
    pitch=st.floats(-1.4, 1.4, allow_nan=False),
)
def test_camera_basis_orthonormal(yaw, pitch):
    fwd, right, up = Camera((0, 0, 0), yaw=yaw, pitch=pitch).basis()
    for v in (fwd, right, up):
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    assert abs(fwd @ right) < 1e-12
    assert abs(fwd @ up) < 1e-12
    assert abs(right @ up) < 1e-12
    assert right[2] == 0.0  # roll-free camera
    assert np.allclose(np.cross(right, fwd), up, atol=1e-12)


def test_frustum_boundaries_closed():
    cam = Camera((0, 0, 0), yaw=0.0, vfov_deg=60.0, aspect=1.0)
    th = cam.tan_h
    # camera frame: +x fwd, -y right, +z up
    on_edge = np.array([[2.0, -2.0 * th, 0.0]])
    outside = np.array([[2.0, -2.0 * th * (1 + 1e-9), 0.0]])
    assert frustum_cull(cam, on_edge, near=0.05)[0]
    assert not frustum_cull(cam, outside, near=0.05)[0]
    assert frustum_cull(cam, np.array([[0.05, 0.0, 0.0]]), near=0.05)[0]
    assert not frustum_cull(cam, np.array([[0.0499, 0.0, 0.0]]), near=0.05)[0]
    assert not frustum_cull(cam, np.array([[-1.0, 0.0, 0.0]]), near=0.05)[0]


def test_ray_filter_point_on_surface_survives():
    wall = Rect3(0, 2.0, -5.0, 5.0, 0.0, 3.0)
    axes, params, _ = _pack([wall])
    cam = Camera((0.0, 0.0, 1.5), yaw=0.0)
    pts = np.array([[2.0, y, 1.0 + 0.1 * i] for i, y in enumerate(np.linspace(-3, 3, 9))])
    assert ray_occlusion_filter(cam, pts, axes, params, 0.0025).all()


def test_ray_filter_blocked_point_removed():
    near_wall = Rect3(0, 1.0, -5.0, 5.0, 0.0, 3.0)
    far_wall = Rect3(0, 3.0, -5.0, 5.0, 0.0, 3.0)
    axes, params, _ = _pack([near_wall, far_wall])
    cam = Camera((0.0, 0.0, 1.5), yaw=0.0)
    pts = np.array([[3.0, 0.0, 1.5]])
    keep = ray_occlusion_filter(cam, pts, axes, params, 0.25)
    assert not keep[0]
    # removing the blocker restores visibility
    axes2, params2, _ = _pack([far_wall])
    assert ray_occlusion_filter(cam, pts, axes2, params2, 0.25)[0]


def test_ray_filter_epsilon_scales():
    wall = Rect3(0, 2.0, -5.0, 5.0, 0.0, 3.0)
    axes, params, _ = _pack([wall])
    cam = Camera((0.0, 0.0, 1.5), yaw=0.0)
    behind = np.array([[2.1, 0.0, 1.5]])  # 0.1 m past the wall
    assert ray_occlusion_filter(cam, behind, axes, params, 0.25)[0]
    assert not ray_occlusion_filter(cam, behind, axes, params, 0.0025)[0]


def test_ray_filter_matches_oracle():
    rng = np.random.default_rng(12)
    for _ in range(6):
        rects = []
        for _ in range(10):
            axis = int(rng.integers(3))
            o = float(rng.uniform(-2, 2))
            u0, v0 = rng.uniform(-2, 1.5, 2)
            rects.append(Rect3(axis, o, float(u0), float(u0 + rng.uniform(0.3, 2)),
                               float(v0), float(v0 + rng.uniform(0.3, 2))))
        axes, params, _ = _pack(rects)
        cam = Camera(tuple(rng.uniform(-0.5, 0.5, 3)), yaw=float(rng.uniform(0, 6)))
        pts = rng.uniform(-3, 3, (150, 3))
        got = ray_occlusion_filter(cam, pts, axes, params, 0.1)
        ref = oracles.visible_mask_ref(cam.position, pts, rects, 0.1)
        assert np.array_equal(got, ref)


def test_raster_filter_outside_buffer_removed():
    wall = Rect3(0, 2.0, -5.0, 5.0, -5.0, 5.0)
    axes, params, corners = _pack([wall])
    cam = Camera((0, 0, 0), yaw=0.0, aspect=1.0)
    cfg = RenderConfig(raster_width=32, raster_height=32)
    buf = raster_depth_buffer(cam, axes, params, corners, cfg)
    th = cam.tan_h
    cam_pts = np.array(
        [
            [0.0, 0.0, 1.0],  # center, visible
            [2.0 * th * 1.5, 0.0, 2.0],  # right of the frustum
            [0.0, 0.0, 0.01],  # in front of near plane
            [2.0 * th, 0.0, 2.0],  # exactly on the right edge
        ]
    )
    keep = raster_occlusion_filter(buf, cam_pts, 0.25)
    assert keep.tolist() == [True, False, False, True]


def test_raster_filter_depth_test():
    wall = Rect3(0, 2.0, -5.0, 5.0, -5.0, 5.0)
    axes, params, corners = _pack([wall])
    cam = Camera((0, 0, 0), yaw=0.0, aspect=1.0)
    cfg = RenderConfig(raster_width=64, raster_height=64)
    buf = raster_depth_buffer(cam, axes, params, corners, cfg)
    pts = np.array([[0.0, 0.0, 1.9], [0.0, 0.0, 2.0], [0.0, 0.0, 2.2], [0.0, 0.0, 2.3]])
    assert raster_occlusion_filter(buf, pts, 0.25).tolist() == [True, True, True, False]


def test_two_pass_cull_matches_brute_force():
    env = generate_environment(EnvGenSpec(density=150.0), seed=19)
    r = Renderer(env, RenderConfig(mode="exact", max_points=10**8))
    for yaw, pos in [(0.7, (1.2, 1.1, 1.5)), (3.4, (5.0, 4.5, 1.2)), (-1.2, (3.0, 3.0, 0.8))]:
        cam = Camera(pos, yaw=yaw, pitch=-0.1)
        obs = r.render(cam)
        pos_all = env.global_cloud.positions
        mask = frustum_cull(cam, pos_all, r.config.near)
        idx = np.nonzero(mask)[0]
        keep = ray_occlusion_filter(cam, pos_all[idx], r.axes, r.params, r.config.epsilon)
        want = idx[keep]
        assert np.array_equal(obs.cloud.positions, pos_all[want])
        assert np.array_equal(obs.cloud.semantic, env.global_cloud.semantic[want])
        assert obs.n_before_cap == len(want)


def test_raster_exact_agreement_sampled():
    env = generate_environment(EnvGenSpec(density=200.0), seed=23)
    r = Renderer(env, RenderConfig())
    rng = np.random.default_rng(0)
    for _ in range(4):
        cam = Camera(
            (float(rng.uniform(0.8, 6.2)), float(rng.uniform(0.8, 6.2)), 1.4),
            yaw=float(rng.uniform(0, 2 * math.pi)),
            pitch=float(rng.uniform(-0.3, 0.1)),
        )
        pos_all = env.global_cloud.positions
        idx = np.nonzero(frustum_cull(cam, pos_all, r.config.near))[0]
        cam_pts = camera_coords(cam, pos_all[idx])
        k_exact = ray_occlusion_filter(cam, pos_all[idx], r.axes, r.params, 0.25)
        k_rast = raster_occlusion_filter(r.depth(cam), cam_pts, 0.25)
        assert (k_exact == k_rast).mean() >= 0.97


def test_render_cap_and_determinism():
    env = generate_environment(EnvGenSpec(density=200.0), seed=3)
    r = Renderer(env, RenderConfig(max_points=512))
    cam = Camera((1.0, 1.0, 1.4), yaw=0.8)
    a = r.render(cam, seed=9)
    b = r.render(cam, seed=9)
    c = r.render(cam, seed=10)
    assert a.count == 512 and a.n_before_cap > 512
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert not np.array_equal(a.cloud.positions, c.cloud.positions)
    # subsample preserves original point order
    assert np.array_equal(
        a.cam_positions[:, 2], np.asarray(camera_coords(cam, a.cloud.positions))[:, 2].astype(np.float32)
    )


def test_sparsity_bin_full_and_empty():
    env = generate_environment(EnvGenSpec(density=200.0), seed=3)
    r = Renderer(env, RenderConfig(max_points=256, sparsity_bins=5))
    full = r.render(Camera((1.0, 1.0, 1.4), yaw=0.8))
    assert full.count == 256 and full.sparsity_bin == 4
    # camera nose against a wall, looking out of bounds: few or no points
    tight = r.render(Camera((0.02, 3.5, 1.3), yaw=math.pi))
    assert tight.sparsity_bin <= 1
    assert tight.count < 256


def test_sparsity_bin_thresholds():
    env = generate_environment(EnvGenSpec(density=60.0), seed=3)
    cfg = RenderConfig(max_points=100, sparsity_bins=5)
    r = Renderer(env, cfg)
    obs = r.render(Camera((3.5, 3.5, 1.4), yaw=1.0))
    assert obs.sparsity_bin == min(4, obs.count // 20)


def test_observation_roundtrip(tmp_path):
    env = generate_environment(EnvGenSpec(density=150.0), seed=5)
    obs = render_observation(env, Camera((2.0, 2.0, 1.4), yaw=0.3), RenderConfig(max_points=1024))
    save_observation(obs, tmp_path / "obs.json")
    back = load_observation(tmp_path / "obs.json")
    assert back.camera == obs.camera
    assert back.sparsity_bin == obs.sparsity_bin
    assert back.n_before_cap == obs.n_before_cap
    assert np.array_equal(back.cloud.positions, obs.cloud.positions)
    assert np.array_equal(back.cloud.colors, obs.cloud.colors)
    assert np.allclose(back.cam_positions, obs.cam_positions, atol=1e-6)


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(mode="painter")
    with pytest.raises(ValueError):
        RenderConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        RenderConfig(max_points=0)


def test_depth_buffer_frontal_wall_from_renderer():
    h = 2.6
    env = Environment(
        id="env-wall",
        rooms=[],
        objects=[],
        surfaces=[Rect3(0, 2.0, -20.0, 20.0, -20.0, 20.0)],
        global_cloud=PointCloud.empty(),
        bounds=Box3((0.0, -5.0, -5.0), (4.0, 5.0, 5.0)),
        seed=0,
        density=10.0,
    )
    r = Renderer(env, RenderConfig(raster_width=40, raster_height=30))
    buf = r.depth(Camera((0.0, 0.0, 0.0), yaw=0.0))
    assert np.isfinite(buf.depth).all()
    assert np.allclose(buf.depth, 2.0, atol=1e-12)


def test_occluding_object_hides_points_behind_it():
    # object box between camera and back wall: wall points behind the box
    # footprint disappear, wall points beside it stay
    box = Box3((1.6, -0.4, 0.0), (2.0, 0.4, 2.0))
    env = Environment(
        id="env-occ",
        rooms=[],
        objects=[ObjectInstance(1, "table", "red", COLOR_TABLE["red"], box, 0)],
        surfaces=[Rect3(0, 4.0, -3.0, 3.0, 0.0, 2.0)],
        global_cloud=PointCloud.empty(),
        bounds=Box3((0.0, -3.0, 0.0), (4.0, 3.0, 2.6)),
        seed=0,
        density=10.0,
    )
    from eqa_forge.env_model import sample_surface_points

    env.global_cloud = sample_surface_points(env, 400.0)
    r = Renderer(env, RenderConfig(mode="exact", max_points=10**8))
    obs = r.render(Camera((0.0, 0.0, 1.0), yaw=0.0))
    wall_pts = obs.cloud.positions[obs.cloud.semantic == 0]
    # dead center behind the box: no visible wall points near y=0
    assert not np.any(np.abs(wall_pts[:, 1]) < 0.15)
    # beside the box shadow: wall is visible
    assert np.any(wall_pts[:, 1] > 1.0)
    assert np.any(wall_pts[:, 1] < -1.0)
