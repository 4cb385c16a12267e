import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqa_forge.env_model import (
    COLOR_NAMES,
    COLOR_TABLE,
    OBJECT_CATEGORIES,
    ROOM_TYPES,
    Box3,
    DoorSegment,
    EnvGenSpec,
    Environment,
    GenerationError,
    ObjectInstance,
    PointCloud,
    RoomSpec,
    free_space_connected,
    generate_environment,
    load_environment,
    occupancy_grid,
    read_cloud,
    sample_surface_points,
    save_environment,
    write_cloud,
)
from eqa_forge.env_model import _sample_rect
from eqa_forge.geometry import Rect3

FAST_SPEC = EnvGenSpec(density=120.0)


def test_vocabulary_sizes():
    assert len(OBJECT_CATEGORIES) == 25
    assert len(ROOM_TYPES) == 18
    assert len(COLOR_TABLE) == 24
    for rgb in COLOR_TABLE.values():
        assert len(rgb) == 3 and all(0 <= c <= 255 for c in rgb)


def test_generation_deterministic_byte_identical(tmp_path):
    a = generate_environment(FAST_SPEC, seed=11)
    b = generate_environment(FAST_SPEC, seed=11)
    save_environment(a, tmp_path / "a.json")
    save_environment(b, tmp_path / "b.json")
    ja = (tmp_path / "a.json").read_bytes().replace(b"a.eqac", b"x.eqac")
    jb = (tmp_path / "b.json").read_bytes().replace(b"b.eqac", b"x.eqac")
    assert ja == jb
    assert (tmp_path / "a.eqac").read_bytes() == (tmp_path / "b.eqac").read_bytes()


def test_different_seeds_differ():
    a = generate_environment(FAST_SPEC, seed=1)
    b = generate_environment(FAST_SPEC, seed=2)
    assert a.global_cloud.count != b.global_cloud.count or not np.array_equal(
        a.global_cloud.positions, b.global_cloud.positions
    )


def test_unit_square_sampling_count():
    # stratified sampler on 1 m^2 at density 1000: 32x32 = 1024 points,
    # inside the published tolerance band [903, 1097]
    rng = np.random.default_rng(0)
    rect = Rect3(2, 0.0, 0.0, 1.0, 0.0, 1.0)
    pts = _sample_rect(rng, rect, 1000.0)
    assert len(pts) == 1024
    assert 903 <= len(pts) <= 1097
    assert np.all(pts[:, 2] == 0.0)
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] <= 1))
    assert np.all((pts[:, 1] >= 0) & (pts[:, 1] <= 1))


def test_sampling_density_scales_with_area():
    rng = np.random.default_rng(0)
    rect = Rect3(0, 2.0, 0.0, 3.0, 0.0, 2.0)  # 6 m^2
    pts = _sample_rect(rng, rect, 400.0)
    assert abs(len(pts) - 6 * 400) / (6 * 400) < 0.05


def test_every_point_on_declared_geometry():
    env = generate_environment(FAST_SPEC, seed=3)
    pos = env.global_cloud.positions.astype(np.float64)
    sem = env.global_cloud.semantic
    tol = 1e-6

    def on_rect(p, r):
        ua, va = [(1, 2), (0, 2), (0, 1)][r.axis]
        return (
            abs(p[r.axis] - r.offset) <= tol
            and r.u_lo - tol <= p[ua] <= r.u_hi + tol
            and r.v_lo - tol <= p[va] <= r.v_hi + tol
        )

    rng = np.random.default_rng(0)
    for i in rng.choice(len(pos), 400, replace=False):
        p = pos[i]
        if sem[i] == 0:
            rects = env.surfaces
        else:
            rects = env.object_by_id(int(sem[i])).box.faces()
        assert any(on_rect(p, r) for r in rects), f"point {i} off geometry"


def test_semantic_color_consistency():
    env = generate_environment(FAST_SPEC, seed=5)
    col = env.global_cloud.colors
    sem = env.global_cloud.semantic
    for obj in env.objects:
        mask = sem == obj.object_id
        assert mask.any()
        assert np.all(col[mask] == np.array(obj.color_rgb, np.uint8))


def test_objects_inside_rooms_with_margin():
    for seed in range(4):
        env = generate_environment(FAST_SPEC, seed=seed)
        for obj in env.objects:
            fp = env.room_by_id(obj.room_id).footprint
            x0, y0, x1, y1 = obj.box.footprint()
            m = FAST_SPEC.object_margin - 1e-9
            assert x0 >= fp[0] + m and x1 <= fp[2] - m
            assert y0 >= fp[1] + m and y1 <= fp[3] - m


def test_objects_disjoint_with_gap():
    env = generate_environment(FAST_SPEC, seed=9)
    g = FAST_SPEC.object_gap - 1e-9
    boxes = [(o.room_id, o.box.footprint()) for o in env.objects]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes[i][0] != boxes[j][0]:
                continue
            ax0, ay0, ax1, ay1 = boxes[i][1]
            bx0, by0, bx1, by1 = boxes[j][1]
            sep = max(bx0 - ax1, ax0 - bx1, by0 - ay1, ay0 - by1)
            assert sep >= g


def test_unique_pair_exists():
    for seed in range(6):
        env = generate_environment(FAST_SPEC, seed=seed)
        counts = {}
        for o in env.objects:
            key = (o.category, env.room_by_id(o.room_id).room_type)
            counts[key] = counts.get(key, 0) + 1
        assert any(v == 1 for v in counts.values())


def _two_room_env(door_width=0.8):
    """Hand-built 4x4 env: two 2x4 rooms, one door, no objects."""
    h = 2.6
    lo, hi = 2.0 - door_width / 2, 2.0 + door_width / 2
    door = DoorSegment(0, 2.0, lo, hi)
    surfaces = [
        Rect3(0, 0.0, 0.0, 4.0, 0.0, h),
        Rect3(0, 4.0, 0.0, 4.0, 0.0, h),
        Rect3(1, 0.0, 0.0, 4.0, 0.0, h),
        Rect3(1, 4.0, 0.0, 4.0, 0.0, h),
        Rect3(0, 2.0, 0.0, lo, 0.0, h),
        Rect3(0, 2.0, hi, 4.0, 0.0, h),
        Rect3(2, 0.0, 0.0, 4.0, 0.0, 4.0),
        Rect3(2, h, 0.0, 4.0, 0.0, 4.0),
    ]
    rooms = [
        RoomSpec(0, "office", (0.0, 0.0, 2.0, 4.0), (door,)),
        RoomSpec(1, "bedroom", (2.0, 0.0, 4.0, 4.0), (door,)),
    ]
    return Environment(
        id="env-test",
        rooms=rooms,
        objects=[],
        surfaces=surfaces,
        global_cloud=PointCloud.empty(),
        bounds=Box3((0.0, 0.0, 0.0), (4.0, 4.0, h)),
        seed=0,
        density=100.0,
    )


def test_door_passable_at_small_radius():
    env = _two_room_env()
    g = occupancy_grid(env, 0.05, 0.1)
    assert free_space_connected(g, env.rooms)


def test_wide_agent_cannot_pass_door():
    # radius above half the door width seals the opening
    env = _two_room_env(door_width=0.8)
    g = occupancy_grid(env, 0.05, 0.45)
    assert not free_space_connected(g, env.rooms)


def test_occupancy_box_inflation_frozen():
    # 1x1 box, radius 0.1, res 0.1: blocked cells form exactly a 12x12
    # block (centers within 0.1 of the footprint span x in [1.4, 2.6])
    env = Environment(
        id="env-box",
        rooms=[],
        objects=[
            ObjectInstance(1, "table", "red", COLOR_TABLE["red"], Box3((1.5, 1.5, 0.0), (2.5, 2.5, 0.8)), 0)
        ],
        surfaces=[],
        global_cloud=PointCloud.empty(),
        bounds=Box3((0.0, 0.0, 0.0), (4.0, 4.0, 2.6)),
        seed=0,
        density=100.0,
    )
    g = occupancy_grid(env, 0.1, 0.1)
    ys, xs = np.nonzero(g.cells)
    assert int(g.cells.sum()) == 144
    assert xs.min() == 14 and xs.max() == 25
    assert ys.min() == 14 and ys.max() == 25


def test_occupancy_matches_distance_oracle():
    env = generate_environment(FAST_SPEC, seed=13)
    g = occupancy_grid(env, 0.25, 0.1)
    segs = []
    for r in env.surfaces:
        if r.axis == 0:
            segs.append(((r.offset, r.u_lo), (r.offset, r.u_hi)))
        elif r.axis == 1:
            segs.append(((r.u_lo, r.offset), (r.u_hi, r.offset)))
    boxes = [o.box.footprint() for o in env.objects]

    def point_seg_d(px, py, a, b):
        ax, ay = a
        bx, by = b
        vx, vy = bx - ax, by - ay
        L2 = vx * vx + vy * vy
        t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / L2))
        dx, dy = px - (ax + t * vx), py - (ay + t * vy)
        return math.hypot(dx, dy)

    def point_box_d(px, py, bb):
        dx = max(bb[0] - px, 0.0, px - bb[2])
        dy = max(bb[1] - py, 0.0, py - bb[3])
        return math.hypot(dx, dy)

    for iy in range(g.height):
        for ix in range(g.width):
            cx, cy = g.center_of(ix, iy)
            d = min(
                min(point_seg_d(cx, cy, a, b) for a, b in segs),
                min((point_box_d(cx, cy, bb) for bb in boxes), default=math.inf),
            )
            assert bool(g.cells[iy, ix]) == (d <= 0.1), (ix, iy, d)


def test_occupancy_validation():
    env = _two_room_env()
    with pytest.raises(ValueError):
        occupancy_grid(env, 0.0, 0.1)
    with pytest.raises(ValueError):
        occupancy_grid(env, 0.6, 0.1)
    with pytest.raises(ValueError):
        occupancy_grid(env, 0.05, -0.1)


def test_generation_validation():
    with pytest.raises(ValueError):
        generate_environment(EnvGenSpec(n_rooms=1), seed=0)
    with pytest.raises(ValueError):
        generate_environment(EnvGenSpec(width=3.0), seed=0)
    with pytest.raises(ValueError):
        generate_environment(EnvGenSpec(min_objects_per_room=0), seed=0)
    with pytest.raises(GenerationError):
        generate_environment(
            EnvGenSpec(n_rooms=9, width=4.0, depth=4.0, max_retries=4), seed=0
        )


def test_cloud_roundtrip(tmp_path):
    env = generate_environment(FAST_SPEC, seed=21)
    p = tmp_path / "c.eqac"
    write_cloud(p, env.global_cloud)
    back = read_cloud(p)
    assert np.array_equal(back.positions, env.global_cloud.positions)
    assert np.array_equal(back.colors, env.global_cloud.colors)
    assert np.array_equal(back.semantic, env.global_cloud.semantic)


def test_cloud_binary_layout(tmp_path):
    cloud = PointCloud(
        np.array([[1.0, 2.0, 3.0]], np.float32),
        np.array([[10, 20, 30]], np.uint8),
        np.array([7], np.uint32),
    )
    p = tmp_path / "one.eqac"
    write_cloud(p, cloud)
    raw = p.read_bytes()
    assert len(raw) == 16 + 19
    magic, version, count = struct.unpack("<4sIQ", raw[:16])
    assert magic == b"EQAC" and version == 1 and count == 1
    x, y, z = struct.unpack("<3f", raw[16:28])
    assert (x, y, z) == (1.0, 2.0, 3.0)
    assert raw[28:31] == bytes([10, 20, 30])
    assert struct.unpack("<I", raw[31:35])[0] == 7


def test_cloud_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.eqac"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ValueError, match="EQAC"):
        read_cloud(p)


def test_environment_roundtrip(tmp_path):
    env = generate_environment(FAST_SPEC, seed=17)
    save_environment(env, tmp_path / "env.json", config_hash="abc123")
    back = load_environment(tmp_path / "env.json")
    assert back.id == env.id and back.seed == env.seed
    assert back.rooms == env.rooms
    assert back.objects == env.objects
    assert back.surfaces == env.surfaces
    assert np.array_equal(back.global_cloud.positions, env.global_cloud.positions)
    doc = json.loads((tmp_path / "env.json").read_text())
    assert doc["config_hash"] == "abc123"
    assert doc["format"] == "eqa-forge-env"


def test_load_rejects_wrong_format(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="environment"):
        load_environment(tmp_path / "x.json")


def test_resample_matches_embedded_cloud():
    env = generate_environment(FAST_SPEC, seed=29)
    again = sample_surface_points(env, FAST_SPEC.density)
    assert np.array_equal(again.positions, env.global_cloud.positions)
    assert np.array_equal(again.semantic, env.global_cloud.semantic)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_generated_envs_satisfy_invariants(seed):
    env = generate_environment(FAST_SPEC, seed=seed)
    assert len(env.rooms) == FAST_SPEC.n_rooms
    for room in env.rooms:
        n = sum(1 for o in env.objects if o.room_id == room.room_id)
        assert FAST_SPEC.min_objects_per_room <= n <= FAST_SPEC.max_objects_per_room
        assert room.door_segments, "every room needs at least one door"
    g = occupancy_grid(env, 0.05, 0.1)
    assert free_space_connected(g, env.rooms)
    assert env.global_cloud.count > 0
    assert env.global_cloud.positions.dtype == np.float32
