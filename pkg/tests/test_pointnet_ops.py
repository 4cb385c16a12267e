import numpy as np
import pytest

from eqa_forge.env_model import PointCloud
from eqa_forge.pc_render import Camera, Observation
from eqa_forge.pointnet_ops import (
    EncoderConfig,
    SAStage,
    ball_query,
    encode_observation,
    farthest_point_sample,
    feature_propagate,
    global_abstraction,
    init_encoder_params,
    set_abstraction,
)


def _obs_from_points(pos, colors=None, sparsity_bin=0):
    pos = np.asarray(pos, np.float32)
    n = len(pos)
    if colors is None:
        colors = np.full((n, 3), 128, np.uint8)
    cloud = PointCloud(pos, colors, np.zeros(n, np.uint32))
    return Observation(
        camera=Camera((0, 0, 0), yaw=0.0),
        cloud=cloud,
        cam_positions=pos,
        sparsity_bin=sparsity_bin,
        n_before_cap=n,
    )


def test_fps_starts_at_lexicographic_minimum():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (50, 3))
    lo = 17
    pts[lo] = [-2.0, 5.0, 5.0]  # smallest x wins regardless of y, z
    assert farthest_point_sample(pts, 5)[0] == lo
    # tie on x broken by y
    pts[3] = [-2.0, -5.0, 9.0]
    assert farthest_point_sample(pts, 5)[0] == 3


def test_fps_pads_by_cycling():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, 0, 0]])
    idx = farthest_point_sample(pts, 7)
    assert len(idx) == 7
    assert set(idx[:3].tolist()) == {0, 1, 2}
    assert np.array_equal(idx[3:6], idx[:3])
    assert idx[6] == idx[0]


def test_fps_validation():
    with pytest.raises(ValueError):
        farthest_point_sample(np.empty((0, 3)), 1)
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((3, 3)), 0)


def test_ball_query_validation():
    pts = np.zeros((3, 3))
    with pytest.raises(ValueError):
        ball_query(pts, pts, 0.0, 4)
    with pytest.raises(ValueError):
        ball_query(pts, pts, 0.5, 0)


def _tiny_stage_params(rng, stage, in_features):
    params = {}
    f = in_features
    for ri, mlp in enumerate(stage.mlps):
        fan = 3 + f
        for li, width in enumerate(mlp):
            params[f"sa.r{ri}.l{li}.W"] = rng.normal(0, 0.5, (width, fan)).astype(np.float32)
            params[f"sa.r{ri}.l{li}.b"] = rng.normal(0, 0.1, width).astype(np.float32)
            fan = width
    return params


def test_set_abstraction_shapes_and_determinism():
    rng = np.random.default_rng(1)
    stage = SAStage(16, (0.3, 0.6), 8, ((8, 16), (8, 24)))
    params = _tiny_stage_params(rng, stage, in_features=2)
    pos = rng.uniform(0, 1, (80, 3))
    feats = rng.normal(size=(80, 2)).astype(np.float32)
    c1, f1 = set_abstraction(pos, feats, stage, params, "sa")
    c2, f2 = set_abstraction(pos, feats, stage, params, "sa")
    assert c1.shape == (16, 3) and f1.shape == (16, 16 + 24)
    assert np.array_equal(c1, c2) and np.array_equal(f1, f2)
    assert np.all(f1 >= 0.0)  # trailing ReLU


def test_set_abstraction_padding_does_not_leak():
    # isolated far point: its ball holds only itself; output must equal
    # running the MLP on the single real neighbor (repeat-padding is a
    # no-op under max pooling)
    rng = np.random.default_rng(2)
    stage = SAStage(2, (0.2,), 6, ((4, 8),))
    params = _tiny_stage_params(rng, stage, in_features=0)
    pos = np.array([[0.0, 0, 0], [0.05, 0, 0], [0.1, 0, 0], [9.0, 9, 9]])
    cents, feats = set_abstraction(pos, None, stage, params, "sa")
    # fps from lexicographic min picks the far point second
    assert np.array_equal(cents[1], [9.0, 9.0, 9.0])
    x = np.zeros((1, 3), np.float32)
    for li in range(2):
        w, b = params[f"sa.r0.l{li}.W"], params[f"sa.r0.l{li}.b"]
        x = np.maximum(x @ w.T + b, 0.0)
    assert np.allclose(feats[1], x[0], atol=1e-6)


def test_global_abstraction_translation_invariant():
    rng = np.random.default_rng(3)
    widths = (8, 12)
    params = {}
    fan = 3 + 2
    for li, width in enumerate(widths):
        params[f"global.l{li}.W"] = rng.normal(0, 0.5, (width, fan)).astype(np.float32)
        params[f"global.l{li}.b"] = np.zeros(width, np.float32)
        fan = width
    pos = rng.uniform(0, 1, (40, 3))
    feats = rng.normal(size=(40, 2)).astype(np.float32)
    a = global_abstraction(pos, feats, widths, params)
    b = global_abstraction(pos + np.array([5.0, -3.0, 2.0]), feats, widths, params)
    assert a.shape == (12,)
    assert np.allclose(a, b, atol=1e-5)


def test_feature_propagate_inverse_distance_frozen():
    coarse = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    cf = np.array([[0.0], [1.0]], np.float32)
    fine = np.array([[0.25, 0, 0], [0.5, 0, 0]])
    out = feature_propagate(coarse, cf, fine)
    # weights 1/0.25 vs 1/0.75 normalize to (0.75, 0.25)
    assert np.allclose(out[:, 0], [0.25, 0.5], atol=1e-7)


def test_feature_propagate_exact_match_copies():
    rng = np.random.default_rng(4)
    coarse = rng.uniform(0, 1, (10, 3))
    cf = rng.normal(size=(10, 5)).astype(np.float32)
    fine = np.vstack([coarse[3], coarse[7] + 1e-12])
    out = feature_propagate(coarse, cf, fine)
    assert np.array_equal(out[0], cf[3])
    assert np.array_equal(out[1], cf[7])


def test_feature_propagate_fewer_than_three_coarse():
    coarse = np.array([[0.0, 0, 0]])
    cf = np.array([[2.5]], np.float32)
    out = feature_propagate(coarse, cf, np.array([[4.0, 4, 4]]))
    assert np.allclose(out, [[2.5]])


SMALL = EncoderConfig(
    stages=(
        SAStage(32, (0.2, 0.4), 8, ((8, 16), (8, 16))),
        SAStage(8, (0.4, 0.8), 8, ((16, 32), (16, 32))),
    ),
    global_mlp=(32, 48),
    sparsity_dim=4,
)


def test_encoder_embedding_shape_and_determinism():
    params = init_encoder_params(SMALL, seed=0)
    rng = np.random.default_rng(5)
    obs = _obs_from_points(rng.uniform(0, 2, (120, 3)), sparsity_bin=2)
    e1 = encode_observation(obs, params, SMALL)
    e2 = encode_observation(obs, params, SMALL)
    assert e1.shape == (48 + 4,)
    assert e1.dtype == np.float32
    assert np.array_equal(e1, e2)


def test_encoder_permutation_invariant():
    params = init_encoder_params(SMALL, seed=1)
    rng = np.random.default_rng(6)
    pos = rng.uniform(0, 2, (150, 3)).astype(np.float32)
    colors = rng.integers(0, 256, (150, 3)).astype(np.uint8)
    perm = rng.permutation(150)
    a = encode_observation(_obs_from_points(pos, colors, 1), params, SMALL)
    b = encode_observation(_obs_from_points(pos[perm], colors[perm], 1), params, SMALL)
    assert np.array_equal(a, b)


def test_encoder_empty_observation():
    params = init_encoder_params(SMALL, seed=2)
    obs = _obs_from_points(np.empty((0, 3), np.float32), np.empty((0, 3), np.uint8), 0)
    e = encode_observation(obs, params, SMALL)
    assert e.shape == (52,)
    assert np.all(e[:48] == 0.0)
    assert np.array_equal(e[48:], params["sparsity.table"][0])


def test_encoder_sparsity_bin_changes_embedding_tail():
    params = init_encoder_params(SMALL, seed=3)
    rng = np.random.default_rng(7)
    pos = rng.uniform(0, 2, (60, 3))
    a = encode_observation(_obs_from_points(pos, sparsity_bin=0), params, SMALL)
    b = encode_observation(_obs_from_points(pos, sparsity_bin=3), params, SMALL)
    assert np.array_equal(a[:48], b[:48])
    assert not np.array_equal(a[48:], b[48:])


def test_default_config_dimensions():
    cfg = EncoderConfig()
    assert cfg.embedding_dim == 1056
    params = init_encoder_params(cfg, seed=0)
    assert params["sa1.r0.l0.W"].shape == (32, 6)  # 3 rel-xyz + 3 rgb
    assert params["sa2.r0.l0.W"].shape == (64, 3 + 64 + 128)
    assert params["sa3.r1.l5.W"].shape == (512, 256)
    assert params["global.l2.W"].shape == (1024, 512)
    assert params["sparsity.table"].shape == (5, 32)
    p2 = init_encoder_params(cfg, seed=0)
    assert all(np.array_equal(params[k], p2[k]) for k in params)


def test_full_encoder_on_rendered_observation():
    from eqa_forge.env_model import EnvGenSpec, generate_environment
    from eqa_forge.pc_render import RenderConfig, Renderer

    env = generate_environment(EnvGenSpec(density=120.0), seed=41)
    obs = Renderer(env, RenderConfig(max_points=2048)).render(Camera((1.5, 1.5, 1.4), yaw=0.9))
    cfg = EncoderConfig()
    emb = encode_observation(obs, init_encoder_params(cfg, seed=0), cfg)
    assert emb.shape == (1056,)
    assert np.isfinite(emb).all()
    assert np.any(emb[:1024] != 0.0)
