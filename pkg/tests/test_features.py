"""Step feature extraction: clearance probes, visibility gating, one-hots."""

import math

import numpy as np
import pytest

from eqa_forge.env_model import (
    OBJECT_CATEGORIES,
    EnvGenSpec,
    OccupancyGrid,
    generate_environment,
)
from eqa_forge.episodes import EpisodeBuilder, generate_questions
from eqa_forge.features import (
    ACTIONS,
    FeatureConfig,
    FeatureExtractor,
    action_index,
    action_one_hot,
    encode_actions,
    featurize_episodes,
    grid_clearance,
)
from eqa_forge.geometry import wrap_angle

SPEC = EnvGenSpec(density=150.0)


@pytest.fixture(scope="module")
def envs():
    return [generate_environment(SPEC, seed) for seed in range(6)]


@pytest.fixture(scope="module")
def questions(envs):
    return generate_questions(envs)


@pytest.fixture(scope="module")
def setup(envs, questions):
    env = envs[3]
    question = next(q for q in questions if q.env_id == env.id)
    builder = EpisodeBuilder(env)
    episode = builder.generate_episode(question, 0)
    return builder, question, episode


def test_action_order_and_one_hots():
    assert ACTIONS == "FLRS"
    assert [action_index(a) for a in "FLRS"] == [0, 1, 2, 3]
    assert np.array_equal(action_one_hot("R"), [0.0, 0.0, 1.0, 0.0])
    assert np.array_equal(action_one_hot(None), np.zeros(4))
    assert np.array_equal(encode_actions("FLRS"), [0, 1, 2, 3])
    with pytest.raises(ValueError):
        action_index("X")
    with pytest.raises(ValueError):
        action_index("FF")


def test_feature_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(mode="rgb")
    with pytest.raises(ValueError):
        FeatureConfig(clearance_range=0.0)
    with pytest.raises(ValueError):
        FeatureConfig(bearing_bins=0)


def _wall_grid():
    # 2 m x 2 m free patch with one blocked column at x in [1.0, 1.1)
    cells = np.zeros((20, 20), bool)
    cells[:, 10] = True
    return OccupancyGrid((0.0, 0.0), 0.1, cells, 0.0)


def test_grid_clearance_hand_cases():
    grid = _wall_grid()
    assert grid_clearance(grid, 0.55, 0.55, 0.0, 3.0) == pytest.approx(0.45)
    # out of bounds counts as blocked; x=0.0 still lies in column 0, so
    # the exit registers one half-cell sample later
    assert grid_clearance(grid, 0.55, 0.55, math.pi, 3.0) == pytest.approx(0.60)
    assert grid_clearance(grid, 0.55, 0.55, 0.5 * math.pi, 3.0) == pytest.approx(1.45)
    # cap wins when nothing is hit sooner
    assert grid_clearance(grid, 0.55, 0.55, 0.5 * math.pi, 0.3) == pytest.approx(0.3)
    # starting inside a wall and staying there reports the first sample
    assert grid_clearance(grid, 1.05, 0.55, 0.5 * math.pi, 3.0) == pytest.approx(0.05)
    # whereas shooting straight out of the thin wall runs to the far edge
    assert grid_clearance(grid, 1.05, 0.55, 0.0, 3.0) == pytest.approx(0.95)


def test_dims_per_mode(setup):
    builder, question, _ = setup
    assert FeatureExtractor(builder, question).dim == 21
    assert FeatureExtractor(builder, question, FeatureConfig(mode="embedding")).dim == 1060
    with_cat = FeatureConfig(category_one_hot=True)
    assert FeatureExtractor(builder, question, with_cat).dim == 21 + len(OBJECT_CATEGORIES)


def test_step_layout_and_prev_action(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question)
    state = episode.expert_states[0]
    vec = fx.step(state, None)
    assert vec.shape == (21,)
    assert np.isfinite(vec).all()
    assert np.array_equal(vec[-4:], np.zeros(4))
    # exactly one sparsity bin, matching the observation
    obs = fx.observe(state)
    assert vec[:5].sum() == 1.0
    assert vec[obs.sparsity_bin] == 1.0
    with_prev = fx.step(state, "L")
    assert np.array_equal(with_prev[-4:], [0.0, 1.0, 0.0, 0.0])
    assert np.array_equal(with_prev[:-4], vec[:-4])


def test_clearances_match_grid_probe(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question)
    rng_cap = fx.config.clearance_range
    for state in episode.expert_states[::7]:
        vec = fx.step(state, None)
        expect = [
            grid_clearance(builder.grid, state.x, state.y, state.heading, rng_cap),
            grid_clearance(builder.grid, state.x, state.y, state.heading + 0.5 * math.pi, rng_cap),
            grid_clearance(builder.grid, state.x, state.y, state.heading - 0.5 * math.pi, rng_cap),
        ]
        assert np.allclose(vec[5:8] * rng_cap, expect)
        assert (vec[5:8] >= 0).all() and (vec[5:8] <= 1).all()


def test_visibility_gates_bearing(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question)
    center = builder.env.object_by_id(question.target_object_id).box.center()
    saw_visible = saw_hidden = False
    for state in episode.expert_states:
        vec = fx.step(state, None)
        obs = fx.observe(state)
        visible = bool(np.any(obs.cloud.semantic == np.uint32(question.target_object_id)))
        assert vec[8] == (1.0 if visible else 0.0)
        bearing = vec[9:17]
        if not visible:
            saw_hidden = True
            assert not bearing.any()
        else:
            saw_visible = True
            assert bearing.sum() == 1.0
            rel = wrap_angle(
                math.atan2(center[1] - state.y, center[0] - state.x) - state.heading
            )
            k = min(7, int((rel + math.pi) / (math.pi / 4.0)))
            assert bearing[k] == 1.0
    assert saw_visible  # the expert ends staring at the target
    assert saw_hidden or len(episode.expert_states) < 5


def test_facing_target_lands_in_center_bin(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question)
    center = builder.env.object_by_id(question.target_object_id).box.center()
    final = episode.expert_states[-1]
    facing = type(final)(final.x, final.y, math.atan2(center[1] - final.y, center[0] - final.x))
    vec = fx.step(facing, None)
    assert vec[8] == 1.0
    # relative bearing ~0 falls in the bin covering [0, pi/4)
    assert vec[9 + 4] == 1.0


def test_sequence_matches_stepwise(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question)
    seq = fx.sequence(episode)
    assert seq.shape == (len(episode.expert_actions), 21)
    assert np.isfinite(seq).all()
    for t in (0, 1, len(seq) - 1):
        prev = episode.expert_actions[t - 1] if t > 0 else None
        assert np.array_equal(seq[t], fx.step(episode.expert_states[t], prev))
        assert np.array_equal(seq[t, -4:], action_one_hot(prev))


def test_embedding_mode_deterministic(setup):
    builder, question, episode = setup
    state = episode.expert_states[0]
    a = FeatureExtractor(builder, question, FeatureConfig(mode="embedding"))
    b = FeatureExtractor(builder, question, FeatureConfig(mode="embedding"))
    va, vb = a.step(state, "F"), b.step(state, "F")
    assert va.shape == (1060,)
    assert np.isfinite(va).all()
    assert np.array_equal(va, vb)
    assert np.array_equal(va[-4:], [1.0, 0.0, 0.0, 0.0])
    other = FeatureExtractor(builder, question, FeatureConfig(mode="embedding", encoder_seed=9))
    assert not np.array_equal(va[:-4], other.step(state, "F")[:-4])


def test_category_one_hot_slot(setup):
    builder, question, episode = setup
    fx = FeatureExtractor(builder, question, FeatureConfig(category_one_hot=True))
    vec = fx.step(episode.expert_states[0], None)
    cat_block = vec[17 : 17 + len(OBJECT_CATEGORIES)]
    assert cat_block.sum() == 1.0
    idx = OBJECT_CATEGORIES.index(
        builder.env.object_by_id(question.target_object_id).category
    )
    assert cat_block[idx] == 1.0


def test_extractor_rejects_foreign_question(envs, questions, setup):
    builder = setup[0]
    foreign = next(q for q in questions if q.env_id == envs[0].id)
    with pytest.raises(ValueError):
        FeatureExtractor(builder, foreign)


def test_sequence_rejects_foreign_episode(envs, questions, setup):
    builder, question, _ = setup
    fx = FeatureExtractor(builder, question)
    other_q = next(
        q for q in questions if q.env_id == builder.env.id and q != question
    )
    other_ep = builder.generate_episode(other_q, 0)
    with pytest.raises(ValueError):
        fx.sequence(other_ep)


def test_featurize_episodes(envs, setup):
    _, _, episode = setup
    pairs = featurize_episodes(envs, [episode, episode])
    assert len(pairs) == 2
    x, y = pairs[0]
    assert x.shape == (len(episode.expert_actions), 21)
    assert np.array_equal(y, encode_actions(episode.expert_actions))
    assert np.array_equal(pairs[1][0], x)
    with pytest.raises(ValueError):
        featurize_episodes(envs[:2], [episode])  # env 3 not supplied
