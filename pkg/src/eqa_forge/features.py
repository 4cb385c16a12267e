"""Per-step policy features for behavior cloning.

A step is described either by a handcrafted vector (render sparsity,
grid clearances, target visibility and bearing) or by the point-cloud
embedding, both ending in a previous-action one-hot. The handcrafted
variant is the training default; the embedding variant exercises the
encoder pipeline with fixed seeded weights. Question conditioning, when
enabled, is a target-category one-hot appended to either variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env_model import OBJECT_CATEGORIES, Environment, OccupancyGrid
from .episodes import Episode, EpisodeBuilder, EpisodeConfig, Question
from .geometry import wrap_angle
from .pathfind import AgentState
from .pc_render import Observation
from .pointnet_ops import EncoderConfig, encode_observation, init_encoder_params

ACTIONS = "FLRS"
N_ACTIONS = len(ACTIONS)


def action_index(action: str) -> int:
    i = ACTIONS.find(action)
    if i < 0 or len(action) != 1:
        raise ValueError(f"unknown action {action!r}")
    return i


def action_one_hot(action: str | None) -> np.ndarray:
    """One-hot over F/L/R/S; None (no previous action yet) gives zeros."""
    vec = np.zeros(N_ACTIONS)
    if action is not None:
        vec[action_index(action)] = 1.0
    return vec


def encode_actions(actions) -> np.ndarray:
    """Action tokens -> int64 label indices in F/L/R/S order."""
    return np.array([action_index(a) for a in actions], np.int64)


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "handcrafted"  # or "embedding"
    clearance_range: float = 3.0  # raycast cap, metres
    bearing_bins: int = 8
    category_one_hot: bool = False  # append target-category one-hot
    encoder_seed: int = 7  # embedding weights are fixed, not trained
    render_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("handcrafted", "embedding"):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.clearance_range <= 0:
            raise ValueError("clearance_range must be positive")
        if self.bearing_bins < 1:
            raise ValueError("bearing_bins must be >= 1")


def grid_clearance(grid: OccupancyGrid, x: float, y: float, angle: float, max_range: float) -> float:
    """Distance along a ray before the first blocked or out-of-bounds cell.

    Samples at half-cell spacing, so the answer is resolution-limited;
    starting inside a blocked cell returns the first sample distance,
    not zero.
    """
    step = 0.5 * grid.resolution
    t = step * np.arange(1, int(max_range / step) + 1)
    ix = np.floor((x + np.cos(angle) * t - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((y + np.sin(angle) * t - grid.origin[1]) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    blocked = ~inside
    blocked[inside] = grid.cells[iy[inside], ix[inside]]
    hit = np.flatnonzero(blocked)
    return float(t[hit[0]]) if len(hit) else max_range


class FeatureExtractor:
    """Features for one (environment, question) pair.

    Visibility and sparsity read the agent's actual observation, so a
    point cap that drops every target point also hides the target from
    the features. Clearances probe the true-radius occupancy grid.
    """

    def __init__(
        self,
        builder: EpisodeBuilder,
        question: Question,
        config: FeatureConfig | None = None,
    ):
        if question.env_id != builder.env.id:
            raise ValueError(f"question is for {question.env_id}, builder wraps {builder.env.id}")
        self.builder = builder
        self.question = question
        self.config = config or FeatureConfig()
        self._target = np.uint32(question.target_object_id)
        self._center = builder.env.object_by_id(question.target_object_id).box.center()
        self._params = None
        if self.config.mode == "embedding":
            self._encoder_config = EncoderConfig()
            self._params = init_encoder_params(self._encoder_config, self.config.encoder_seed)
        self._category_index = OBJECT_CATEGORIES.index(
            builder.env.object_by_id(question.target_object_id).category
        )

    @property
    def dim(self) -> int:
        c = self.config
        if c.mode == "handcrafted":
            base = self.builder.config.render.sparsity_bins + 3 + 1 + c.bearing_bins
        else:
            base = self._encoder_config.global_mlp[-1] + self._params["sparsity.table"].shape[1]
        if c.category_one_hot:
            base += len(OBJECT_CATEGORIES)
        return base + N_ACTIONS

    def observe(self, state: AgentState) -> Observation:
        return self.builder.renderer.render(self.builder.camera_at(state), self.config.render_seed)

    def step(
        self,
        state: AgentState,
        prev_action: str | None,
        obs: Observation | None = None,
    ) -> np.ndarray:
        """Feature vector for one decision point. Renders unless obs is given."""
        if obs is None:
            obs = self.observe(state)
        c = self.config
        if c.mode == "handcrafted":
            parts = [self._handcrafted(state, obs)]
        else:
            parts = [encode_observation(obs, self._params, self._encoder_config).astype(np.float64)]
        if c.category_one_hot:
            cat = np.zeros(len(OBJECT_CATEGORIES))
            cat[self._category_index] = 1.0
            parts.append(cat)
        parts.append(action_one_hot(prev_action))
        return np.concatenate(parts)

    def _handcrafted(self, state: AgentState, obs: Observation) -> np.ndarray:
        c = self.config
        bins = self.builder.config.render.sparsity_bins
        grid = self.builder.grid
        rng = c.clearance_range

        sparsity = np.zeros(bins)
        sparsity[obs.sparsity_bin] = 1.0

        clear = np.array(
            [
                grid_clearance(grid, state.x, state.y, state.heading, rng),
                grid_clearance(grid, state.x, state.y, state.heading + 0.5 * math.pi, rng),
                grid_clearance(grid, state.x, state.y, state.heading - 0.5 * math.pi, rng),
            ]
        ) / rng

        visible = bool(np.any(obs.cloud.semantic == self._target))
        bearing = np.zeros(c.bearing_bins)
        if visible:
            # bins partition (-pi, pi]; an unseen target contributes no
            # bearing, otherwise features would leak oracle knowledge
            rel = wrap_angle(
                math.atan2(self._center[1] - state.y, self._center[0] - state.x) - state.heading
            )
            k = min(c.bearing_bins - 1, int((rel + math.pi) / (2.0 * math.pi / c.bearing_bins)))
            bearing[k] = 1.0

        return np.concatenate([sparsity, clear, [1.0 if visible else 0.0], bearing])

    def sequence(self, episode: Episode) -> np.ndarray:
        """(T, dim) features, one row per expert action including the stop."""
        if episode.question != self.question:
            raise ValueError("episode was generated for a different question")
        rows = []
        for t in range(len(episode.expert_actions)):
            prev = episode.expert_actions[t - 1] if t > 0 else None
            rows.append(self.step(episode.expert_states[t], prev))
        return np.stack(rows)


def featurize_episodes(
    envs,
    episodes,
    config: FeatureConfig | None = None,
    episode_config: EpisodeConfig | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Episodes -> [(features (T, dim), labels (T,))], builders cached per env."""
    by_id: dict[str, Environment] = {e.id: e for e in envs}
    builders: dict[str, EpisodeBuilder] = {}
    extractors: dict[Question, FeatureExtractor] = {}
    out = []
    for ep in episodes:
        if ep.env_id not in by_id:
            raise ValueError(f"no environment supplied for {ep.env_id}")
        if ep.env_id not in builders:
            builders[ep.env_id] = EpisodeBuilder(by_id[ep.env_id], episode_config)
        key = ep.question
        if key not in extractors:
            extractors[key] = FeatureExtractor(builders[ep.env_id], ep.question, config)
        out.append((extractors[key].sequence(ep), encode_actions(ep.expert_actions)))
    return out
