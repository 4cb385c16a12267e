"""Question and expert-episode dataset generation.

Views of a target object are scored by the IoU between the pixels its
visible points cover and a fixed centered bounding box; the best-scoring
free pose near the object anchors each episode. Questions come from
three templates (location, color, color in room) gated by in-environment
uniqueness and a cross-environment answer-entropy filter. An episode
pairs a seeded random spawn with an expert route to the best view and a
cache of start-offset geodesic distances.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .env_model import Environment, occupancy_grid
from .geometry import wrap_angle, wrap_heading
from .pathfind import (
    AgentState,
    ControllerError,
    MotionConfig,
    follow_path,
    geodesic_distance,
    lazy_theta_star,
)
from .pc_render import (
    Camera,
    Observation,
    RenderConfig,
    Renderer,
    camera_coords,
    pixel_coords,
    raster_occlusion_filter,
)

log = logging.getLogger(__name__)

QUESTION_TYPES = ("location", "color", "color_room")

# Fixed view-quality bounding box in normalized image coordinates,
# y measured downward: top-left (0.25, 0.25), width 0.5, height 0.6.
_BBOX_X = (0.25, 0.75)
_BBOX_Y = (0.25, 0.85)

# z threshold for pure projections; rendered points already sit at or
# beyond the camera near plane.
_NEAR = 1e-9

_SPAWN_SALT = 0x45505350
_SPLIT_SALT = 0x53504C54


class EpisodeError(RuntimeError):
    """Raised when no episode can be built for a (question, seed) pair."""


# ---------------- view scoring ----------------

@dataclass(frozen=True)
class Question:
    """One templated question grounded in a single environment."""

    qtype: str
    template_text: str
    target_object_id: int
    target_room_id: int  # meaningful for color_room only; 0 otherwise
    answer: str
    env_id: str


@dataclass
class Episode:
    env_id: str
    question: Question
    spawn_state: AgentState
    expert_actions: str
    expert_states: list[AgentState]
    best_view: AgentState
    best_view_iou: float
    d0_cache: dict[int, float]  # start offset (actions from the end) -> meters


@dataclass(frozen=True)
class EpisodeConfig:
    """Knobs for view search, spawning and dataset assembly."""

    grid_resolution: float = 0.05
    agent_radius: float = 0.1
    nav_margin: float = 0.15  # extra inflation for planning only
    camera_height: float = 1.0
    candidate_radius: float = 1.5
    pos_step: float = 0.25
    ang_step_deg: float = 30.0
    entropy_threshold: float = 0.5
    d0_offsets: tuple[int, ...] = (10, 30, 50)
    episodes_per_question: int = 15
    retry_budget: int = 10
    bbox_x: tuple[float, float] = _BBOX_X
    bbox_y: tuple[float, float] = _BBOX_Y
    motion: MotionConfig = MotionConfig()
    render: RenderConfig = RenderConfig()

    def __post_init__(self):
        if self.candidate_radius <= 0 or self.pos_step <= 0 or self.ang_step_deg <= 0:
            raise ValueError("candidate_radius, pos_step and ang_step_deg must be positive")
        if not 0.0 <= self.entropy_threshold <= 1.0:
            raise ValueError("entropy_threshold must lie in [0, 1]")
        for span in (self.bbox_x, self.bbox_y):
            if not 0.0 <= span[0] < span[1] <= 1.0:
                raise ValueError(f"bbox span {span} must satisfy 0 <= lo < hi <= 1")

    @property
    def ang_step(self) -> float:
        return math.radians(self.ang_step_deg)


def _bbox_span(n: int, lo: float, hi: float) -> tuple[int, int]:
    """Index range [first, last] of pixels whose centers fall in [lo, hi]."""
    first = math.ceil(lo * n - 0.5)
    last = math.floor(hi * n - 0.5)
    return max(0, first), min(n - 1, last)


def _mask_bbox_iou(px, py, width: int, height: int, bbox_x=_BBOX_X, bbox_y=_BBOX_Y) -> float:
    if len(px) == 0:
        return 0.0
    ids = np.unique(py.astype(np.int64) * width + px)
    x = ids % width
    y = ids // width
    x0, x1 = _bbox_span(width, *bbox_x)
    y0, y1 = _bbox_span(height, *bbox_y)
    box_area = (x1 - x0 + 1) * (y1 - y0 + 1)
    inter = int(np.count_nonzero((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)))
    return inter / (len(ids) + box_area - inter)


def view_iou(
    obs: Observation,
    target_id: int,
    width: int = 160,
    height: int = 120,
    bbox_x: tuple[float, float] = _BBOX_X,
    bbox_y: tuple[float, float] = _BBOX_Y,
) -> float:
    """IoU between the target's pixel mask and the fixed centered bbox.

    Points labeled with target_id are projected onto a width x height
    pixel grid; the occupied pixel set is compared against the box
    spanning x in [0.25, 0.75] and y in [0.25, 0.85] of the image
    (y down), with membership decided at pixel centers. Returns 0.0 when
    no target point is visible. Camera coordinates are recomputed in
    float64 from world positions so the score is independent of the
    observation's float32 storage.
    """
    mask = obs.cloud.semantic == np.uint32(target_id)
    if not mask.any():
        return 0.0
    cam = camera_coords(obs.camera, obs.cloud.positions[mask])
    px, py, ok = pixel_coords(obs.camera, cam, width, height, _NEAR)
    return _mask_bbox_iou(px[ok], py[ok], width, height, bbox_x, bbox_y)


def _box_outside_frustum(camera: Camera, box, near: float) -> bool:
    """Conservative rejection: True only when every box corner lies
    outside one frustum plane (target points lie on the box surface)."""
    lo, hi = box.lo, box.hi
    corners = np.array(
        [(x, y, z) for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    cam = camera_coords(camera, corners)
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    th, tv = camera.tan_h, camera.tan_v
    return bool(
        (z < near).all()
        or (x > z * th).all()
        or (x < -z * th).all()
        or (y > z * tv).all()
        or (y < -z * tv).all()
    )


# ---------------- questions ----------------

def _questions_for(env: Environment) -> list[Question]:
    cat_count = Counter(o.category for o in env.objects)
    room_type = {r.room_id: r.room_type for r in env.rooms}
    pair_count = Counter((o.category, room_type[o.room_id]) for o in env.objects)
    out = []
    for obj in env.objects:
        rt = room_type[obj.room_id]
        if cat_count[obj.category] == 1:
            out.append(
                Question(
                    "location",
                    f"What room is the {obj.category} located in?",
                    obj.object_id,
                    0,
                    rt,
                    env.id,
                )
            )
            out.append(
                Question(
                    "color",
                    f"What color is the {obj.category}?",
                    obj.object_id,
                    0,
                    obj.color_name,
                    env.id,
                )
            )
        if pair_count[(obj.category, rt)] == 1:
            out.append(
                Question(
                    "color_room",
                    f"What color is the {obj.category} in the {rt}?",
                    obj.object_id,
                    obj.room_id,
                    obj.color_name,
                    env.id,
                )
            )
    return out


def answer_entropy(answers) -> float:
    """Entropy of the empirical answer distribution, normalized to [0, 1].

    Natural-log entropy divided by log of the number of distinct
    answers; a single distinct answer has entropy 0 by convention.
    """
    counts = np.asarray(sorted(Counter(answers).values()), np.float64)
    if len(counts) < 2:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(len(counts)))


def generate_questions(envs, entropy_threshold: float = 0.5) -> list[Question]:
    """Instantiate templates per environment, then filter by answer entropy.

    A category must appear exactly once in its environment for location
    and color questions; color_room only needs the (category, room type)
    pair to be unique. Questions sharing template text are pooled across
    environments and dropped when the normalized entropy of their answer
    distribution falls below the threshold, since a peaky answer prior
    makes the question solvable without perception.
    """
    envs = list(envs)
    if len(envs) < 2:
        raise ValueError("need at least two environments for entropy statistics")
    questions = [q for env in envs for q in _questions_for(env)]
    answers = defaultdict(list)
    for q in questions:
        answers[q.template_text].append(q.answer)
    kept = {t for t, a in answers.items() if answer_entropy(a) >= entropy_threshold}
    return [q for q in questions if q.template_text in kept]


# ---------------- episode assembly ----------------

class EpisodeBuilder:
    """Per-environment caches shared across view search and episodes.

    Planning runs on a grid inflated by nav_margin beyond the agent
    radius while step legality uses the true-radius grid, giving the
    path follower slack near walls. Spawns and candidate views come from
    the planning grid, so every episode starts and ends on cells the
    expert can actually route between.
    """

    def __init__(self, env: Environment, config: EpisodeConfig | None = None):
        self.env = env
        self.config = config or EpisodeConfig()
        c = self.config
        self.grid = occupancy_grid(env, c.grid_resolution, c.agent_radius)
        self.nav_grid = occupancy_grid(env, c.grid_resolution, c.agent_radius + c.nav_margin)
        self.renderer = Renderer(env, c.render)
        self._free = np.argwhere(~self.nav_grid.cells)
        self._n_headings = max(1, round(2.0 * math.pi / c.motion.turn_angle))
        self._targets: dict[int, np.ndarray] = {}
        self._best: dict[int, tuple[AgentState, float]] = {}

    def camera_at(self, state: AgentState) -> Camera:
        return Camera((state.x, state.y, self.config.camera_height), state.heading)

    def _target_points(self, target_id: int) -> np.ndarray:
        if target_id not in self._targets:
            self.env.object_by_id(target_id)  # fail fast on unknown ids
            sem = self.env.global_cloud.semantic
            self._targets[target_id] = self.env.global_cloud.positions[sem == np.uint32(target_id)]
        return self._targets[target_id]

    def score_view(self, state: AgentState, target_id: int) -> float:
        """view_iou the agent would measure at this pose.

        Projects only the target's points against the pose's depth
        buffer, so the score ignores the render point cap and does not
        depend on cloud subsampling. Matches view_iou on an uncapped
        rendered observation exactly.
        """
        cfg = self.config.render
        camera = self.camera_at(state)
        if _box_outside_frustum(camera, self.env.object_by_id(target_id).box, cfg.near):
            return 0.0
        pts = self._target_points(target_id)
        if len(pts) == 0:
            return 0.0
        cam = camera_coords(camera, pts)
        z = cam[:, 2]
        keep = (
            (z >= cfg.near)
            & (np.abs(cam[:, 0]) <= z * camera.tan_h)
            & (np.abs(cam[:, 1]) <= z * camera.tan_v)
        )
        if not keep.any():
            return 0.0
        cam = cam[keep]
        vis = raster_occlusion_filter(self.renderer.depth(camera), cam, cfg.epsilon)
        if not vis.any():
            return 0.0
        px, py, ok = pixel_coords(camera, cam[vis], cfg.raster_width, cfg.raster_height, _NEAR)
        return _mask_bbox_iou(
            px[ok], py[ok], cfg.raster_width, cfg.raster_height,
            self.config.bbox_x, self.config.bbox_y,
        )

    def candidate_views(self, target_id, radius=None, pos_step=None, ang_step=None):
        """Scored free poses near the target, best first.

        Positions lie on a pos_step lattice anchored at the environment
        origin (growing the radius only adds poses) and must be free on
        the planning grid; headings step by ang_step. Sorted by
        descending score, then distance to the target, then heading,
        then (x, y).
        """
        c = self.config
        radius = c.candidate_radius if radius is None else radius
        pos_step = c.pos_step if pos_step is None else pos_step
        ang_step = c.ang_step if ang_step is None else ang_step
        if radius <= 0 or pos_step <= 0 or ang_step <= 0:
            raise ValueError("radius, pos_step and ang_step must be positive")
        cx, cy, _ = self.env.object_by_id(target_id).box.center()
        ox, oy = self.env.bounds.lo[0], self.env.bounds.lo[1]
        n_head = max(1, round(2.0 * math.pi / ang_step))
        headings = [wrap_heading(m * ang_step) for m in range(n_head)]
        scored = []
        for iy in range(math.ceil((cy - radius - oy) / pos_step),
                        math.floor((cy + radius - oy) / pos_step) + 1):
            y = oy + iy * pos_step
            for ix in range(math.ceil((cx - radius - ox) / pos_step),
                            math.floor((cx + radius - ox) / pos_step) + 1):
                x = ox + ix * pos_step
                d = math.hypot(x - cx, y - cy)
                if d > radius or not self.nav_grid.is_free(x, y):
                    continue
                for h in headings:
                    state = AgentState(x, y, h)
                    scored.append((state, self.score_view(state, target_id), d))
        scored.sort(key=lambda t: (-t[1], t[2], t[0].heading, t[0].x, t[0].y))
        return [(state, iou) for state, iou, _ in scored]

    def best_view(self, target_id: int) -> tuple[AgentState, float]:
        """Highest-scoring candidate pose, cached per target."""
        if target_id not in self._best:
            cands = self.candidate_views(target_id)
            if not cands:
                raise EpisodeError(
                    f"no free viewpoints within {self.config.candidate_radius} m "
                    f"of object {target_id}"
                )
            self._best[target_id] = cands[0]
        return self._best[target_id]

    def _spawn_state(self, question: Question, spawn_seed: int) -> AgentState:
        if len(self._free) == 0:
            raise EpisodeError("environment has no free spawn cells")
        key = [
            self.env.seed & 0xFFFFFFFF,
            QUESTION_TYPES.index(question.qtype),
            question.target_object_id,
            question.target_room_id,
            int(spawn_seed) & 0xFFFFFFFF,
            _SPAWN_SALT,
        ]
        rng = np.random.default_rng(np.random.SeedSequence(key))
        iy, ix = self._free[int(rng.integers(len(self._free)))]
        x, y = self.nav_grid.center_of(int(ix), int(iy))
        k = int(rng.integers(self._n_headings))
        return AgentState(x, y, wrap_heading(k * self.config.motion.turn_angle))

    def _expert_traverse(self, spawn: AgentState, goal: AgentState):
        """Route spawn -> goal position, align to goal heading, stop."""
        m = self.config.motion
        path = lazy_theta_star(self.nav_grid, spawn.position, goal.position)
        if path is None:
            raise EpisodeError("best view unreachable from spawn")
        try:
            actions, states = follow_path(self.grid, path, spawn, m, plan_grid=self.nav_grid)
        except ControllerError as exc:
            raise EpisodeError(f"expert controller failed: {exc}") from exc
        actions, states = actions[:-1], states[:-1]  # realign before the stop
        state = states[-1]
        n = round(wrap_angle(goal.heading - state.heading) / m.turn_angle)
        for _ in range(abs(n)):
            state = replace(state, heading=wrap_heading(state.heading + math.copysign(m.turn_angle, n)))
            actions += "L" if n > 0 else "R"
            states.append(state)
        return actions + "S", states + [state]

    def generate_episode(self, question: Question, spawn_seed: int) -> Episode:
        """Spawn (seeded) and route the expert to the question's best view.

        Raises EpisodeError when no viewpoint sees the target or the
        best view is unreachable from the sampled spawn.
        """
        if question.env_id != self.env.id:
            raise ValueError(f"question is for {question.env_id}, builder wraps {self.env.id}")
        best_state, best_iou = self.best_view(question.target_object_id)
        if best_iou <= 0.0:
            raise EpisodeError(f"no viewpoint sees object {question.target_object_id}")
        spawn = self._spawn_state(question, spawn_seed)
        actions, states = self._expert_traverse(spawn, best_state)
        d0 = {}
        for off in self.config.d0_offsets:
            if len(actions) >= off:
                pos = states[len(actions) - off].position
                d0[off] = geodesic_distance(self.grid, pos, best_state.position)
        return Episode(
            env_id=self.env.id,
            question=question,
            spawn_state=spawn,
            expert_actions=actions,
            expert_states=states,
            best_view=best_state,
            best_view_iou=float(np.float32(best_iou)),
            d0_cache=d0,
        )


def candidate_views(env, target_id, radius=None, pos_step=None, ang_step=None, config=None):
    """One-shot candidate scan; build an EpisodeBuilder for repeated use."""
    return EpisodeBuilder(env, config).candidate_views(target_id, radius, pos_step, ang_step)


def best_view(env, target_id, config=None) -> tuple[AgentState, float]:
    """One-shot best view; build an EpisodeBuilder for repeated use."""
    return EpisodeBuilder(env, config).best_view(target_id)


def generate_episode(env, question: Question, spawn_seed: int, config=None) -> Episode:
    """One-shot episode; build an EpisodeBuilder for repeated use."""
    return EpisodeBuilder(env, config).generate_episode(question, spawn_seed)


# ---------------- dataset files ----------------

def save_questions(questions, path) -> None:
    """Write questions as a JSON array (sorted keys, stable bytes)."""
    doc = [asdict(q) for q in questions]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_questions(path) -> list[Question]:
    return [Question(**d) for d in json.loads(Path(path).read_text())]



@dataclass
class DatasetManifest:
    """Split assignment and dataset-level statistics.

    inflection_ratio stays None until a training run computes it from
    the train split's action statistics.
    """

    splits: dict[str, list[str]]
    episode_counts: dict[str, int]
    answer_vocabulary: list[str]
    inflection_ratio: float | None = None
    config_hash: str | None = None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        return DatasetManifest(**json.loads(Path(path).read_text()))


def episode_to_record(ep: Episode) -> dict:
    """JSON-ready dict; inverse of episode_from_record."""
    return {
        "env_id": ep.env_id,
        "question": asdict(ep.question),
        "spawn": [ep.spawn_state.x, ep.spawn_state.y, ep.spawn_state.heading],
        "actions": ep.expert_actions,
        "states": [[s.x, s.y, s.heading] for s in ep.expert_states],
        "best_view": [ep.best_view.x, ep.best_view.y, ep.best_view.heading],
        "best_view_iou": ep.best_view_iou,
        "d0": {str(k): v for k, v in ep.d0_cache.items()},
    }


def episode_from_record(rec: dict) -> Episode:
    return Episode(
        env_id=rec["env_id"],
        question=Question(**rec["question"]),
        spawn_state=AgentState(*rec["spawn"]),
        expert_actions=rec["actions"],
        expert_states=[AgentState(*s) for s in rec["states"]],
        best_view=AgentState(*rec["best_view"]),
        best_view_iou=rec["best_view_iou"],
        d0_cache={int(k): float(v) for k, v in rec["d0"].items()},
    )


def load_episodes(path) -> list[Episode]:
    with open(path) as fh:
        return [episode_from_record(json.loads(line)) for line in fh if line.strip()]


def split_environments(env_ids, fractions, seed: int = 0) -> dict[str, list[str]]:
    """Disjoint environment split; fractions must sum to 1.

    Membership comes from a seeded shuffle cut at cumulative-rounded
    boundaries; each split's id list is sorted for stable listings.
    """
    fracs = dict(fractions)
    total = sum(fracs.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"split fractions sum to {total}, expected 1")
    if any(f < 0 for f in fracs.values()):
        raise ValueError("split fractions must be non-negative")
    ids = list(env_ids)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _SPLIT_SALT]))
    rng.shuffle(ids)
    out = {}
    taken = 0
    cum = 0.0
    for name, frac in fracs.items():
        cum += frac
        upto = round(cum * len(ids))
        out[name] = sorted(ids[taken:upto])
        taken = upto
    return out


def _episodes_for_question(builder: EpisodeBuilder, question: Question, n: int):
    """n episodes with spawn seeds 0..; None when the question is skipped."""
    try:
        _, iou = builder.best_view(question.target_object_id)
    except EpisodeError as exc:
        log.warning("skipping %r in %s: %s", question.template_text, builder.env.id, exc)
        return None
    if iou <= 0.0:
        log.warning(
            "skipping %r in %s: target never visible", question.template_text, builder.env.id
        )
        return None
    episodes = []
    seed = 0
    budget = n + builder.config.retry_budget
    while len(episodes) < n and seed < budget:
        try:
            episodes.append(builder.generate_episode(question, seed))
        except EpisodeError as exc:
            log.debug("retrying %s seed %d: %s", builder.env.id, seed, exc)
        seed += 1
    if len(episodes) < n:
        log.warning(
            "skipping %r in %s: only %d/%d episodes built",
            question.template_text, builder.env.id, len(episodes), n,
        )
        return None
    return episodes


# worker context for parallel dataset builds; populated before forking
# so tasks stay small picklable tuples
_DS_CTX: dict = {}


def _dataset_task(item):
    env_id, question = item
    builders = _DS_CTX.setdefault("builders", {})
    if env_id not in builders:
        builders[env_id] = EpisodeBuilder(_DS_CTX["by_id"][env_id], _DS_CTX["config"])
    episodes = _episodes_for_question(builders[env_id], question, _DS_CTX["per_q"])
    if episodes is None:
        return None
    return [episode_to_record(ep) for ep in episodes]


def _run_tasks(task_fn, items, jobs: int):
    """Map task_fn over items, forking jobs workers when asked.

    Results come back in input order either way, so callers see one
    deterministic reduction regardless of scheduling.
    """
    if jobs > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:  # platform without fork: stay sequential
            log.warning("fork unavailable; running %d tasks sequentially", len(items))
        else:
            with ctx.Pool(jobs) as pool:
                return pool.map(task_fn, items)
    return [task_fn(item) for item in items]


def build_dataset(
    envs,
    out_dir,
    episodes_per_question: int | None = None,
    split_spec: dict[str, float] | None = None,
    seed: int = 0,
    config: EpisodeConfig | None = None,
    jobs: int = 1,
    config_hash: str | None = None,
) -> DatasetManifest:
    """Generate, split and write the episode dataset.

    Writes one JSON-lines file per split plus manifest.json. Each kept
    question gets exactly episodes_per_question episodes (spawn seeds
    counted up from 0, failures retried with later seeds up to the
    configured budget); a question that cannot fill its quota is skipped
    whole and logged. Splits never share an environment. jobs > 1
    builds questions in parallel worker processes; output bytes do not
    depend on the worker count.
    """
    config = config or EpisodeConfig()
    per_q = config.episodes_per_question if episodes_per_question is None else int(episodes_per_question)
    spec = {"train": 0.6, "val": 0.2, "test": 0.2} if split_spec is None else split_spec
    envs = list(envs)
    by_id = {e.id: e for e in envs}
    if len(by_id) != len(envs):
        raise ValueError("duplicate environment ids")
    questions = generate_questions(envs, config.entropy_threshold)
    splits = split_environments(sorted(by_id), spec, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [
        (split_name, env_id, q)
        for split_name, env_ids in splits.items()
        for env_id in env_ids
        for q in questions
        if q.env_id == env_id
    ]
    _DS_CTX.clear()
    _DS_CTX.update(by_id=by_id, config=config, per_q=per_q)
    try:
        results = _run_tasks(_dataset_task, [(e, q) for _, e, q in tasks], jobs)
    finally:
        _DS_CTX.clear()

    counts = dict.fromkeys(splits, 0)
    vocab = set()
    files = {name: open(out_dir / f"{name}.jsonl", "w") for name in splits}
    try:
        for (split_name, _, _), records in zip(tasks, results):
            if records is None:
                continue
            for rec in records:
                files[split_name].write(json.dumps(rec, sort_keys=True) + "\n")
                vocab.add(rec["question"]["answer"])
            counts[split_name] += len(records)
    finally:
        for fh in files.values():
            fh.close()
    manifest = DatasetManifest(
        splits=splits,
        episode_counts=counts,
        answer_vocabulary=sorted(vocab),
        inflection_ratio=None,
        config_hash=config_hash,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
