"""Navigation evaluation: resume offsets, rollouts, metrics, reports.

An agent resumes an expert trajectory with 10, 30, or 50 actions left
and navigates until it stops or exhausts the step budget. Rollouts log
executed states, collisions (forward into an obstacle is a no-op that
still counts), and the view IoU of the last five frames; metrics reduce
per (navigator, offset) with percentile-bootstrap confidence intervals.
Question answering is a train-split answer prior, so QA accuracy here is
independent of where the navigator stops.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .episodes import Episode, EpisodeBuilder, _run_tasks, view_iou
from .features import ACTIONS, FeatureConfig, FeatureExtractor
from .geometry import wrap_heading
from .imitation import Policy, policy_forward
from .pathfind import AgentState, DistanceField, geodesic_distance

log = logging.getLogger(__name__)

OFFSETS = (10, 30, 50)
IOU_FRAMES = 5  # frames that count toward the terminal view score


class OffsetUnavailable(RuntimeError):
    """The expert trajectory is shorter than the requested offset."""


def evaluation_start_state(episode: Episode, offset: int) -> AgentState:
    """Expert state with exactly `offset` expert actions remaining."""
    if offset < 1:
        raise ValueError("offset must be >= 1")
    n = len(episode.expert_actions)
    if n < offset:
        raise OffsetUnavailable(f"expert has {n} actions, offset {offset} unavailable")
    return episode.expert_states[n - offset]


@dataclass(frozen=True)
class EpisodeRecord:
    navigator: str
    episode_id: str
    offset: int
    states: tuple
    actions: str
    d0: float
    dT: float
    dmin: float
    ddelta: float
    collision_fraction: float
    iou_t: float
    qa_correct: bool
    steps: int
    failure: str | None = None


# ------------------------------------------------------------- navigators


class ExpertNavigator:
    """Replays the remaining expert actions, then stops."""

    def __init__(self, remaining: str):
        self._queue = deque(remaining)

    def act(self, obs, state) -> str:
        return self._queue.popleft() if self._queue else "S"


class ForwardOnlyNavigator:
    def act(self, obs, state) -> str:
        return "F"


class RandomNavigator:
    """Uniform over all four actions; stop is as likely as anything else."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng

    def act(self, obs, state) -> str:
        return ACTIONS[int(self._rng.integers(len(ACTIONS)))]


class PolicyNavigator:
    """Greedy rollout of a trained policy.

    The feature history (reactive window or recurrent state) can be
    warmed on the expert prefix, matching the protocol where the agent
    is walked along the expert path before control is handed over.
    """

    def __init__(self, policy: Policy, extractor: FeatureExtractor, prev_action: str | None = None):
        self.policy = policy
        self.extractor = extractor
        self.prev = prev_action
        self._history: list[np.ndarray] = []
        self._hidden = None

    def warm(self, states, actions) -> None:
        """Feed prefix steps (already executed by the expert) through the policy."""
        for t, state in enumerate(states):
            prev = actions[t - 1] if t > 0 else None
            feats = self.extractor.step(state, prev)
            if self.policy.config.kind == "reactive":
                self._history.append(feats)
            else:
                _, self._hidden = policy_forward(self.policy, feats[None, :], self._hidden)
        if len(actions):
            self.prev = actions[-1]

    def act(self, obs, state) -> str:
        feats = self.extractor.step(state, self.prev, obs)
        if self.policy.config.kind == "reactive":
            self._history.append(feats)
            window = self.policy.config.window
            logits = policy_forward(self.policy, np.stack(self._history[-window:]))[0][-1]
        else:
            out, self._hidden = policy_forward(self.policy, feats[None, :], self._hidden)
            logits = out[0]
        action = ACTIONS[int(np.argmax(logits))]
        self.prev = action
        return action


def expert_factory(builder, episode, offset, seed):
    start = len(episode.expert_actions) - offset
    return ExpertNavigator(episode.expert_actions[start:])


def forward_only_factory(builder, episode, offset, seed):
    return ForwardOnlyNavigator()


def random_factory(builder, episode, offset, seed):
    return RandomNavigator(np.random.default_rng(seed))


def make_policy_factory(policy: Policy, feature_config: FeatureConfig | None = None, warm_start: bool = True):
    """Navigator factory closing over a trained policy.

    One extractor per (env, question) is cached on the builder it runs
    against, so repeated episodes of one question reuse target caches.
    """
    extractors: dict = {}

    def factory(builder, episode, offset, seed):
        key = (id(builder), episode.question)
        if key not in extractors:
            extractors[key] = FeatureExtractor(builder, episode.question, feature_config)
        start = len(episode.expert_actions) - offset
        navigator = PolicyNavigator(policy, extractors[key])
        if warm_start and start > 0:
            navigator.warm(episode.expert_states[:start], episode.expert_actions[:start])
        return navigator

    return factory


BUILTIN_NAVIGATORS = {
    "expert": expert_factory,
    "forward-only": forward_only_factory,
    "random": random_factory,
}


# --------------------------------------------------------------- rollouts


def _apply(grid, state, action, motion):
    """One kinematic step; forward into a blocked cell is a colliding no-op."""
    if action == "F":
        nx = state.x + math.cos(state.heading) * motion.forward_step
        ny = state.y + math.sin(state.heading) * motion.forward_step
        if grid.is_free(nx, ny):
            return replace(state, x=nx, y=ny), False
        return state, True
    if action == "L":
        return replace(state, heading=wrap_heading(state.heading + motion.turn_angle)), False
    if action == "R":
        return replace(state, heading=wrap_heading(state.heading - motion.turn_angle)), False
    raise ValueError(f"unknown action {action!r}")


def expert_iou_norm(builder: EpisodeBuilder, episode: Episode, render_seed: int = 0) -> float:
    """Best view IoU the expert itself attains over its last frames.

    The expert's final frames are the same for every resume offset, so
    one value normalizes all of them.
    """
    target = episode.question.target_object_id
    frames = episode.expert_states[:-1][-IOU_FRAMES:]
    best = 0.0
    for state in frames:
        obs = builder.renderer.render(builder.camera_at(state), render_seed)
        best = max(best, _view_iou(builder, obs, target))
    return best


def _view_iou(builder: EpisodeBuilder, obs, target: int) -> float:
    cfg = builder.config
    return view_iou(
        obs, target, cfg.render.raster_width, cfg.render.raster_height,
        cfg.bbox_x, cfg.bbox_y,
    )


def run_episode(
    builder: EpisodeBuilder,
    navigator,
    episode: Episode,
    offset: int,
    max_steps: int = 100,
    navigator_id: str = "",
    episode_id: str = "",
    qa_answer: str | None = None,
    iou_norm: float | None = None,
    distance_field: DistanceField | None = None,
    render_seed: int = 0,
) -> EpisodeRecord:
    """Roll one navigator from the resume state and score the trajectory.

    A navigator exception ends the rollout and is recorded on the
    returned record instead of propagating.
    """
    start = evaluation_start_state(episode, offset)
    target = episode.question.target_object_id
    motion = builder.config.motion
    if distance_field is None:
        distance_field = DistanceField(
            builder.grid, (episode.best_view.x, episode.best_view.y)
        )
    if iou_norm is None:
        iou_norm = expert_iou_norm(builder, episode, render_seed)

    states = [start]
    actions = ""
    collisions = 0
    failure = None
    ious = deque(maxlen=IOU_FRAMES)
    state = start
    for _ in range(max_steps):
        obs = builder.renderer.render(builder.camera_at(state), render_seed)
        ious.append(_view_iou(builder, obs, target))
        try:
            action = navigator.act(obs, state)
            if action == "S":
                actions += "S"
                break
            state, collided = _apply(builder.grid, state, action, motion)
        except Exception as exc:  # recorded, not raised: one bad navigator
            failure = f"{type(exc).__name__}: {exc}"  # must not sink the sweep
            break
        actions += action
        collisions += int(collided)
        states.append(state)

    d0 = episode.d0_cache.get(offset)
    if d0 is None:
        d0 = geodesic_distance(builder.grid, start.position, episode.best_view.position)
    dT = distance_field.at((state.x, state.y))
    dmin = min(distance_field.at((s.x, s.y)) for s in states)
    raw_iou = max(ious) if ious else 0.0
    steps = len(actions)
    return EpisodeRecord(
        navigator=navigator_id,
        episode_id=episode_id,
        offset=offset,
        states=tuple(states),
        actions=actions,
        d0=float(d0),
        dT=float(dT),
        dmin=float(dmin),
        ddelta=float(d0) - float(dT),
        collision_fraction=collisions / steps if steps else 0.0,
        # a rollout can outscore the expert's own final frames; the
        # normalized score is capped so 1.0 means "as good as the expert"
        iou_t=min(1.0, raw_iou / iou_norm) if iou_norm > 0 else 0.0,
        qa_correct=qa_answer == episode.question.answer,
        steps=steps,
        failure=failure,
    )


# ------------------------------------------------------------ QA baseline


class AnswerPrior:
    """Modal train answer per question text; ties break lexicographically."""

    def __init__(self, train_items):
        self._by_signature: dict[str, Counter] = {}
        self._global: Counter = Counter()
        for item in train_items:
            q = getattr(item, "question", item)
            self._by_signature.setdefault(q.template_text, Counter())[q.answer] += 1
            self._global[q.answer] += 1
        if not self._global:
            raise ValueError("empty train split")

    @staticmethod
    def _mode(counter: Counter) -> str:
        return min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def predict(self, question) -> str:
        counts = self._by_signature.get(question.template_text)
        if counts is None:
            return self._mode(self._global)
        return self._mode(counts)


def answer_prior_qa(question, train_items) -> str:
    """One-shot prior prediction; build an AnswerPrior to amortize."""
    return AnswerPrior(train_items).predict(question)


# ----------------------------------------------------------------- metrics

METRICS = (
    "d0",
    "dT",
    "dmin",
    "ddelta",
    "collision_fraction",
    "iou_t",
    "qa_accuracy",
    "steps",
)


def bootstrap_ci(samples, level: float = 0.90, resamples: int = 2000, seed: int = 0):
    """Percentile bootstrap of the mean; deterministic for a fixed seed."""
    values = np.asarray(samples, float)
    if len(values) < 2:
        raise ValueError("need at least 2 samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    for b in range(resamples):
        means[b] = rng.choice(values, size=len(values), replace=True).mean()
    alpha = 1.0 - level
    lo = float(np.percentile(means, 100.0 * alpha / 2.0))
    hi = float(np.percentile(means, 100.0 * (1.0 - alpha / 2.0)))
    return lo, hi


@dataclass
class MetricsReport:
    groups: dict = field(default_factory=dict)  # (navigator, offset) -> metric -> (mean, lo, hi)
    counts: dict = field(default_factory=dict)


def _record_values(record: EpisodeRecord) -> dict:
    return {
        "d0": record.d0,
        "dT": record.dT,
        "dmin": record.dmin,
        "ddelta": record.ddelta,
        "collision_fraction": record.collision_fraction,
        "iou_t": record.iou_t,
        "qa_accuracy": float(record.qa_correct),
        "steps": float(record.steps),
    }


def compute_metrics(records, level: float = 0.90, resamples: int = 2000, seed: int = 0) -> MetricsReport:
    """Group means with bootstrap CIs per (navigator, offset).

    Reduction order is fixed by sorting on episode id, so reports do not
    depend on rollout scheduling. Single-record groups get a degenerate
    CI equal to the mean.
    """
    if not records:
        raise ValueError("no records")
    grouped: dict[tuple[str, int], list[EpisodeRecord]] = {}
    for rec in records:
        grouped.setdefault((rec.navigator, rec.offset), []).append(rec)
    report = MetricsReport()
    for key in sorted(grouped):
        rows = sorted(grouped[key], key=lambda r: r.episode_id)
        values = {m: np.array([_record_values(r)[m] for r in rows]) for m in METRICS}
        cells = {}
        for metric in METRICS:
            v = values[metric]
            mean = float(v.mean())
            if len(v) < 2:
                lo = hi = mean
            else:
                salt = zlib.crc32(f"{key[0]}/{key[1]}/{metric}".encode())
                lo, hi = bootstrap_ci(v, level, resamples, seed=int(
                    np.random.SeedSequence([seed, salt]).generate_state(1)[0]
                ))
            cells[metric] = (mean, lo, hi)
        report.groups[key] = cells
        report.counts[key] = len(rows)
    return report


# ------------------------------------------------------------ orchestrator


# worker context for parallel sweeps; holds the unpicklable parts
# (navigator factories, environments) which fork inherits for free
_EV_CTX: dict = {}


def _eval_task(task):
    idx, offset, name, nav_seed, qa_answer = task
    episode = _EV_CTX["episodes"][idx]
    builders = _EV_CTX.setdefault("builders", {})
    if episode.env_id not in builders:
        builders[episode.env_id] = EpisodeBuilder(
            _EV_CTX["by_id"][episode.env_id], _EV_CTX["episode_config"]
        )
    builder = builders[episode.env_id]
    fields = _EV_CTX.setdefault("fields", {})
    field_key = (episode.env_id, episode.best_view.x, episode.best_view.y)
    if field_key not in fields:
        fields[field_key] = DistanceField(
            builder.grid, (episode.best_view.x, episode.best_view.y)
        )
    norms = _EV_CTX.setdefault("norms", {})
    if idx not in norms:
        norms[idx] = expert_iou_norm(builder, episode)
    navigator = _EV_CTX["navigators"][name](builder, episode, offset, nav_seed)
    return run_episode(
        builder,
        navigator,
        episode,
        offset,
        max_steps=_EV_CTX["max_steps"],
        navigator_id=name,
        episode_id=f"{idx:05d}",
        qa_answer=qa_answer,
        iou_norm=norms[idx],
        distance_field=fields[field_key],
    )


def evaluate_dataset(
    envs,
    episodes,
    navigators=None,
    offsets=OFFSETS,
    train_items=None,
    max_steps: int = 100,
    seed: int = 0,
    episode_config=None,
    jobs: int = 1,
    level: float = 0.90,
    resamples: int = 2000,
):
    """Run every navigator over every episode and offset.

    navigators maps an id to a factory(builder, episode, offset, seed).
    Episodes shorter than an offset are skipped for it (logged). jobs > 1
    forks worker processes over rollouts; the records and report do not
    depend on the worker count. Returns (records, MetricsReport).
    """
    navigators = dict(BUILTIN_NAVIGATORS) if navigators is None else navigators
    by_id = {e.id: e for e in envs}
    prior = AnswerPrior(train_items) if train_items else None

    tasks = []
    for idx, episode in enumerate(episodes):
        if episode.env_id not in by_id:
            raise ValueError(f"no environment supplied for {episode.env_id}")
        qa_answer = prior.predict(episode.question) if prior else None
        for offset in offsets:
            if len(episode.expert_actions) < offset:
                log.info("episode %d: %d expert actions, skipping offset %d",
                         idx, len(episode.expert_actions), offset)
                continue
            for name in sorted(navigators):
                nav_seed = int(
                    np.random.SeedSequence(
                        [seed, idx, offset, zlib.crc32(name.encode())]
                    ).generate_state(1)[0]
                )
                tasks.append((idx, offset, name, nav_seed, qa_answer))

    _EV_CTX.clear()
    _EV_CTX.update(
        by_id=by_id,
        episodes=list(episodes),
        navigators=navigators,
        max_steps=max_steps,
        episode_config=episode_config,
    )
    try:
        records = _run_tasks(_eval_task, tasks, jobs)
    finally:
        _EV_CTX.clear()
    return records, compute_metrics(records, level=level, resamples=resamples, seed=seed)


# ----------------------------------------------------------------- report


def write_report(report: MetricsReport, csv_path, json_path) -> None:
    """Long-format CSV (one row per navigator, offset, metric) + JSON tree.

    Output is byte-identical for identical inputs: fixed row order and
    repr-precision floats.
    """
    lines = ["navigator,offset,metric,mean,ci_lo,ci_hi,n"]
    tree: dict = {}
    for (navigator, offset), cells in sorted(report.groups.items()):
        n = report.counts[(navigator, offset)]
        for metric in METRICS:
            mean, lo, hi = cells[metric]
            lines.append(f"{navigator},{offset},{metric},{mean!r},{lo!r},{hi!r},{n}")
            tree.setdefault(navigator, {}).setdefault(str(offset), {})[metric] = {
                "mean": mean,
                "ci_lo": lo,
                "ci_hi": hi,
            }
        tree[navigator][str(offset)]["n"] = n
    Path(csv_path).write_text("\n".join(lines) + "\n")
    Path(json_path).write_text(json.dumps(tree, indent=2, sort_keys=True) + "\n")


def save_records(records, path) -> None:
    """JSONL dump of raw rollouts for downstream analysis."""
    with Path(path).open("w") as fh:
        for rec in records:
            doc = {
                "navigator": rec.navigator,
                "episode_id": rec.episode_id,
                "offset": rec.offset,
                "actions": rec.actions,
                "states": [[s.x, s.y, s.heading] for s in rec.states],
                "d0": rec.d0,
                "dT": rec.dT,
                "dmin": rec.dmin,
                "ddelta": rec.ddelta,
                "collision_fraction": rec.collision_fraction,
                "iou_t": rec.iou_t,
                "qa_correct": rec.qa_correct,
                "steps": rec.steps,
                "failure": rec.failure,
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def load_records(path) -> list[EpisodeRecord]:
    """Read rollout records written by save_records."""
    records = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            doc["states"] = tuple(AgentState(*s) for s in doc["states"])
            records.append(EpisodeRecord(**doc))
    return records
