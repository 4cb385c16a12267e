"""Command line driver for the full pipeline.

Subcommands: gen-env, render, gen-questions, gen-episodes, train, eval,
report, selftest. Every command takes an optional --config (TOML or
JSON), --seed and --jobs. Exit codes: 0 success, 2 configuration error,
3 data error, 4 invariant or selftest failure.

Provenance: each command stamps its outputs with the hash of the
effective configuration and warns when it reads inputs produced under a
different one. The EQA_FORGE_SEED environment variable overrides the
config file seed; an explicit --seed flag overrides both.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    config_to_dict,
    effective_seed,
    load_config,
    reference_toml,
)
from .env_model import EnvGenSpec, generate_environment, load_environment, save_environment
from .episodes import (
    DatasetManifest,
    EpisodeBuilder,
    EpisodeError,
    build_dataset,
    generate_questions,
    load_episodes,
    save_questions,
    _run_tasks,
)
from .evaluate import (
    BUILTIN_NAVIGATORS,
    bootstrap_ci,
    compute_metrics,
    evaluate_dataset,
    load_records,
    make_policy_factory,
    run_episode,
    save_records,
    write_report,
    expert_factory,
    METRICS,
)
from .features import FeatureExtractor, featurize_episodes
from .imitation import (
    Policy,
    PolicyConfig,
    init_policy,
    iw_loss,
    load_policy,
    policy_forward,
    policy_gradient,
    save_policy,
    save_curves,
    train,
)
from .pathfind import AgentState
from .pc_render import (
    RenderConfig,
    camera_coords,
    frustum_cull,
    raster_depth_buffer,
    raster_occlusion_filter,
    ray_occlusion_filter,
    save_observation,
)
from .pointnet_ops import ball_query, farthest_point_sample

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Missing or malformed input artifacts."""


class SelftestFailure(RuntimeError):
    """An invariant check did not hold."""


# ------------------------------------------------------------- helpers


def _env_doc_hash(path) -> str | None:
    try:
        return json.loads(Path(path).read_text()).get("config_hash")
    except (OSError, json.JSONDecodeError):
        return None


def _warn_hash(kind: str, name, stored: str | None, current: str) -> None:
    if stored is not None and stored != current:
        log.warning(
            "%s %s was produced under config %s; current config is %s",
            kind, name, stored, current,
        )


def _load_envs(envs_dir, current_hash: str | None = None):
    """All environment files in a directory, sorted by id.

    Non-environment JSON files (question lists, manifests) are skipped.
    """
    envs_dir = Path(envs_dir)
    if not envs_dir.is_dir():
        raise DataError(f"{envs_dir} is not a directory")
    envs = []
    for path in sorted(envs_dir.glob("*.json")):
        try:
            env = load_environment(path)
        except ValueError:
            continue
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        if current_hash is not None:
            _warn_hash("environment", env.id, _env_doc_hash(path), current_hash)
        envs.append(env)
    if not envs:
        raise DataError(f"no environment files in {envs_dir}")
    return envs


def _load_split(data_dir, split: str):
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"missing split file {path}")
    try:
        episodes = load_episodes(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    return episodes


def _load_manifest(data_dir, current_hash: str) -> DatasetManifest:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"missing dataset manifest {path}")
    try:
        manifest = DatasetManifest.load(path)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    _warn_hash("dataset", data_dir, manifest.config_hash, current_hash)
    return manifest


def _require_coverage(envs, episodes) -> None:
    have = {e.id for e in envs}
    need = {ep.env_id for ep in episodes}
    missing = sorted(need - have)
    if missing:
        raise DataError(f"episodes reference environments not supplied: {missing}")


def _write_run_config(out_dir, cfg: RunConfig) -> None:
    doc = {"config": config_to_dict(cfg), "config_hash": config_hash(cfg)}
    (Path(out_dir) / "run_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )


def _format_table(report) -> str:
    rows = [("navigator", "offset", "metric", "mean", "ci_lo", "ci_hi", "n")]
    for (navigator, offset), cells in sorted(report.groups.items()):
        n = report.counts[(navigator, offset)]
        for metric in METRICS:
            mean, lo, hi = cells[metric]
            rows.append(
                (navigator, str(offset), metric,
                 f"{mean:.4f}", f"{lo:.4f}", f"{hi:.4f}", str(n))
            )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(val.ljust(w) for val, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


# ------------------------------------------------------------ commands


_GEN_CTX: dict = {}


def _gen_env_task(item):
    index, env_seed = item
    env = generate_environment(_GEN_CTX["spec"], env_seed)
    path = Path(_GEN_CTX["out"]) / f"{env.id}.json"
    save_environment(env, path, config_hash=_GEN_CTX["hash"])
    return env.id


def cmd_gen_env(args, cfg: RunConfig, jobs: int) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = cfg.dataset.n_envs if args.count is None else args.count
    if count < 1:
        raise ConfigError("--count must be >= 1")
    _GEN_CTX.clear()
    _GEN_CTX.update(spec=cfg.env, out=out, hash=config_hash(cfg))
    try:
        ids = _run_tasks(_gen_env_task, [(i, cfg.seed + i) for i in range(count)], jobs)
    finally:
        _GEN_CTX.clear()
    for env_id in ids:
        print(f"wrote {out / (env_id + '.json')}")
    print(f"generated {len(ids)} environments (seeds {cfg.seed}..{cfg.seed + count - 1})")
    return 0


def cmd_render(args, cfg: RunConfig, jobs: int) -> int:
    try:
        env = load_environment(args.env)
    except OSError as exc:
        raise DataError(f"cannot read {args.env}: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    builder = EpisodeBuilder(env, cfg.episode)
    state = AgentState(args.x, args.y, args.heading)
    obs = builder.renderer.render(builder.camera_at(state), cfg.seed)
    if args.out:
        save_observation(obs, args.out)
        print(f"wrote {args.out}")
    print(
        f"rendered {obs.count} points (pre-cap {obs.n_before_cap}, "
        f"sparsity bin {obs.sparsity_bin}) at ({args.x}, {args.y}, {args.heading})"
    )
    return 0


def cmd_gen_questions(args, cfg: RunConfig, jobs: int) -> int:
    envs = _load_envs(args.envs, config_hash(cfg))
    questions = generate_questions(envs, cfg.episode.entropy_threshold)
    out = Path(args.out) if args.out else Path(args.envs) / "questions.json"
    save_questions(questions, out)
    by_type: dict[str, int] = {}
    for q in questions:
        by_type[q.qtype] = by_type.get(q.qtype, 0) + 1
    print(f"wrote {len(questions)} questions to {out} " +
          "(" + ", ".join(f"{k}: {v}" for k, v in sorted(by_type.items())) + ")")
    return 0


def cmd_gen_episodes(args, cfg: RunConfig, jobs: int) -> int:
    envs = _load_envs(args.envs, config_hash(cfg))
    manifest = build_dataset(
        envs,
        args.out,
        episodes_per_question=args.per_question,
        split_spec=cfg.dataset.split_spec,
        seed=cfg.seed,
        config=cfg.episode,
        jobs=jobs,
        config_hash=config_hash(cfg),
    )
    for name in sorted(manifest.episode_counts):
        print(f"{name}: {manifest.episode_counts[name]} episodes "
              f"({len(manifest.splits[name])} environments)")
    print(f"answer vocabulary: {len(manifest.answer_vocabulary)} entries")
    return 0


def cmd_train(args, cfg: RunConfig, jobs: int) -> int:
    chash = config_hash(cfg)
    manifest = _load_manifest(args.data, chash)
    train_eps = _load_split(args.data, "train")
    if not train_eps:
        raise DataError("train split is empty")
    val_path = Path(args.data) / "val.jsonl"
    val_eps = _load_split(args.data, "val") if val_path.exists() else []
    envs = _load_envs(args.envs, chash)
    _require_coverage(envs, train_eps + val_eps)

    log.info("featurizing %d train / %d val episodes", len(train_eps), len(val_eps))
    train_set = featurize_episodes(envs, train_eps, cfg.features, cfg.episode)
    val_set = featurize_episodes(envs, val_eps, cfg.features, cfg.episode) or None
    measured = train_set[0][0].shape[1]
    policy_cfg = cfg.policy
    if policy_cfg.feature_dim != measured:
        log.warning(
            "policy.feature_dim %d does not match the %d-dim features; using %d",
            policy_cfg.feature_dim, measured, measured,
        )
        policy_cfg = dataclasses.replace(policy_cfg, feature_dim=measured)

    result = train(train_set, policy_cfg, cfg.train, val_set)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(result.policy, out / "policy.eqaw")
    save_curves(result.curves, out / "curves.csv")
    manifest.inflection_ratio = result.stats.ratio
    manifest.save(Path(args.data) / "manifest.json")
    final = result.curves[-1]
    meta = {
        "config_hash": chash,
        "policy": dataclasses.asdict(result.policy.config),
        "inflection_ratio": result.stats.ratio,
        "n_train": len(train_eps),
        "n_val": len(val_eps),
        "final": final,
    }
    (out / "train_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_run_config(out, cfg)
    print(
        f"trained {policy_cfg.kind} policy for {cfg.train.epochs} epochs: "
        f"loss {final['train_loss']:.4f}, accuracy {final['train_accuracy']:.4f}, "
        f"inflection recall {final['train_inflection_recall']:.4f}"
    )
    print(f"wrote {out / 'policy.eqaw'}")
    return 0


def cmd_eval(args, cfg: RunConfig, jobs: int) -> int:
    chash = config_hash(cfg)
    _load_manifest(args.data, chash)
    split = args.split or cfg.eval.split
    episodes = _load_split(args.data, split)
    if not episodes:
        raise DataError(f"{split} split is empty")
    envs = _load_envs(args.envs, chash)
    _require_coverage(envs, episodes)

    names = tuple(args.navigator) if args.navigator else cfg.eval.navigators
    unknown = [n for n in names if n not in BUILTIN_NAVIGATORS]
    if unknown:
        raise ConfigError(f"unknown navigator(s) {unknown}")
    navigators = {n: BUILTIN_NAVIGATORS[n] for n in names}
    if args.policy:
        try:
            policy = load_policy(args.policy)
        except OSError as exc:
            raise DataError(f"cannot read {args.policy}: {exc}") from exc
        name = args.policy_name or Path(args.policy).stem
        first = episodes[0]
        builder = EpisodeBuilder({e.id: e for e in envs}[first.env_id], cfg.episode)
        dim = FeatureExtractor(builder, first.question, cfg.features).dim
        if dim != policy.config.feature_dim:
            raise ConfigError(
                f"checkpoint expects {policy.config.feature_dim}-dim features "
                f"but the feature config produces {dim}"
            )
        navigators[name] = make_policy_factory(policy, cfg.features)

    train_path = Path(args.data) / "train.jsonl"
    train_items = _load_split(args.data, "train") if train_path.exists() else []
    offsets = tuple(args.offset) if args.offset else cfg.eval.offsets

    records, report = evaluate_dataset(
        envs,
        episodes,
        navigators,
        offsets=offsets,
        train_items=train_items or None,
        max_steps=cfg.eval.max_steps,
        seed=cfg.seed,
        episode_config=cfg.episode,
        jobs=jobs,
        level=cfg.eval.ci_level,
        resamples=cfg.eval.ci_resamples,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_records(records, out / "records.jsonl")
    write_report(report, out / "report.csv", out / "report.json")
    _write_run_config(out, cfg)
    print(_format_table(report))
    print(f"wrote {out / 'report.csv'} ({len(records)} rollouts)")
    return 0


def cmd_report(args, cfg: RunConfig, jobs: int) -> int:
    try:
        records = load_records(args.records)
    except OSError as exc:
        raise DataError(f"cannot read {args.records}: {exc}") from exc
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse {args.records}: {exc}") from exc
    if not records:
        raise DataError(f"{args.records} contains no records")
    report = compute_metrics(
        records, level=cfg.eval.ci_level, resamples=cfg.eval.ci_resamples, seed=cfg.seed
    )
    print(_format_table(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "report.csv", out / "report.json")
        _write_run_config(out, cfg)
        print(f"wrote {out / 'report.csv'}")
    return 0


def cmd_config(args, cfg: RunConfig, jobs: int) -> int:
    text = reference_toml(cfg)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------ selftest
#
# Small, fast re-derivations of the package's core numerical claims
# against independent in-process references. `selftest` exits nonzero
# when any of them fails, so a fresh install can be checked without the
# test suite.


def _selftest_env():
    spec = EnvGenSpec(n_rooms=2, width=5.0, depth=5.0, density=120.0)
    return generate_environment(spec, 3)


def _check_occlusion() -> str:
    env = _selftest_env()
    cfg = RenderConfig(raster_width=512, raster_height=512, epsilon=0.25)
    builder = EpisodeBuilder(env)
    axes, params, corners = env.occluder_arrays()
    rng = np.random.default_rng(0)
    free = np.argwhere(~builder.grid.cells)
    worst = 1.0
    for _ in range(8):
        row, col = free[rng.integers(len(free))]
        state = AgentState(
            builder.grid.origin[0] + (col + 0.5) * builder.grid.resolution,
            builder.grid.origin[1] + (row + 0.5) * builder.grid.resolution,
            float(rng.uniform(-math.pi, math.pi)),
        )
        camera = builder.camera_at(state)
        pts = env.global_cloud.positions[frustum_cull(camera, env.global_cloud.positions)]
        if len(pts) == 0:
            continue
        exact = ray_occlusion_filter(camera, pts, axes, params, cfg.epsilon)
        buf = raster_depth_buffer(camera, axes, params, corners, cfg)
        raster = raster_occlusion_filter(buf, camera_coords(camera, pts), cfg.epsilon)
        worst = min(worst, float(np.mean(exact == raster)))
    if worst < 0.99:
        raise SelftestFailure(f"raster/ray occlusion agreement {worst:.4f} < 0.99")
    return f"worst agreement {worst:.4f}"


def _check_sampling() -> str:
    rng = np.random.default_rng(1)
    for trial in range(25):
        n = int(rng.integers(2, 120))
        pts = rng.normal(size=(n, 3))
        k = int(rng.integers(1, n + 1))
        got = farthest_point_sample(pts, k)
        start = int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])
        chosen = [start]
        d2 = np.full(n, np.inf)
        for _ in range(k - 1):
            d2 = np.minimum(d2, ((pts - pts[chosen[-1]]) ** 2).sum(axis=1))
            chosen.append(int(np.argmax(d2)))
        if not np.array_equal(got, np.array(chosen[:k])):
            raise SelftestFailure(f"farthest point sample mismatch on trial {trial}")

        centroids = rng.normal(size=(int(rng.integers(1, 8)), 3))
        radius = float(rng.uniform(0.3, 1.5))
        max_k = int(rng.integers(1, 9))
        got_b = ball_query(pts, centroids, radius, max_k)
        d = ((centroids[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        for c in range(len(centroids)):
            inside = np.nonzero(d[c] <= radius * radius)[0]
            order = inside[np.lexsort((inside, d[c][inside]))]
            if len(order) == 0:
                order = np.array([int(np.argmin(d[c]))])
            want = np.full(max_k, -1, np.int64)
            want[: min(max_k, len(order))] = order[:max_k]
            if not np.array_equal(got_b[c], want):
                raise SelftestFailure(f"ball query mismatch on trial {trial}")
    return "25 sampling trials exact"


def _check_gradients() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for kind, hidden in (("reactive", 8), ("memory", 6)):
        pc = PolicyConfig(kind=kind, feature_dim=5, hidden_dim=hidden, window=3)
        policy = init_policy(pc, seed=4)
        lengths = [int(rng.integers(3, 7)) for _ in range(2)]
        seqs = [(rng.normal(size=(n, 5)), rng.integers(0, 4, n)) for n in lengths]
        weights = [np.where(rng.random(len(y)) < 0.4, 4.0, 1.0) for _, y in seqs]
        grads, _, _ = policy_gradient(policy, seqs, weights)

        def loss_at(params):
            probe = Policy(pc, params)
            logits = [policy_forward(probe, x)[0] for x, _ in seqs]
            return iw_loss(logits, [y for _, y in seqs], weights)[0]

        h = 1e-4
        for name, tensor in policy.params.items():
            fd = np.zeros_like(tensor)
            flat_fd = fd.reshape(-1)
            flat = tensor.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi_val = loss_at(policy.params)
                flat[i] = orig - h
                lo_val = loss_at(policy.params)
                flat[i] = orig
                flat_fd[i] = (hi_val - lo_val) / (2 * h)
            denom = max(np.abs(fd).max(), np.abs(grads[name]).max(), 1e-8)
            rel = float(np.abs(grads[name] - fd).max() / denom)
            worst = max(worst, rel)
            if rel > 1e-4:
                raise SelftestFailure(f"{kind} gradient {name}: rel err {rel:.2e} > 1e-4")
    return f"worst rel err {worst:.2e}"


def _check_metrics() -> str:
    env = _selftest_env()
    spec = EnvGenSpec(n_rooms=2, width=5.0, depth=5.0, density=120.0)
    # the entropy filter needs a second environment for answer statistics;
    # threshold 0 keeps every unique-target question in this tiny fixture
    questions = generate_questions([env, generate_environment(spec, 4)], 0.0)
    questions = [q for q in questions if q.env_id == env.id]
    if not questions:
        raise SelftestFailure("selftest environment produced no questions")
    builder = EpisodeBuilder(env)
    episode = None
    for q in questions:
        for seed in range(6):
            try:
                cand = builder.generate_episode(q, seed)
            except EpisodeError:
                continue
            if len(cand.expert_actions) >= 10:
                episode = cand
                break
        if episode is not None:
            break
    if episode is None:
        raise SelftestFailure("could not build a >=10-step selftest episode")
    offset = 10
    nav = expert_factory(builder, episode, offset, 0)
    rec = run_episode(builder, nav, episode, offset, navigator_id="expert")
    if rec.failure is not None:
        raise SelftestFailure(f"expert rollout failed: {rec.failure}")
    if abs(rec.ddelta - (rec.d0 - rec.dT)) > 0:
        raise SelftestFailure("ddelta != d0 - dT")
    if rec.dmin > rec.dT:
        raise SelftestFailure("dmin exceeds dT")
    if abs(rec.iou_t - 1.0) > 1e-6:
        raise SelftestFailure(f"expert iou_t {rec.iou_t} not 1.0")
    if rec.dT > builder.config.motion.forward_step:
        raise SelftestFailure(f"expert dT {rec.dT:.3f} exceeds one step")
    samples = np.full(12, 3.25)
    lo, hi = bootstrap_ci(samples, 0.90, 200, seed=0)
    if lo != 3.25 or hi != 3.25:
        raise SelftestFailure("constant-sample CI is not degenerate")
    rng = np.random.default_rng(5)
    vals = rng.normal(2.0, 1.0, 40)
    lo, hi = bootstrap_ci(vals, 0.90, 500, seed=1)
    if not lo <= vals.mean() <= hi:
        raise SelftestFailure("bootstrap CI does not bracket the sample mean")
    return f"expert dT {rec.dT:.3f}, iou_t {rec.iou_t:.6f}"


_SELFTESTS = (
    ("occlusion", _check_occlusion),
    ("sampling", _check_sampling),
    ("gradients", _check_gradients),
    ("metrics", _check_metrics),
)


def cmd_selftest(args, cfg: RunConfig, jobs: int) -> int:
    failures = 0
    for name, check in _SELFTESTS:
        try:
            detail = check()
        except SelftestFailure as exc:
            failures += 1
            print(f"selftest {name}: FAIL ({exc})")
        except Exception as exc:  # a crashed suite is a failed suite
            failures += 1
            print(f"selftest {name}: FAIL ({type(exc).__name__}: {exc})")
        else:
            print(f"selftest {name}: ok ({detail})")
    if failures:
        raise SelftestFailure(f"{failures} of {len(_SELFTESTS)} suites failed")
    print(f"selftest: all {len(_SELFTESTS)} suites passed")
    return 0


# ------------------------------------------------------------- parsing


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="run configuration file (.toml or .json)")
    sub.add_argument("--seed", type=int, help="override the configured seed")
    sub.add_argument(
        "--jobs",
        type=int,
        help="worker processes for generation and evaluation (default: logical cores)",
    )
    sub.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqa-forge",
        description="Generate desk-scale embodied QA datasets, train and evaluate navigators.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-env", help="generate environments into a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, help="number of environments (default: dataset.n_envs)")
    p.set_defaults(func=cmd_gen_env)
    _add_common(p)

    p = subs.add_parser("render", help="render one observation from a pose")
    p.add_argument("--env", required=True, help="environment JSON file")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--heading", type=float, default=0.0)
    p.add_argument("--out", help="write the observation JSON here")
    p.set_defaults(func=cmd_render)
    _add_common(p)

    p = subs.add_parser("gen-questions", help="write the filtered question list")
    p.add_argument("--envs", required=True, help="environment directory")
    p.add_argument("--out", help="output JSON (default: <envs>/questions.json)")
    p.set_defaults(func=cmd_gen_questions)
    _add_common(p)

    p = subs.add_parser("gen-episodes", help="build the split episode dataset")
    p.add_argument("--envs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-question", type=int, dest="per_question")
    p.set_defaults(func=cmd_gen_episodes)
    _add_common(p)

    p = subs.add_parser("train", help="behavior-clone a policy from the train split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--envs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)
    _add_common(p)

    p = subs.add_parser("eval", help="run navigators over a split and write reports")
    p.add_argument("--data", required=True)
    p.add_argument("--envs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", help="policy checkpoint (.eqaw) to evaluate")
    p.add_argument("--policy-name", dest="policy_name", help="navigator id for the checkpoint")
    p.add_argument("--navigator", action="append",
                   help="builtin navigator to include (repeatable)")
    p.add_argument("--offset", action="append", type=int,
                   help="resume offset to evaluate (repeatable)")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)
    _add_common(p)

    p = subs.add_parser("report", help="recompute the metrics table from saved rollouts")
    p.add_argument("--records", required=True, help="records.jsonl from eval")
    p.add_argument("--out", help="directory for report.csv / report.json")
    p.set_defaults(func=cmd_report)
    _add_common(p)

    p = subs.add_parser("config", help="print the reference configuration")
    p.add_argument("--out", help="write the TOML here instead of stdout")
    p.set_defaults(func=cmd_config)
    _add_common(p)

    p = subs.add_parser("selftest", help="run the built-in oracle equivalence checks")
    p.set_defaults(func=cmd_selftest)
    _add_common(p)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        seed = effective_seed(cfg)
        if args.seed is not None:
            seed = args.seed
        cfg = dataclasses.replace(cfg, seed=seed)
        jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(args, cfg, jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except SelftestFailure as exc:
        print(f"selftest failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
