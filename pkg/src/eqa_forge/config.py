"""One run configuration covering every stage of the pipeline.

A RunConfig nests the per-module parameter dataclasses (environment
generation, episode building with motion and render settings, features,
policy, training, evaluation, dataset assembly) plus the top-level seed.
Configs load from TOML or JSON with unknown keys rejected, serialize
back to a plain dict, and hash to a short stable digest that artifacts
carry as provenance.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .env_model import EnvGenSpec
from .episodes import EpisodeConfig
from .features import FeatureConfig
from .imitation import PolicyConfig, TrainConfig
from .pathfind import MotionConfig
from .pc_render import RenderConfig

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "EvalConfig",
    "RunConfig",
    "config_from_mapping",
    "config_hash",
    "config_to_dict",
    "effective_seed",
    "load_config",
    "reference_toml",
]

SEED_ENV_VAR = "EQA_FORGE_SEED"


class ConfigError(ValueError):
    """Bad configuration input: unknown key, wrong type, invalid value."""


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation sweep parameters."""

    offsets: tuple[int, ...] = (10, 30, 50)
    max_steps: int = 100
    ci_level: float = 0.90
    ci_resamples: int = 2000
    navigators: tuple[str, ...] = ("expert", "forward-only", "random")
    split: str = "test"

    def __post_init__(self):
        if not self.offsets or any(int(o) < 1 for o in self.offsets):
            raise ValueError("offsets must be positive integers")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.ci_resamples < 1:
            raise ValueError("ci_resamples must be >= 1")
        known = {"expert", "forward-only", "random"}
        bad = [n for n in self.navigators if n not in known]
        if bad:
            raise ValueError(f"unknown navigator(s) {bad}; choose from {sorted(known)}")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class DatasetConfig:
    """How many environments to generate and how to split them."""

    n_envs: int = 10
    split_train: float = 0.6
    split_val: float = 0.2
    split_test: float = 0.2

    def __post_init__(self):
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        fracs = (self.split_train, self.split_val, self.split_test)
        if any(f < 0 for f in fracs):
            raise ValueError("split fractions must be non-negative")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(fracs)}, expected 1")

    @property
    def split_spec(self) -> dict[str, float]:
        return {"train": self.split_train, "val": self.split_val, "test": self.split_test}


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the pipeline in one document."""

    seed: int = 0
    env: EnvGenSpec = EnvGenSpec()
    episode: EpisodeConfig = EpisodeConfig()
    features: FeatureConfig = FeatureConfig()
    policy: PolicyConfig = PolicyConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    dataset: DatasetConfig = DatasetConfig()


# Nested dataclass fields, by (owner class, field name). Anything else
# is a leaf and must match the type of its default value.
_CHILDREN = {
    (RunConfig, "env"): EnvGenSpec,
    (RunConfig, "episode"): EpisodeConfig,
    (RunConfig, "features"): FeatureConfig,
    (RunConfig, "policy"): PolicyConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "eval"): EvalConfig,
    (RunConfig, "dataset"): DatasetConfig,
    (EpisodeConfig, "motion"): MotionConfig,
    (EpisodeConfig, "render"): RenderConfig,
}


def _leaf(field: dataclasses.Field, value, path: str):
    """Coerce one scalar/sequence leaf, rejecting lossy conversions."""
    default = field.default
    if default is None or value is None:
        # optional numeric knobs (train.lr, train.ratio)
        if value is None or isinstance(value, (int, float)) and not isinstance(value, bool):
            return value if value is None else float(value)
        raise ConfigError(f"{path}: expected a number or null, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{path}: unsupported field type {type(default).__name__}")


def _build(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a table, got {type(data).__name__}")
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(by_name))
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        child = _CHILDREN.get((cls, name))
        if child is not None:
            kwargs[name] = _build(child, value, sub)
        else:
            kwargs[name] = _leaf(by_name[name], value, sub)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_mapping(data: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML/JSON document.

    Missing keys take their defaults; unknown keys raise ConfigError.
    """
    return _build(RunConfig, data)


def load_config(path) -> RunConfig:
    """Load a .toml or .json run configuration file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".toml":
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    elif path.suffix == ".json":
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        raise ConfigError(f"{path}: config files must end in .toml or .json")
    return config_from_mapping(data)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain nested dict (tuples as lists), the inverse of config_from_mapping."""
    def clean(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: clean(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [clean(v) for v in value]
        return value

    return clean(cfg)


def config_hash(cfg: RunConfig) -> str:
    """16-hex-digit digest of the canonical JSON form.

    Artifacts store this so downstream stages can warn when inputs were
    produced under a different configuration.
    """
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def effective_seed(cfg: RunConfig) -> int:
    """Config seed unless the EQA_FORGE_SEED env var overrides it."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return cfg.seed
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from exc


# ------------------------------------------------ reference config


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise TypeError(f"cannot render {value!r} as TOML")


def _toml_section(cls, obj, name: str, lines: list[str]) -> None:
    doc = (cls.__doc__ or "").strip().splitlines()
    header = [f"[{name}]"] if name else []
    # dataclasses synthesize "Cls(field: type = ...)" docstrings; skip those
    if doc and not doc[0].startswith(cls.__name__ + "("):
        header.append(f"# {doc[0]}")
    body = []
    nested = []
    for f in dataclasses.fields(cls):
        value = getattr(obj, f.name)
        child = _CHILDREN.get((cls, f.name))
        if child is not None:
            nested.append((child, value, f"{name}.{f.name}" if name else f.name))
        elif value is None:
            body.append(f"# {f.name} is optional; omit to use the built-in default")
        else:
            body.append(f"{f.name} = {_toml_scalar(value)}")
    if body or name:
        lines.extend(header + body + [""])
    for child, value, sub in nested:
        _toml_section(child, value, sub, lines)


def reference_toml(cfg: RunConfig | None = None) -> str:
    """Render a config (defaults when omitted) as a commented TOML document.

    The output parses back to an equal RunConfig, so it doubles as a
    starting point for experiments and as the reference list of every
    parameter and its default.
    """
    cfg = RunConfig() if cfg is None else cfg
    lines = [
        "# eqa-forge run configuration (generated reference; values shown are defaults)",
        "# Unknown keys are rejected. Every key is optional.",
        "",
        f"seed = {cfg.seed}",
        "",
    ]
    for f in dataclasses.fields(RunConfig):
        child = _CHILDREN.get((RunConfig, f.name))
        if child is not None:
            _toml_section(child, getattr(cfg, f.name), f.name, lines)
    return "\n".join(lines).rstrip() + "\n"
