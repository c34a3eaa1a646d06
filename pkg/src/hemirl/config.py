"""Experiment configuration: a flat INI file parsed into typed sections.

Sections: [experiment] (seeds, tasks, output dir, metric window),
[meta] (meta-training stage), [main] (per-task training stage),
[eval] (non-learning baseline evaluation), and optional [task:NAME]
override sections that may set PPO or penalty fields for one task.
Left-only and bi-hemispheric runs on a task always share one PPOConfig;
the config cannot express divergent hyperparameters for them.

Validation failures raise ConfigurationError naming the offending
field as section.key.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import PenaltyConfig
from .envs import ObsLayout, TASK_NAMES, TIER_BY_TASK, make_task_spec
from .errors import ConfigurationError
from .training import PPOConfig

AGENT_KINDS = ("bihem", "left_only", "right_only", "random")

_PPO_KEYS = {
    "learning_rate": float, "entropy_coef": float, "gamma": float,
    "lam": float, "clip": float, "epochs": int, "batch_episodes": int,
    "normalize_rewards": bool,
}
_PENALTY_KEYS = {"alpha": float, "beta": float, "ratio_cap": float}


def _parse_bool(section: str, key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"{section}.{key}: expected a boolean, got {raw!r}")


def _get(cp: configparser.ConfigParser, section: str, key: str, cast, default):
    if not cp.has_option(section, key):
        if default is _REQUIRED:
            raise ConfigurationError(f"{section}.{key}: required key missing")
        return default
    raw = cp.get(section, key)
    if cast is bool:
        return _parse_bool(section, key, raw)
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigurationError(f"{section}.{key}: {e}") from None


class _Required:
    pass


_REQUIRED = _Required()


def _parse_list(section: str, key: str, raw: str) -> list[str]:
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise ConfigurationError(f"{section}.{key}: empty list")
    return items


def _validate_tasks(section: str, key: str, names: list[str]) -> list[str]:
    for n in names:
        if n not in TASK_NAMES:
            raise ConfigurationError(
                f"{section}.{key}: unknown task {n!r}; valid: {sorted(TASK_NAMES)}")
    if len(set(names)) != len(names):
        raise ConfigurationError(f"{section}.{key}: duplicate task names")
    return names


@dataclass
class MetaSection:
    tasks: list[str]
    total_steps: int
    episodes_per_trial: int = 10
    lanes_per_update: int = 10
    right_hidden: int = 128
    right_only_hidden: int = 256
    pool_seed: int = 1
    pool_size: int = 20
    episode_length: int = 200
    task_slots: int = 0
    ppo: PPOConfig = field(default_factory=PPOConfig.full_scale_meta_defaults)


@dataclass
class MainSection:
    tasks: list[str]
    total_steps: int
    eval_episodes: int = 4
    hemisphere_hidden: int = 128
    baseline_hidden: int = 256
    pool_seed: int = 0
    pool_size: int = 20
    episode_length: int = 200
    task_slots: int = 0
    ppo_by_task: dict[str, PPOConfig] = field(default_factory=dict)
    penalty_by_task: dict[str, PenaltyConfig] = field(default_factory=dict)


@dataclass
class EvalSection:
    episodes: int = 2000
    batch_episodes: int = 50
    agents: list[str] = field(default_factory=lambda: ["right_only", "random"])
    probe_trials: int = 0  # 0 disables the within-trial adaptation probe


@dataclass
class ExperimentConfig:
    global_seed: int
    seeds: int
    output_dir: Path
    metric_window_fraction: float
    meta: MetaSection
    main: MainSection
    eval: EvalSection
    agents: list[str]
    source_text: str = ""

    def config_hash(self) -> str:
        """Hash of the semantic content (not the file bytes)."""
        payload = json.dumps(_as_jsonable(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def task_spec(self, task: str, stage: str):
        sec = self.meta if stage == "meta" else self.main
        layout = ObsLayout(sec.task_slots,
                           TASK_NAMES.index(task) if sec.task_slots > 0 else -1)
        return make_task_spec(task, pool_seed=sec.pool_seed,
                              pool_size=sec.pool_size,
                              episode_length=sec.episode_length,
                              layout=layout)

    def ppo_for(self, task: str) -> PPOConfig:
        return self.main.ppo_by_task[task]

    def penalty_for(self, task: str) -> PenaltyConfig:
        return self.main.penalty_by_task[task]


def _as_jsonable(obj):
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (list, tuple)):
        return [_as_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _as_jsonable(v) for k, v in obj.items()}
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _as_jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__
                if k != "source_text"}
    raise TypeError(f"cannot serialize {type(obj)}")


def _ppo_from(cp, section: str, base: PPOConfig) -> PPOConfig:
    kwargs = {}
    for key, cast in _PPO_KEYS.items():
        if cp.has_option(section, key):
            kwargs[key] = _get(cp, section, key, cast, _REQUIRED)
    merged = {k: getattr(base, k) for k in _PPO_KEYS}
    merged.update(kwargs)
    try:
        return PPOConfig(**merged)
    except ConfigurationError as e:
        raise ConfigurationError(f"{section}: {e}") from None


def _penalty_from(cp, section: str, base: PenaltyConfig) -> PenaltyConfig:
    kwargs = {k: getattr(base, k) for k in _PENALTY_KEYS}
    for key, cast in _PENALTY_KEYS.items():
        if cp.has_option(section, key):
            kwargs[key] = _get(cp, section, key, cast, _REQUIRED)
    try:
        return PenaltyConfig(**kwargs)
    except ConfigurationError as e:
        raise ConfigurationError(f"{section}: {e}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    return parse_config(text, base_dir=path.parent)


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"config parse error: {e}") from None

    for required in ("experiment", "meta", "main"):
        if not cp.has_section(required):
            raise ConfigurationError(f"missing [{required}] section")

    global_seed = _get(cp, "experiment", "global_seed", int, 0)
    seeds = _get(cp, "experiment", "seeds", int, 5)
    if seeds < 1:
        raise ConfigurationError("experiment.seeds: must be >= 1")
    out_raw = _get(cp, "experiment", "output_dir", str, _REQUIRED)
    output_dir = Path(out_raw)
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir
    frac = _get(cp, "experiment", "metric_window_fraction", float, 0.2)
    if not (0.0 < frac <= 1.0):
        raise ConfigurationError(
            f"experiment.metric_window_fraction: window must satisfy 0 < k <= T "
            f"(fraction in (0, 1]), got {frac}")
    agents = _parse_list("experiment", "agents",
                         _get(cp, "experiment", "agents", str,
                              "bihem,left_only,right_only,random"))
    for a in agents:
        if a not in AGENT_KINDS:
            raise ConfigurationError(
                f"experiment.agents: unknown agent kind {a!r}; valid: {AGENT_KINDS}")

    meta_tasks = _validate_tasks(
        "meta", "tasks",
        _parse_list("meta", "tasks", _get(cp, "meta", "tasks", str, _REQUIRED)))
    for t in meta_tasks:
        if TIER_BY_TASK[t] != 1:
            raise ConfigurationError(
                f"meta.tasks: task {t!r} is tier {TIER_BY_TASK[t]}; "
                "meta-training accepts tier-1 tasks only")
    meta = MetaSection(
        tasks=meta_tasks,
        total_steps=_get(cp, "meta", "total_steps", int, _REQUIRED),
        episodes_per_trial=_get(cp, "meta", "episodes_per_trial", int, 10),
        lanes_per_update=_get(cp, "meta", "lanes_per_update", int, 10),
        right_hidden=_get(cp, "meta", "right_hidden", int, 128),
        right_only_hidden=_get(cp, "meta", "right_only_hidden", int, 256),
        pool_seed=_get(cp, "meta", "pool_seed", int, 1),
        pool_size=_get(cp, "meta", "pool_size", int, 20),
        episode_length=_get(cp, "meta", "episode_length", int, 200),
        task_slots=_get(cp, "meta", "task_slots", int, 0),
        ppo=_ppo_from(cp, "meta", PPOConfig.full_scale_meta_defaults()),
    )
    if meta.total_steps < 1:
        raise ConfigurationError("meta.total_steps: must be >= 1")
    if meta.episodes_per_trial < 2:
        raise ConfigurationError(
            "meta.episodes_per_trial: must be >= 2 (within-trial adaptation needs "
            "multiple episodes)")

    main_tasks = _validate_tasks(
        "main", "tasks",
        _parse_list("main", "tasks", _get(cp, "main", "tasks", str, _REQUIRED)))
    main = MainSection(
        tasks=main_tasks,
        total_steps=_get(cp, "main", "total_steps", int, _REQUIRED),
        eval_episodes=_get(cp, "main", "eval_episodes", int, 4),
        hemisphere_hidden=_get(cp, "main", "hemisphere_hidden", int, 128),
        baseline_hidden=_get(cp, "main", "baseline_hidden", int, 256),
        pool_seed=_get(cp, "main", "pool_seed", int, 0),
        pool_size=_get(cp, "main", "pool_size", int, 20),
        episode_length=_get(cp, "main", "episode_length", int, 200),
        task_slots=_get(cp, "main", "task_slots", int, 0),
    )
    if main.total_steps < 1:
        raise ConfigurationError("main.total_steps: must be >= 1")
    if main.episode_length != meta.episode_length:
        raise ConfigurationError(
            "main.episode_length: must match meta.episode_length (the embedded "
            f"right hemisphere sees one observation layout), got {main.episode_length}"
            f" vs {meta.episode_length}")
    if main.task_slots != meta.task_slots:
        raise ConfigurationError(
            "main.task_slots: observation layouts of the meta and main stages "
            f"must match, got {main.task_slots} vs {meta.task_slots}")
    for sec_name, slots in (("meta", meta.task_slots), ("main", main.task_slots)):
        if slots != 0 and slots < len(TASK_NAMES):
            raise ConfigurationError(
                f"{sec_name}.task_slots: one-hot slots must be 0 or >= "
                f"{len(TASK_NAMES)} (one per task)")
    if meta.pool_seed == main.pool_seed:
        raise ConfigurationError(
            "main.pool_seed: must differ from meta.pool_seed so the main-stage "
            "sub-task pools are disjoint from meta-training pools")

    base_ppo = _ppo_from(cp, "main", PPOConfig())
    base_pen = _penalty_from(cp, "main", PenaltyConfig())
    for task in main_tasks:
        override = f"task:{task}"
        if cp.has_section(override):
            main.ppo_by_task[task] = _ppo_from(cp, override, base_ppo)
            main.penalty_by_task[task] = _penalty_from(cp, override, base_pen)
        else:
            main.ppo_by_task[task] = base_ppo
            main.penalty_by_task[task] = base_pen
    for section in cp.sections():
        if section.startswith("task:"):
            name = section[len("task:"):]
            if name not in TASK_NAMES:
                raise ConfigurationError(f"[{section}]: unknown task {name!r}")

    ev = EvalSection(
        episodes=_get(cp, "eval", "episodes", int, 2000) if cp.has_section("eval") else 2000,
        batch_episodes=_get(cp, "eval", "batch_episodes", int, 50) if cp.has_section("eval") else 50,
        agents=_parse_list("eval", "agents", _get(cp, "eval", "agents", str,
                                                  "right_only,random"))
        if cp.has_section("eval") else ["right_only", "random"],
        probe_trials=_get(cp, "eval", "probe_trials", int, 0) if cp.has_section("eval") else 0,
    )
    if ev.episodes < 1 or ev.batch_episodes < 1:
        raise ConfigurationError("eval.episodes and eval.batch_episodes must be >= 1")
    if ev.probe_trials < 0:
        raise ConfigurationError("eval.probe_trials: must be >= 0")
    for a in ev.agents:
        if a not in ("right_only", "random"):
            raise ConfigurationError(
                f"eval.agents: {a!r} is not a non-learning baseline")

    return ExperimentConfig(
        global_seed=global_seed,
        seeds=seeds,
        output_dir=output_dir,
        metric_window_fraction=frac,
        meta=meta,
        main=main,
        eval=ev,
        agents=agents,
        source_text=text,
    )
