"""PointWorld: a tiered 2D continuous-control suite.

A point effector moves in the arena [-1, 1]^2 with per-axis speed 0.05
per step and a grip scalar in [0, 1]. Nine tasks in three tiers:

  tier 1: reach, push, pick_place          (parametric variation only)
  tier 2: reach_wall, push_wall, bin_pick  (tier-1 dynamics + one wall)
  tier 3: button_press, faucet_rotate, door_open

Tier-2 tasks run the exact tier-1 code path; the wall is an orthogonal
delta (straight-line motion through it is blocked). Tier-3 tasks are
qualitatively different control problems: press needs grip on a pad,
the other two rotate a handle or hinged segment about a pivot.

Reward shaping (the single documented formula):

    one-phase tasks:   r = 10 * exp(-d / 0.25)
    two-phase tasks:   r = 2 * exp(-d_eff / 0.25) + 7 * exp(-d / 0.25)

where d is the task's primary distance (effector-to-goal for reach and
button_press, object-to-goal for push/place, remaining arc length for
the rotation tasks) and d_eff is the approach distance (effector to
object/handle). On a success step the reward is exactly 10; off
success the formulas stay strictly below 10, so r = 10 iff success.
Success means d < 0.05. Rotation tasks fold the success margin into d
(d = remaining_angle * radius + 0.05 until the target sweep, then 0)
so that d < 0.05 coincides exactly with "swept past the target angle".
button_press uses the composite d = |effector - pad| + 0.25 * max(0,
0.9 - grip): success requires being on the pad with the grip pressed.

Episodes are fixed horizon: done only at step == episode_length.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, UsageError

ARENA_HALF = 1.0
START = (0.0, -0.8)
SPEED = 0.05
CONTACT_RADIUS = 0.1
SUCCESS_DIST = 0.05
MIN_SEPARATION = 0.2
REWARD_MAX = 10.0
DECAY = 0.25
APPROACH_COEF = 2.0
MAIN_COEF = 7.0
GRIP_ATTACH = 0.5
PRESS_GRIP = 0.9
PRESS_WEIGHT = 0.25
FAUCET_RADIUS = 0.25
FAUCET_TARGET = np.pi / 2
DOOR_RADIUS = 0.3
DOOR_TARGET = np.pi / 4
DOOR_PUSH_RATE = 0.08
ROTATE_MAX_STEP = 0.25

TIER_BY_TASK = {
    "reach": 1,
    "push": 1,
    "pick_place": 1,
    "reach_wall": 2,
    "push_wall": 2,
    "bin_pick": 2,
    "button_press": 3,
    "faucet_rotate": 3,
    "door_open": 3,
}
TASK_NAMES = tuple(TIER_BY_TASK)
TIER1_TASKS = ("reach", "push", "pick_place")

# tier-2 tasks reuse their base task's dynamics and reward verbatim
BASE_TASK = {"reach_wall": "reach", "push_wall": "push", "bin_pick": "pick_place"}


def base_task(name: str) -> str:
    return BASE_TASK.get(name, name)


@dataclass(frozen=True)
class Wall:
    """A blocking segment; motion whose path crosses it is cancelled."""

    ax: float
    ay: float
    bx: float
    by: float

    def as_points(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.ax, self.ay]), np.array([self.bx, self.by])


@dataclass(frozen=True)
class SubTask:
    """One parametric variant of a task.

    Rotation analogs carry the pivot and initial handle angle as extra
    real-valued parameters; goal_position is then the handle tip's
    target location and object_position its initial location.
    """

    task_name: str
    goal_position: tuple[float, float]
    object_position: Optional[tuple[float, float]] = None
    wall: Optional[Wall] = None
    pivot: Optional[tuple[float, float]] = None
    start_angle: float = 0.0
    rng_seed: int = 0


@dataclass(frozen=True)
class ObsLayout:
    """Observation: effector xy, grip, object xy (zeros when absent),
    goal xy, then task one-hot slots (zeros when n_task_slots == 0)."""

    n_task_slots: int = 0
    task_index: int = -1

    @property
    def dim(self) -> int:
        return 7 + self.n_task_slots


@dataclass(frozen=True)
class TaskSpec:
    task_name: str
    tier: int
    pool_size: int = 20
    episode_length: int = 200
    pool_seed: int = 0
    layout: ObsLayout = ObsLayout()

    def __post_init__(self):
        if self.task_name not in TIER_BY_TASK:
            raise ConfigurationError(f"unknown task {self.task_name!r}; valid: {TASK_NAMES}")
        if self.tier != TIER_BY_TASK[self.task_name]:
            raise ConfigurationError(
                f"task {self.task_name} is tier {TIER_BY_TASK[self.task_name]}, got {self.tier}"
            )
        if self.pool_size < 1:
            raise ConfigurationError("sub-task pool must be nonempty")
        if self.episode_length < 1:
            raise ConfigurationError("episode length must be positive")


def make_task_spec(name: str, pool_seed: int = 0, pool_size: int = 20,
                   episode_length: int = 200, layout: ObsLayout = ObsLayout()) -> TaskSpec:
    if name not in TIER_BY_TASK:
        raise ConfigurationError(f"unknown task {name!r}; valid: {TASK_NAMES}")
    return TaskSpec(name, TIER_BY_TASK[name], pool_size, episode_length, pool_seed, layout)


def _sample_point(rng, lo=-0.7, hi=0.7):
    return rng.uniform(lo, hi, size=2)


def _sample_away_from(rng, anchors, min_dist, lo=-0.7, hi=0.7):
    for _ in range(1000):
        p = _sample_point(rng, lo, hi)
        if all(np.linalg.norm(p - np.asarray(a)) >= d for a, d in anchors):
            return p
    raise ConfigurationError("sub-task sampling failed to satisfy separation constraints")


def _perp_wall(center: np.ndarray, through: np.ndarray, half_len: float) -> Wall:
    """Wall through `center`, perpendicular to the direction `through`."""
    d = through / (np.linalg.norm(through) + 1e-12)
    p = np.array([-d[1], d[0]])
    a = np.clip(center + half_len * p, -0.95, 0.95)
    b = np.clip(center - half_len * p, -0.95, 0.95)
    return Wall(float(a[0]), float(a[1]), float(b[0]), float(b[1]))


def _generate_subtask(task_name: str, seed: int) -> SubTask:
    rng = np.random.default_rng(seed)
    start = np.asarray(START)
    base = base_task(task_name)

    if base == "reach" and task_name != "button_press":
        goal = _sample_away_from(rng, [(start, 0.3)], 0.3)
        wall = None
        if task_name == "reach_wall":
            center = (start + goal) / 2.0 + rng.uniform(-0.1, 0.1, size=2)
            wall = _perp_wall(center, goal - start, 0.25)
        return SubTask(task_name, tuple(goal), None, wall, rng_seed=seed)

    if base in ("push", "pick_place"):
        obj = _sample_away_from(rng, [(start, 0.25)], 0.25, -0.6, 0.6)
        goal = _sample_away_from(rng, [(obj, MIN_SEPARATION), (start, 0.25)], MIN_SEPARATION)
        wall = None
        if task_name == "push_wall":
            center = (obj + goal) / 2.0 + rng.uniform(-0.08, 0.08, size=2)
            wall = _perp_wall(center, goal - obj, 0.2)
        elif task_name == "bin_pick":
            u = (goal - obj) / (np.linalg.norm(goal - obj) + 1e-12)
            center = goal - 0.15 * u + rng.uniform(-0.05, 0.05, size=2)
            wall = _perp_wall(center, goal - obj, 0.15)
        return SubTask(task_name, tuple(goal), tuple(obj), wall, rng_seed=seed)

    if task_name == "button_press":
        pad = _sample_away_from(rng, [(start, 0.3)], 0.3)
        return SubTask(task_name, tuple(pad), None, rng_seed=seed)

    if task_name == "faucet_rotate":
        pivot = _sample_away_from(rng, [(start, 0.3)], 0.3, -0.6, 0.6)
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        tip0 = pivot + FAUCET_RADIUS * np.array([np.cos(theta0), np.sin(theta0)])
        tip_t = pivot + FAUCET_RADIUS * np.array(
            [np.cos(theta0 + FAUCET_TARGET), np.sin(theta0 + FAUCET_TARGET)]
        )
        return SubTask(task_name, tuple(tip_t), tuple(tip0),
                       pivot=tuple(pivot), start_angle=theta0, rng_seed=seed)

    if task_name == "door_open":
        hinge = _sample_away_from(rng, [(start, 0.3)], 0.3, -0.6, 0.6)
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        tip0 = hinge + DOOR_RADIUS * np.array([np.cos(theta0), np.sin(theta0)])
        tip_t = hinge + DOOR_RADIUS * np.array(
            [np.cos(theta0 + DOOR_TARGET), np.sin(theta0 + DOOR_TARGET)]
        )
        return SubTask(task_name, tuple(tip_t), tuple(tip0),
                       pivot=tuple(hinge), start_angle=theta0, rng_seed=seed)

    raise ConfigurationError(f"unknown task {task_name!r}")


_POOL_CACHE: dict[tuple[str, int, int], tuple[SubTask, ...]] = {}


def subtask_pool(spec: TaskSpec) -> tuple[SubTask, ...]:
    """The spec's fixed pool: pool_size sub-tasks derived from pool_seed."""
    key = (spec.task_name, spec.pool_seed, spec.pool_size)
    if key not in _POOL_CACHE:
        name_digest = int.from_bytes(
            hashlib.sha256(spec.task_name.encode()).digest()[:4], "big"
        )
        root = np.random.SeedSequence([spec.pool_seed, name_digest])
        seeds = root.generate_state(spec.pool_size)
        _POOL_CACHE[key] = tuple(_generate_subtask(spec.task_name, int(s)) for s in seeds)
    return _POOL_CACHE[key]


def sample_subtask(spec: TaskSpec, rng: np.random.Generator) -> SubTask:
    pool = subtask_pool(spec)
    if not pool:
        raise ConfigurationError("empty sub-task pool")
    return pool[int(rng.integers(len(pool)))]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    success: bool


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of segments p1-p2 and q1-q2."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
                and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def _point_segment_dist(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _wrap_angle(x: float) -> float:
    return float((x + np.pi) % (2.0 * np.pi) - np.pi)


class PointWorld:
    """One environment instance; independent value, no shared state."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self._sub: Optional[SubTask] = None
        self._steps_taken = 0
        self._done = True

    def reset(self, sub_task: SubTask) -> np.ndarray:
        if base_task(sub_task.task_name) != base_task(self.spec.task_name):
            raise ConfigurationError(
                f"sub-task {sub_task.task_name} incompatible with spec {self.spec.task_name}"
            )
        self._sub = sub_task
        self._steps_taken = 0
        self._done = False
        self.effector = np.asarray(START, dtype=np.float64).copy()
        self.grip = 0.0
        self.goal = np.asarray(sub_task.goal_position, dtype=np.float64)
        self.obj = (None if sub_task.object_position is None
                    else np.asarray(sub_task.object_position, dtype=np.float64).copy())
        self.attached = False
        self.theta = sub_task.start_angle
        self.swept = 0.0
        return self._observe()

    def _observe(self) -> np.ndarray:
        lay = self.spec.layout
        obs = np.zeros(lay.dim)
        obs[0:2] = self.effector
        obs[2] = self.grip
        if self.obj is not None:
            obs[3:5] = self.obj
        obs[5:7] = self.goal
        if lay.n_task_slots > 0 and 0 <= lay.task_index < lay.n_task_slots:
            obs[7 + lay.task_index] = 1.0
        return obs

    def _blocked(self, old: np.ndarray, new: np.ndarray) -> bool:
        wall = self._sub.wall
        if wall is None:
            return False
        a, b = wall.as_points()
        return _segments_intersect(old, new, a, b)

    def _tip(self) -> np.ndarray:
        pivot = np.asarray(self._sub.pivot)
        radius = FAUCET_RADIUS if self._sub.task_name == "faucet_rotate" else DOOR_RADIUS
        return pivot + radius * np.array([np.cos(self.theta), np.sin(self.theta)])

    def _primary_distance(self) -> float:
        name = self._sub.task_name
        base = base_task(name)
        if name == "button_press":
            return float(np.linalg.norm(self.effector - self.goal)
                         + PRESS_WEIGHT * max(0.0, PRESS_GRIP - self.grip))
        if base == "reach":
            return float(np.linalg.norm(self.effector - self.goal))
        if base in ("push", "pick_place"):
            return float(np.linalg.norm(self.obj - self.goal))
        if name == "faucet_rotate":
            remaining = FAUCET_TARGET - self.swept
            return 0.0 if remaining <= 0.0 else remaining * FAUCET_RADIUS + SUCCESS_DIST
        if name == "door_open":
            remaining = DOOR_TARGET - self.swept
            return 0.0 if remaining <= 0.0 else remaining * DOOR_RADIUS + SUCCESS_DIST
        raise ConfigurationError(f"unknown task {name!r}")

    def _reward_and_success(self) -> tuple[float, bool]:
        d = self._primary_distance()
        success = d < SUCCESS_DIST
        if success:
            return REWARD_MAX, True
        name = self._sub.task_name
        base = base_task(name)
        if base == "reach" or name == "button_press":
            r = REWARD_MAX * np.exp(-d / DECAY)
        else:
            if base in ("push", "pick_place"):
                d_eff = float(np.linalg.norm(self.effector - self.obj))
            elif name == "faucet_rotate":
                d_eff = float(np.linalg.norm(self.effector - self._tip()))
            else:
                pivot = np.asarray(self._sub.pivot)
                d_eff = _point_segment_dist(self.effector, pivot, self._tip())
            r = APPROACH_COEF * np.exp(-d_eff / DECAY) + MAIN_COEF * np.exp(-d / DECAY)
        return float(min(r, REWARD_MAX)), False

    def step(self, action: np.ndarray) -> StepResult:
        if self._done or self._sub is None:
            raise UsageError("step called on a finished episode; reset first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.shape != (3,):
            raise UsageError(f"action must be a 3-vector, got shape {a.shape}")

        old = self.effector.copy()
        new = np.clip(old + SPEED * a[:2], -ARENA_HALF, ARENA_HALF)
        if self._blocked(old, new):
            new = old
        self.effector = new
        self.grip = float((a[2] + 1.0) / 2.0)

        name = self._sub.task_name
        base = base_task(name)
        if base == "push" and self.obj is not None:
            disp = new - old
            toward = float(disp @ (self.obj - old))
            if np.linalg.norm(new - self.obj) < CONTACT_RADIUS and toward > 0.0 and np.any(disp):
                target = np.clip(self.obj + disp, -ARENA_HALF, ARENA_HALF)
                if not self._blocked(self.obj, target):
                    self.obj = target
        elif base == "pick_place" and self.obj is not None:
            if self.attached and self.grip < GRIP_ATTACH:
                self.attached = False
            if (not self.attached and self.grip > GRIP_ATTACH
                    and np.linalg.norm(new - self.obj) < CONTACT_RADIUS):
                self.attached = True
            if self.attached:
                target = self.effector.copy()
                if not self._blocked(self.obj, target):
                    self.obj = target
        elif name == "faucet_rotate":
            tip = self._tip()
            moved = bool(np.any(new != old))
            if moved and np.linalg.norm(self.effector - tip) < CONTACT_RADIUS:
                pivot = np.asarray(self._sub.pivot)
                phi = float(np.arctan2(*(self.effector - pivot)[::-1]))
                delta = np.clip(_wrap_angle(phi - self.theta), -ROTATE_MAX_STEP, ROTATE_MAX_STEP)
                self.theta = float(self.theta + delta)
                self.swept = float(np.clip(self.swept + delta, -np.pi, np.pi))
        elif name == "door_open":
            pivot = np.asarray(self._sub.pivot)
            moved = bool(np.any(new != old))
            if moved and _point_segment_dist(self.effector, pivot, self._tip()) < CONTACT_RADIUS:
                # one-way hinge: a moving contact swings the door open at a fixed rate
                delta = min(DOOR_PUSH_RATE, np.pi / 2 - self.swept)
                self.theta = float(self.theta + delta)
                self.swept = float(self.swept + delta)
        if name in ("faucet_rotate", "door_open"):
            self.obj = self._tip()

        reward, success = self._reward_and_success()
        self._steps_taken += 1
        self._done = self._steps_taken == self.spec.episode_length
        return StepResult(self._observe(), reward, self._done, success)


def success_rate(episode_successes: list[bool]) -> float:
    """Fraction of episodes that hit success on any step."""
    if not episode_successes:
        raise UsageError("success_rate needs at least one episode")
    return float(sum(bool(s) for s in episode_successes)) / len(episode_successes)
