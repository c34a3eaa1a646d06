"""Rollouts, GAE, PPO, RL^2 meta-training, bi-hemispheric training.

Observation contract: every agent sees the base environment observation
augmented with (previous pre-clip action, previous reward / 10, previous
done flag), all zeros on the first step of a fresh recurrent state. The
same augmented layout is used in meta-training and the main experiments
so a meta-trained network can be embedded unchanged. The reward slot is
scaled by 1/10 to match the [-1, 1] range of the other inputs; the
value-estimate errors fed to the gating network use the normalized
reward, the same signal the learner's loss sees.

Episode batches run in lockstep: B environments advance together, one
network forward per timestep over a (B, dim) matrix. Episodes all have
the same fixed horizon, so no masking is needed. PPO updates replay the
stored observation sequences to rebuild hidden states with the current
parameters; the frozen right hemisphere's rollout outputs are reused as
constants during replay (its parameters are never part of the graph).
During the bi-hemispheric replay the gating recursion is rebuilt in the
graph: gate inputs at step t use the replayed gates and value estimates
from step t-1, so gradients flow through the whole unrolled trajectory.

RL^2 trials hold one sub-task for 10 episodes with the hidden state
carried across episode boundaries and reset between trials. Replay for
the meta update is truncated at episode boundaries: each episode chunk
starts from its stored rollout hidden state (a constant), which bounds
graph memory at one episode; hidden values, not gradients, cross the
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .agent import (
    BiHemisphericAgent,
    GatingNetwork,
    GaussianPolicy,
    HemisphereNetwork,
    RandomAgent,
    SingleHemisphereAgent,
    compose_mean,
    compose_value,
    hemispheric_penalty,
)
from .envs import PointWorld, TaskSpec, sample_subtask
from .errors import ConfigurationError, NumericError, UsageError
from .optim import Adam, clip_grad_norm

VALUE_COEF = 0.5
GRAD_CLIP = 0.5
REWARD_OBS_SCALE = 0.1

FULL_SCALE_MAIN_LR = {
    "reach": 1e-5,
    "push": 1e-4,
    "pick_place": 1e-4,
    "reach_wall": 1e-5,
    "push_wall": 1e-4,
    "bin_pick": 1e-4,
    "faucet_rotate": 1e-5,
    "door_open": 1e-5,
    "button_press": 1e-5,
}


@dataclass
class PPOConfig:
    learning_rate: float = 3e-4
    entropy_coef: float = 1e-5
    gamma: float = 0.99
    lam: float = 0.97
    clip: float = 0.2
    epochs: int = 8
    batch_episodes: int = 20
    normalize_rewards: bool = True
    value_coef: float = VALUE_COEF
    grad_clip: float = GRAD_CLIP

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigurationError(f"lambda must be in [0, 1], got {self.lam}")
        if self.clip <= 0.0:
            raise ConfigurationError("clip must be positive")
        if self.epochs < 1 or self.batch_episodes < 1:
            raise ConfigurationError("epochs and batch size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ConfigurationError("learning rate must be positive")

    @staticmethod
    def full_scale_main_defaults(task_name: str) -> "PPOConfig":
        """Per-task settings for the full-scale regime the desk runs scale down from."""
        if task_name not in FULL_SCALE_MAIN_LR:
            raise ConfigurationError(f"no full-scale settings for task {task_name!r}")
        return PPOConfig(
            learning_rate=FULL_SCALE_MAIN_LR[task_name],
            entropy_coef=1e-5,
            gamma=0.99,
            lam=0.9 if task_name == "door_open" else 0.97,
            clip=0.2,
            epochs=8,
            batch_episodes=20,
            normalize_rewards=True,
        )

    @staticmethod
    def full_scale_meta_defaults() -> "PPOConfig":
        """Meta-training settings for the full-scale regime."""
        return PPOConfig(
            learning_rate=5e-4,
            entropy_coef=5e-6,
            gamma=0.99,
            lam=0.97,
            clip=0.2,
            epochs=10,
            batch_episodes=20,
            normalize_rewards=True,
        )


class RewardNormalizer:
    """Running-moment reward normalization; a monotone affine map per step."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, rewards: np.ndarray) -> None:
        if not self.enabled:
            return
        batch = np.asarray(rewards, dtype=np.float64).reshape(-1)
        n = batch.size
        if n == 0:
            return
        b_mean = float(batch.mean())
        b_m2 = float(np.sum((batch - b_mean) ** 2))
        delta = b_mean - self.mean
        total = self.count + n
        self.mean += delta * n / total
        self.m2 += b_m2 + delta * delta * self.count * n / total
        self.count = total

    def normalize(self, rewards: np.ndarray) -> np.ndarray:
        r = np.asarray(rewards, dtype=np.float64)
        if not self.enabled:
            return r.copy()
        var = self.m2 / self.count if self.count > 0 else 0.0
        return (r - self.mean) / np.sqrt(var + 1e-8)

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2,
                "enabled": self.enabled}

    @classmethod
    def from_state(cls, s: dict) -> "RewardNormalizer":
        n = cls(enabled=bool(s["enabled"]))
        n.count, n.mean, n.m2 = int(s["count"]), float(s["mean"]), float(s["m2"])
        return n


def augment_obs(base: np.ndarray, prev_action: np.ndarray,
                prev_reward_raw: np.ndarray, prev_done: np.ndarray) -> np.ndarray:
    """(B, D) + (B, A) + (B,) + (B,) -> (B, D + A + 2)"""
    return np.concatenate(
        [base, prev_action,
         (prev_reward_raw * REWARD_OBS_SCALE)[:, None],
         prev_done[:, None]],
        axis=1,
    )


def augmented_dim(spec: TaskSpec, action_dim: int = 3) -> int:
    return spec.layout.dim + action_dim + 2


def gaussian_logp(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Closed-form diagonal Gaussian log density, summed over dims: (B,)."""
    z = (actions - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) \
        - 0.5 * actions.shape[-1] * np.log(2.0 * np.pi)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: Optional[np.ndarray],
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE with terminal bootstrap 0 at episode ends.

    A_t = delta_t + gamma * lam * (1 - d_t) * A_{t+1}
    delta_t = r_t + gamma * (1 - d_t) * V_{t+1} - V_t
    returns_t = A_t + V_t. Works on (T,) or (T, B) arrays; dones None means
    "single episode ending at the last step", which the bootstrap-0 start
    already encodes.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise UsageError(
            f"rewards and values must have equal shapes: {rewards.shape} vs {values.shape}"
        )
    if dones is not None:
        dones = np.asarray(dones, dtype=np.float64)
        if dones.shape != rewards.shape:
            raise UsageError(
                f"dones shape {dones.shape} must match rewards shape {rewards.shape}"
            )
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.zeros_like(rewards[0] if rewards.ndim > 1 else 0.0)
    next_adv = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t] if dones is not None else 1.0
        delta = rewards[t] + gamma * live * next_value - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


@dataclass
class Rollout:
    """B same-length episodes collected in lockstep; arrays are (T, B, ...)."""

    obs: np.ndarray            # (T, B, D_aug)
    actions: np.ndarray        # (T, B, A) pre-clip
    logp_old: np.ndarray       # (T, B)
    rewards_raw: np.ndarray    # (T, B)
    rewards_norm: np.ndarray   # (T, B)
    values: np.ndarray         # (T, B) critic used for GAE at rollout time
    episode_success: np.ndarray  # (B,) bool, success on any step
    # bi-hemispheric extras (None for single-hemisphere rollouts)
    v_right: Optional[np.ndarray] = None   # (T, B)
    mu_right: Optional[np.ndarray] = None  # (T, B, A)
    p_left: Optional[np.ndarray] = None    # (T, B)

    @property
    def steps(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    @property
    def mean_reward_raw(self) -> float:
        return float(self.rewards_raw.mean())

    @property
    def success_fraction(self) -> float:
        return float(self.episode_success.mean())


def _make_envs(spec: TaskSpec, n: int, rng: np.random.Generator) -> list[PointWorld]:
    envs = []
    for _ in range(n):
        env = PointWorld(spec)
        env.reset(sample_subtask(spec, rng))
        envs.append(env)
    return envs


def collect_single(agent: SingleHemisphereAgent, spec: TaskSpec, n_episodes: int,
                   rng: np.random.Generator, normalizer: RewardNormalizer) -> Rollout:
    """Lockstep batch of fresh-hidden episodes for a single-hemisphere agent."""
    B, T, A = n_episodes, spec.episode_length, agent.action_dim
    envs = _make_envs(spec, B, rng)
    base = np.stack([e._observe() for e in envs])
    prev_a = np.zeros((B, A))
    prev_r = np.zeros(B)
    prev_d = np.zeros(B)
    D = augmented_dim(spec, A)

    obs = np.empty((T, B, D))
    actions = np.empty((T, B, A))
    logp = np.empty((T, B))
    r_raw = np.empty((T, B))
    r_norm = np.empty((T, B))
    values = np.empty((T, B))
    success = np.zeros(B, dtype=bool)

    std = np.exp(agent.log_std.data)
    with no_grad():
        h = agent.net.initial_hidden(B)
        for t in range(T):
            obs[t] = augment_obs(base, prev_a, prev_r, prev_d)
            mu, v, h = agent.net.forward(Tensor(obs[t]), h)
            a = mu.data + rng.standard_normal((B, A)) * std
            actions[t] = a
            logp[t] = gaussian_logp(a, mu.data, agent.log_std.data)
            values[t] = v.data[:, 0]
            clipped = np.clip(a, -1.0, 1.0)
            for i, env in enumerate(envs):
                res = env.step(clipped[i])
                base[i] = res.observation
                r_raw[t, i] = res.reward
                success[i] |= res.success
            normalizer.update(r_raw[t])
            r_norm[t] = normalizer.normalize(r_raw[t])
            prev_a, prev_r, prev_d = a, r_raw[t], np.zeros(B)
    return Rollout(obs, actions, logp, r_raw, r_norm, values, success)


def collect_bihem(agent: BiHemisphericAgent, spec: TaskSpec, n_episodes: int,
                  rng: np.random.Generator, normalizer: RewardNormalizer) -> Rollout:
    """Composed rollout: right (frozen) + left + gating, all hidden reset here."""
    B, T, A = n_episodes, spec.episode_length, agent.action_dim
    envs = _make_envs(spec, B, rng)
    base = np.stack([e._observe() for e in envs])
    prev_a = np.zeros((B, A))
    prev_r = np.zeros(B)
    prev_d = np.zeros(B)
    D = augmented_dim(spec, A)

    obs = np.empty((T, B, D))
    actions = np.empty((T, B, A))
    logp = np.empty((T, B))
    r_raw = np.empty((T, B))
    r_norm = np.empty((T, B))
    values = np.empty((T, B))
    v_right = np.empty((T, B))
    mu_right = np.empty((T, B, A))
    p_left_log = np.empty((T, B))
    success = np.zeros(B, dtype=bool)

    std = np.exp(agent.log_std.data)
    with no_grad():
        h_r = agent.right.initial_hidden(B)
        h_l = agent.left.initial_hidden(B)
        h_g = agent.gating.initial_hidden(B)
        p_r_prev = np.full((B, 1), 0.5)
        p_l_prev = np.full((B, 1), 0.5)
        v_r_prev = np.zeros((B, 1))
        v_l_prev = np.zeros((B, 1))
        rn_prev = np.zeros((B, 1))
        for t in range(T):
            obs[t] = augment_obs(base, prev_a, prev_r, prev_d)
            x = Tensor(obs[t])
            mu_r, v_r, h_r = agent.right.forward(x, h_r)
            mu_l, v_l, h_l = agent.left.forward(x, h_l)
            if t == 0:
                gin = Tensor(GatingNetwork.bootstrap_input(B))
            else:
                gin = Tensor(np.concatenate(
                    [p_r_prev, p_l_prev, v_r_prev - rn_prev, v_l_prev - rn_prev], axis=1))
            p_r, p_l, h_g = agent.gating.forward(gin, h_g)
            mu = compose_mean(p_r, mu_r, mu_l)
            v = compose_value(p_r, v_r, v_l)

            a = mu.data + rng.standard_normal((B, A)) * std
            actions[t] = a
            logp[t] = gaussian_logp(a, mu.data, agent.log_std.data)
            values[t] = v.data[:, 0]
            v_right[t] = v_r.data[:, 0]
            mu_right[t] = mu_r.data
            p_left_log[t] = p_l.data[:, 0]

            clipped = np.clip(a, -1.0, 1.0)
            for i, env in enumerate(envs):
                res = env.step(clipped[i])
                base[i] = res.observation
                r_raw[t, i] = res.reward
                success[i] |= res.success
            normalizer.update(r_raw[t])
            r_norm[t] = normalizer.normalize(r_raw[t])
            prev_a, prev_r, prev_d = a, r_raw[t], np.zeros(B)
            p_r_prev, p_l_prev = p_r.data.copy(), p_l.data.copy()
            v_r_prev, v_l_prev = v_r.data.copy(), v_l.data.copy()
            rn_prev = r_norm[t][:, None].copy()
    return Rollout(obs, actions, logp, r_raw, r_norm, values, success,
                   v_right=v_right, mu_right=mu_right, p_left=p_left_log)


def collect_left_alone(agent: BiHemisphericAgent, spec: TaskSpec, n_episodes: int,
                       rng: np.random.Generator, normalizer: RewardNormalizer) -> Rollout:
    """Left hemisphere acting by itself: the P_left = 1 composition path."""
    proxy = SingleHemisphereAgent.__new__(SingleHemisphereAgent)
    proxy.net = agent.left
    proxy.log_std = agent.log_std
    proxy.obs_dim = agent.obs_dim
    proxy.action_dim = agent.action_dim
    return collect_single(proxy, spec, n_episodes, rng, normalizer)


def evaluate_random(agent: RandomAgent, spec: TaskSpec, n_episodes: int,
                    rng: np.random.Generator) -> tuple[float, float]:
    """(mean raw reward, success rate) of uniform actions over n episodes."""
    rewards = []
    succ = []
    for _ in range(n_episodes):
        env = PointWorld(spec)
        env.reset(sample_subtask(spec, rng))
        hit = False
        for _ in range(spec.episode_length):
            res = env.step(agent.act(rng, 1)[0])
            rewards.append(res.reward)
            hit |= res.success
        succ.append(hit)
    return float(np.mean(rewards)), float(np.mean(succ))


def evaluate_single(agent: SingleHemisphereAgent, spec: TaskSpec, n_episodes: int,
                    rng: np.random.Generator, stochastic: bool = True) -> tuple[float, float]:
    """(mean raw reward, success rate) without updating anything."""
    normalizer = RewardNormalizer(enabled=False)
    rewards = []
    succ = []
    remaining = n_episodes
    while remaining > 0:
        b = min(remaining, 50)
        roll = collect_single(agent, spec, b, rng, normalizer)
        if not stochastic:
            raise UsageError("deterministic evaluation not supported")
        rewards.append(roll.rewards_raw)
        succ.append(roll.episode_success)
        remaining -= b
    return float(np.concatenate([r.reshape(-1) for r in rewards]).mean()), \
        float(np.concatenate(succ).mean())


def _flatten_time(chunks: list[Tensor]) -> Tensor:
    """Stack per-step (B, 1) tensors into ((T * B), 1)."""
    return ad.concat(chunks, axis=0)


def _ppo_scalar_losses(logp_new: Tensor, logp_old: np.ndarray, adv: np.ndarray,
                       v_new: Tensor, returns: np.ndarray, cfg: PPOConfig,
                       entropy: Tensor) -> tuple[Tensor, dict]:
    """Clipped surrogate + value MSE - entropy bonus over flattened samples."""
    ratio = ad.exp(logp_new - Tensor(logp_old))
    adv_t = Tensor(adv)
    unclipped = ratio * adv_t
    clipped = ad.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_t
    policy_loss = -(ad.minimum(unclipped, clipped).mean())
    diff = v_new - Tensor(returns)
    value_loss = (diff * diff).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    diag = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "mean_ratio": float(ratio.data.mean()),
    }
    return loss, diag


def _normalized_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update_single(agent: SingleHemisphereAgent, rollout: Rollout,
                      cfg: PPOConfig, opt: Adam) -> dict:
    """Full-episode recurrent PPO update for a lone hemisphere."""
    T, B, _ = rollout.obs.shape
    adv, returns = compute_gae(rollout.rewards_norm if cfg.normalize_rewards
                               else rollout.rewards_raw,
                               rollout.values, None, cfg.gamma, cfg.lam)
    adv = _normalized_advantages(adv)
    adv_flat = adv.reshape(T * B, 1)
    ret_flat = returns.reshape(T * B, 1)
    logp_old_flat = rollout.logp_old.reshape(T * B, 1)
    diag: dict = {}
    for _ in range(cfg.epochs):
        h = agent.net.initial_hidden(B)
        logp_chunks: list[Tensor] = []
        v_chunks: list[Tensor] = []
        for t in range(T):
            mu, v, h = agent.net.forward(Tensor(rollout.obs[t]), h)
            pol = agent.policy(mu)
            logp_chunks.append(pol.log_prob(rollout.actions[t]))
            v_chunks.append(v)
        logp_new = _flatten_time(logp_chunks)
        v_new = _flatten_time(v_chunks)
        entropy = agent.policy(mu).entropy()
        loss, diag = _ppo_scalar_losses(logp_new, logp_old_flat, adv_flat,
                                        v_new, ret_flat, cfg, entropy)
        ad.check_finite(loss.data, "PPO loss")
        opt.zero_grad()
        backward(loss)
        diag["grad_norm"] = clip_grad_norm(agent.params(), cfg.grad_clip)
        opt.step()
    return diag


def _replay_bihem(agent: BiHemisphericAgent, rollout: Rollout) -> dict:
    """Rebuild the composed trajectory in the graph with current parameters.

    Right-hemisphere outputs come from the rollout as constants; left and
    gating are recomputed, with gate inputs wired to the replayed previous
    gates and value estimates.
    """
    T, B, _ = rollout.obs.shape
    h_l = agent.left.initial_hidden(B)
    h_g = agent.gating.initial_hidden(B)
    logp_chunks, v_chunks, pr_chunks, pl_chunks = [], [], [], []
    p_r_prev = p_l_prev = v_l_prev = None
    for t in range(T):
        x = Tensor(rollout.obs[t])
        mu_l, v_l, h_l = agent.left.forward(x, h_l)
        if t == 0:
            gin = Tensor(GatingNetwork.bootstrap_input(B))
        else:
            eps_r = Tensor(rollout.v_right[t - 1][:, None]
                           - rollout.rewards_norm[t - 1][:, None])
            eps_l = v_l_prev - Tensor(rollout.rewards_norm[t - 1][:, None])
            gin = ad.concat([p_r_prev, p_l_prev, eps_r, eps_l], axis=1)
        p_r, p_l, h_g = agent.gating.forward(gin, h_g)
        mu = compose_mean(p_r, Tensor(rollout.mu_right[t]), mu_l)
        v = compose_value(p_r, Tensor(rollout.v_right[t][:, None]), v_l)
        pol = agent.policy(mu)
        logp_chunks.append(pol.log_prob(rollout.actions[t]))
        v_chunks.append(v)
        pr_chunks.append(p_r)
        pl_chunks.append(p_l)
        p_r_prev, p_l_prev, v_l_prev = p_r, p_l, v_l
    return {
        "logp_new": _flatten_time(logp_chunks),
        "v_new": _flatten_time(v_chunks),
        "p_right": _flatten_time(pr_chunks),
        "p_left": _flatten_time(pl_chunks),
        "mu_last": mu,
    }


def _left_value_loss(agent: BiHemisphericAgent, eval_rollout: Rollout,
                     cfg: PPOConfig) -> Tensor:
    """Value regression for the lone left hemisphere on its own episodes."""
    T, B, _ = eval_rollout.obs.shape
    _, returns = compute_gae(eval_rollout.rewards_norm if cfg.normalize_rewards
                             else eval_rollout.rewards_raw,
                             eval_rollout.values, None, cfg.gamma, cfg.lam)
    h = agent.left.initial_hidden(B)
    v_chunks = []
    for t in range(T):
        _, v, h = agent.left.forward(Tensor(eval_rollout.obs[t]), h)
        v_chunks.append(v)
    v_new = _flatten_time(v_chunks)
    diff = v_new - Tensor(returns.reshape(T * B, 1))
    return (diff * diff).mean()


def ppo_update_bihem(agent: BiHemisphericAgent, rollout: Rollout,
                     cfg: PPOConfig, opt: Adam,
                     eval_rollout: Optional[Rollout] = None) -> dict:
    """PPO + responsibility penalty; only left/gating/log-std get gradients."""
    T, B, _ = rollout.obs.shape
    adv, returns = compute_gae(rollout.rewards_norm if cfg.normalize_rewards
                               else rollout.rewards_raw,
                               rollout.values, None, cfg.gamma, cfg.lam)
    adv = _normalized_advantages(adv)
    adv_flat = adv.reshape(T * B, 1)
    ret_flat = returns.reshape(T * B, 1)
    logp_old_flat = rollout.logp_old.reshape(T * B, 1)
    diag: dict = {}
    for _ in range(cfg.epochs):
        replay = _replay_bihem(agent, rollout)
        entropy = agent.policy(replay["mu_last"]).entropy()
        loss, diag = _ppo_scalar_losses(replay["logp_new"], logp_old_flat, adv_flat,
                                        replay["v_new"], ret_flat, cfg, entropy)
        penalty = hemispheric_penalty(replay["p_right"], replay["p_left"],
                                      agent.penalty).mean()
        loss = loss + penalty
        diag["penalty"] = penalty.item()
        if eval_rollout is not None:
            left_v = _left_value_loss(agent, eval_rollout, cfg)
            loss = loss + cfg.value_coef * left_v
            diag["left_value_loss"] = left_v.item()
        ad.check_finite(loss.data, "bi-hemispheric loss")
        opt.zero_grad()
        backward(loss)
        diag["grad_norm"] = clip_grad_norm(agent.trainable_params(), cfg.grad_clip)
        opt.step()
        agent.check_right_frozen()
    diag["median_p_left"] = float(np.median(rollout.p_left))
    return diag


def train_single(agent: SingleHemisphereAgent, spec: TaskSpec, cfg: PPOConfig,
                 total_steps: int, rng: np.random.Generator,
                 on_update: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Left-only baseline training; returns one log row per update."""
    opt = Adam(agent.params(), lr=cfg.learning_rate)
    normalizer = RewardNormalizer(enabled=cfg.normalize_rewards)
    rows = []
    steps = 0
    while steps < total_steps:
        rollout = collect_single(agent, spec, cfg.batch_episodes, rng, normalizer)
        steps += rollout.steps
        diag = ppo_update_single(agent, rollout, cfg, opt)
        row = {
            "step": steps,
            "mean_reward_raw": rollout.mean_reward_raw,
            "success_rate": rollout.success_fraction,
            "median_p_left": "",
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "entropy": diag["entropy"],
            "penalty": "",
            "left_alone_mean_reward": "",
        }
        rows.append(row)
        if on_update:
            on_update(row)
    return rows


def train_bihem(agent: BiHemisphericAgent, spec: TaskSpec, cfg: PPOConfig,
                total_steps: int, rng: np.random.Generator,
                eval_episodes: int = 4,
                on_update: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Bi-hemispheric training with interleaved left-alone evaluation.

    Only training episodes count toward the step budget; the left-alone
    episodes are measurement (and the left value head's own regression
    data), logged in their own column.
    """
    before = agent.right_hash()
    opt = Adam(agent.trainable_params(), lr=cfg.learning_rate)
    normalizer = RewardNormalizer(enabled=cfg.normalize_rewards)
    rows = []
    steps = 0
    while steps < total_steps:
        rollout = collect_bihem(agent, spec, cfg.batch_episodes, rng, normalizer)
        steps += rollout.steps
        eval_roll = None
        left_alone_reward = ""
        if eval_episodes > 0:
            eval_roll = collect_left_alone(agent, spec, eval_episodes, rng, normalizer)
            left_alone_reward = eval_roll.mean_reward_raw
        diag = ppo_update_bihem(agent, rollout, cfg, opt, eval_roll)
        row = {
            "step": steps,
            "mean_reward_raw": rollout.mean_reward_raw,
            "success_rate": rollout.success_fraction,
            "median_p_left": diag["median_p_left"],
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "entropy": diag["entropy"],
            "penalty": diag["penalty"],
            "left_alone_mean_reward": left_alone_reward,
        }
        rows.append(row)
        if on_update:
            on_update(row)
    if agent.right_hash() != before:
        raise AssertionError("frozen right-hemisphere parameters changed during training")
    return rows


@dataclass
class MetaRollout:
    """n_lanes parallel trials of E episodes each; arrays (E, T, B, ...)."""

    obs: np.ndarray          # (E, T, B, D_aug)
    actions: np.ndarray      # (E, T, B, A)
    logp_old: np.ndarray     # (E, T, B)
    rewards_raw: np.ndarray  # (E, T, B)
    rewards_norm: np.ndarray  # (E, T, B)
    values: np.ndarray       # (E, T, B)
    h0: np.ndarray           # (E, B, H) hidden at each episode start
    task_index: np.ndarray   # (B,)
    subtask_seeds: np.ndarray  # (B,) pool draw identity per lane

    @property
    def steps(self) -> int:
        e, t, b = self.rewards_raw.shape
        return e * t * b

    def episode_mean_rewards(self) -> np.ndarray:
        """(E, B): per-episode mean raw reward per lane."""
        return self.rewards_raw.mean(axis=1)


def collect_meta_trials(agent: SingleHemisphereAgent, specs: list[TaskSpec],
                        n_lanes: int, episodes_per_trial: int,
                        rng: np.random.Generator,
                        normalizer: RewardNormalizer) -> MetaRollout:
    """One batch of RL^2 trials: per lane, one sub-task held for E episodes,
    hidden state persisting across episode boundaries within the lane."""
    T = specs[0].episode_length
    if any(s.episode_length != T or s.layout.dim != specs[0].layout.dim for s in specs):
        raise ConfigurationError("meta-training tasks must share horizon and layout")
    B, A, E = n_lanes, agent.action_dim, episodes_per_trial
    D = augmented_dim(specs[0], A)
    H = agent.net.hidden

    task_idx = rng.integers(len(specs), size=B)
    sub_seeds = np.empty(B, dtype=np.int64)
    envs = []
    for i in range(B):
        spec = specs[int(task_idx[i])]
        env = PointWorld(spec)
        sub = sample_subtask(spec, rng)
        sub_seeds[i] = sub.rng_seed
        env.reset(sub)
        envs.append(env)

    obs = np.empty((E, T, B, D))
    actions = np.empty((E, T, B, A))
    logp = np.empty((E, T, B))
    r_raw = np.empty((E, T, B))
    r_norm = np.empty((E, T, B))
    values = np.empty((E, T, B))
    h0 = np.empty((E, B, H))

    std = np.exp(agent.log_std.data)
    prev_a = np.zeros((B, A))
    prev_r = np.zeros(B)
    prev_d = np.zeros(B)
    with no_grad():
        h = agent.net.initial_hidden(B)
        for ep in range(E):
            h0[ep] = h.data
            if ep > 0:
                for i, env in enumerate(envs):
                    env.reset(env._sub)  # same sub-task, fresh episode
                prev_d = np.ones(B)  # signal the boundary; hidden persists
            base = np.stack([e._observe() for e in envs])
            for t in range(T):
                obs[ep, t] = augment_obs(base, prev_a, prev_r, prev_d)
                mu, v, h = agent.net.forward(Tensor(obs[ep, t]), h)
                a = mu.data + rng.standard_normal((B, A)) * std
                actions[ep, t] = a
                logp[ep, t] = gaussian_logp(a, mu.data, agent.log_std.data)
                values[ep, t] = v.data[:, 0]
                clipped = np.clip(a, -1.0, 1.0)
                for i, env in enumerate(envs):
                    res = env.step(clipped[i])
                    base[i] = res.observation
                    r_raw[ep, t, i] = res.reward
                normalizer.update(r_raw[ep, t])
                r_norm[ep, t] = normalizer.normalize(r_raw[ep, t])
                prev_a, prev_r, prev_d = a, r_raw[ep, t], np.zeros(B)
    return MetaRollout(obs, actions, logp, r_raw, r_norm, values, h0, task_idx,
                       sub_seeds)


def ppo_update_meta(agent: SingleHemisphereAgent, rollout: MetaRollout,
                    cfg: PPOConfig, opt: Adam) -> dict:
    """PPO over trial data; replay truncated at episode boundaries."""
    E, T, B = rollout.rewards_raw.shape
    rew = rollout.rewards_norm if cfg.normalize_rewards else rollout.rewards_raw
    adv = np.empty((E, T, B))
    ret = np.empty((E, T, B))
    for ep in range(E):
        adv[ep], ret[ep] = compute_gae(rew[ep], rollout.values[ep], None, cfg.gamma, cfg.lam)
    adv = _normalized_advantages(adv)
    diag: dict = {}
    for _ in range(cfg.epochs):
        opt.zero_grad()
        acc = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        for ep in range(E):
            h = Tensor(rollout.h0[ep])
            logp_chunks, v_chunks = [], []
            for t in range(T):
                mu, v, h = agent.net.forward(Tensor(rollout.obs[ep, t]), h)
                pol = agent.policy(mu)
                logp_chunks.append(pol.log_prob(rollout.actions[ep, t]))
                v_chunks.append(v)
            logp_new = _flatten_time(logp_chunks)
            v_new = _flatten_time(v_chunks)
            entropy = agent.policy(mu).entropy()
            loss, d = _ppo_scalar_losses(
                logp_new, rollout.logp_old[ep].reshape(T * B, 1),
                adv[ep].reshape(T * B, 1), v_new, ret[ep].reshape(T * B, 1),
                cfg, entropy)
            ad.check_finite(loss.data, "meta PPO loss")
            backward(loss * (1.0 / E))
            for k in acc:
                acc[k] += d[k] / E
        diag = acc
        diag["grad_norm"] = clip_grad_norm(agent.params(), cfg.grad_clip)
        opt.step()
    return diag


def meta_train_rl2(agent: SingleHemisphereAgent, specs: list[TaskSpec],
                   cfg: PPOConfig, total_steps: int, rng: np.random.Generator,
                   episodes_per_trial: int = 10, lanes_per_update: int = 10,
                   checkpoint_path: Optional[str] = None,
                   on_update: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """RL^2 outer-loop PPO over multi-episode trials on the tier-1 tasks."""
    from .envs import TIER_BY_TASK

    for s in specs:
        if TIER_BY_TASK[s.task_name] != 1:
            raise ConfigurationError(
                f"meta-training tasks must be tier 1, got {s.task_name}")
    opt = Adam(agent.params(), lr=cfg.learning_rate)
    normalizer = RewardNormalizer(enabled=cfg.normalize_rewards)
    rows = []
    steps = 0
    while steps < total_steps:
        rollout = collect_meta_trials(agent, specs, lanes_per_update,
                                      episodes_per_trial, rng, normalizer)
        steps += rollout.steps
        diag = ppo_update_meta(agent, rollout, cfg, opt)
        ep_means = rollout.episode_mean_rewards()
        row = {
            "step": steps,
            "mean_reward_raw": float(rollout.rewards_raw.mean()),
            "episode1_mean_reward": float(ep_means[0].mean()),
            "episode_last_mean_reward": float(ep_means[-1].mean()),
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "entropy": diag["entropy"],
        }
        rows.append(row)
        if on_update:
            on_update(row)
    if checkpoint_path is not None:
        from .nn import save_checkpoint

        save_checkpoint(checkpoint_path, agent.params(), {
            "obs_dim": agent.obs_dim,
            "action_dim": agent.action_dim,
            "hidden": agent.net.hidden,
            "episodes_per_trial": episodes_per_trial,
            "total_steps": steps,
        })
    return rows


@dataclass
class AdaptationCurve:
    """Within-trial reward profile over a batch of probe trials."""

    per_trial: np.ndarray      # (E, N) mean raw reward per episode per trial
    subtask_seeds: np.ndarray  # (N,) pool draw identity per trial

    @property
    def episode_means(self) -> np.ndarray:
        """(E,) mean raw reward per within-trial episode over all trials."""
        return self.per_trial.mean(axis=1)

    @property
    def distinct_subtasks(self) -> int:
        return int(np.unique(self.subtask_seeds).size)


def adaptation_probe(agent: SingleHemisphereAgent, spec: TaskSpec, n_trials: int,
                     episodes_per_trial: int, rng: np.random.Generator,
                     on_chunk: Optional[Callable[[int], None]] = None) -> AdaptationCurve:
    """Measure within-trial adaptation on fresh sub-task draws; no updates."""
    normalizer = RewardNormalizer(enabled=False)
    means, seeds = [], []
    done = 0
    while done < n_trials:
        b = min(n_trials - done, 50)
        roll = collect_meta_trials(agent, [spec], b, episodes_per_trial, rng, normalizer)
        means.append(roll.episode_mean_rewards())
        seeds.append(roll.subtask_seeds)
        done += b
        if on_chunk:
            on_chunk(done)
    return AdaptationCurve(np.concatenate(means, axis=1), np.concatenate(seeds))
