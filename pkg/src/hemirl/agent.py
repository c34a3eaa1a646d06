"""Hemisphere networks, the gating network, and their composition.

A hemisphere is a GRU followed by two tanh-hidden heads of width 512:
one for the Gaussian action mean, one for the scalar value. The gating
network is a small GRU (hidden 64) over the 4-vector

    [previous P_right, previous P_left, eps_right, eps_left]

with a sigmoid head producing P_left; P_right = 1 - P_left exactly.
eps_h is the hemisphere's value-estimate error from the previous step,
V_h(t-1) - r(t-1). At t = 0 the input is (0.5, 0.5, 0, 0).

Composition of hemispheres h in {right, left}:

    V   = P_right * V_right + P_left * V_left
    mu  = P_right * mu_right + P_left * mu_left

and the responsibility penalty added to the loss is

    beta * (min(P_right / P_left, ratio_cap)) ** alpha

which is 0 when P_right = 0 and grows without bound (up to the cap) as
responsibility concentrates in the frozen right hemisphere. The cap
guards the singularity at P_left -> 0.

Action noise is a state-independent learned log-std per action
dimension, initialized to -0.5. Actions are sampled from the Gaussian,
then clipped to [-1, 1]; log-probabilities are computed pre-clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .nn import Affine, GruCellParams, assign_params, gru_step, params_hash

HEMISPHERE_GRU = 128
BASELINE_GRU = 256
HEAD_WIDTH = 512
GATING_GRU = 64
LOG_STD_INIT = -0.5
ACTION_DIM = 3
GATE_BOOTSTRAP = (0.5, 0.5, 0.0, 0.0)


@dataclass
class PenaltyConfig:
    alpha: float = 0.75
    beta: float = 5.0
    ratio_cap: float = 1e3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"penalty alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise ConfigurationError(f"penalty beta must be >= 0, got {self.beta}")
        if self.ratio_cap <= 0:
            raise ConfigurationError("penalty ratio cap must be positive")


class HemisphereNetwork:
    """GRU core plus policy-mean and value heads."""

    def __init__(self, rng: np.random.Generator, obs_dim: int, action_dim: int, hidden: int):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.gru = GruCellParams.create(rng, obs_dim, hidden)
        self.policy_hidden = Affine.create(rng, hidden, HEAD_WIDTH)
        self.policy_out = Affine.create(rng, HEAD_WIDTH, action_dim)
        self.value_hidden = Affine.create(rng, hidden, HEAD_WIDTH)
        self.value_out = Affine.create(rng, HEAD_WIDTH, 1)

    def initial_hidden(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    def forward(self, obs: Tensor, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if obs.data.shape[-1] != self.obs_dim:
            raise ConfigurationError(
                f"observation dim {obs.data.shape[-1]} != network input dim {self.obs_dim}"
            )
        h_next = gru_step(obs, h, self.gru)
        mu = self.policy_out(ad.tanh(self.policy_hidden(h_next)))
        v = self.value_out(ad.tanh(self.value_hidden(h_next)))
        return mu, v, h_next

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.gru.params(f"{prefix}.gru"))
        out.update(self.policy_hidden.params(f"{prefix}.policy_hidden"))
        out.update(self.policy_out.params(f"{prefix}.policy_out"))
        out.update(self.value_hidden.params(f"{prefix}.value_hidden"))
        out.update(self.value_out.params(f"{prefix}.value_out"))
        return out

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params("n").values())


def hemisphere_param_count(obs_dim: int, action_dim: int, hidden: int) -> int:
    """Closed-form parameter count: GRU gates plus two tanh heads."""
    gru = 3 * (obs_dim * hidden + hidden * hidden + hidden)
    policy = hidden * HEAD_WIDTH + HEAD_WIDTH + HEAD_WIDTH * action_dim + action_dim
    value = hidden * HEAD_WIDTH + HEAD_WIDTH + HEAD_WIDTH * 1 + 1
    return gru + policy + value


class GatingNetwork:
    """GRU over (previous gates, value-estimate errors) with a sigmoid head."""

    INPUT_DIM = 4

    def __init__(self, rng: np.random.Generator, hidden: int = GATING_GRU):
        self.hidden = hidden
        self.gru = GruCellParams.create(rng, self.INPUT_DIM, hidden)
        self.head = Affine.create(rng, hidden, 1)

    def initial_hidden(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    @staticmethod
    def bootstrap_input(batch: int) -> np.ndarray:
        return np.tile(np.asarray(GATE_BOOTSTRAP), (batch, 1))

    def forward(self, gate_in: Tensor, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (P_right, P_left, next hidden); P_right + P_left = 1."""
        h_next = gru_step(gate_in, h, self.gru)
        p_left = ad.sigmoid(self.head(h_next))
        p_right = 1.0 - p_left
        return p_right, p_left, h_next

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.gru.params(f"{prefix}.gru"))
        out.update(self.head.params(f"{prefix}.head"))
        return out


def compose_value(p_right: Tensor, v_right: Tensor, v_left: Tensor) -> Tensor:
    return p_right * v_right + (1.0 - p_right) * v_left


def compose_mean(p_right: Tensor, mu_right: Tensor, mu_left: Tensor) -> Tensor:
    return p_right * mu_right + (1.0 - p_right) * mu_left


def hemispheric_penalty(p_right: Tensor, p_left: Tensor, cfg: PenaltyConfig) -> Tensor:
    """Per-timestep responsibility penalty; differentiable through the gates."""
    ratio = ad.minimum(p_right / p_left, cfg.ratio_cap)
    return cfg.beta * ad.pow_const(ratio, cfg.alpha)


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over actions: mean per sample, shared log-std."""

    mean: Tensor
    log_std: Tensor

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Pre-clip draw; callers clip to the action box afterwards."""
        std = np.exp(self.log_std.data)
        return self.mean.data + rng.standard_normal(self.mean.data.shape) * std

    def log_prob(self, actions: np.ndarray) -> Tensor:
        """Summed diagonal-Gaussian log density of pre-clip actions, shape (B, 1)."""
        diff = Tensor(actions) - self.mean
        inv_var = ad.exp(self.log_std * -2.0)
        per_dim = diff * diff * inv_var * -0.5 - self.log_std - 0.5 * np.log(2.0 * np.pi)
        return per_dim.sum(axis=-1).reshape((-1, 1))

    def entropy(self) -> Tensor:
        """Entropy of one action draw (same for every sample in the batch)."""
        k = self.log_std.data.size
        return self.log_std.sum() + 0.5 * k * (1.0 + np.log(2.0 * np.pi))


class SingleHemisphereAgent:
    """One hemisphere acting alone; covers left-only and right-only baselines."""

    def __init__(self, rng: np.random.Generator, obs_dim: int,
                 action_dim: int = ACTION_DIM, hidden: int = BASELINE_GRU):
        self.net = HemisphereNetwork(rng, obs_dim, action_dim, hidden)
        self.log_std = Tensor(np.full(action_dim, LOG_STD_INIT), requires_grad=True)
        self.obs_dim = obs_dim
        self.action_dim = action_dim

    def params(self) -> dict[str, Tensor]:
        out = self.net.params("net")
        out["log_std"] = self.log_std
        return out

    def policy(self, mu: Tensor) -> GaussianPolicy:
        return GaussianPolicy(mu, self.log_std)


class BiHemisphericAgent:
    """Frozen meta-trained right hemisphere, fresh left hemisphere, gating."""

    def __init__(self, rng: np.random.Generator, obs_dim: int,
                 action_dim: int = ACTION_DIM, hidden: int = HEMISPHERE_GRU,
                 penalty: PenaltyConfig | None = None):
        self.right = HemisphereNetwork(rng, obs_dim, action_dim, hidden)
        self.left = HemisphereNetwork(rng, obs_dim, action_dim, hidden)
        self.gating = GatingNetwork(rng)
        self.log_std = Tensor(np.full(action_dim, LOG_STD_INIT), requires_grad=True)
        self.penalty = penalty or PenaltyConfig()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self._right_hash: str | None = None

    def load_right(self, values: dict[str, np.ndarray]) -> None:
        """Restore and freeze the right hemisphere from meta-trained weights."""
        assign_params(self.right.params("right"), values)
        for t in self.right.params("right").values():
            t.requires_grad = False
        self._right_hash = params_hash(self.right.params("right"))

    def right_hash(self) -> str:
        return params_hash(self.right.params("right"))

    def check_right_frozen(self) -> None:
        if self._right_hash is not None and self.right_hash() != self._right_hash:
            raise AssertionError("frozen right-hemisphere parameters changed")

    def trainable_params(self) -> dict[str, Tensor]:
        out = self.left.params("left")
        out.update(self.gating.params("gating"))
        out["log_std"] = self.log_std
        return out

    def all_params(self) -> dict[str, Tensor]:
        out = self.right.params("right")
        out.update(self.trainable_params())
        return out

    def policy(self, mu: Tensor) -> GaussianPolicy:
        return GaussianPolicy(mu, self.log_std)


class RandomAgent:
    """Uniform actions in [-1, 1]^action_dim."""

    def __init__(self, action_dim: int = ACTION_DIM):
        self.action_dim = action_dim

    def act(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(batch, self.action_dim))


def make_baseline(kind: str, rng: np.random.Generator, obs_dim: int,
                  action_dim: int = ACTION_DIM,
                  right_checkpoint: dict[str, np.ndarray] | None = None):
    """left_only: fresh doubled-GRU agent; right_only: restored doubled-GRU
    meta-trained agent evaluated without updates; random: uniform actions."""
    if kind == "left_only":
        return SingleHemisphereAgent(rng, obs_dim, action_dim, hidden=BASELINE_GRU)
    if kind == "right_only":
        if right_checkpoint is None:
            raise ConfigurationError("right_only baseline needs a meta-training checkpoint")
        agent = SingleHemisphereAgent(rng, obs_dim, action_dim, hidden=BASELINE_GRU)
        assign_params(agent.params(), right_checkpoint)
        return agent
    if kind == "random":
        return RandomAgent(action_dim)
    raise ConfigurationError(f"unknown baseline kind {kind!r}")


def right_values_from_checkpoint(values: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Rename a lone-hemisphere checkpoint's net.* entries to right.* for
    embedding; the checkpoint's log-std is dropped (the composed agent owns
    a fresh trainable one)."""
    out = {}
    for k, v in values.items():
        if k.startswith("net."):
            out["right." + k[len("net."):]] = v
        elif k != "log_std":
            raise ConfigurationError(f"unexpected checkpoint entry {k!r}")
    return out
