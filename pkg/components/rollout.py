# ============================================
# components/rollout.py
# ============================================

"""
Rollout collection and advantage estimation.

The buffer is split into one segment per base robot. A segment is
homogeneous in joint count, so a forward pass never mixes robots; its
arrays are laid out (rollout_length, envs_per_robot, ...).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from components.autograd import no_grad
from components.curriculum import CurriculumState, EpisodeStats, apply_episode, judge_episode
from components.env import LocomotionEnv
from components.morphology import Morphology
from components.network import LOG_2PI, ObservationBatch, PolicyParams
from utils.errors import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class RobotGroup:
    """The environments of one base robot and the curriculum state that owns them."""

    robot_index: int
    base: Morphology
    envs: List[LocomotionEnv]
    curriculum: CurriculumState
    frozen_curriculum: bool = False

    @property
    def joint_count(self) -> int:
        return self.base.joint_count

    def reset(self) -> None:
        for env in self.envs:
            env.reset(self.curriculum.beta)


@dataclass
class EpisodeRecord:
    robot_index: int
    robot: str
    env_index: int
    beta: float
    length: int
    episode_return: float
    mean_tracking_error: float
    success: bool


@dataclass
class RobotSegment:
    """Transitions of one robot: arrays shaped (T, N, ...)."""

    robot_index: int
    robot: str
    descriptions: np.ndarray
    joint_obs: np.ndarray
    general: np.ndarray
    critic_joint_obs: np.ndarray
    critic_general: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    last_values: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    episodes: List[EpisodeRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.rewards.shape[0]

    @property
    def env_count(self) -> int:
        return self.rewards.shape[1]

    @property
    def size(self) -> int:
        return self.steps * self.env_count

    def flat(self) -> Dict[str, np.ndarray]:
        """Every per-transition array with (T, N) merged into one leading axis."""
        def merge(a: np.ndarray) -> np.ndarray:
            return a.reshape((self.size,) + a.shape[2:])

        out = {
            "actions": merge(self.actions),
            "log_probs": merge(self.log_probs),
            "values": merge(self.values),
        }
        if self.advantages is not None:
            out["advantages"] = merge(self.advantages)
            out["returns"] = merge(self.returns)
        return out

    def batch(self) -> ObservationBatch:
        def merge(a: np.ndarray) -> np.ndarray:
            return a.reshape((self.size,) + a.shape[2:])

        return ObservationBatch(
            descriptions=merge(self.descriptions),
            joint_obs=merge(self.joint_obs),
            general=merge(self.general),
            critic_joint_obs=merge(self.critic_joint_obs),
            critic_general=merge(self.critic_general),
        )


@dataclass
class RolloutBuffer:
    segments: List[RobotSegment]

    @property
    def size(self) -> int:
        return sum(segment.size for segment in self.segments)

    @property
    def episodes(self) -> List[EpisodeRecord]:
        return [record for segment in self.segments for record in segment.episodes]


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def gaussian_log_prob(actions: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Numpy twin of network.log_prob for rollouts (no graph)."""
    z = (actions - mu) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def _stack_observations(envs: Sequence[LocomotionEnv], beta: float) -> ObservationBatch:
    actor, critic = zip(*(env.observe(beta) for env in envs))
    return ObservationBatch(
        descriptions=np.stack([a.descriptions for a in actor]),
        joint_obs=np.stack([a.joint_obs for a in actor]),
        general=np.stack([a.general for a in actor]),
        critic_joint_obs=np.stack([c.joint_obs for c in critic]),
        critic_general=np.stack([c.general for c in critic]),
    )


def _check_finite(name: str, robot: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"non-finite {name} while collecting {robot}", node=f"rollout.{name}")


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

def collect_segment(group: RobotGroup, policy, params: PolicyParams, rollout_length: int) -> RobotSegment:
    """
    Roll every environment of one robot forward `rollout_length` steps.

    Episode ends are judged and fed to the group's curriculum in environment
    order; the finished environment restarts at the updated beta.
    """
    P = params.constants()
    envs = group.envs
    count, joints = len(envs), group.joint_count
    policy.check_robot(group.robot_index, joints)

    descriptions = np.zeros((rollout_length, count, joints, envs[0].embodiment.description_vectors.shape[-1]))
    joint_obs = np.zeros((rollout_length, count, joints, 4))
    general = np.zeros((rollout_length, count, 13))
    critic_joint_obs = np.zeros((rollout_length, count, joints, 5))
    critic_general = np.zeros((rollout_length, count, 13))
    actions = np.zeros((rollout_length, count, joints))
    log_probs = np.zeros((rollout_length, count))
    rewards = np.zeros((rollout_length, count))
    dones = np.zeros((rollout_length, count))
    values = np.zeros((rollout_length, count))
    episodes: List[EpisodeRecord] = []

    for t in range(rollout_length):
        beta = group.curriculum.beta
        batch = _stack_observations(envs, beta)
        _check_finite("observation", group.base.name, batch.joint_obs)
        _check_finite("observation", group.base.name, batch.general)

        with no_grad():
            dist = policy.distribution(P, batch, group.robot_index)
            value = policy.value(P, batch, group.robot_index).data
        mu, log_std = dist.mu.data, np.broadcast_to(dist.log_std.data, dist.mu.shape)
        noise = np.stack([env.stream.normal(size=joints) for env in envs])
        action = mu + np.exp(log_std) * noise
        _check_finite("action", group.base.name, action)

        descriptions[t] = batch.descriptions
        joint_obs[t] = batch.joint_obs
        general[t] = batch.general
        critic_joint_obs[t] = batch.critic_joint_obs
        critic_general[t] = batch.critic_general
        actions[t] = action
        log_probs[t] = gaussian_log_prob(action, mu, log_std)
        values[t] = value

        for i, env in enumerate(envs):
            reward, done, info = env.step(action[i], beta)
            rewards[t, i] = reward
            dones[t, i] = float(done)
            if "error" in info:
                raise NonFiniteError(
                    f"{info['error']} in {group.base.name} env {env.env_index}", node="env.step"
                )
            if done:
                stats: EpisodeStats = info["episode"]
                success = judge_episode(stats, group.curriculum)
                episodes.append(EpisodeRecord(
                    robot_index=group.robot_index,
                    robot=group.base.name,
                    env_index=env.env_index,
                    beta=group.curriculum.beta,
                    length=stats.length,
                    episode_return=stats.episode_return,
                    mean_tracking_error=stats.mean_tracking_error,
                    success=success,
                ))
                group.curriculum = apply_episode(group.curriculum, stats, frozen=group.frozen_curriculum)
                env.reset(group.curriculum.beta)

    last = _stack_observations(envs, group.curriculum.beta)
    with no_grad():
        last_values = policy.value(P, last, group.robot_index).data

    return RobotSegment(
        robot_index=group.robot_index,
        robot=group.base.name,
        descriptions=descriptions,
        joint_obs=joint_obs,
        general=general,
        critic_joint_obs=critic_joint_obs,
        critic_general=critic_general,
        actions=actions,
        log_probs=log_probs,
        rewards=rewards,
        dones=dones,
        values=values,
        last_values=np.asarray(last_values, dtype=np.float64),
        episodes=episodes,
    )


def collect_rollout(
    groups: Sequence[RobotGroup],
    policy,
    params: PolicyParams,
    rollout_length: int,
    threads: int = 1,
) -> RolloutBuffer:
    """
    Collect one segment per robot.

    Robots are independent (own envs, streams and curriculum), so with
    threads > 1 they are collected concurrently; segment order stays the
    robot order and results do not depend on scheduling.
    """
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            segments = list(pool.map(lambda g: collect_segment(g, policy, params, rollout_length), groups))
    else:
        segments = [collect_segment(g, policy, params, rollout_length) for g in groups]
    return RolloutBuffer(segments=segments)


# ---------------------------------------------------------------------------
# Advantages
# ---------------------------------------------------------------------------

def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_values: np.ndarray,
    gamma: float,
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    GAE over (T, N) arrays; the recursion never crosses a done.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    steps = rewards.shape[0]
    advantages = np.zeros_like(rewards, dtype=np.float64)
    running = np.zeros_like(last_values, dtype=np.float64)
    for t in reversed(range(steps)):
        next_values = last_values if t == steps - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        advantages[t] = running
    return advantages, advantages + values


def compute_buffer_advantages(buffer: RolloutBuffer, gamma: float, lam: float) -> None:
    for segment in buffer.segments:
        segment.advantages, segment.returns = compute_gae(
            segment.rewards, segment.values, segment.dones, segment.last_values, gamma, lam
        )


def normalize_advantages(buffer: RolloutBuffer) -> None:
    """Zero mean, unit std over the whole buffer (once per update)."""
    joined = np.concatenate([segment.advantages.ravel() for segment in buffer.segments])
    mean, std = float(joined.mean()), float(joined.std())
    for segment in buffer.segments:
        segment.advantages = (segment.advantages - mean) / (std + 1e-8)
