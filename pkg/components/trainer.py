# ============================================
# components/trainer.py
# ============================================

"""
Training loop tying rollouts, advantage estimation, updates and the
per-robot curricula together, plus zero-shot evaluation.

One iteration = one rollout of `rollout_length` steps in every environment
of every robot, followed by one clipped policy-gradient update. Metrics are
appended to a CSV with one row per (iteration, robot).
"""

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from components.autograd import no_grad
from components.baselines import make_policy, policy_from_params
from components.checkpoint import save_checkpoint
from components.curriculum import CurriculumConfig, CurriculumState, judge_episode
from components.env import EnvConfig, LocomotionEnv
from components.morphology import Morphology
from components.network import NetworkConfig, ObservationBatch, PolicyParams
from components.ppo import Adam, PPOConfig, update_policy
from components.randomization import DRRanges, ERRanges, spawn_streams
from components.rollout import RobotGroup, collect_rollout, compute_buffer_advantages
from utils.errors import ConfigError, NonFiniteError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "iteration", "steps", "robot", "beta", "mean_return", "mean_tracking_error",
    "success_rate", "policy_loss", "value_loss", "entropy", "kl", "clip_frac",
]

EVAL_COLUMNS = ["robot", "episode", "beta", "length", "episode_return", "mean_tracking_error", "success"]


@dataclass(frozen=True)
class TrainConfig:
    num_robots: Optional[int] = None      # None: every configured robot
    envs_per_robot: int = 16
    rollout_length: int = 128
    epochs: int = 10
    minibatches: int = 16
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 2_000_000
    seed: int = 0
    checkpoint_every: int = 10

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("seed", "num_robots", "gae_lambda") or value is None:
                continue
            if not value > 0:
                raise ConfigError(f"train.{f.name} must be > 0 (got {value})")
        if self.num_robots is not None and self.num_robots < 1:
            raise ConfigError("train.num_robots must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("train.seed must be a 64-bit unsigned integer")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("train.gamma must be in (0, 1] and train.gae_lambda in [0, 1]")
        segment = self.envs_per_robot * self.rollout_length
        if segment % self.minibatches:
            raise ConfigError(
                f"train.minibatches ({self.minibatches}) must divide envs_per_robot * rollout_length ({segment})"
            )

    @property
    def ppo(self) -> PPOConfig:
        return PPOConfig(
            epochs=self.epochs,
            minibatches=self.minibatches,
            clip_epsilon=self.clip_epsilon,
            value_coef=self.value_coef,
            entropy_coef=self.entropy_coef,
            max_grad_norm=self.max_grad_norm,
            learning_rate=self.learning_rate,
        )


def _mean_or_nan(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


class Trainer:
    """
    Multi-robot trainer for one policy kind.

    Args:
        robots: Training morphologies, in robot-index order
        policy_kind: "urma_v2", "zero_padding" or "multi_head"
        config: Loop and optimizer settings
        network_config: Layer widths
        env_config: Environment settings (horizon, reward, pushes)
        curriculum_config: Thresholds, step size, on/off
        ranges, dr_ranges: Randomization half-widths at beta = 1
        output_dir: Where metrics and checkpoints go (None keeps everything in memory)
        threads: Robots collected concurrently during rollouts
    """

    def __init__(
        self,
        robots: Sequence[Morphology],
        policy_kind: str = "urma_v2",
        config: Optional[TrainConfig] = None,
        network_config: Optional[NetworkConfig] = None,
        env_config: Optional[EnvConfig] = None,
        curriculum_config: Optional[CurriculumConfig] = None,
        ranges: Optional[ERRanges] = None,
        dr_ranges: Optional[DRRanges] = None,
        output_dir: Optional[Path] = None,
        threads: int = 1,
    ):
        self.config = config or TrainConfig()
        self.config.validate()
        robots = list(robots)
        if self.config.num_robots is not None:
            if self.config.num_robots > len(robots):
                raise ConfigError(f"train.num_robots is {self.config.num_robots} but only {len(robots)} robots are configured")
            robots = robots[:self.config.num_robots]
        if not robots:
            raise ConfigError("no training robots configured")
        self.robots = robots
        self.network_config = network_config or NetworkConfig()
        self.env_config = env_config or EnvConfig()
        self.curriculum_config = curriculum_config or CurriculumConfig()
        self.ranges = ranges or ERRanges()
        self.dr_ranges = dr_ranges or DRRanges()
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.threads = max(1, int(threads))

        self.policy = make_policy(policy_kind, self.network_config, [r.joint_count for r in robots])
        self.policy_kind = policy_kind
        self.iteration = 0
        self.steps = 0
        self.metrics = pd.DataFrame(columns=METRIC_COLUMNS)

        per_robot = self.config.envs_per_robot
        streams = spawn_streams(self.config.seed, len(robots) * per_robot + 2)
        self.params: PolicyParams = self.policy.init_params(streams[-2])
        self.update_stream = streams[-1]
        self.optimizer = Adam(self.config.learning_rate)
        self.groups: List[RobotGroup] = []
        for index, robot in enumerate(robots):
            envs = [
                LocomotionEnv(robot, streams[index * per_robot + k], self.env_config, self.ranges, self.dr_ranges, env_index=k)
                for k in range(per_robot)
            ]
            state = CurriculumState.initial(self.curriculum_config, self.env_config.horizon)
            group = RobotGroup(index, robot, envs, state, frozen_curriculum=not self.curriculum_config.enabled)
            group.reset()
            self.groups.append(group)

    @property
    def steps_per_iteration(self) -> int:
        return len(self.groups) * self.config.envs_per_robot * self.config.rollout_length

    @property
    def total_iterations(self) -> int:
        return max(1, math.ceil(self.config.total_steps / self.steps_per_iteration))

    @property
    def betas(self) -> Dict[str, float]:
        return {group.base.name: group.curriculum.beta for group in self.groups}

    def train_iteration(self) -> pd.DataFrame:
        """One rollout + one update; returns this iteration's metric rows."""
        buffer = collect_rollout(self.groups, self.policy, self.params, self.config.rollout_length, self.threads)
        compute_buffer_advantages(buffer, self.config.gamma, self.config.gae_lambda)
        self.params, stats = update_policy(
            buffer, self.params, self.policy, self.config.ppo, self.optimizer, self.update_stream
        )
        self.iteration += 1
        self.steps += buffer.size

        rows = []
        for group, segment in zip(self.groups, buffer.segments):
            episodes = segment.episodes
            rows.append({
                "iteration": self.iteration,
                "steps": self.steps,
                "robot": group.base.name,
                "beta": group.curriculum.beta,
                "mean_return": _mean_or_nan([e.episode_return for e in episodes]),
                "mean_tracking_error": _mean_or_nan([e.mean_tracking_error for e in episodes]),
                "success_rate": _mean_or_nan([float(e.success) for e in episodes]),
                **{key: stats[key] for key in ("policy_loss", "value_loss", "entropy", "kl", "clip_frac")},
            })
        frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        logger.info(
            "iter %d steps %d mean beta %.4f mean return %s policy loss %.4f value loss %.4f",
            self.iteration, self.steps, frame["beta"].mean(),
            f"{frame['mean_return'].mean():.3f}" if frame["mean_return"].notna().any() else "n/a",
            stats["policy_loss"], stats["value_loss"],
        )
        return frame

    def _append_metrics(self, frame: pd.DataFrame) -> None:
        self.metrics = frame if self.metrics.empty else pd.concat([self.metrics, frame], ignore_index=True)
        if self.output_dir is None:
            return
        path = self.output_dir / "metrics.csv"
        frame.to_csv(path, mode="a", header=not path.exists(), index=False)

    def _checkpoint(self, name: str) -> Optional[Path]:
        if self.output_dir is None:
            return None
        return save_checkpoint(self.params, self.output_dir / "checkpoints" / name)

    def run(self) -> pd.DataFrame:
        """
        Train for `total_steps` (rounded up to whole iterations).

        Returns:
            Metrics table, also written to `<output_dir>/metrics.csv`

        Raises:
            NonFiniteError: after dumping `abort_checkpoint.urm2` to the output directory
        """
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            stale = self.output_dir / "metrics.csv"
            if stale.exists():
                stale.unlink()

        logger.info(
            "training %s on %d robots for %d iterations (%d steps each)",
            self.policy_kind, len(self.groups), self.total_iterations, self.steps_per_iteration,
        )
        for _ in range(self.total_iterations):
            try:
                frame = self.train_iteration()
            except NonFiniteError as exc:
                logger.error("numeric failure at iteration %d: %s", self.iteration + 1, exc)
                if self.output_dir is not None:
                    save_checkpoint(self.params, self.output_dir / "abort_checkpoint.urm2")
                raise
            self._append_metrics(frame)
            if self.iteration % self.config.checkpoint_every == 0:
                self._checkpoint(f"iter_{self.iteration:05d}.urm2")
        self._checkpoint("final.urm2")
        return self.metrics


def run_baseline(kind: str, robots: Sequence[Morphology], config: Optional[TrainConfig] = None, **kwargs) -> pd.DataFrame:
    """Train a baseline policy with the identical loop, env and curriculum."""
    if kind not in ("zero_padding", "multi_head"):
        raise ConfigError(f"'{kind}' is not a baseline (expected zero_padding or multi_head)")
    return Trainer(robots, policy_kind=kind, config=config, **kwargs).run()


def evaluate_zero_shot(
    params: PolicyParams,
    robot: Morphology,
    episodes: int,
    beta: float = 0.3,
    seed: int = 0,
    env_config: Optional[EnvConfig] = None,
    curriculum_config: Optional[CurriculumConfig] = None,
    ranges: Optional[ERRanges] = None,
    dr_ranges: Optional[DRRanges] = None,
    policy=None,
    robot_index: int = 0,
) -> pd.DataFrame:
    """
    Roll the deterministic policy (actions = mu) on `robot` at a fixed beta.

    Parameters are never updated. Success uses the curriculum thresholds.

    Returns:
        One row per episode (EVAL_COLUMNS); empty when episodes == 0
    """
    if episodes < 0:
        raise ConfigError("episodes must be >= 0")
    env_config = env_config or EnvConfig()
    curriculum_config = curriculum_config or CurriculumConfig()
    policy = policy or policy_from_params(params)
    policy.check_robot(robot_index, robot.joint_count)
    judge_state = CurriculumState.initial(curriculum_config, env_config.horizon)
    P = params.constants()

    env = LocomotionEnv(robot, spawn_streams(seed, 1)[0], env_config, ranges, dr_ranges)
    rows = []
    for episode in range(episodes):
        env.reset(beta)
        done = False
        info: Dict = {}
        while not done:
            actor, critic = env.observe(beta)
            batch = ObservationBatch(
                descriptions=actor.descriptions[None],
                joint_obs=actor.joint_obs[None],
                general=actor.general[None],
                critic_joint_obs=critic.joint_obs[None],
                critic_general=critic.general[None],
            )
            with no_grad():
                mu = policy.distribution(P, batch, robot_index).mu.data[0]
            _, done, info = env.step(mu, beta)
            if "error" in info:
                raise NonFiniteError(f"{info['error']} while evaluating {robot.name}", node="env.step")
        stats = info["episode"]
        rows.append({
            "robot": robot.name,
            "episode": episode,
            "beta": beta,
            "length": stats.length,
            "episode_return": stats.episode_return,
            "mean_tracking_error": stats.mean_tracking_error,
            "success": bool(judge_episode(stats, judge_state)),
        })
    logger.info("evaluated %s for %d episodes at beta %.2f", robot.name, episodes, beta)
    return pd.DataFrame(rows, columns=EVAL_COLUMNS)
