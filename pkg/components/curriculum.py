# ============================================
# components/curriculum.py
# ============================================

"""
Performance-based curriculum driven by a single coefficient beta in [0, 1].

beta starts at 0. After the n-th consecutive successful episode it rises by
n * delta_beta; after the n-th consecutive failure it falls by n * delta_beta.
Everything difficulty-related (randomization ranges, pushes, terminations,
penalties, resample probability) is attached to beta through `scale`.
"""

import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional

logger = logging.getLogger(__name__)


def scale(value_at_zero: float, value_at_one: float, beta: float) -> float:
    """Linear interpolation used by every beta-attached component."""
    return value_at_zero + beta * (value_at_one - value_at_zero)


@dataclass(frozen=True)
class CurriculumConfig:
    delta_beta: float = 1e-3
    min_episode_fraction: float = 0.9
    max_tracking_error: float = 0.25
    min_return: Optional[float] = None   # disabled by default
    enabled: bool = True
    fixed_beta: float = 1.0
    eval_beta: float = 0.3

    def __post_init__(self):
        if self.delta_beta <= 0:
            raise ValueError("delta_beta must be > 0")
        if not 0.0 < self.min_episode_fraction <= 1.0:
            raise ValueError("min_episode_fraction must be in (0, 1]")
        if self.max_tracking_error < 0:
            raise ValueError("max_tracking_error must be >= 0")
        for name in ("fixed_beta", "eval_beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class EpisodeStats:
    length: int
    mean_tracking_error: float
    episode_return: float


@dataclass(frozen=True)
class CurriculumState:
    """
    Curriculum state of one base robot.

    Attributes:
        beta: Curriculum coefficient, always inside [0, 1]
        consecutive_successes: Current success streak (0 while failing)
        consecutive_failures: Current failure streak (0 while succeeding)
        delta_beta: Step constant
        min_episode_length: Success needs at least this many steps
        max_tracking_error: Success needs mean tracking error <= this (m/s)
        min_return: Optional return threshold, None disables it
    """

    beta: float = 0.0
    consecutive_successes: int = 0
    consecutive_failures: int = 0
    delta_beta: float = 1e-3
    min_episode_length: int = 900
    max_tracking_error: float = 0.25
    min_return: Optional[float] = None
    successes: int = 0
    episodes: int = 0

    @classmethod
    def initial(cls, config: CurriculumConfig, horizon: int) -> "CurriculumState":
        beta = 0.0 if config.enabled else config.fixed_beta
        return cls(
            beta=beta,
            delta_beta=config.delta_beta,
            min_episode_length=int(round(config.min_episode_fraction * horizon)),
            max_tracking_error=config.max_tracking_error,
            min_return=config.min_return,
        )

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def judge_episode(stats: EpisodeStats, state: CurriculumState) -> bool:
    """
    Decide whether an episode counts as a success.

    Length and tracking error are both required; the tracking bound is
    inclusive. The return threshold only applies when configured.
    """
    if stats.length < state.min_episode_length:
        return False
    if stats.mean_tracking_error > state.max_tracking_error:
        return False
    if state.min_return is not None and stats.episode_return < state.min_return:
        return False
    return True


def update(state: CurriculumState, success: bool) -> CurriculumState:
    """Apply one episode outcome; pure, so replaying an outcome log reproduces beta."""
    if success:
        streak = state.consecutive_successes + 1
        beta = state.beta + streak * state.delta_beta
        new_state = replace(
            state,
            consecutive_successes=streak,
            consecutive_failures=0,
            successes=state.successes + 1,
        )
    else:
        streak = state.consecutive_failures + 1
        beta = state.beta - streak * state.delta_beta
        new_state = replace(state, consecutive_successes=0, consecutive_failures=streak)
    beta = min(1.0, max(0.0, beta))
    return replace(new_state, beta=beta, episodes=state.episodes + 1)


def replay(state: CurriculumState, outcomes: Iterable[bool]) -> List[float]:
    """Beta after each outcome of a recorded episode log."""
    trajectory = []
    for outcome in outcomes:
        state = update(state, outcome)
        trajectory.append(state.beta)
    return trajectory


def apply_episode(state: CurriculumState, stats: EpisodeStats, frozen: bool = False) -> CurriculumState:
    """Judge and update in one go; a frozen curriculum only counts the episode."""
    success = judge_episode(stats, state)
    if frozen:
        return replace(
            state,
            episodes=state.episodes + 1,
            successes=state.successes + (1 if success else 0),
        )
    new_state = update(state, success)
    if new_state.beta != state.beta:
        logger.debug("curriculum beta %.4f -> %.4f (success=%s)", state.beta, new_state.beta, success)
    return new_state
