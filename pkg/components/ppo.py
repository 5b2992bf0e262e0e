# ============================================
# components/ppo.py
# ============================================

"""
Clipped policy-gradient update with an Adam optimizer and global gradient-norm clipping.

Minibatch k takes the k-th chunk of every robot segment (each segment is
shuffled once per epoch), evaluates every robot separately and weights the
per-robot mean losses by their share of the minibatch.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from components.autograd import Tensor, minimum
from components.network import ObservationBatch, Params, PolicyParams, entropy, log_prob
from components.rollout import RolloutBuffer, normalize_advantages
from utils.errors import NonFiniteError

logger = logging.getLogger(__name__)

STAT_KEYS = ("policy_loss", "value_loss", "entropy", "kl", "clip_frac")


@dataclass(frozen=True)
class PPOConfig:
    epochs: int = 10
    minibatches: int = 16
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4


@dataclass
class MinibatchPart:
    """The slice of one robot segment that goes into a minibatch."""

    robot_index: int
    batch: ObservationBatch
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    @property
    def size(self) -> int:
        return self.actions.shape[0]


class Adam:
    def __init__(self, learning_rate: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, arrays: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Update `arrays` in place."""
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1.0 - self.beta1) * grad if m is None else self.beta1 * m + (1.0 - self.beta1) * grad
            v = (1.0 - self.beta2) * grad * grad if v is None else self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            arrays[name] = arrays[name] - self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(total):
        raise NonFiniteError("non-finite gradient norm", node="clip_grad_norm")
    if total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        grads = {name: g * factor for name, g in grads.items()}
    return grads, total


def segment_loss(policy, P: Params, part: MinibatchPart, config: PPOConfig) -> Tuple[Tensor, Dict[str, float]]:
    """Clipped surrogate + value loss - entropy bonus, averaged over one robot's slice."""
    dist = policy.distribution(P, part.batch, part.robot_index)
    new_log_probs = log_prob(dist, part.actions)
    log_ratio = new_log_probs - part.old_log_probs
    ratio = log_ratio.exp()

    eps = config.clip_epsilon
    unclipped = ratio * part.advantages
    clipped = ratio.clip(1.0 - eps, 1.0 + eps) * part.advantages
    policy_loss = -minimum(unclipped, clipped).mean()

    values = policy.value(P, part.batch, part.robot_index)
    error = values - part.returns
    value_loss = (error * error).mean()
    mean_entropy = entropy(dist).mean()

    loss = policy_loss + value_loss * config.value_coef - mean_entropy * config.entropy_coef
    stats = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": mean_entropy.item(),
        "kl": float(np.mean(part.old_log_probs - new_log_probs.data)),
        "clip_frac": float(np.mean(np.abs(ratio.data - 1.0) > eps)),
    }
    return loss, stats


def minibatch_loss(policy, P: Params, parts: List[MinibatchPart], config: PPOConfig) -> Tuple[Tensor, Dict[str, float]]:
    """sum_r (n_r / n) * loss_r over the robot parts of one minibatch."""
    total = sum(part.size for part in parts)
    loss: Optional[Tensor] = None
    stats = dict.fromkeys(STAT_KEYS, 0.0)
    for part in parts:
        weight = part.size / total
        part_loss, part_stats = segment_loss(policy, P, part, config)
        loss = part_loss * weight if loss is None else loss + part_loss * weight
        for key in STAT_KEYS:
            stats[key] += weight * part_stats[key]
    return loss, stats


def minibatch_parts(buffer: RolloutBuffer, permutations: List[np.ndarray], index: int, count: int) -> List[MinibatchPart]:
    parts = []
    for segment, permutation in zip(buffer.segments, permutations):
        chunk = segment.size // count
        rows = permutation[index * chunk:(index + 1) * chunk]
        flat = segment.flat()
        parts.append(MinibatchPart(
            robot_index=segment.robot_index,
            batch=segment.batch().take(rows),
            actions=flat["actions"][rows],
            old_log_probs=flat["log_probs"][rows],
            advantages=flat["advantages"][rows],
            returns=flat["returns"][rows],
        ))
    return parts


def update_policy(
    buffer: RolloutBuffer,
    params: PolicyParams,
    policy,
    config: PPOConfig,
    optimizer: Optional[Adam] = None,
    stream: Optional[np.random.Generator] = None,
) -> Tuple[PolicyParams, Dict[str, float]]:
    """
    Run `epochs` x `minibatches` gradient steps on a filled buffer.

    Args:
        buffer: Rollout with advantages and returns computed
        params: Current parameters (left untouched)
        policy: Policy object matching params.kind
        config: Loss and optimizer settings
        optimizer: Adam state carried across updates (fresh when None)
        stream: Shuffling stream (seed 0 when None)

    Returns:
        (updated parameters, stats averaged over all minibatch steps)

    Raises:
        NonFiniteError: loss or gradient became NaN/Inf
    """
    for segment in buffer.segments:
        if segment.advantages is None:
            raise ValueError("compute advantages before update_policy")
        if segment.size % config.minibatches:
            raise ValueError(
                f"segment of {segment.robot} has {segment.size} transitions, not divisible by {config.minibatches}"
            )
    optimizer = optimizer or Adam(config.learning_rate)
    stream = stream if stream is not None else np.random.default_rng(0)
    normalize_advantages(buffer)

    current = params.copy()
    totals = dict.fromkeys(STAT_KEYS, 0.0)
    totals["grad_norm"] = 0.0
    updates = 0
    for _ in range(config.epochs):
        permutations = [stream.permutation(segment.size) for segment in buffer.segments]
        for index in range(config.minibatches):
            leaves = current.leaves()
            loss, stats = minibatch_loss(policy, leaves, minibatch_parts(buffer, permutations, index, config.minibatches), config)
            if not np.isfinite(loss.data):
                raise NonFiniteError("non-finite loss", node="ppo.loss")
            loss.backward()
            grads = {
                name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                for name, leaf in leaves.items()
            }
            grads, norm = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(current.arrays, grads)
            for key in STAT_KEYS:
                totals[key] += stats[key]
            totals["grad_norm"] += norm
            updates += 1

    averaged = {key: value / max(updates, 1) for key, value in totals.items()}
    logger.debug("update: %s", ", ".join(f"{k}={v:.4g}" for k, v in averaged.items()))
    return current, averaged
