# ============================================
# components/baselines.py
# ============================================

"""
Fixed-size comparison policies trained with the same loop, env and curriculum.

- zero_padding: one flat MLP over the general observation and every joint's
  (observation, description) pair padded to the largest joint count; the
  action head is J_max wide and padded actions are discarded.
- multi_head: one input and one output head per robot around a shared core.

Both use WeightNorm dense layers and ELU like the embodiment-aware policy.
"""

import logging
import re
from dataclasses import replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from components.autograd import Tensor, broadcast_to
from components.network import (
    ActionDistribution,
    NetworkConfig,
    ObservationBatch,
    Params,
    PolicyParams,
    Urmav2Policy,
    dense,
    infer_network_config,
    init_dense,
    init_mlp,
    mlp,
)
from utils.errors import CheckpointShapeError, PolicyConfigError

logger = logging.getLogger(__name__)

POLICY_KINDS = ("urma_v2", "zero_padding", "multi_head")

BASELINE_HIDDEN = (256, 256, 256)


def pad_joint_inputs(descriptions: np.ndarray, joint_obs: np.ndarray, general: np.ndarray, max_joints: int) -> np.ndarray:
    """
    Flatten (general, joint obs + description per joint) with zeros for missing joints.

    Returns:
        Array (..., D_gen + max_joints * (D_obs + D_desc))
    """
    count = descriptions.shape[-2]
    if count > max_joints:
        raise PolicyConfigError(f"robot with {count} joints exceeds the padded width {max_joints}")
    per_joint = np.concatenate([joint_obs, descriptions], axis=-1)
    pad = [(0, 0)] * (per_joint.ndim - 2) + [(0, max_joints - count), (0, 0)]
    padded = np.pad(per_joint, pad)
    flat = padded.reshape(padded.shape[:-2] + (-1,))
    return np.concatenate([general, flat], axis=-1)


class ZeroPaddingPolicy:
    kind = "zero_padding"

    def __init__(self, config: NetworkConfig, max_joints: int, hidden: Sequence[int] = BASELINE_HIDDEN):
        if max_joints < 1:
            raise PolicyConfigError("zero_padding needs max_joints >= 1")
        self.config = config
        self.max_joints = max_joints
        self.hidden = tuple(hidden)

    @property
    def actor_input_dim(self) -> int:
        return self.config.gen_dim + self.max_joints * (self.config.obs_dim + self.config.desc_dim)

    @property
    def critic_input_dim(self) -> int:
        return self.config.gen_dim + self.max_joints * (self.config.critic_obs_dim + self.config.desc_dim)

    def init_params(self, rng: np.random.Generator) -> PolicyParams:
        arrays: Dict[str, np.ndarray] = {}
        init_mlp(arrays, rng, "zp.actor", (self.actor_input_dim, *self.hidden, self.max_joints),
                 final_gain=self.config.output_scale)
        arrays["zp.log_std"] = np.full(self.max_joints, self.config.init_log_std)
        init_mlp(arrays, rng, "zp.critic", (self.critic_input_dim, *self.hidden, 1))
        return PolicyParams(self.kind, arrays)

    def check_robot(self, robot_index: int, joint_count: int) -> None:
        if joint_count > self.max_joints:
            raise PolicyConfigError(
                f"robot {robot_index} has {joint_count} joints, zero_padding was built for {self.max_joints}"
            )

    def distribution(self, P: Params, batch: ObservationBatch, robot_index: int) -> ActionDistribution:
        count = batch.joint_count
        self.check_robot(robot_index, count)
        x = pad_joint_inputs(batch.descriptions, batch.joint_obs, batch.general, self.max_joints)
        mu = mlp(P, "zp.actor", x)[..., :count]
        log_std = P["zp.log_std"][:count].clip(self.config.log_std_min, self.config.log_std_max)
        return ActionDistribution(mu=mu, log_std=broadcast_to(log_std, mu.shape))

    def value(self, P: Params, batch: ObservationBatch, robot_index: int) -> Tensor:
        x = pad_joint_inputs(batch.descriptions, batch.critic_joint_obs, batch.critic_general, self.max_joints)
        out = mlp(P, "zp.critic", x)
        return out.reshape(out.shape[:-1])


class MultiHeadPolicy:
    kind = "multi_head"

    def __init__(self, config: NetworkConfig, joint_counts: Sequence[int], hidden: Sequence[int] = BASELINE_HIDDEN):
        if not joint_counts:
            raise PolicyConfigError("multi_head needs at least one robot")
        self.config = config
        self.joint_counts = tuple(int(c) for c in joint_counts)
        self.hidden = tuple(hidden)

    def _input_dim(self, robot_index: int, obs_dim: int) -> int:
        return self.config.gen_dim + self.joint_counts[robot_index] * (obs_dim + self.config.desc_dim)

    def init_params(self, rng: np.random.Generator) -> PolicyParams:
        arrays: Dict[str, np.ndarray] = {}
        width = self.hidden[0]
        init_mlp(arrays, rng, "mh.core", self.hidden)
        init_mlp(arrays, rng, "mh.critic_core", self.hidden)
        for index, count in enumerate(self.joint_counts):
            init_dense(arrays, rng, f"mh.in.{index}", self._input_dim(index, self.config.obs_dim), width)
            init_dense(arrays, rng, f"mh.out.{index}", self.hidden[-1], count, gain=self.config.output_scale)
            arrays[f"mh.log_std.{index}"] = np.full(count, self.config.init_log_std)
            init_dense(arrays, rng, f"mh.critic_in.{index}", self._input_dim(index, self.config.critic_obs_dim), width)
            init_dense(arrays, rng, f"mh.critic_out.{index}", self.hidden[-1], 1, gain=1.0)
        return PolicyParams(self.kind, arrays)

    def check_robot(self, robot_index: int, joint_count: int) -> None:
        if not 0 <= robot_index < len(self.joint_counts):
            raise PolicyConfigError(
                f"robot index {robot_index} out of range, multi_head has {len(self.joint_counts)} heads"
            )
        if joint_count != self.joint_counts[robot_index]:
            raise PolicyConfigError(
                f"robot {robot_index} has {joint_count} joints, its head expects {self.joint_counts[robot_index]}"
            )

    def _flat(self, batch: ObservationBatch, critic: bool) -> np.ndarray:
        joint_obs = batch.critic_joint_obs if critic else batch.joint_obs
        general = batch.critic_general if critic else batch.general
        per_joint = np.concatenate([joint_obs, batch.descriptions], axis=-1)
        flat = per_joint.reshape(per_joint.shape[:-2] + (-1,))
        return np.concatenate([general, flat], axis=-1)

    def distribution(self, P: Params, batch: ObservationBatch, robot_index: int) -> ActionDistribution:
        self.check_robot(robot_index, batch.joint_count)
        h = dense(P, f"mh.in.{robot_index}", self._flat(batch, critic=False)).elu()
        h = mlp(P, "mh.core", h, final_activation=True)
        mu = dense(P, f"mh.out.{robot_index}", h)
        log_std = P[f"mh.log_std.{robot_index}"].clip(self.config.log_std_min, self.config.log_std_max)
        return ActionDistribution(mu=mu, log_std=broadcast_to(log_std, mu.shape))

    def value(self, P: Params, batch: ObservationBatch, robot_index: int) -> Tensor:
        self.check_robot(robot_index, batch.joint_count)
        h = dense(P, f"mh.critic_in.{robot_index}", self._flat(batch, critic=True)).elu()
        h = mlp(P, "mh.critic_core", h, final_activation=True)
        out = dense(P, f"mh.critic_out.{robot_index}", h)
        return out.reshape(out.shape[:-1])


def make_policy(kind: str, config: Optional[NetworkConfig], joint_counts: Sequence[int]):
    """
    Build the policy object for a run.

    Args:
        kind: One of POLICY_KINDS
        config: Layer widths (defaults when None)
        joint_counts: Joint count of every training robot, in robot-index order
    """
    config = config or NetworkConfig()
    if kind == "urma_v2":
        return Urmav2Policy(config)
    if kind == "zero_padding":
        return ZeroPaddingPolicy(config, max(joint_counts))
    if kind == "multi_head":
        return MultiHeadPolicy(config, joint_counts)
    raise PolicyConfigError(f"unknown policy kind '{kind}', expected one of {', '.join(POLICY_KINDS)}")


def _layer_widths(params: PolicyParams, prefix: str) -> Tuple[int, ...]:
    widths = []
    index = 0
    while f"{prefix}.{index}.v" in params.arrays:
        widths.append(params[f"{prefix}.{index}.v"].shape[0])
        index += 1
    return tuple(widths)


def _check_dims(found: NetworkConfig, expected: NetworkConfig) -> None:
    for label, attribute in (("D_desc", "desc_dim"), ("D_obs", "obs_dim"),
                             ("critic D_obs", "critic_obs_dim"), ("D_gen", "gen_dim")):
        have, want = getattr(found, attribute), getattr(expected, attribute)
        if have != want:
            raise CheckpointShapeError(f"checkpoint {label} is {have}, this build expects {want}")


def _check_input(params: PolicyParams, name: str, expected: int) -> None:
    have = params[name].shape[1]
    if have != expected:
        raise CheckpointShapeError(f"{name} takes {have} inputs, expected {expected}")


def policy_from_params(params: PolicyParams, config: Optional[NetworkConfig] = None):
    """
    Rebuild the policy object that matches a loaded parameter set.

    Raises:
        CheckpointShapeError: input widths disagree with `config`, or the kind is unknown
    """
    config = config or NetworkConfig()
    if params.kind == "urma_v2":
        found = infer_network_config(params)
        _check_dims(found, config)
        return Urmav2Policy(replace(found, log_std_min=config.log_std_min, log_std_max=config.log_std_max))

    if params.kind == "zero_padding":
        max_joints = params["zp.log_std"].shape[0]
        policy = ZeroPaddingPolicy(config, max_joints, _layer_widths(params, "zp.actor")[:-1])
        _check_input(params, "zp.actor.0.v", policy.actor_input_dim)
        _check_input(params, "zp.critic.0.v", policy.critic_input_dim)
        return policy

    if params.kind == "multi_head":
        pattern = re.compile(r"^mh\.log_std\.(\d+)$")
        counts = {}
        for name in params.names():
            match = pattern.match(name)
            if match:
                counts[int(match.group(1))] = params[name].shape[0]
        if not counts or sorted(counts) != list(range(len(counts))):
            raise CheckpointShapeError("multi_head checkpoint has missing or non-contiguous heads")
        in_width = params["mh.in.0.v"].shape[0]
        policy = MultiHeadPolicy(config, [counts[i] for i in range(len(counts))],
                                 (in_width,) + _layer_widths(params, "mh.core"))
        for index in range(len(counts)):
            _check_input(params, f"mh.in.{index}.v", policy._input_dim(index, config.obs_dim))
            _check_input(params, f"mh.critic_in.{index}.v", policy._input_dim(index, config.critic_obs_dim))
        return policy

    raise CheckpointShapeError(f"unknown policy kind '{params.kind}'")
