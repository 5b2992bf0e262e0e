# ============================================
# components/network.py
# ============================================

"""
Embodiment-aware actor-critic.

    alpha_j   = softmax(f_phi(d_j) / tau)                 over latent components
    z_joints  = sum_j alpha_j * f_psi(o_j)
    z_action  = h_theta(o_g, z_joints)
    mu_j      = z_action . alpha_j
    log sig_j = sigma_upsilon(f_phi(d_j))                 clamped to [-5, 2]

Every dense layer is WeightNorm-decomposed (w = g v / ||v||, row-wise) and
every activation is ELU. The critic mirrors the actor's encoder and core with
its own parameters and temperature, reads noise-free joint states plus foot
contact flags, and ends in a scalar value head.

Inputs may carry any number of leading batch axes: descriptions (..., J, 20),
joint observations (..., J, 4), general observations (..., 13).
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from components.autograd import Tensor, as_tensor, concat, linear, parameter, weight_norm
from components.randomization import DESCRIPTION_DIM

logger = logging.getLogger(__name__)

JOINT_OBS_DIM = 4          # position, velocity, previous action, track flag
CRITIC_JOINT_OBS_DIM = 5   # noise-free position, velocity, previous action, track flag, foot contact
GENERAL_OBS_DIM = 13       # lin vel 3, ang vel 3, gravity 3, command 3, beta 1

LOG_2PI = math.log(2.0 * math.pi)

Params = Mapping[str, Tensor]
ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class NetworkConfig:
    """Layer widths. Defaults: L_d = 128, f_psi 2 x 256, core 5 x 256."""

    desc_dim: int = DESCRIPTION_DIM
    obs_dim: int = JOINT_OBS_DIM
    critic_obs_dim: int = CRITIC_JOINT_OBS_DIM
    gen_dim: int = GENERAL_OBS_DIM
    latent_dim: int = 128
    phi_hidden: Tuple[int, ...] = (128,)
    psi_hidden: Tuple[int, ...] = (256, 256)
    core_hidden: Tuple[int, ...] = (256, 256, 256, 256, 256)
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    init_log_std: float = -0.7
    output_scale: float = 0.01


class PolicyParams:
    """
    Named float64 arrays of every learnable tensor of a policy (actor and critic).

    Dense layers are stored as `<prefix>.v`, `<prefix>.g`, `<prefix>.b`;
    temperatures as `<scope>.log_tau` (tau = exp(log_tau) > 0).
    """

    def __init__(self, kind: str, arrays: Dict[str, np.ndarray]):
        self.kind = kind
        self.arrays: Dict[str, np.ndarray] = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self) -> List[str]:
        return list(self.arrays)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.kind, {name: a.copy() for name, a in self.arrays.items()})

    def leaves(self) -> Dict[str, Tensor]:
        """Fresh gradient-collecting leaves, one per array."""
        return {name: parameter(a, name=name) for name, a in self.arrays.items()}

    def constants(self) -> Dict[str, Tensor]:
        return {name: Tensor(a, name=name) for name, a in self.arrays.items()}

    def size(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.arrays):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.arrays[name], dtype="<f8").tobytes())
        return digest.hexdigest()

    def fingerprint(self) -> float:
        """Order-independent scalar summary, compared with a tolerance in tests."""
        total = 0.0
        for index, name in enumerate(sorted(self.arrays)):
            flat = self.arrays[name].ravel()
            total += (index + 1) * float(np.dot(flat, np.linspace(1.0, 2.0, flat.size)))
        return total

    def all_equal(self, other: "PolicyParams") -> bool:
        if self.kind != other.kind or set(self.arrays) != set(other.arrays):
            return False
        return all(np.array_equal(self.arrays[n], other.arrays[n]) for n in self.arrays)


@dataclass(frozen=True)
class ObservationBatch:
    """Homogeneous-J batch of policy and critic inputs."""

    descriptions: np.ndarray       # (..., J, 20)
    joint_obs: np.ndarray          # (..., J, 4)
    general: np.ndarray            # (..., 13)
    critic_joint_obs: np.ndarray   # (..., J, 5)
    critic_general: np.ndarray     # (..., 13)

    @property
    def joint_count(self) -> int:
        return self.descriptions.shape[-2]

    def take(self, index) -> "ObservationBatch":
        return ObservationBatch(
            descriptions=self.descriptions[index],
            joint_obs=self.joint_obs[index],
            general=self.general[index],
            critic_joint_obs=self.critic_joint_obs[index],
            critic_general=self.critic_general[index],
        )


class ActionDistribution(NamedTuple):
    """Diagonal Gaussian over joints: mean and clamped log-std, both (..., J)."""

    mu: Tensor
    log_std: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_std.data)


class JointEncoding(NamedTuple):
    z_bar: Tensor             # (..., L)
    alphas: Tensor            # (..., J, L)
    description_latent: Tensor  # (..., J, L) pre-softmax f_phi(d_j)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    """Orthogonal matrix (rows, cols) with sign-corrected QR."""
    flat = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_dense(
    arrays: Dict[str, np.ndarray],
    rng: np.random.Generator,
    prefix: str,
    fan_in: int,
    fan_out: int,
    gain: float = math.sqrt(2.0),
    bias: float = 0.0,
) -> None:
    """WeightNorm data-independent init: g = ||v|| so w equals the underlying init."""
    v = orthogonal(rng, fan_out, fan_in, gain)
    arrays[f"{prefix}.v"] = v
    arrays[f"{prefix}.g"] = np.sqrt(np.sum(v * v, axis=1))
    arrays[f"{prefix}.b"] = np.full(fan_out, bias, dtype=np.float64)


def init_mlp(
    arrays: Dict[str, np.ndarray],
    rng: np.random.Generator,
    prefix: str,
    sizes: Sequence[int],
    final_gain: float = 1.0,
) -> None:
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = index == len(sizes) - 2
        init_dense(arrays, rng, f"{prefix}.{index}", fan_in, fan_out, gain=final_gain if last else math.sqrt(2.0))


def _init_encoder_core(
    arrays: Dict[str, np.ndarray],
    rng: np.random.Generator,
    scope: str,
    config: NetworkConfig,
    obs_dim: int,
    core_final_gain: float,
) -> None:
    latent = config.latent_dim
    init_mlp(arrays, rng, f"{scope}.f_phi", (config.desc_dim, *config.phi_hidden, latent))
    arrays[f"{scope}.log_tau"] = np.zeros(())
    init_mlp(arrays, rng, f"{scope}.f_psi", (obs_dim, *config.psi_hidden, latent))
    init_mlp(arrays, rng, f"{scope}.core", (config.gen_dim + latent, *config.core_hidden, latent),
             final_gain=core_final_gain)


def init_policy_params(config: NetworkConfig, rng: np.random.Generator) -> PolicyParams:
    """Fresh actor + critic parameters."""
    arrays: Dict[str, np.ndarray] = {}
    _init_encoder_core(arrays, rng, "actor", config, config.obs_dim, core_final_gain=config.output_scale)
    init_dense(arrays, rng, "actor.sigma", config.latent_dim, 1, gain=config.output_scale, bias=config.init_log_std)
    _init_encoder_core(arrays, rng, "critic", config, config.critic_obs_dim, core_final_gain=1.0)
    init_dense(arrays, rng, "critic.value", config.latent_dim, 1, gain=1.0)
    return PolicyParams("urma_v2", arrays)


def infer_network_config(params: PolicyParams) -> NetworkConfig:
    """Rebuild layer widths from stored shapes (used after loading a checkpoint)."""
    def widths(prefix: str) -> List[Tuple[int, int]]:
        shapes = []
        index = 0
        while f"{prefix}.{index}.v" in params.arrays:
            out_dim, in_dim = params[f"{prefix}.{index}.v"].shape
            shapes.append((in_dim, out_dim))
            index += 1
        return shapes

    phi = widths("actor.f_phi")
    psi = widths("actor.f_psi")
    core = widths("actor.core")
    critic_psi = widths("critic.f_psi")
    latent = phi[-1][1]
    return NetworkConfig(
        desc_dim=phi[0][0],
        obs_dim=psi[0][0],
        critic_obs_dim=critic_psi[0][0],
        gen_dim=core[0][0] - latent,
        latent_dim=latent,
        phi_hidden=tuple(out for _, out in phi[:-1]),
        psi_hidden=tuple(out for _, out in psi[:-1]),
        core_hidden=tuple(out for _, out in core[:-1]),
    )


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def effective_weight(P: Params, prefix: str) -> Tensor:
    return weight_norm(P[f"{prefix}.v"], P[f"{prefix}.g"])


def dense(P: Params, prefix: str, x: ArrayOrTensor) -> Tensor:
    return linear(as_tensor(x), effective_weight(P, prefix), P[f"{prefix}.b"])


def layer_count(P: Params, prefix: str) -> int:
    count = 0
    while f"{prefix}.{count}.v" in P:
        count += 1
    return count


def mlp(P: Params, prefix: str, x: ArrayOrTensor, final_activation: bool = False) -> Tensor:
    """ELU between layers; the last layer stays linear unless asked otherwise."""
    h = as_tensor(x)
    layers = layer_count(P, prefix)
    for index in range(layers):
        h = dense(P, f"{prefix}.{index}", h)
        if index < layers - 1 or final_activation:
            h = h.elu()
    return h


# ---------------------------------------------------------------------------
# Actor / critic
# ---------------------------------------------------------------------------

def encode_joints(
    descriptions: ArrayOrTensor,
    observations: ArrayOrTensor,
    P: Params,
    scope: str = "actor",
) -> JointEncoding:
    """
    Attention joint encoder.

    Args:
        descriptions: (..., J, D_desc) description vectors (attention keys)
        observations: (..., J, D_obs) joint observations (attention values)
        P: Parameter tensors
        scope: "actor" or "critic"

    Returns:
        JointEncoding with z_bar (..., L), alphas (..., J, L) and f_phi(d_j)
    """
    descriptions = as_tensor(descriptions)
    observations = as_tensor(observations)
    if descriptions.shape[-2] == 0:
        raise ValueError("encode_joints needs at least one joint")
    if descriptions.shape[:-1] != observations.shape[:-1]:
        raise ValueError(
            f"descriptions {descriptions.shape} and observations {observations.shape} disagree on joints"
        )

    latent = mlp(P, f"{scope}.f_phi", descriptions)
    tau = P[f"{scope}.log_tau"].exp()
    alphas = (latent / tau).softmax(axis=-1)
    values = mlp(P, f"{scope}.f_psi", observations)
    z_bar = (alphas * values).sum(axis=-2)
    return JointEncoding(z_bar=z_bar, alphas=alphas, description_latent=latent)


def core_forward(general: ArrayOrTensor, z_joints: Tensor, P: Params, scope: str = "actor") -> Tensor:
    """h_theta over concat(o_g, z_joints): 5 hidden ELU layers, linear L_d output."""
    return mlp(P, f"{scope}.core", concat([as_tensor(general), z_joints], axis=-1))


def decode_actions(
    z_action: Tensor,
    alphas: Tensor,
    description_latent: Tensor,
    P: Params,
    config: NetworkConfig,
) -> ActionDistribution:
    """mu_j = z_action . alpha_j; log-std from the description latent only."""
    if alphas.shape[-2] != description_latent.shape[-2]:
        raise ValueError("alphas and description latents disagree on joint count")
    latent_dim = z_action.shape[-1]
    broadcast = z_action.reshape(z_action.shape[:-1] + (1, latent_dim))
    mu = (alphas * broadcast).sum(axis=-1)
    raw = dense(P, "actor.sigma", description_latent)
    log_std = raw.reshape(raw.shape[:-1]).clip(config.log_std_min, config.log_std_max)
    return ActionDistribution(mu=mu, log_std=log_std)


def actor_forward(
    descriptions: ArrayOrTensor,
    observations: ArrayOrTensor,
    general: ArrayOrTensor,
    P: Params,
    config: NetworkConfig,
) -> ActionDistribution:
    encoding = encode_joints(descriptions, observations, P, "actor")
    z_action = core_forward(general, encoding.z_bar, P, "actor")
    return decode_actions(z_action, encoding.alphas, encoding.description_latent, P, config)


def critic_forward(
    descriptions: ArrayOrTensor,
    critic_observations: ArrayOrTensor,
    general: ArrayOrTensor,
    P: Params,
) -> Tensor:
    """Scalar value per batch element from noise-free joint states and foot flags."""
    encoding = encode_joints(descriptions, critic_observations, P, "critic")
    z = core_forward(general, encoding.z_bar, P, "critic")
    value = dense(P, "critic.value", z)
    return value.reshape(value.shape[:-1])


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------

def log_prob(dist: ActionDistribution, actions: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Sum over joints of the per-joint Gaussian log-density; masked joints contribute 0."""
    std = dist.log_std.exp()
    z = (as_tensor(actions) - dist.mu) / std
    per_joint = (z * z) * -0.5 - dist.log_std - 0.5 * LOG_2PI
    if mask is not None:
        per_joint = per_joint * mask
    return per_joint.sum(axis=-1)


def entropy(dist: ActionDistribution, mask: Optional[np.ndarray] = None) -> Tensor:
    per_joint = dist.log_std + 0.5 * (1.0 + LOG_2PI)
    if mask is not None:
        per_joint = per_joint * mask
    return per_joint.sum(axis=-1)


# ---------------------------------------------------------------------------
# Policy object used by the trainer
# ---------------------------------------------------------------------------

class Urmav2Policy:
    """One parameter set for every robot and every joint count."""

    kind = "urma_v2"

    def __init__(self, config: Optional[NetworkConfig] = None):
        self.config = config or NetworkConfig()

    def init_params(self, rng: np.random.Generator) -> PolicyParams:
        return init_policy_params(self.config, rng)

    def check_robot(self, robot_index: int, joint_count: int) -> None:
        if joint_count < 1:
            raise ValueError("a robot needs at least one joint")

    def distribution(self, P: Params, batch: ObservationBatch, robot_index: int) -> ActionDistribution:
        return actor_forward(batch.descriptions, batch.joint_obs, batch.general, P, self.config)

    def value(self, P: Params, batch: ObservationBatch, robot_index: int) -> Tensor:
        return critic_forward(batch.descriptions, batch.critic_joint_obs, batch.critic_general, P)
