# ============================================
# components/env.py
# ============================================

"""
Toy multi-embodiment locomotion environment.

Joints are PD-actuated point inertias integrated with semi-implicit Euler at
the control frequency. The trunk is not simulated physically: its velocity
follows the leverage-weighted mean of the joint velocities through a
first-order lag, joint torques push back on its orientation, and a
self-righting term pulls it upright. The point is that every randomized
parameter changes behavior, so reading the description vectors pays off.

Stance gating (off unless `EnvConfig.stance_gating` is set): a joint only
moves the trunk while the foot it serves is in contact. The serving foot of joint j is the first foot joint at index >= j;
joints after the last foot (and robots without feet) are always in stance.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from components.curriculum import EpisodeStats, scale
from components.morphology import Morphology
from components.randomization import (
    DRRanges,
    Embodiment,
    ERRanges,
    lever_arms,
    maybe_resample,
    sample_embodiment,
    trunk_share_inertia,
)

logger = logging.getLogger(__name__)

GRAVITY_WORLD = np.array([0.0, 0.0, -1.0])
IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RewardConfig:
    """Tracking terms plus (value at beta 0, value at beta 1) penalty pairs."""

    tracking_weight: float = 1.0
    tracking_width: float = 0.25
    yaw_weight: float = 0.5
    yaw_width: float = 0.25
    torque_penalty: Tuple[float, float] = (0.0, 2e-4)
    action_rate_penalty: Tuple[float, float] = (0.0, 0.01)
    joint_velocity_penalty: Tuple[float, float] = (0.0, 1e-4)
    orientation_penalty: Tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        if not self.tracking_weight > 0:
            raise ValueError("tracking_weight must be > 0")
        if not self.tracking_width > 0 or not self.yaw_width > 0:
            raise ValueError("reward widths must be > 0")
        if self.yaw_weight < 0:
            raise ValueError("yaw_weight must be >= 0")
        for name in ("torque_penalty", "action_rate_penalty", "joint_velocity_penalty", "orientation_penalty"):
            if min(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 1000
    command_max: Tuple[float, float, float] = (1.0, 0.5, 1.0)   # |v_x|, |v_y| m/s, |yaw rate| rad/s at beta 1
    push_interval: Tuple[float, float] = (3.0, 5.0)             # s
    push_magnitude: float = 0.5                                 # m/s at beta 1
    tilt_limit: Tuple[float, float] = (1.2, 0.6)                # rad, beta 0 -> beta 1
    velocity_lag: float = 0.2                                   # s
    righting_gain: float = 2.0
    reaction_gain: float = 0.02
    contact_offset: float = 0.1                                 # rad below nominal
    stance_gating: bool = False
    action_clip: float = 5.0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(c < 0 for c in self.command_max):
            raise ValueError("command_max must be >= 0")
        lo, hi = self.push_interval
        if not 0 < lo <= hi:
            raise ValueError("push_interval must satisfy 0 < lo <= hi")
        if not self.velocity_lag > 0:
            raise ValueError("velocity_lag must be > 0")
        if min(self.tilt_limit) <= 0:
            raise ValueError("tilt_limit must be > 0")


@dataclass(frozen=True, eq=False)
class EnvState:
    q: np.ndarray                 # (J,) rad
    qd: np.ndarray                # (J,) rad/s
    linear_velocity: np.ndarray   # (3,) m/s, trunk frame
    angular_velocity: np.ndarray  # (3,) rad/s, trunk frame
    orientation: np.ndarray       # (4,) unit quaternion (w, x, y, z)
    step_index: int
    command: np.ndarray           # (3,) v_x, v_y, yaw rate
    foot_contact: np.ndarray      # (J,) bool, always False for non-foot joints
    previous_action: np.ndarray   # (J,)
    next_push_step: int

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(a))
            for a in (self.q, self.qd, self.linear_velocity, self.angular_velocity, self.orientation)
        )


@dataclass(frozen=True, eq=False)
class JointDynamics:
    """Effective per-joint quantities of one embodiment (ER values times hidden DR factors)."""

    kp: np.ndarray
    kd: np.ndarray
    damping: np.ndarray
    friction: np.ndarray
    stiffness: np.ndarray
    inertia: np.ndarray           # trunk share + armature
    torque_limit: np.ndarray
    velocity_limit: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    nominal: np.ndarray
    action_scale: np.ndarray
    track: np.ndarray             # bool
    axis: np.ndarray              # (J, 3)
    leverage: np.ndarray          # (J, 3)
    lever_arm: np.ndarray         # (J, 3)
    foot: np.ndarray              # bool
    serving_foot: np.ndarray      # int, -1 when the joint is always in stance
    trunk_inertia: np.ndarray     # (3,)
    imu_arm: np.ndarray           # (3,)
    dt: float


class ActorObservation(NamedTuple):
    descriptions: np.ndarray   # (J, 20)
    joint_obs: np.ndarray      # (J, 4)
    general: np.ndarray        # (13,)


class CriticObservation(NamedTuple):
    descriptions: np.ndarray   # (J, 20)
    joint_obs: np.ndarray      # (J, 5)
    general: np.ndarray        # (13,)


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_rotation_vector(rotation: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rotation))
    if angle < 1e-12:
        return IDENTITY_QUATERNION.copy()
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * rotation / angle])


def rotate_to_body(orientation: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Express a world-frame vector in the trunk frame."""
    conjugate = orientation * np.array([1.0, -1.0, -1.0, -1.0])
    pure = np.concatenate([[0.0], vector])
    return quat_multiply(quat_multiply(conjugate, pure), orientation)[1:]


def gravity_in_body(orientation: np.ndarray) -> np.ndarray:
    return rotate_to_body(orientation, GRAVITY_WORLD)


def tilt_angle(gravity_body: np.ndarray) -> float:
    return float(np.arccos(np.clip(-gravity_body[2], -1.0, 1.0)))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def serving_feet(foot: np.ndarray) -> np.ndarray:
    serving = np.full(foot.shape[0], -1, dtype=np.int64)
    upcoming = -1
    for j in range(foot.shape[0] - 1, -1, -1):
        if foot[j]:
            upcoming = j
        serving[j] = upcoming
    return serving


def joint_dynamics(e: Embodiment) -> JointDynamics:
    """Everything the integrator needs, computed once per embodiment."""
    base, er, dr = e.base, e.er_params, e.dr_params
    share = trunk_share_inertia(base, er) * dr.mass
    foot = base.joint_array("foot").astype(bool)
    imu = np.asarray(base.imu_position) + er.imu_offset - (np.asarray(base.trunk_com) + er.com_offset)
    return JointDynamics(
        kp=er.kp * dr.kp,
        kd=er.kd * dr.kd,
        damping=er.damping * dr.damping,
        friction=er.friction * dr.friction,
        stiffness=er.stiffness.copy(),
        inertia=share + er.armature,
        torque_limit=er.torque_limit.copy(),
        velocity_limit=er.velocity_limit.copy(),
        lo=er.position_lo.copy(),
        hi=er.position_hi.copy(),
        nominal=er.nominal_position.copy(),
        action_scale=er.action_scale.copy(),
        track=base.joint_array("track_nominal").astype(bool),
        axis=er.axis.copy(),
        leverage=base.joint_array("leverage").reshape(-1, 3) * er.body_size[None, :] * er.body_position,
        lever_arm=lever_arms(base, er),
        foot=foot,
        serving_foot=serving_feet(foot),
        trunk_inertia=np.asarray(base.trunk_inertia) * er.mass_coupled * er.inertia * dr.mass,
        imu_arm=imu,
        dt=base.dt,
    )


def pd_torque(q: np.ndarray, qd: np.ndarray, actions: np.ndarray, dyn: JointDynamics) -> np.ndarray:
    """Track-nominal joints ignore their action and hold the nominal position."""
    target = np.where(dyn.track, dyn.nominal, dyn.nominal + dyn.action_scale * actions)
    return np.clip(dyn.kp * (target - q) - dyn.kd * qd, -dyn.torque_limit, dyn.torque_limit)


def integrate_joints(q: np.ndarray, qd: np.ndarray, torque: np.ndarray, dyn: JointDynamics) -> Tuple[np.ndarray, np.ndarray]:
    """
    One semi-implicit Euler step; positions hard-clamped, velocity zeroed into a limit.

    Coulomb friction is applied as an impulse that can stop a joint but never
    reverse it.
    """
    qdd = (torque - dyn.damping * qd - dyn.stiffness * (q - dyn.nominal)) / dyn.inertia
    qd_free = qd + dyn.dt * qdd
    qd_new = np.sign(qd_free) * np.maximum(np.abs(qd_free) - dyn.dt * dyn.friction / dyn.inertia, 0.0)
    qd_new = np.clip(qd_new, -dyn.velocity_limit, dyn.velocity_limit)
    q_new = q + dyn.dt * qd_new
    below = q_new < dyn.lo
    above = q_new > dyn.hi
    q_new = np.clip(q_new, dyn.lo, dyn.hi)
    qd_new = np.where((below & (qd_new < 0)) | (above & (qd_new > 0)), 0.0, qd_new)
    return q_new, qd_new


def foot_contacts(q: np.ndarray, dyn: JointDynamics, offset: float) -> np.ndarray:
    return dyn.foot & (q < dyn.nominal - offset)


def stance_gates(contact: np.ndarray, dyn: JointDynamics) -> np.ndarray:
    return np.where(dyn.serving_foot < 0, 1.0, contact[np.maximum(dyn.serving_foot, 0)].astype(np.float64))


def trunk_update(
    state: EnvState,
    qd: np.ndarray,
    torque: np.ndarray,
    contact: np.ndarray,
    dyn: JointDynamics,
    config: EnvConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """New (linear velocity, angular velocity, orientation) of the trunk."""
    count = qd.shape[0]
    gates = stance_gates(contact, dyn) if config.stance_gating else np.ones(count)
    drive = dyn.leverage * (gates * qd)[:, None]
    linear_target = drive.sum(axis=0) / count
    yaw_target = float(np.sum(np.cross(dyn.lever_arm, drive)[:, 2])) / count

    gravity = gravity_in_body(state.orientation)
    righting = config.righting_gain * np.cross(GRAVITY_WORLD, gravity)
    angular_target = righting + np.array([0.0, 0.0, yaw_target])
    reaction = -config.reaction_gain * np.sum(dyn.axis * torque[:, None], axis=0) / dyn.trunk_inertia

    blend = min(1.0, dyn.dt / config.velocity_lag)
    linear = state.linear_velocity + blend * (linear_target - state.linear_velocity)
    angular = state.angular_velocity + blend * (angular_target - state.angular_velocity) + dyn.dt * reaction

    orientation = quat_multiply(state.orientation, quat_from_rotation_vector(angular * dyn.dt))
    orientation = orientation / np.linalg.norm(orientation)
    return linear, angular, orientation


def compute_reward(
    linear: np.ndarray,
    angular: np.ndarray,
    command: np.ndarray,
    torque: np.ndarray,
    actions: np.ndarray,
    previous_action: np.ndarray,
    qd: np.ndarray,
    gravity: np.ndarray,
    beta: float,
    rc: RewardConfig,
) -> Tuple[float, float]:
    """Returns (reward, planar tracking error in m/s)."""
    error_xy = linear[:2] - command[:2]
    tracking_error = float(np.linalg.norm(error_xy))
    reward = rc.tracking_weight * math.exp(-float(np.dot(error_xy, error_xy)) / rc.tracking_width)
    reward += rc.yaw_weight * math.exp(-(float(angular[2]) - float(command[2])) ** 2 / rc.yaw_width)

    penalty = scale(*rc.torque_penalty, beta) * float(np.sum(torque ** 2))
    penalty += scale(*rc.action_rate_penalty, beta) * float(np.sum((actions - previous_action) ** 2))
    penalty += scale(*rc.joint_velocity_penalty, beta) * float(np.sum(qd ** 2))
    penalty += scale(*rc.orientation_penalty, beta) * float(np.sum(gravity[:2] ** 2))
    return reward - penalty, tracking_error


def _push_steps(config: EnvConfig, dt: float) -> Tuple[int, int]:
    return max(1, int(round(config.push_interval[0] / dt))), max(1, int(round(config.push_interval[1] / dt)))


# ---------------------------------------------------------------------------
# reset / step / observe
# ---------------------------------------------------------------------------

def sample_command(stream: np.random.Generator, beta: float, config: EnvConfig) -> np.ndarray:
    limits = np.array([scale(0.0, c, beta) for c in config.command_max])
    return stream.uniform(-1.0, 1.0, size=3) * limits


def reset(e: Embodiment, stream: np.random.Generator, beta: float, config: Optional[EnvConfig] = None) -> EnvState:
    """Joints at nominal and at rest, trunk upright, fresh command and push timer."""
    config = config or EnvConfig()
    count = e.joint_count
    nominal = e.er_params.nominal_position.copy()
    command = sample_command(stream, beta, config)
    first, last = _push_steps(config, e.base.dt)
    return EnvState(
        q=nominal,
        qd=np.zeros(count),
        linear_velocity=np.zeros(3),
        angular_velocity=np.zeros(3),
        orientation=IDENTITY_QUATERNION.copy(),
        step_index=0,
        command=command,
        foot_contact=np.zeros(count, dtype=bool),
        previous_action=np.zeros(count),
        next_push_step=int(stream.integers(first, last + 1)),
    )


def step(
    state: EnvState,
    actions: np.ndarray,
    e: Embodiment,
    beta: float,
    config: Optional[EnvConfig] = None,
    stream: Optional[np.random.Generator] = None,
    dynamics: Optional[JointDynamics] = None,
) -> Tuple[EnvState, float, bool, Dict[str, Any]]:
    """
    Advance one control step.

    Args:
        state: Current state
        actions: (J,) policy actions, clipped to +-action_clip
        e: Embodiment whose parameters drive the dynamics
        beta: Curriculum coefficient (penalties, pushes, termination)
        config: Environment settings
        stream: Push randomness; None disables pushes
        dynamics: Precomputed joint_dynamics(e)

    Returns:
        (next state, reward, done, info). A non-finite state ends the episode
        with info["error"] set and zero reward.
    """
    config = config or EnvConfig()
    dyn = dynamics or joint_dynamics(e)
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (e.joint_count,):
        raise ValueError(f"expected {e.joint_count} actions, got shape {actions.shape}")
    actions = np.clip(actions, -config.action_clip, config.action_clip)

    torque = pd_torque(state.q, state.qd, actions, dyn)
    q, qd = integrate_joints(state.q, state.qd, torque, dyn)
    contact = foot_contacts(q, dyn, config.contact_offset)
    linear, angular, orientation = trunk_update(state, qd, torque, contact, dyn, config)

    step_index = state.step_index + 1
    next_push = state.next_push_step
    if stream is not None and step_index >= next_push:
        magnitude = scale(0.0, config.push_magnitude, beta)
        heading = stream.uniform(0.0, 2.0 * math.pi)
        kick = magnitude * np.array([math.cos(heading), math.sin(heading), 0.0])
        linear = linear + kick
        angular = angular + kick[[1, 0, 2]] * np.array([-1.0, 1.0, 0.0])
        first, last = _push_steps(config, dyn.dt)
        next_push = step_index + int(stream.integers(first, last + 1))

    new_state = EnvState(
        q=q,
        qd=qd,
        linear_velocity=linear,
        angular_velocity=angular,
        orientation=orientation,
        step_index=step_index,
        command=state.command,
        foot_contact=contact,
        previous_action=actions,
        next_push_step=next_push,
    )

    info: Dict[str, Any] = {"torque": torque}
    if not new_state.is_finite():
        info.update(error="non-finite state", terminated=True, truncated=False, tracking_error=float("nan"))
        logger.warning("non-finite state in %s at step %d", e.base.name, step_index)
        return new_state, 0.0, True, info

    gravity = gravity_in_body(orientation)
    reward, tracking_error = compute_reward(
        linear, angular, state.command, torque, actions, state.previous_action, qd, gravity, beta, config.reward
    )
    tilt = tilt_angle(gravity)
    terminated = tilt > scale(config.tilt_limit[0], config.tilt_limit[1], beta)
    truncated = step_index >= config.horizon and not terminated
    info.update(terminated=terminated, truncated=truncated, tracking_error=tracking_error, tilt=tilt)
    return new_state, reward, bool(terminated or truncated), info


def observe(
    state: EnvState,
    e: Embodiment,
    beta: float,
    noise_stream: Optional[np.random.Generator] = None,
    dynamics: Optional[JointDynamics] = None,
) -> Tuple[ActorObservation, CriticObservation]:
    """
    Actor inputs carry DR observation noise; critic inputs are noise-free and add foot contact.

    Draw order is fixed (joint positions, joint velocities, linear velocity,
    angular velocity, gravity) and draws happen even at zero noise.
    """
    dyn = dynamics or joint_dynamics(e)
    dr = e.dr_params
    count = e.joint_count

    def noise(std: float, size: int) -> np.ndarray:
        if noise_stream is None:
            return np.zeros(size)
        return std * noise_stream.normal(size=size)

    q_noise = noise(dr.joint_position_noise, count)
    qd_noise = noise(dr.joint_velocity_noise, count)
    lin_noise = noise(dr.linear_velocity_noise, 3)
    ang_noise = noise(dr.angular_velocity_noise, 3)
    grav_noise = noise(dr.gravity_noise, 3)

    flag = dyn.track.astype(np.float64)
    imu_velocity = state.linear_velocity + np.cross(state.angular_velocity, dyn.imu_arm)
    gravity = gravity_in_body(state.orientation)
    noisy_gravity = gravity + grav_noise
    noisy_gravity = noisy_gravity / np.linalg.norm(noisy_gravity)

    actor = ActorObservation(
        descriptions=e.description_vectors,
        joint_obs=np.stack([state.q + q_noise, state.qd + qd_noise, state.previous_action, flag], axis=-1),
        general=np.concatenate([
            imu_velocity + lin_noise,
            state.angular_velocity + ang_noise,
            noisy_gravity,
            state.command,
            [beta],
        ]),
    )
    critic = CriticObservation(
        descriptions=e.description_vectors,
        joint_obs=np.stack(
            [state.q, state.qd, state.previous_action, flag, state.foot_contact.astype(np.float64)], axis=-1
        ),
        general=np.concatenate([imu_velocity, state.angular_velocity, gravity, state.command, [beta]]),
    )
    return actor, critic


def reset_joint_state(state: EnvState, e: Embodiment) -> EnvState:
    """Joints back to nominal and at rest; trunk, command and timers are kept."""
    return replace(
        state,
        q=e.er_params.nominal_position.copy(),
        qd=np.zeros(e.joint_count),
        foot_contact=np.zeros(e.joint_count, dtype=bool),
        previous_action=np.zeros(e.joint_count),
    )


# ---------------------------------------------------------------------------
# Stateful wrapper
# ---------------------------------------------------------------------------

class LocomotionEnv:
    """
    One environment of one base robot with its own random stream.

    Every reset samples a fresh embodiment at the given beta; between steps
    the embodiment may be resampled (joint state goes back to nominal).
    """

    def __init__(
        self,
        base: Morphology,
        stream: np.random.Generator,
        config: Optional[EnvConfig] = None,
        ranges: Optional[ERRanges] = None,
        dr_ranges: Optional[DRRanges] = None,
        env_index: int = 0,
        resample: bool = True,
    ):
        self.base = base
        self.stream = stream
        self.config = config or EnvConfig()
        self.ranges = ranges or ERRanges()
        self.dr_ranges = dr_ranges or DRRanges()
        self.env_index = env_index
        self.resample = resample
        self.embodiment: Optional[Embodiment] = None
        self.dynamics: Optional[JointDynamics] = None
        self.state: Optional[EnvState] = None
        self.resample_count = 0
        self._episode_return = 0.0
        self._tracking_error_sum = 0.0

    @property
    def joint_count(self) -> int:
        return self.base.joint_count

    def _use(self, embodiment: Embodiment) -> None:
        self.embodiment = embodiment
        self.dynamics = joint_dynamics(embodiment)

    def reset(self, beta: float) -> EnvState:
        self._use(sample_embodiment(self.base, beta, self.stream, self.ranges, self.dr_ranges))
        self.state = reset(self.embodiment, self.stream, beta, self.config)
        self._episode_return = 0.0
        self._tracking_error_sum = 0.0
        return self.state

    def observe(self, beta: float) -> Tuple[ActorObservation, CriticObservation]:
        return observe(self.state, self.embodiment, beta, self.stream, self.dynamics)

    def step(self, actions: np.ndarray, beta: float) -> Tuple[float, bool, Dict[str, Any]]:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        self.state, reward, done, info = step(
            self.state, actions, self.embodiment, beta, self.config, self.stream, self.dynamics
        )
        self._episode_return += reward
        if np.isfinite(info["tracking_error"]):
            self._tracking_error_sum += info["tracking_error"]

        if done:
            length = self.state.step_index
            info["episode"] = EpisodeStats(
                length=length,
                mean_tracking_error=self._tracking_error_sum / max(length, 1),
                episode_return=self._episode_return,
            )
        elif self.resample:
            candidate = maybe_resample(self.embodiment, beta, self.stream, self.ranges, self.dr_ranges)
            if candidate is not self.embodiment:
                self._use(candidate)
                self.state = reset_joint_state(self.state, candidate)
                self.resample_count += 1
                info["resampled"] = True
        return reward, done, info


# ---------------------------------------------------------------------------
# Trajectory dump
# ---------------------------------------------------------------------------

def trajectory_row(step_index: int, env_index: int, reward: float, done: bool, beta: float, state: EnvState) -> Dict[str, Any]:
    row: Dict[str, Any] = {"step": step_index, "env": env_index, "reward": reward, "done": int(done), "beta": beta}
    row.update({f"q{j}": value for j, value in enumerate(state.q)})
    row.update({f"qd{j}": value for j, value in enumerate(state.qd)})
    row.update({
        "vx": state.linear_velocity[0],
        "vy": state.linear_velocity[1],
        "wz": state.angular_velocity[2],
        "cmd_vx": state.command[0],
        "cmd_vy": state.command[1],
        "cmd_wz": state.command[2],
    })
    return row


def trajectory_frame(rows: List[Dict[str, Any]], joint_count: int) -> pd.DataFrame:
    """Rows in the trajectory CSV column order: step,env,reward,done,beta,q0..,qd0..,vx,...,cmd_wz."""
    columns = (
        ["step", "env", "reward", "done", "beta"]
        + [f"q{j}" for j in range(joint_count)]
        + [f"qd{j}" for j in range(joint_count)]
        + ["vx", "vy", "wz", "cmd_vx", "cmd_vy", "cmd_wz"]
    )
    return pd.DataFrame(rows, columns=columns)
