# ============================================
# components/randomization.py
# ============================================

"""
Embodiment Randomization (ER) layered with Domain Randomization (DR).

ER samples are visible to the policy through the per-joint description
vectors; DR samples perturb the dynamics on top of them and stay hidden.
Every range is a half-width at beta = 1 and shrinks linearly with beta.

Description vector layout (width 20):
    0-2   axis                       (unit vector)
    3-5   lever arm                  (m, joint position relative to the trunk reference point)
    6     torque limit               (ratio to nominal)
    7     velocity limit             (ratio to nominal)
    8-9   position limits lo, hi     (rad)
    10    damping                    (ratio)
    11    friction                   (ratio)
    12    reflected inertia          (ratio; armature + trunk share)
    13    stiffness                  (ratio)
    14    nominal position           (rad)
    15    kp                         (ratio)
    16    kd                         (ratio)
    17    action scale               (ratio)
    18    track-nominal flag         (0/1)
    19    joint index                (0..1)

The toy trunk has no separate body parts, so the trunk-level groups surface
through per-joint entries: body size/position, CoM and IMU offsets move the
lever arm; mass and inertia move the reflected inertia.
"""

import copy
import logging
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, List, Optional

import numpy as np

from components.curriculum import scale
from components.morphology import JointSpec, Morphology

logger = logging.getLogger(__name__)

DESCRIPTION_DIM = 20

DESCRIPTION_SLOTS = {
    "axis": slice(0, 3),
    "lever_arm": slice(3, 6),
    "torque_limit": slice(6, 7),
    "velocity_limit": slice(7, 8),
    "position_lo": slice(8, 9),
    "position_hi": slice(9, 10),
    "damping": slice(10, 11),
    "friction": slice(11, 12),
    "reflected_inertia": slice(12, 13),
    "stiffness": slice(13, 14),
    "nominal_position": slice(14, 15),
    "kp": slice(15, 16),
    "kd": slice(16, 17),
    "action_scale": slice(17, 18),
    "track_nominal": slice(18, 19),
    "joint_index": slice(19, 20),
}

# ER parameter -> description slot it is visible through
ER_VISIBILITY = {
    "body_size": "lever_arm",
    "body_position": "lever_arm",
    "mass_coupled": "reflected_inertia",
    "mass": "reflected_inertia",
    "inertia": "reflected_inertia",
    "com_offset": "lever_arm",
    "imu_offset": "lever_arm",
    "axis": "axis",
    "torque_limit": "torque_limit",
    "velocity_limit": "velocity_limit",
    "position_lo": "position_lo",
    "position_hi": "position_hi",
    "damping": "damping",
    "friction": "friction",
    "armature": "reflected_inertia",
    "stiffness": "stiffness",
    "nominal_position": "nominal_position",
    "kp": "kp",
    "kd": "kd",
    "action_scale": "action_scale",
}

Stream = np.random.Generator


@dataclass(frozen=True)
class ERRanges:
    """Half-widths at beta = 1. Relative groups are fractions of nominal."""

    body_size: float = 0.3
    body_position: float = 0.2
    mass: float = 0.5
    inertia: float = 0.5
    com_offset: float = 0.1
    axis_tilt: float = 0.15
    imu_offset: float = 0.05
    torque_limit: float = 0.4
    velocity_limit: float = 0.4
    position_limit: float = 0.2
    damping: float = 0.8
    friction: float = 0.8
    armature: float = 0.8
    stiffness: float = 0.8
    nominal_position: float = 0.2
    kp: float = 0.4
    kd: float = 0.4
    action_scale: float = 0.3
    resample_probability_max: float = 0.002

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"ERRanges.{f.name} must be >= 0")
        if self.resample_probability_max > 1:
            raise ValueError("ERRanges.resample_probability_max must be in [0, 1]")
        for name in ("torque_limit", "velocity_limit", "kp", "action_scale", "mass", "inertia", "body_size"):
            if getattr(self, name) >= 1:
                raise ValueError(f"ERRanges.{name} must stay below 1 to keep the value positive")


@dataclass(frozen=True)
class DRRanges:
    """Hidden multiplicative half-widths and observation noise std, both at beta = 1."""

    mass: float = 0.1
    friction: float = 0.1
    damping: float = 0.1
    kp: float = 0.1
    kd: float = 0.1
    joint_position_noise: float = 0.01
    joint_velocity_noise: float = 0.15
    linear_velocity_noise: float = 0.05
    angular_velocity_noise: float = 0.1
    gravity_noise: float = 0.02

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value < 0:
                raise ValueError(f"DRRanges.{f.name} must be >= 0")
        for name in ("mass", "friction", "damping", "kp", "kd"):
            if getattr(self, name) >= 1:
                raise ValueError(f"DRRanges.{name} must stay below 1")


@dataclass(frozen=True, eq=False)
class ERParams:
    """Concrete ER sample. Trunk groups are factors/offsets, joint groups are values."""

    body_size: np.ndarray          # (3,) factor
    body_position: np.ndarray      # (J, 3) factor
    mass_coupled: float            # factor on mass and inertia together
    mass: float                    # decoupled mass factor
    inertia: np.ndarray            # (3,) decoupled inertia factors
    com_offset: np.ndarray         # (3,) m
    imu_offset: np.ndarray         # (3,) m
    axis: np.ndarray               # (J, 3) unit
    torque_limit: np.ndarray       # (J,)
    velocity_limit: np.ndarray
    position_lo: np.ndarray
    position_hi: np.ndarray
    damping: np.ndarray
    friction: np.ndarray
    armature: np.ndarray
    stiffness: np.ndarray
    nominal_position: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    action_scale: np.ndarray

    def as_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def equals(self, other: "ERParams") -> bool:
        return all(
            np.array_equal(np.asarray(a), np.asarray(b))
            for a, b in zip(self.as_dict().values(), other.as_dict().values())
        )


@dataclass(frozen=True, eq=False)
class DRParams:
    """Hidden perturbations: multiplicative factors plus observation noise std."""

    mass: float
    friction: np.ndarray
    damping: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    joint_position_noise: float
    joint_velocity_noise: float
    linear_velocity_noise: float
    angular_velocity_noise: float
    gravity_noise: float

    def as_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class Embodiment:
    """One randomized instance of a base morphology."""

    base: Morphology
    beta: float
    er_params: ERParams
    dr_params: DRParams
    description_vectors: np.ndarray   # (J, DESCRIPTION_DIM)
    seed_trace: Optional[Dict[str, Any]] = None

    @property
    def joint_count(self) -> int:
        return self.base.joint_count

    def to_morphology(self) -> Morphology:
        """The ER sample written back as a concrete Morphology (DR not included)."""
        er = self.er_params
        base = self.base
        mass_scale = er.mass_coupled * er.mass
        inertia_scale = er.mass_coupled * er.inertia
        attach = _scaled_attach(base, er)
        joints = []
        for j, joint in enumerate(base.joints):
            joints.append(replace(
                joint,
                axis=tuple(float(x) for x in er.axis[j]),
                torque_limit=float(er.torque_limit[j]),
                velocity_limit=float(er.velocity_limit[j]),
                position_limits=(float(er.position_lo[j]), float(er.position_hi[j])),
                nominal_position=float(er.nominal_position[j]),
                kp=float(er.kp[j]),
                kd=float(er.kd[j]),
                damping=float(er.damping[j]),
                friction=float(er.friction[j]),
                armature=float(er.armature[j]),
                stiffness=float(er.stiffness[j]),
                attach_offset=tuple(float(x) for x in attach[j]),
                action_scale=float(er.action_scale[j]),
            ))
        return replace(
            base,
            trunk_mass=float(base.trunk_mass * mass_scale),
            trunk_inertia=tuple(float(x) for x in np.asarray(base.trunk_inertia) * inertia_scale),
            trunk_com=tuple(float(x) for x in np.asarray(base.trunk_com) + er.com_offset),
            imu_position=tuple(float(x) for x in np.asarray(base.imu_position) + er.imu_offset),
            joints=tuple(joints),
        )


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------

def make_stream(seed: int) -> Stream:
    """Independent random stream for a 64-bit unsigned seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def spawn_streams(seed: int, count: int) -> List[Stream]:
    """Split one seed into `count` independent streams (one per environment)."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.default_rng(child) for child in children]


# ---------------------------------------------------------------------------
# Derived quantities shared with the dynamics
# ---------------------------------------------------------------------------

def _scaled_attach(base: Morphology, er: ERParams) -> np.ndarray:
    attach = base.joint_array("attach_offset").reshape(-1, 3)
    return attach * er.body_size[None, :] * er.body_position


def lever_arms(base: Morphology, er: ERParams) -> np.ndarray:
    """Joint positions relative to the trunk reference point (CoM shifted by the IMU offset)."""
    reference = np.asarray(base.trunk_com, dtype=np.float64) + er.com_offset + er.imu_offset
    return _scaled_attach(base, er) - reference[None, :]


def trunk_share_inertia(base: Morphology, er: ERParams) -> np.ndarray:
    """Per-joint share of the trunk inertia that the joint drives (kg m^2)."""
    inertia = np.asarray(base.trunk_inertia, dtype=np.float64) * er.mass_coupled * er.inertia
    share = float(np.mean(inertia)) * er.mass / base.joint_count
    return np.full(base.joint_count, share)


def reflected_inertia(base: Morphology, er: ERParams) -> np.ndarray:
    return er.armature + trunk_share_inertia(base, er)


def nominal_er_params(base: Morphology) -> ERParams:
    """ERParams that reproduce the base morphology exactly."""
    count = base.joint_count
    return ERParams(
        body_size=np.ones(3),
        body_position=np.ones((count, 3)),
        mass_coupled=1.0,
        mass=1.0,
        inertia=np.ones(3),
        com_offset=np.zeros(3),
        imu_offset=np.zeros(3),
        axis=base.joint_array("axis").reshape(-1, 3),
        torque_limit=base.joint_array("torque_limit"),
        velocity_limit=base.joint_array("velocity_limit"),
        position_lo=np.array([j.position_limits[0] for j in base.joints], dtype=np.float64),
        position_hi=np.array([j.position_limits[1] for j in base.joints], dtype=np.float64),
        damping=base.joint_array("damping"),
        friction=base.joint_array("friction"),
        armature=base.joint_array("armature"),
        stiffness=base.joint_array("stiffness"),
        nominal_position=base.joint_array("nominal_position"),
        kp=base.joint_array("kp"),
        kd=base.joint_array("kd"),
        action_scale=base.joint_array("action_scale"),
    )


def _ratio(value: np.ndarray, nominal: np.ndarray) -> np.ndarray:
    # zero nominal (e.g. stiffness 0) cannot be divided; 1 + value keeps nominal at 1.0
    safe = np.where(nominal != 0.0, nominal, 1.0)
    return np.where(nominal != 0.0, value / safe, 1.0 + value)


def description_vectors_from(base: Morphology, er: ERParams) -> np.ndarray:
    """Pure function of (base, er); DR never enters here."""
    nominal = nominal_er_params(base)
    count = base.joint_count
    out = np.zeros((count, DESCRIPTION_DIM), dtype=np.float64)

    def put(slot: str, values: np.ndarray) -> None:
        out[:, DESCRIPTION_SLOTS[slot]] = np.asarray(values, dtype=np.float64).reshape(count, -1)

    put("axis", er.axis)
    put("lever_arm", lever_arms(base, er))
    put("torque_limit", _ratio(er.torque_limit, nominal.torque_limit))
    put("velocity_limit", _ratio(er.velocity_limit, nominal.velocity_limit))
    put("position_lo", er.position_lo)
    put("position_hi", er.position_hi)
    put("damping", _ratio(er.damping, nominal.damping))
    put("friction", _ratio(er.friction, nominal.friction))
    put("reflected_inertia", _ratio(reflected_inertia(base, er), reflected_inertia(base, nominal)))
    put("stiffness", _ratio(er.stiffness, nominal.stiffness))
    put("nominal_position", er.nominal_position)
    put("kp", _ratio(er.kp, nominal.kp))
    put("kd", _ratio(er.kd, nominal.kd))
    put("action_scale", _ratio(er.action_scale, nominal.action_scale))
    put("track_nominal", base.joint_array("track_nominal"))
    put("joint_index", np.arange(count) / max(count - 1, 1))
    return out


def build_description_vectors(e: Embodiment) -> np.ndarray:
    """Description vectors (J, 20) of an embodiment, rebuilt from its ER sample."""
    return description_vectors_from(e.base, e.er_params)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _relative(stream: Stream, nominal, half_width: float, beta: float, size=None) -> np.ndarray:
    u = stream.uniform(-1.0, 1.0, size=size if size is not None else np.shape(nominal))
    return np.asarray(nominal, dtype=np.float64) * (1.0 + beta * half_width * u)


def _absolute(stream: Stream, nominal, half_width: float, beta: float) -> np.ndarray:
    u = stream.uniform(-1.0, 1.0, size=np.shape(nominal))
    return np.asarray(nominal, dtype=np.float64) + beta * half_width * u


def _tilt_axes(stream: Stream, axes: np.ndarray, max_angle: float) -> np.ndarray:
    count = axes.shape[0]
    angle = stream.uniform(-1.0, 1.0, size=count) * max_angle
    direction = stream.normal(size=(count, 3))
    direction = direction - np.sum(direction * axes, axis=1, keepdims=True) * axes
    norm = np.linalg.norm(direction, axis=1, keepdims=True)
    direction = np.where(norm > 1e-12, direction / np.maximum(norm, 1e-12), 0.0)

    tilted = np.cos(angle)[:, None] * axes + np.sin(angle)[:, None] * direction
    tilted = tilted / np.linalg.norm(tilted, axis=1, keepdims=True)
    return np.where((angle != 0.0)[:, None], tilted, axes)


def sample_er_params(base: Morphology, beta: float, stream: Stream, ranges: ERRanges) -> ERParams:
    """Draw every ER group in a fixed order (the order is part of determinism)."""
    nominal = nominal_er_params(base)
    count = base.joint_count

    body_size = _relative(stream, np.ones(3), ranges.body_size, beta)
    body_position = _relative(stream, np.ones((count, 3)), ranges.body_position, beta)
    mass_coupled = float(_relative(stream, 1.0, ranges.mass, beta, size=()))
    mass = float(_relative(stream, 1.0, ranges.mass, beta, size=()))
    inertia = _relative(stream, np.ones(3), ranges.inertia, beta)
    com_offset = _absolute(stream, np.zeros(3), ranges.com_offset, beta)
    imu_offset = _absolute(stream, np.zeros(3), ranges.imu_offset, beta)
    axis = _tilt_axes(stream, nominal.axis, beta * ranges.axis_tilt)

    torque_limit = _relative(stream, nominal.torque_limit, ranges.torque_limit, beta)
    velocity_limit = _relative(stream, nominal.velocity_limit, ranges.velocity_limit, beta)
    lo = _relative(stream, nominal.position_lo, ranges.position_limit, beta)
    hi = _relative(stream, nominal.position_hi, ranges.position_limit, beta)
    # scaling signed limits can invert them for narrow ranges around zero
    position_lo = np.minimum(lo, hi)
    position_hi = np.maximum(lo, hi)
    collapsed = position_hi - position_lo < 1e-6
    position_hi = np.where(collapsed, position_lo + 1e-6, position_hi)

    damping = _relative(stream, nominal.damping, ranges.damping, beta)
    friction = _relative(stream, nominal.friction, ranges.friction, beta)
    armature = _relative(stream, nominal.armature, ranges.armature, beta)
    stiffness = _relative(stream, nominal.stiffness, ranges.stiffness, beta)
    nominal_position = _absolute(stream, nominal.nominal_position, ranges.nominal_position, beta)
    window_lo = np.maximum(position_lo, nominal.nominal_position - beta * ranges.nominal_position)
    window_hi = np.minimum(position_hi, nominal.nominal_position + beta * ranges.nominal_position)
    # limits win when the sampled range excludes the whole nominal window
    nominal_position = np.where(
        window_lo <= window_hi,
        np.clip(nominal_position, window_lo, window_hi),
        np.clip(nominal_position, position_lo, position_hi),
    )
    kp = _relative(stream, nominal.kp, ranges.kp, beta)
    kd = _relative(stream, nominal.kd, ranges.kd, beta)
    action_scale = _relative(stream, nominal.action_scale, ranges.action_scale, beta)

    return ERParams(
        body_size=body_size,
        body_position=body_position,
        mass_coupled=mass_coupled,
        mass=mass,
        inertia=inertia,
        com_offset=com_offset,
        imu_offset=imu_offset,
        axis=axis,
        torque_limit=torque_limit,
        velocity_limit=velocity_limit,
        position_lo=position_lo,
        position_hi=position_hi,
        damping=damping,
        friction=friction,
        armature=armature,
        stiffness=stiffness,
        nominal_position=nominal_position,
        kp=kp,
        kd=kd,
        action_scale=action_scale,
    )


def sample_dr_params(count: int, beta: float, stream: Stream, ranges: DRRanges) -> DRParams:
    return DRParams(
        mass=float(_relative(stream, 1.0, ranges.mass, beta, size=())),
        friction=_relative(stream, np.ones(count), ranges.friction, beta),
        damping=_relative(stream, np.ones(count), ranges.damping, beta),
        kp=_relative(stream, np.ones(count), ranges.kp, beta),
        kd=_relative(stream, np.ones(count), ranges.kd, beta),
        joint_position_noise=scale(0.0, ranges.joint_position_noise, beta),
        joint_velocity_noise=scale(0.0, ranges.joint_velocity_noise, beta),
        linear_velocity_noise=scale(0.0, ranges.linear_velocity_noise, beta),
        angular_velocity_noise=scale(0.0, ranges.angular_velocity_noise, beta),
        gravity_noise=scale(0.0, ranges.gravity_noise, beta),
    )


def sample_embodiment(
    base: Morphology,
    beta: float,
    stream: Stream,
    ranges: Optional[ERRanges] = None,
    dr_ranges: Optional[DRRanges] = None,
) -> Embodiment:
    """
    Sample one embodiment of `base` at curriculum level `beta`.

    Args:
        base: Nominal morphology
        beta: Curriculum coefficient in [0, 1]
        stream: Random stream, advanced by the draws
        ranges: ER half-widths (defaults when None)
        dr_ranges: DR half-widths (defaults when None)

    Returns:
        Embodiment whose description vectors match its ER sample
    """
    ranges = ranges or ERRanges()
    dr_ranges = dr_ranges or DRRanges()
    beta = float(np.clip(beta, 0.0, 1.0))
    trace = copy.deepcopy(stream.bit_generator.state)

    er = sample_er_params(base, beta, stream, ranges)
    dr = sample_dr_params(base.joint_count, beta, stream, dr_ranges)
    return Embodiment(
        base=base,
        beta=beta,
        er_params=er,
        dr_params=dr,
        description_vectors=description_vectors_from(base, er),
        seed_trace=trace,
    )


def nominal_embodiment(base: Morphology) -> Embodiment:
    """The beta = 0 embodiment without touching any stream."""
    er = nominal_er_params(base)
    dr = sample_dr_params(base.joint_count, 0.0, make_stream(0), DRRanges())
    return Embodiment(base=base, beta=0.0, er_params=er, dr_params=dr,
                      description_vectors=description_vectors_from(base, er))


def maybe_resample(
    current: Embodiment,
    beta: float,
    stream: Stream,
    ranges: Optional[ERRanges] = None,
    dr_ranges: Optional[DRRanges] = None,
) -> Embodiment:
    """
    Per-step resampling with probability beta * resample_probability_max.

    Returns `current` itself when no resample happens, so callers can test
    identity (`new is current`).
    """
    ranges = ranges or ERRanges()
    probability = beta * ranges.resample_probability_max
    if stream.random() < probability:
        logger.debug("resampling embodiment of %s at beta %.3f", current.base.name, beta)
        return sample_embodiment(current.base, beta, stream, ranges, dr_ranges)
    return current
