# ============================================
# components/morphology.py
# ============================================

"""
Robot morphology data model and the `.morph` file format.

A `.morph` file is the nominal description of one robot: a trunk plus an ordered
list of actuated joints. It plays the role a URDF plays for a full simulator,
restricted to the parameters the training pipeline needs (limits, gains,
nominal positions).

`leverage`, `attach_offset`, `action_scale` and `foot` only feed the toy
trunk dynamics in components/env.py.
"""

import logging
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from utils.errors import MorphologyError
from utils.keyvalue import (
    Block,
    Entry,
    format_float,
    format_vector,
    parse_document,
    to_bool,
    to_float,
    to_vector,
)

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]

AXIS_TOLERANCE = 1e-9

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")

JOINT_DEFAULTS = {
    "kd": 0.5,
    "damping": 0.05,
    "friction": 0.01,
    "armature": 0.01,
    "stiffness": 0.0,
    "leverage": (0.0, 0.0, 0.0),
    "attach_offset": (0.0, 0.0, 0.0),
    "track_nominal": False,
    "action_scale": 0.25,
    "foot": False,
}

TRUNK_DEFAULTS = {
    "trunk_com": (0.0, 0.0, 0.0),
    "imu_position": (0.0, 0.0, 0.0),
    "control_frequency": 50.0,
}

_JOINT_REQUIRED = ("axis", "torque_limit", "velocity_limit", "position_limits", "nominal_position", "kp")
_TRUNK_REQUIRED = ("name", "trunk_mass", "trunk_inertia")


@dataclass(frozen=True)
class JointSpec:
    """Nominal description of one actuated joint."""

    name: str
    axis: Vector3
    torque_limit: float
    velocity_limit: float
    position_limits: Tuple[float, float]
    nominal_position: float
    kp: float
    kd: float = 0.5
    damping: float = 0.05
    friction: float = 0.01
    armature: float = 0.01
    stiffness: float = 0.0
    leverage: Vector3 = (0.0, 0.0, 0.0)
    attach_offset: Vector3 = (0.0, 0.0, 0.0)
    track_nominal: bool = False
    action_scale: float = 0.25
    foot: bool = False


@dataclass(frozen=True)
class Morphology:
    """Nominal robot: trunk parameters and an ordered tuple of joints."""

    name: str
    trunk_mass: float
    trunk_inertia: Vector3
    joints: Tuple[JointSpec, ...]
    trunk_com: Vector3 = (0.0, 0.0, 0.0)
    imu_position: Vector3 = (0.0, 0.0, 0.0)
    control_frequency: float = 50.0

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def dt(self) -> float:
        return 1.0 / self.control_frequency

    def joint_array(self, attribute: str) -> np.ndarray:
        """Stack one JointSpec attribute over all joints (float64)."""
        return np.array([getattr(joint, attribute) for joint in self.joints], dtype=np.float64)

    def with_joints(self, joints: List[JointSpec]) -> "Morphology":
        return replace(self, joints=tuple(joints))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_joint(joint: JointSpec, path: str) -> None:
    """Raise MorphologyError on the first violated JointSpec invariant."""
    norm = float(np.linalg.norm(joint.axis))
    if abs(norm - 1.0) > AXIS_TOLERANCE:
        raise MorphologyError(f"{path}.axis", f"axis not unit norm (norm {norm:.12g})")

    lo, hi = joint.position_limits
    if not lo < hi:
        raise MorphologyError(f"{path}.position_limits", f"lower limit {lo} must be below upper limit {hi}")
    if not lo <= joint.nominal_position <= hi:
        raise MorphologyError(
            f"{path}.nominal_position", f"nominal position {joint.nominal_position} outside [{lo}, {hi}]"
        )

    for attribute in ("torque_limit", "velocity_limit", "kp", "action_scale"):
        if not getattr(joint, attribute) > 0:
            raise MorphologyError(f"{path}.{attribute}", "must be > 0")
    for attribute in ("kd", "damping", "friction", "armature", "stiffness"):
        if getattr(joint, attribute) < 0:
            raise MorphologyError(f"{path}.{attribute}", "must be >= 0")


def validate_morphology(m: Morphology) -> None:
    """Raise MorphologyError on the first violated Morphology invariant."""
    if not m.joints:
        raise MorphologyError("joints", "a morphology needs at least one joint")
    if not m.trunk_mass > 0:
        raise MorphologyError("trunk_mass", "must be > 0")
    if any(not value > 0 for value in m.trunk_inertia):
        raise MorphologyError("trunk_inertia", "all components must be > 0")
    if not m.control_frequency > 0:
        raise MorphologyError("control_frequency", "must be > 0")

    seen = set()
    for joint in m.joints:
        if joint.name in seen:
            raise MorphologyError(f"joints.{joint.name}", "duplicate joint name")
        seen.add(joint.name)
        validate_joint(joint, f"joints.{joint.name}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _joint_from_block(block: Block) -> JointSpec:
    path = f"joints.{block.name}"
    entries = block.as_dict()

    known = {f.name for f in fields(JointSpec)} - {"name"}
    for key, entry in entries.items():
        if key not in known:
            raise MorphologyError(f"{path}.{key}", "unknown joint key")
    for key in _JOINT_REQUIRED:
        if key not in entries:
            raise MorphologyError(f"{path}.{key}", "required key missing")

    def real(key: str) -> float:
        return to_float(entries[key]) if key in entries else float(JOINT_DEFAULTS[key])

    def vec3(key: str) -> Vector3:
        return to_vector(entries[key], 3) if key in entries else JOINT_DEFAULTS[key]

    def flag(key: str) -> bool:
        return to_bool(entries[key]) if key in entries else JOINT_DEFAULTS[key]

    joint = JointSpec(
        name=block.name,
        axis=to_vector(entries["axis"], 3),
        torque_limit=to_float(entries["torque_limit"]),
        velocity_limit=to_float(entries["velocity_limit"]),
        position_limits=to_vector(entries["position_limits"], 2),
        nominal_position=to_float(entries["nominal_position"]),
        kp=to_float(entries["kp"]),
        kd=real("kd"),
        damping=real("damping"),
        friction=real("friction"),
        armature=real("armature"),
        stiffness=real("stiffness"),
        leverage=vec3("leverage"),
        attach_offset=vec3("attach_offset"),
        track_nominal=flag("track_nominal"),
        action_scale=real("action_scale"),
        foot=flag("foot"),
    )
    validate_joint(joint, path)
    return joint


def parse_morphology(text: str) -> Morphology:
    """
    Parse `.morph` text into a validated Morphology.

    Args:
        text: File content

    Returns:
        Morphology with omitted optionals set to their documented defaults

    Raises:
        KeyValueSyntaxError: grammar problems (line/column)
        MorphologyError: invariant violations (field path)
    """
    document = parse_document(text, allow_sections=False)
    top = document.top
    entries: Dict[str, Entry] = top.as_dict()

    allowed = set(_TRUNK_REQUIRED) | set(TRUNK_DEFAULTS)
    for key in entries:
        if key not in allowed:
            raise MorphologyError(key, "unknown top-level key")
    for key in _TRUNK_REQUIRED:
        if key not in entries:
            raise MorphologyError(key, "required key missing")

    joints = []
    seen = set()
    for block in top.blocks:
        if block.kind != "joint":
            raise MorphologyError(f"{block.kind} {block.name}", "only 'joint' blocks are allowed")
        if block.name in seen:
            raise MorphologyError(f"joints.{block.name}", "duplicate joint name")
        seen.add(block.name)
        joints.append(_joint_from_block(block))

    def vec3(key: str) -> Vector3:
        return to_vector(entries[key], 3) if key in entries else TRUNK_DEFAULTS[key]

    if not _NAME_RE.match(entries["name"].value):
        raise MorphologyError("name", f"'{entries['name'].value}' is not a valid identifier")

    morphology = Morphology(
        name=entries["name"].value,
        trunk_mass=to_float(entries["trunk_mass"]),
        trunk_inertia=to_vector(entries["trunk_inertia"], 3),
        joints=tuple(joints),
        trunk_com=vec3("trunk_com"),
        imu_position=vec3("imu_position"),
        control_frequency=(
            to_float(entries["control_frequency"])
            if "control_frequency" in entries
            else TRUNK_DEFAULTS["control_frequency"]
        ),
    )
    validate_morphology(morphology)
    return morphology


def load_morphology(path: Union[str, Path]) -> Morphology:
    """Read and parse a `.morph` file (UTF-8)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    morphology = parse_morphology(text)
    logger.debug("loaded morphology %s (%d joints) from %s", morphology.name, morphology.joint_count, path)
    return morphology


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _bool_text(value: bool) -> str:
    return "true" if value else "false"


def serialize_morphology(m: Morphology) -> str:
    """
    Canonical `.morph` text: fixed key order, every optional written out,
    floats through `format_float`, one blank line before each joint block.
    """
    lines = [
        f"name: {m.name}",
        f"trunk_mass: {format_float(m.trunk_mass)}",
        f"trunk_inertia: {format_vector(m.trunk_inertia)}",
        f"trunk_com: {format_vector(m.trunk_com)}",
        f"imu_position: {format_vector(m.imu_position)}",
        f"control_frequency: {format_float(m.control_frequency)}",
    ]
    for joint in m.joints:
        lines.extend([
            "",
            f"joint {joint.name}:",
            f"  axis: {format_vector(joint.axis)}",
            f"  torque_limit: {format_float(joint.torque_limit)}",
            f"  velocity_limit: {format_float(joint.velocity_limit)}",
            f"  position_limits: {format_vector(joint.position_limits)}",
            f"  nominal_position: {format_float(joint.nominal_position)}",
            f"  kp: {format_float(joint.kp)}",
            f"  kd: {format_float(joint.kd)}",
            f"  damping: {format_float(joint.damping)}",
            f"  friction: {format_float(joint.friction)}",
            f"  armature: {format_float(joint.armature)}",
            f"  stiffness: {format_float(joint.stiffness)}",
            f"  leverage: {format_vector(joint.leverage)}",
            f"  attach_offset: {format_vector(joint.attach_offset)}",
            f"  track_nominal: {_bool_text(joint.track_nominal)}",
            f"  action_scale: {format_float(joint.action_scale)}",
            f"  foot: {_bool_text(joint.foot)}",
        ])
    return "\n".join(lines) + "\n"
