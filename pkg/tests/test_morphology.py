from dataclasses import replace

import pytest

from components.morphology import (
    JOINT_DEFAULTS,
    load_morphology,
    parse_morphology,
    serialize_morphology,
    validate_morphology,
)
from utils.errors import KeyValueSyntaxError, MorphologyError

MINIMAL = """\
name: mini
trunk_mass: 2
trunk_inertia: (0.1, 0.1, 0.1)

joint hip:
  axis: (0, 1, 0)
  torque_limit: 5
  velocity_limit: 4
  position_limits: (-1, 1)
  nominal_position: 0
  kp: 10
"""


def test_defaults_fill_optional_keys():
    m = parse_morphology(MINIMAL)
    joint = m.joints[0]
    assert m.joint_count == 1
    assert m.control_frequency == 50.0
    assert m.dt == pytest.approx(0.02)
    for key, value in JOINT_DEFAULTS.items():
        assert getattr(joint, key) == value


def test_round_trip_is_exact(robots_dir):
    for path in sorted(robots_dir.glob("*.morph")):
        m = load_morphology(path)
        text = serialize_morphology(m)
        assert parse_morphology(text) == m
        assert serialize_morphology(parse_morphology(text)) == text


def test_serialized_templates_match_golden(golden, robots_dir):
    golden("template_3joint.morph", serialize_morphology(load_morphology(robots_dir / "template_3joint.morph")))
    golden("quadruped_a.morph", serialize_morphology(load_morphology(robots_dir / "quadruped_a.morph")))


def test_joint_order_is_file_order(quadruped):
    assert [j.name for j in quadruped.joints][:2] == ["fl_hip", "fl_knee"]


@pytest.mark.parametrize("old, new, field_path", [
    ("axis: (0, 1, 0)", "axis: (0, 1, 1)", "joints.hip.axis"),
    ("position_limits: (-1, 1)", "position_limits: (1, -1)", "joints.hip.position_limits"),
    ("nominal_position: 0", "nominal_position: 2", "joints.hip.nominal_position"),
    ("kp: 10", "kp: 0", "joints.hip.kp"),
    ("trunk_mass: 2", "trunk_mass: -1", "trunk_mass"),
    ("  kp: 10\n", "  kp: 10\n  gearing: 3\n", "joints.hip.gearing"),
    ("  kp: 10\n", "", "joints.hip.kp"),
])
def test_invariant_violations_name_the_field(old, new, field_path):
    with pytest.raises(MorphologyError) as info:
        parse_morphology(MINIMAL.replace(old, new))
    assert info.value.field_path == field_path


def test_duplicate_joint_name(template_3joint):
    joints = list(template_3joint.joints)
    duplicated = template_3joint.with_joints(joints + [joints[0]])
    with pytest.raises(MorphologyError, match="duplicate joint name"):
        validate_morphology(duplicated)


def test_no_joints():
    with pytest.raises(MorphologyError) as info:
        parse_morphology(MINIMAL[:MINIMAL.index("joint hip:")])
    assert info.value.field_path == "joints"


def test_syntax_error_reports_position():
    with pytest.raises(KeyValueSyntaxError) as info:
        parse_morphology(MINIMAL.replace("torque_limit: 5", "torque_limit: five"))
    assert info.value.line == 7
    assert info.value.column == 17


def test_validate_catches_programmatic_edits(template_3joint):
    broken = template_3joint.with_joints([replace(template_3joint.joints[0], damping=-0.1)])
    with pytest.raises(MorphologyError, match="damping"):
        validate_morphology(broken)
