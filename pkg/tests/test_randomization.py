from dataclasses import fields, replace

import numpy as np
import pytest

from components.env import observe, reset
from components.randomization import (
    DESCRIPTION_DIM,
    DESCRIPTION_SLOTS,
    DRRanges,
    ER_VISIBILITY,
    ERRanges,
    build_description_vectors,
    description_vectors_from,
    make_stream,
    maybe_resample,
    nominal_embodiment,
    nominal_er_params,
    sample_dr_params,
    sample_embodiment,
    spawn_streams,
)


def _perturbed(value, name):
    if name == "axis":
        rotated = np.roll(value, 1, axis=1)
        return rotated / np.linalg.norm(rotated, axis=1, keepdims=True)
    if isinstance(value, float):
        return value * 1.1 + 0.01
    return np.asarray(value) * 1.1 + 0.01


def test_beta_zero_is_nominal(template_3joint):
    e = sample_embodiment(template_3joint, 0.0, make_stream(5))
    assert e.er_params.equals(nominal_er_params(template_3joint))
    assert e.to_morphology() == template_3joint
    np.testing.assert_array_equal(e.description_vectors, nominal_embodiment(template_3joint).description_vectors)


def test_same_seed_same_embodiment(quadruped):
    a = sample_embodiment(quadruped, 0.7, make_stream(11))
    b = sample_embodiment(quadruped, 0.7, make_stream(11))
    c = sample_embodiment(quadruped, 0.7, make_stream(12))
    assert a.er_params.equals(b.er_params)
    np.testing.assert_array_equal(a.description_vectors, b.description_vectors)
    assert not a.er_params.equals(c.er_params)


def test_spawned_streams_are_independent():
    first, second = spawn_streams(3, 2)
    assert first.random() != second.random()
    again = spawn_streams(3, 2)[0]
    assert again.random() == spawn_streams(3, 2)[0].random()


def test_description_shape_and_nominal_ratios(quadruped):
    d = nominal_embodiment(quadruped).description_vectors
    assert d.shape == (quadruped.joint_count, DESCRIPTION_DIM)
    for slot in ("torque_limit", "velocity_limit", "kp", "kd", "damping", "reflected_inertia", "action_scale"):
        np.testing.assert_array_equal(d[:, DESCRIPTION_SLOTS[slot]], 1.0)
    np.testing.assert_array_equal(d[:, DESCRIPTION_SLOTS["joint_index"]].ravel(),
                                  np.arange(quadruped.joint_count) / (quadruped.joint_count - 1))


def test_beta_one_parameters_stay_in_range(quadruped):
    ranges = ERRanges()
    stream = make_stream(2)
    nominal = nominal_er_params(quadruped)
    for _ in range(200):
        er = sample_embodiment(quadruped, 1.0, stream, ranges).er_params
        for name in ("torque_limit", "velocity_limit", "kp", "kd"):
            half = getattr(ranges, name)
            ratio = getattr(er, name) / getattr(nominal, name)
            assert np.all(ratio >= 1.0 - half - 1e-12) and np.all(ratio <= 1.0 + half + 1e-12)
        assert np.all(er.torque_limit > 0)
        assert np.all(er.position_lo < er.position_hi)
        assert np.all((er.nominal_position >= er.position_lo) & (er.nominal_position <= er.position_hi))
        np.testing.assert_allclose(np.linalg.norm(er.axis, axis=1), 1.0, atol=1e-12)
        cosines = np.sum(er.axis * nominal.axis, axis=1)
        assert np.all(cosines >= np.cos(ranges.axis_tilt) - 1e-12)
        assert np.all(np.abs(er.com_offset) <= ranges.com_offset)


def test_nominal_position_stays_in_its_window_and_limits(quadruped):
    # a joint resting on a wide upper limit: the scaled limit can drop below the window
    edge = replace(quadruped.joints[0], position_limits=(-2.0, 1.5), nominal_position=1.5)
    base = quadruped.with_joints([edge, *quadruped.joints[1:]])
    ranges = ERRanges()
    stream = make_stream(12)
    nominal = base.joint_array("nominal_position")
    emptied = 0
    for _ in range(500):
        er = sample_embodiment(base, 1.0, stream, ranges).er_params
        assert np.all((er.nominal_position >= er.position_lo) & (er.nominal_position <= er.position_hi))
        window_lo = np.maximum(er.position_lo, nominal - ranges.nominal_position)
        window_hi = np.minimum(er.position_hi, nominal + ranges.nominal_position)
        open_window = window_lo <= window_hi
        inside = np.abs(er.nominal_position - nominal) <= ranges.nominal_position + 1e-12
        assert np.all(inside[open_window])
        if not open_window[0]:
            emptied += 1
            assert er.nominal_position[0] == er.position_hi[0]
    assert emptied > 0


def test_descriptions_are_a_pure_function_of_er(biped):
    e = sample_embodiment(biped, 0.9, make_stream(4))
    np.testing.assert_array_equal(build_description_vectors(e), e.description_vectors)


@pytest.mark.parametrize("name", sorted(ER_VISIBILITY))
def test_every_er_group_is_visible(template_3joint, name):
    base = template_3joint
    er = sample_embodiment(base, 0.5, make_stream(9)).er_params
    before = description_vectors_from(base, er)
    after = description_vectors_from(base, replace(er, **{name: _perturbed(getattr(er, name), name)}))
    slot = DESCRIPTION_SLOTS[ER_VISIBILITY[name]]
    assert not np.array_equal(before[:, slot], after[:, slot])


@pytest.mark.parametrize("name", ["mass", "friction", "damping", "kp", "kd"])
def test_dr_factors_never_reach_the_actor(template_3joint, name):
    e = sample_embodiment(template_3joint, 1.0, make_stream(21))
    hidden = replace(e, dr_params=replace(e.dr_params, **{name: _perturbed(getattr(e.dr_params, name), name)}))
    state = reset(e, make_stream(0), 1.0)
    actor_a, _ = observe(state, e, 1.0, make_stream(1))
    actor_b, _ = observe(state, hidden, 1.0, make_stream(1))
    for a, b in zip(actor_a, actor_b):
        np.testing.assert_array_equal(a, b)


def test_dr_noise_scales_with_beta():
    ranges = DRRanges()
    zero = sample_dr_params(3, 0.0, make_stream(0), ranges)
    full = sample_dr_params(3, 1.0, make_stream(0), ranges)
    assert zero.joint_velocity_noise == 0.0
    assert full.joint_velocity_noise == ranges.joint_velocity_noise


def test_resample_rate_at_full_beta(template_3joint):
    stream = make_stream(2024)
    current = nominal_embodiment(template_3joint)
    count = 0
    for _ in range(1_000_000):
        candidate = maybe_resample(current, 1.0, stream)
        if candidate is not current:
            count += 1
            current = candidate
    assert 1853 <= count <= 2147


def test_no_resample_at_zero_beta(template_3joint):
    stream = make_stream(1)
    current = nominal_embodiment(template_3joint)
    assert all(maybe_resample(current, 0.0, stream) is current for _ in range(10_000))


@pytest.mark.parametrize("field_name", [f.name for f in fields(ERRanges)])
def test_negative_ranges_are_rejected(field_name):
    with pytest.raises(ValueError):
        ERRanges(**{field_name: -0.1})
