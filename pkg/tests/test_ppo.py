import numpy as np
import pytest

from components.network import ObservationBatch, Urmav2Policy, log_prob
from components.ppo import (
    Adam,
    MinibatchPart,
    PPOConfig,
    clip_grad_norm,
    minibatch_loss,
    segment_loss,
    update_policy,
)
from components.rollout import collect_rollout, compute_buffer_advantages
from utils.errors import NonFiniteError


@pytest.fixture
def policy(small_config):
    return Urmav2Policy(small_config)


@pytest.fixture
def params(policy):
    return policy.init_params(np.random.default_rng(0))


def make_part(policy, params, rng, size, joints, log_ratio=0.0, advantages=None):
    batch = ObservationBatch(
        descriptions=rng.normal(size=(size, joints, 20)),
        joint_obs=rng.normal(size=(size, joints, 4)),
        general=rng.normal(size=(size, 13)),
        critic_joint_obs=rng.normal(size=(size, joints, 5)),
        critic_general=rng.normal(size=(size, 13)),
    )
    actions = rng.normal(size=(size, joints))
    current = log_prob(policy.distribution(params.constants(), batch, 0), actions).data
    return MinibatchPart(
        robot_index=0,
        batch=batch,
        actions=actions,
        old_log_probs=current - log_ratio,
        advantages=rng.normal(size=size) if advantages is None else advantages,
        returns=rng.normal(size=size),
    )


def test_adam_first_step_moves_by_learning_rate():
    arrays = {"w": np.array([1.0, -1.0, 0.5])}
    Adam(learning_rate=0.01).step(arrays, {"w": np.array([0.1, -2.0, 0.0])})
    np.testing.assert_allclose(arrays["w"], [0.99, -0.99, 0.5], rtol=1e-6)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8], rtol=1e-9)
    unchanged, _ = clip_grad_norm(grads, 10.0)
    assert unchanged["a"] is grads["a"]
    with pytest.raises(NonFiniteError):
        clip_grad_norm({"a": np.array([np.nan])}, 1.0)


def test_unit_ratio_gives_plain_advantage_loss(policy, params, rng):
    part = make_part(policy, params, rng, size=5, joints=3)
    _, stats = segment_loss(policy, params.constants(), part, PPOConfig())
    assert stats["policy_loss"] == pytest.approx(-part.advantages.mean(), abs=1e-12)
    assert stats["kl"] == pytest.approx(0.0, abs=1e-12)
    assert stats["clip_frac"] == 0.0


def test_clipped_ratio_blocks_the_mean_gradient(policy, params, rng):
    part = make_part(policy, params, rng, size=4, joints=3, log_ratio=1.0, advantages=np.ones(4))
    leaves = params.leaves()
    loss, stats = segment_loss(policy, leaves, part, PPOConfig(entropy_coef=0.0))
    assert stats["policy_loss"] == pytest.approx(-1.2)
    assert stats["clip_frac"] == 1.0
    loss.backward()
    for name, leaf in leaves.items():
        if name.startswith("actor.") and not name.startswith("actor.sigma"):
            np.testing.assert_array_equal(leaf.grad if leaf.grad is not None else 0.0, 0.0, err_msg=name)


def test_minibatch_loss_weights_robots_by_size(policy, params, rng):
    small = make_part(policy, params, rng, size=2, joints=3)
    large = make_part(policy, params, rng, size=6, joints=4)
    P = params.constants()
    config = PPOConfig()
    small_loss, small_stats = segment_loss(policy, P, small, config)
    large_loss, large_stats = segment_loss(policy, P, large, config)
    loss, stats = minibatch_loss(policy, P, [small, large], config)
    assert loss.item() == pytest.approx(0.25 * small_loss.item() + 0.75 * large_loss.item(), rel=1e-12)
    assert stats["value_loss"] == pytest.approx(0.25 * small_stats["value_loss"] + 0.75 * large_stats["value_loss"])


@pytest.fixture
def buffer(template_3joint, biped, policy, params, make_groups):
    buffer = collect_rollout(make_groups([template_3joint, biped]), policy, params, 8)
    compute_buffer_advantages(buffer, 0.99, 0.95)
    return buffer


def test_update_reduces_value_error(buffer, policy, params):
    def value_error(p):
        P = p.constants()
        total = 0.0
        for segment in buffer.segments:
            values = policy.value(P, segment.batch(), segment.robot_index).data
            total += float(np.mean((values - segment.flat()["returns"]) ** 2))
        return total

    before = value_error(params)
    snapshot = params.copy()
    config = PPOConfig(epochs=5, minibatches=2, learning_rate=1e-2, max_grad_norm=10.0)
    updated, stats = update_policy(buffer, params, policy, config, stream=np.random.default_rng(1))
    assert value_error(updated) < before
    assert params.all_equal(snapshot)
    assert not updated.all_equal(params)
    assert set(stats) >= {"policy_loss", "value_loss", "entropy", "kl", "clip_frac", "grad_norm"}


def test_update_is_deterministic(buffer, policy, params):
    config = PPOConfig(epochs=2, minibatches=4)
    a, _ = update_policy(buffer, params, policy, config, stream=np.random.default_rng(3))
    compute_buffer_advantages(buffer, 0.99, 0.95)
    b, _ = update_policy(buffer, params, policy, config, stream=np.random.default_rng(3))
    assert a.checksum() == b.checksum()


def test_update_checks_the_buffer(buffer, policy, params):
    with pytest.raises(ValueError, match="not divisible"):
        update_policy(buffer, params, policy, PPOConfig(minibatches=3))
    buffer.segments[0].advantages = None
    with pytest.raises(ValueError, match="compute advantages"):
        update_policy(buffer, params, policy, PPOConfig(minibatches=2))


def test_joint_gradient_equals_sum_of_robot_gradients(policy, params, rng):
    parts = [make_part(policy, params, rng, size=2, joints=3), make_part(policy, params, rng, size=6, joints=7)]
    config = PPOConfig()
    leaves = params.leaves()
    minibatch_loss(policy, leaves, parts, config)[0].backward()

    expected = {name: np.zeros_like(array) for name, array in params.arrays.items()}
    for part in parts:
        separate = params.leaves()
        segment_loss(policy, separate, part, config)[0].backward()
        for name, leaf in separate.items():
            if leaf.grad is not None:
                expected[name] += part.size / 8 * leaf.grad

    for name, leaf in leaves.items():
        np.testing.assert_allclose(leaf.grad, expected[name], rtol=0, atol=1e-10, err_msg=name)


def test_single_minibatch_update_matches_one_adam_step(buffer, policy, params):
    config = PPOConfig(epochs=1, minibatches=1, learning_rate=1e-3)
    updated, stats = update_policy(buffer, params, policy, config, stream=np.random.default_rng(0))

    # one minibatch holds every row, so shuffling cannot matter
    parts = []
    for segment in buffer.segments:
        flat = segment.flat()
        parts.append(MinibatchPart(
            robot_index=segment.robot_index,
            batch=segment.batch(),
            actions=flat["actions"],
            old_log_probs=flat["log_probs"],
            advantages=flat["advantages"],
            returns=flat["returns"],
        ))
    leaves = params.leaves()
    loss, expected_stats = minibatch_loss(policy, leaves, parts, config)
    loss.backward()
    grads = {name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for name, leaf in leaves.items()}
    grads, norm = clip_grad_norm(grads, config.max_grad_norm)
    expected = params.copy()
    Adam(config.learning_rate).step(expected.arrays, grads)

    for name in params.names():
        np.testing.assert_allclose(updated[name], expected[name], rtol=0, atol=1e-10, err_msg=name)
    for key in ("policy_loss", "value_loss", "entropy"):
        assert stats[key] == pytest.approx(expected_stats[key], rel=1e-10, abs=1e-12)
    assert stats["grad_norm"] == pytest.approx(norm, rel=1e-10)
