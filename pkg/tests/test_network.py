from dataclasses import replace

import numpy as np
import pytest

from components.autograd import Tensor, weight_norm
from components.morphology import Morphology
from components.network import (
    ActionDistribution,
    NetworkConfig,
    ObservationBatch,
    Urmav2Policy,
    actor_forward,
    critic_forward,
    decode_actions,
    encode_joints,
    entropy,
    infer_network_config,
    init_policy_params,
    layer_count,
    log_prob,
)
from components.randomization import make_stream, sample_embodiment

H = 1e-5
FD_SEEDS = [seed if seed < 5 else pytest.param(seed, marks=pytest.mark.slow) for seed in range(50)]


def make_batch(rng, batch=2, joints=3):
    return ObservationBatch(
        descriptions=rng.normal(size=(batch, joints, 20)),
        joint_obs=rng.normal(size=(batch, joints, 4)),
        general=rng.normal(size=(batch, 13)),
        critic_joint_obs=rng.normal(size=(batch, joints, 5)),
        critic_general=rng.normal(size=(batch, 13)),
    )


@pytest.fixture
def params(small_config):
    return init_policy_params(small_config, np.random.default_rng(0))


def test_default_layout():
    params = init_policy_params(NetworkConfig(), np.random.default_rng(0))
    P = params.constants()
    assert params["actor.f_phi.0.v"].shape == (128, 20)
    assert params["actor.f_phi.1.v"].shape == (128, 128)
    assert params["actor.f_psi.0.v"].shape == (256, 4)
    assert params["critic.f_psi.0.v"].shape == (256, 5)
    assert params["actor.core.0.v"].shape == (256, 13 + 128)
    assert layer_count(P, "actor.core") == 6
    assert params["actor.sigma.v"].shape == (1, 128)
    assert params["critic.value.v"].shape == (1, 128)
    assert params["actor.log_tau"].shape == ()


def test_weight_norm_init_matches_direction_norms(params):
    for name in params.names():
        if name.endswith(".v"):
            g = params[name[:-2] + ".g"]
            np.testing.assert_allclose(g, np.linalg.norm(params[name], axis=1), rtol=1e-12)


def test_initial_log_std_near_configured_value(params, small_config, rng):
    batch = make_batch(rng)
    dist = actor_forward(batch.descriptions, batch.joint_obs, batch.general, params.constants(), small_config)
    assert np.all(np.abs(dist.log_std.data - small_config.init_log_std) < 0.2)


def test_layer_widths_can_be_recovered(params, small_config):
    assert infer_network_config(params) == small_config


def test_same_seed_same_parameters(small_config):
    a = init_policy_params(small_config, np.random.default_rng(5))
    b = init_policy_params(small_config, np.random.default_rng(5))
    assert a.checksum() == b.checksum()
    assert a.all_equal(b)


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_gradients_match_finite_differences(small_config, seed):
    params = init_policy_params(small_config, np.random.default_rng(seed))
    rng = np.random.default_rng(100 + seed)
    batch = make_batch(rng)
    actions = rng.normal(size=(2, 3))
    w_mu = rng.normal(size=(2, 3))
    w_std = rng.normal(size=(2, 3))
    w_value = rng.normal(size=2)

    def loss(P):
        dist = actor_forward(batch.descriptions, batch.joint_obs, batch.general, P, small_config)
        value = critic_forward(batch.descriptions, batch.critic_joint_obs, batch.critic_general, P)
        return (
            (dist.mu * w_mu).sum()
            + (dist.log_std * w_std).sum()
            + (value * w_value).sum()
            + log_prob(dist, actions).sum() * 0.1
        )

    leaves = params.leaves()
    loss(leaves).backward()

    picker = np.random.default_rng(seed)
    for name, leaf in leaves.items():
        array = params.arrays[name]
        positions = list(np.ndindex(array.shape))
        for k in picker.choice(len(positions), size=min(4, len(positions)), replace=False):
            position = positions[k]
            original = array[position]
            array[position] = original + H
            upper = loss(params.constants()).item()
            array[position] = original - H
            lower = loss(params.constants()).item()
            array[position] = original
            numeric = (upper - lower) / (2 * H)
            analytic = leaf.grad[position]
            assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric)), (name, position, analytic, numeric)


@pytest.mark.parametrize("joints", [1, 2, 7, 16])
def test_permutation_equivariance(params, small_config, joints):
    rng = np.random.default_rng(joints)
    batch = make_batch(rng, batch=3, joints=joints)
    P = params.constants()
    perm = rng.permutation(joints)

    dist = actor_forward(batch.descriptions, batch.joint_obs, batch.general, P, small_config)
    permuted = actor_forward(batch.descriptions[:, perm], batch.joint_obs[:, perm], batch.general, P, small_config)
    np.testing.assert_allclose(permuted.mu.data, dist.mu.data[:, perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(permuted.log_std.data, dist.log_std.data[:, perm], rtol=0, atol=1e-12)

    value = critic_forward(batch.descriptions, batch.critic_joint_obs, batch.critic_general, P)
    value_permuted = critic_forward(batch.descriptions[:, perm], batch.critic_joint_obs[:, perm], batch.critic_general, P)
    np.testing.assert_allclose(value_permuted.data, value.data, rtol=0, atol=1e-12)


def test_attention_rows_sum_to_one(params, small_config, rng):
    batch = make_batch(rng, joints=5)
    encoding = encode_joints(batch.descriptions, batch.joint_obs, params.constants(), "actor")
    np.testing.assert_allclose(encoding.alphas.data.sum(axis=-1), 1.0, atol=1e-12)
    assert encoding.z_bar.shape == (2, small_config.latent_dim)


def test_zero_action_latent_gives_zero_means(params, small_config, rng):
    batch = make_batch(rng)
    P = params.constants()
    encoding = encode_joints(batch.descriptions, batch.joint_obs, P, "actor")
    zero = Tensor(np.zeros((2, small_config.latent_dim)))
    dist = decode_actions(zero, encoding.alphas, encoding.description_latent, P, small_config)
    np.testing.assert_array_equal(dist.mu.data, 0.0)


def test_log_std_ignores_joint_observations(params, small_config, rng):
    batch = make_batch(rng)
    P = params.constants()
    a = actor_forward(batch.descriptions, batch.joint_obs, batch.general, P, small_config)
    b = actor_forward(batch.descriptions, batch.joint_obs * 3.0 + 1.0, batch.general * -1.0, P, small_config)
    np.testing.assert_array_equal(a.log_std.data, b.log_std.data)
    assert not np.array_equal(a.mu.data, b.mu.data)


def test_high_temperature_flattens_attention(params, rng):
    params.arrays["actor.log_tau"] = np.array(30.0)
    batch = make_batch(rng)
    alphas = encode_joints(batch.descriptions, batch.joint_obs, params.constants(), "actor").alphas.data
    np.testing.assert_allclose(alphas, 1.0 / alphas.shape[-1], atol=1e-6)


def test_log_std_is_clamped(params, small_config, rng):
    params.arrays["actor.sigma.b"] = np.array([40.0])
    batch = make_batch(rng)
    dist = actor_forward(batch.descriptions, batch.joint_obs, batch.general, params.constants(), small_config)
    np.testing.assert_array_equal(dist.log_std.data, small_config.log_std_max)


def test_unbatched_inputs(params, small_config, rng):
    batch = make_batch(rng).take(0)
    policy = Urmav2Policy(small_config)
    dist = policy.distribution(params.constants(), batch, 0)
    assert dist.mu.shape == (3,)
    assert policy.value(params.constants(), batch, 0).shape == ()


def test_zero_joints_is_rejected(params, small_config):
    with pytest.raises(ValueError):
        actor_forward(np.zeros((0, 20)), np.zeros((0, 4)), np.zeros(13), params.constants(), small_config)


def test_gaussian_helpers():
    mu = Tensor(np.array([[0.0, 1.0]]))
    log_std = Tensor(np.array([[0.0, np.log(2.0)]]))
    dist = ActionDistribution(mu=mu, log_std=log_std)
    actions = np.array([[0.0, 1.0]])
    expected = -0.5 * np.log(2 * np.pi) * 2 - np.log(2.0)
    np.testing.assert_allclose(log_prob(dist, actions).data, [expected], rtol=1e-12)
    np.testing.assert_allclose(entropy(dist).data, [1.0 + np.log(2 * np.pi) + np.log(2.0)], rtol=1e-12)
    masked = log_prob(dist, actions, mask=np.array([1.0, 0.0])).data
    np.testing.assert_allclose(masked, [-0.5 * np.log(2 * np.pi)], rtol=1e-12)



def test_weight_norm_hand_row():
    w = weight_norm(Tensor(np.array([[3.0, 4.0]])), Tensor(np.array([2.0])))
    np.testing.assert_allclose(w.data, [[1.2, 1.6]], rtol=1e-15)
    v = np.array([[1.0, -2.0, 2.0]])
    np.testing.assert_allclose(weight_norm(Tensor(v), Tensor(np.array([3.0]))).data, v, rtol=1e-15)


def test_attention_hand_instance():
    # one joint, L_d = 2: f_phi(d) / tau = (0, ln 3) and f_psi(o) = (1, 2)
    P = {
        "hand.f_phi.0.v": Tensor(np.array([[1.0], [1.0]])),
        "hand.f_phi.0.g": Tensor(np.array([1.0, 1.0])),
        "hand.f_phi.0.b": Tensor(np.array([-1.0, np.log(3.0) - 1.0])),
        "hand.log_tau": Tensor(np.zeros(())),
        "hand.f_psi.0.v": Tensor(np.array([[1.0], [1.0]])),
        "hand.f_psi.0.g": Tensor(np.array([1.0, 2.0])),
        "hand.f_psi.0.b": Tensor(np.zeros(2)),
    }
    encoding = encode_joints(np.ones((1, 1)), np.ones((1, 1)), P, "hand")
    np.testing.assert_allclose(encoding.alphas.data, [[0.25, 0.75]], rtol=1e-12)
    np.testing.assert_allclose(encoding.z_bar.data, [0.25, 1.5], rtol=1e-12)


def test_decoder_hand_instance(small_config):
    P = {
        "actor.sigma.v": Tensor(np.array([[1.0, 0.0]])),
        "actor.sigma.g": Tensor(np.array([1.0])),
        "actor.sigma.b": Tensor(np.array([0.0])),
    }
    alphas = Tensor(np.array([[[0.3, 0.7], [0.5, 0.5]]]))
    latent = Tensor(np.array([[[0.5, 9.0], [0.5, -9.0]]]))
    dist = decode_actions(Tensor(np.array([[1.0, 2.0]])), alphas, latent, P, small_config)
    np.testing.assert_allclose(dist.mu.data, [[1.7, 1.5]], rtol=1e-12)
    # identical first latent component, so identical std whatever the rest says
    np.testing.assert_array_equal(dist.log_std.data, [[0.5, 0.5]])


def random_morphology(templates, joints: int, rng) -> Morphology:
    pool = [joint for base in templates for joint in base.joints]
    picked = [replace(pool[k], name=f"j{index}") for index, k in enumerate(rng.integers(0, len(pool), size=joints))]
    return replace(templates[0], name=f"random_{joints}", joints=tuple(picked))


def test_permutation_equivariance_on_sampled_embodiments(params, small_config, templates):
    rng = np.random.default_rng(77)
    stream = make_stream(77)
    P = params.constants()
    for _ in range(200):
        joints = int(rng.integers(1, 65))
        e = sample_embodiment(random_morphology(templates, joints, rng), 1.0, stream)
        d = e.description_vectors[None]
        obs = rng.normal(size=(1, joints, 4))
        critic_obs = rng.normal(size=(1, joints, 5))
        general = rng.normal(size=(1, 13))
        perm = rng.permutation(joints)

        dist = actor_forward(d, obs, general, P, small_config)
        permuted = actor_forward(d[:, perm], obs[:, perm], general, P, small_config)
        np.testing.assert_allclose(permuted.mu.data, dist.mu.data[:, perm], rtol=0, atol=1e-12)
        np.testing.assert_allclose(permuted.log_std.data, dist.log_std.data[:, perm], rtol=0, atol=1e-12)

        value = critic_forward(d, critic_obs, general, P)
        value_permuted = critic_forward(d[:, perm], critic_obs[:, perm], general, P)
        np.testing.assert_allclose(value_permuted.data, value.data, rtol=0, atol=1e-12)


# Plain numpy forward pass, written independently of the autograd graph.

def reference_dense(a, prefix, x):
    v = a[f"{prefix}.v"]
    w = a[f"{prefix}.g"][:, None] * v / np.linalg.norm(v, axis=1, keepdims=True)
    return x @ w.T + a[f"{prefix}.b"]


def reference_mlp(a, prefix, x):
    layers = sum(1 for name in a if name.startswith(f"{prefix}.") and name.endswith(".v"))
    for index in range(layers):
        x = reference_dense(a, f"{prefix}.{index}", x)
        if index < layers - 1:
            x = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    return x


def reference_encode(a, scope, d, o):
    latent = reference_mlp(a, f"{scope}.f_phi", d)
    scores = latent / np.exp(a[f"{scope}.log_tau"])
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    alphas = weights / weights.sum(axis=-1, keepdims=True)
    z_bar = (alphas * reference_mlp(a, f"{scope}.f_psi", o)).sum(axis=-2)
    return latent, alphas, z_bar


@pytest.mark.parametrize("joints", [2, 5, 8])
def test_forward_matches_reference(params, small_config, joints):
    a = params.arrays
    batch = make_batch(np.random.default_rng(5), batch=2, joints=joints)
    P = params.constants()
    dist = actor_forward(batch.descriptions, batch.joint_obs, batch.general, P, small_config)
    value = critic_forward(batch.descriptions, batch.critic_joint_obs, batch.critic_general, P)

    latent, alphas, z_bar = reference_encode(a, "actor", batch.descriptions, batch.joint_obs)
    z = reference_mlp(a, "actor.core", np.concatenate([batch.general, z_bar], axis=-1))
    mu = (alphas * z[:, None, :]).sum(axis=-1)
    log_std = np.clip(reference_dense(a, "actor.sigma", latent)[..., 0], small_config.log_std_min, small_config.log_std_max)
    _, _, critic_z_bar = reference_encode(a, "critic", batch.descriptions, batch.critic_joint_obs)
    critic_z = reference_mlp(a, "critic.core", np.concatenate([batch.critic_general, critic_z_bar], axis=-1))
    expected_value = reference_dense(a, "critic.value", critic_z)[..., 0]

    np.testing.assert_allclose(dist.mu.data, mu, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(dist.log_std.data, log_std, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(value.data, expected_value, rtol=1e-10, atol=1e-12)
