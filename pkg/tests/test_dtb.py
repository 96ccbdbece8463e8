import numpy as np
import pytest

from dtbpde.dtb import (
    DTBApprox,
    DTBSet,
    IndexSet,
    ScalarField,
    approx_gform,
    approx_jform,
    dtbset_eval,
    full_subspace,
    project,
    read_jsonl,
    select_subspace,
    write_jsonl,
)
from dtbpde.errors import BadSize
from dtbpde.linalg import LstsqOptions
from dtbpde.netfam import NetworkSpec, PeriodicEmbeddingSpec, init_params, network, theta_digest

from conftest import periodic_net, small_net

TIGHT = LstsqOptions(1e-12)


def sine_spec():
    return NetworkSpec("periodic_mlp", 1, 1, (), "tanh", PeriodicEmbeddingSpec(1, (-np.pi / 2,)), last_layer_bias=False)


SINE_THETA = np.array([-np.pi / 2, 1.0])
SINE_SUB = IndexSet(np.array([1]), 2)


def zero_field(d=1):
    return ScalarField(lambda z: 0.0 * z[0], d, "zero")


def test_full_subspace_when_l_equals_m():
    np.testing.assert_array_equal(select_subspace(10, 10, 3).indices, np.arange(10))


def test_subspace_deterministic_sorted_unique():
    a, b = select_subspace(500, 120, 42), select_subspace(500, 120, 42)
    assert a == b and a.digest() == b.digest()
    assert np.all(np.diff(a.indices) > 0) and a.indices[-1] < 500
    assert select_subspace(500, 120, 43) != a


def test_subspace_size_check():
    with pytest.raises(BadSize):
        select_subspace(5, 6, 0)
    with pytest.raises(BadSize):
        select_subspace(5, 0, 0)


def test_large_subspace_draw():
    sub = select_subspace(20000, 6000, 1)
    assert len(sub) == 6000 and len(np.unique(sub.indices)) == 6000


@pytest.mark.parametrize("fit", [approx_jform, approx_gform])
def test_zero_target(fit, rng):
    spec, theta = small_net(2, (5,))
    z = rng.uniform(-1, 1, (30, 2))
    a = fit(spec, theta, None, lambda p: np.zeros(len(p)), z)
    assert np.all(a.alpha == 0) and a.residual_rel == 0.0


def test_bias_free_self_fit_jform(rng):
    spec, theta = small_net(2, (8, 8), seed=5, last_layer_bias=False)
    z = rng.uniform(-1, 1, (200, 2))
    a = approx_jform(spec, theta, None, lambda p: network(spec).forward(theta, p)[:, 0], z, TIGHT)
    assert a.residual_rel <= 1e-8


def test_bias_free_self_fit_gform(rng):
    # the metric squares cond(J), so keep the tangent system well conditioned
    spec, theta = small_net(2, (4,), seed=5, last_layer_bias=False)
    z = rng.uniform(-1, 1, (200, 2))
    a = approx_gform(spec, theta, None, lambda p: network(spec).forward(theta, p)[:, 0], z, TIGHT)
    assert a.residual_rel <= 1e-8


def test_forms_agree_on_fitted_values(rng):
    spec, theta = small_net(2, (2,), seed=5)
    z = rng.uniform(-1, 1, (200, 2))
    g = lambda p: np.exp(p[:, 0])
    aj = approx_jform(spec, theta, None, g, z, TIGHT)
    ag = approx_gform(spec, theta, None, g, z, TIGHT)
    J = network(spec).tangent_features(theta, z).features
    assert np.linalg.norm(J @ (aj.alpha - ag.alpha)) <= 1e-8 * np.linalg.norm(J @ aj.alpha)


def test_jform_exact_linear():
    spec = NetworkSpec("mlp", 1, 1, (), last_layer_bias=False)
    z = np.array([[-1.0], [-0.5], [0.5], [1.0]])
    a = approx_jform(spec, np.array([0.3]), None, lambda p: 2 * p[:, 0], z)
    assert a.alpha[0] == pytest.approx(2.0, abs=1e-14)
    assert a.residual_rel <= 1e-15


def test_duplicated_feature_splits_weight():
    spec = NetworkSpec("mlp", 2, 1, (), last_layer_bias=False)
    t = np.linspace(-1, 1, 9)
    z = np.stack([t, t], axis=1)  # both coordinates equal: duplicated columns
    a = approx_jform(spec, np.zeros(2), None, lambda p: 2 * p[:, 0], z, LstsqOptions(1e-10))
    np.testing.assert_allclose(a.alpha, [1.0, 1.0], atol=1e-13)


def test_project_zero_and_sine():
    z = np.linspace(-1, 1, 11)
    zero = DTBApprox(SINE_THETA, SINE_SUB, np.zeros(1), 0.0)
    np.testing.assert_array_equal(project(zero, sine_spec(), z), 0.0)
    two = DTBApprox(SINE_THETA, SINE_SUB, np.array([2.0]), 0.0)
    np.testing.assert_allclose(project(two, sine_spec(), z), 2 * np.sin(np.pi * z), atol=1e-14)


def test_projection_is_idempotent(rng):
    spec, theta = periodic_net(1, (6,), 3, seed=2)
    z = rng.uniform(-1, 1, (120, 1))
    sub = select_subspace(network(spec).m, 20, 0)
    a = approx_jform(spec, theta, sub, lambda p: np.abs(p[:, 0]), z)
    kg = project(a, spec, z)
    b = approx_jform(spec, theta, sub, kg, z)
    assert np.linalg.norm(project(b, spec, z) - kg) <= 1e-8 * np.linalg.norm(kg)


def test_residual_monotone_in_rcond(rng):
    spec, theta = small_net(2, (20,), seed=3)
    z = rng.uniform(-1, 1, (300, 2))
    g = lambda p: np.sin(3 * p[:, 0]) * np.cos(2 * p[:, 1])
    fits = [approx_jform(spec, theta, None, g, z, LstsqOptions(rc)) for rc in (1e-3, 1e-4, 1e-5, 1e-6)]
    res = [f.residual_rel for f in fits]
    amp = [f.alpha_l2 for f in fits]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))
    assert all(b >= a - 1e-12 for a, b in zip(amp, amp[1:]))


def test_nested_subspaces_reduce_residual(rng):
    spec, theta = small_net(2, (12,), seed=4)
    m = network(spec).m
    z = rng.uniform(-1, 1, (200, 2))
    small = select_subspace(m, 15, 1)
    big = small.union(select_subspace(m, 15, 2))
    g = lambda p: np.tanh(2 * p[:, 0] + p[:, 1] ** 2)
    r1 = approx_jform(spec, theta, small, g, z, TIGHT).residual_rel
    r2 = approx_jform(spec, theta, big, g, z, TIGHT).residual_rel
    assert r2 <= r1 + 1e-10


def test_embedded_scatters_coefficients():
    a = DTBApprox(np.zeros(6), IndexSet(np.array([1, 4]), 6), np.array([3.0, -1.0]), 0.0)
    np.testing.assert_array_equal(a.embedded(), [0, 3, 0, 0, -1, 0])


def test_dtbset_empty_and_zero_step():
    phi = ScalarField(lambda z: jnp_cos(z), 1, "cos")
    z = np.linspace(-1, 1, 7)
    ds = DTBSet(0.1, phi)
    np.testing.assert_allclose(dtbset_eval(ds, sine_spec(), z), np.cos(np.pi * z), atol=1e-15)
    ds.append(DTBApprox(SINE_THETA, SINE_SUB, np.zeros(1), 0.0))
    np.testing.assert_allclose(dtbset_eval(ds, sine_spec(), z), np.cos(np.pi * z), atol=1e-15)


def jnp_cos(z):
    import jax.numpy as jnp

    return jnp.cos(jnp.pi * z[0])


def test_dtbset_two_steps_hand_computed():
    phi = ScalarField(jnp_cos, 1, "cos")
    z = np.linspace(-1, 1, 13)
    h = 0.05
    ds = DTBSet(h, phi)
    ds.append(DTBApprox(SINE_THETA, SINE_SUB, np.array([2.0]), 0.0))
    ds.append(DTBApprox(SINE_THETA, SINE_SUB, np.array([-0.5]), 0.0))
    s, c = np.sin(np.pi * z), np.cos(np.pi * z)
    val, grad, lap = dtbset_eval(ds, sine_spec(), z, ("value", "grad", "laplacian"))
    np.testing.assert_allclose(val, c + h * 1.5 * s, atol=1e-14)
    np.testing.assert_allclose(grad[:, 0], -np.pi * np.sin(np.pi * z) + h * 1.5 * np.pi * c, atol=1e-13)
    np.testing.assert_allclose(lap, -np.pi**2 * c - h * 1.5 * np.pi**2 * s, atol=1e-12)
    # evaluating a prefix only uses the first step
    np.testing.assert_allclose(dtbset_eval(ds, sine_spec(), z, upto=1), c + h * 2.0 * s, atol=1e-14)


def test_dtbset_sum_over_distinct_thetas(rng):
    spec, th0 = periodic_net(1, (5,), 2, seed=0)
    th1 = init_params(spec, 1)
    m = network(spec).m
    z = rng.uniform(-1, 1, (10, 1))
    h = 0.1
    a0 = DTBApprox(th0, full_subspace(m), rng.standard_normal(m), 0.0)
    a1 = DTBApprox(th1, full_subspace(m), rng.standard_normal(m), 0.0)
    ds = DTBSet(h, zero_field())
    ds.append(a0)
    ds.append(a1)
    expect = h * (project(a0, spec, z) + project(a1, spec, z))
    np.testing.assert_allclose(dtbset_eval(ds, spec, z), expect, rtol=1e-12, atol=1e-13)


def test_dtbset_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        DTBSet(0.0, zero_field())


def test_jsonl_roundtrip(tmp_path, rng):
    spec, theta = periodic_net(1, (4,), 2)
    m = network(spec).m
    ds = DTBSet(0.1, zero_field())
    for k in range(3):
        sub = select_subspace(m, 5, k)
        ds.append(DTBApprox(theta, sub, rng.standard_normal(5), 0.01 * k), k)
    write_jsonl(ds, tmp_path / "set.jsonl", tmp_path / "thetas.json", spec)
    back = read_jsonl(tmp_path / "set.jsonl", {theta_digest(theta): theta}, m, 0.1, zero_field())
    z = np.linspace(-1, 1, 5)
    np.testing.assert_array_equal(dtbset_eval(back, spec, z), dtbset_eval(ds, spec, z))
    assert [s.subspace for s in back.steps] == [s.subspace for s in ds.steps]
