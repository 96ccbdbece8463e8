import numpy as np
import pytest

from dtbpde.dtb import full_subspace
from dtbpde.errors import DimensionMismatch
from dtbpde.linalg import LstsqOptions
from dtbpde.netfam import NetworkSpec, init_params, network
from dtbpde.oracle import ho_closed_form
from dtbpde.wflow import (
    FlowOptions,
    InteractionKernel,
    LinearPotential,
    ParticleEnsemble,
    hamiltonian,
    interaction_drift,
    interaction_energy,
    ring_statistics,
    run_wgf,
    run_whf,
    trajectory_relative_l2,
    weighted_tangent_system,
    wgf_step,
    whf_step,
    write_ring_csv,
    write_trajectory_csv,
)

KERNEL = InteractionKernel()
SPEC2 = NetworkSpec("residual", 2, 2, (16, 16), "tanh")
THETA2 = init_params(SPEC2, 0)
TIGHT = FlowOptions(LstsqOptions(1e-10))


def rotation(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def test_point_mass_metric():
    X = np.tile([[0.3, -0.2]], (7, 1))
    J, G = weighted_tangent_system(SPEC2, THETA2, None, X)
    J0 = network(SPEC2).tangent_features(THETA2, X[:1]).features
    np.testing.assert_allclose(G, J0.T @ J0, rtol=1e-12, atol=1e-14)


def test_duplicated_ensemble_same_metric(rng):
    X = rng.uniform(-1, 1, (20, 2))
    _, G1 = weighted_tangent_system(SPEC2, THETA2, None, X)
    _, G2 = weighted_tangent_system(SPEC2, THETA2, None, np.repeat(X, 2, axis=0))
    np.testing.assert_allclose(G2, G1, rtol=1e-12, atol=1e-14)


def test_metric_matches_grid_quadrature():
    spec = NetworkSpec("residual", 2, 2, (4, 4), "tanh")
    theta = init_params(spec, 1)
    axis = -1 + (np.arange(128) + 0.5) * 2 / 128
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
    _, G_ref = weighted_tangent_system(spec, theta, None, grid)
    # entries of one draw are correlated, so average the 3-sigma exceedance over independent draws
    N, rates = 1000, []
    for seed in range(10):
        X = np.random.default_rng(seed).uniform(-1, 1, (N, 2))
        J, G = weighted_tangent_system(spec, theta, None, X)
        Jr = J.reshape(N, 2, -1)
        sigma = np.einsum("nqa,nqb->nab", Jr, Jr).std(axis=0) / np.sqrt(N)
        iu = np.triu_indices(G.shape[0])
        rates.append(np.mean((np.abs(G - G_ref) > 3 * sigma + 1e-12)[iu]))
    assert np.mean(rates) <= 0.01


def test_metric_dimension_check(rng):
    spec = NetworkSpec("residual", 2, 1, (4,), "tanh")
    with pytest.raises(DimensionMismatch):
        weighted_tangent_system(spec, init_params(spec, 0), None, rng.uniform(-1, 1, (5, 2)))


def test_two_body_equilibrium():
    X = np.array([[0.0, 0.0], [0.6, 0.8]])
    np.testing.assert_allclose(interaction_drift(KERNEL, X), 0.0, atol=1e-15)


def test_coincident_particles_have_no_drift():
    np.testing.assert_array_equal(interaction_drift(KERNEL, np.ones((5, 2))), 0.0)


def test_drift_equivariance(rng):
    X = rng.standard_normal((40, 2))
    D = interaction_drift(KERNEL, X)
    R = rotation(0.7)
    np.testing.assert_allclose(interaction_drift(KERNEL, X @ R.T), D @ R.T, atol=1e-12)
    np.testing.assert_allclose(interaction_drift(KERNEL, X + np.array([3.0, -1.5])), D, atol=1e-12)
    perm = rng.permutation(40)
    np.testing.assert_allclose(interaction_drift(KERNEL, X[perm]), D[perm], atol=1e-13)


def test_drift_pair_closed_form():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    # grad J(x) = (|x|^2 - 1) x, halved by the 1/N factor
    np.testing.assert_allclose(interaction_drift(KERNEL, X), [[3.0, 0.0], [-3.0, 0.0]])


def test_equilibrium_ensemble_does_not_move():
    ens = ParticleEnsemble.from_reference(np.array([[0.0, 0.0], [1.0, 0.0]]))
    new, _, _ = wgf_step(SPEC2, THETA2, None, ens, KERNEL, 0.1, TIGHT)
    np.testing.assert_allclose(new.X, ens.X, atol=1e-14)


def test_projected_step_tracks_particle_step(rng):
    Z = rng.normal(0.3, 0.4, (200, 2))
    ens = ParticleEnsemble.from_reference(Z)
    proj, _, approx = wgf_step(SPEC2, THETA2, None, ens, KERNEL, 0.05, TIGHT)
    raw, _, none = wgf_step(None, None, None, ens, KERNEL, 0.05, FlowOptions(unprojected=True))
    assert none is None and approx.residual_rel <= 5e-2
    step = raw.X - ens.X
    assert np.linalg.norm(proj.X - raw.X) <= 5e-2 * np.linalg.norm(step)


def test_permutation_of_projected_step(rng):
    Z = rng.normal(0.0, 0.5, (50, 2))
    perm = rng.permutation(50)
    a, _, _ = wgf_step(SPEC2, THETA2, None, ParticleEnsemble.from_reference(Z), KERNEL, 0.1, TIGHT)
    b, _, _ = wgf_step(SPEC2, THETA2, None, ParticleEnsemble.from_reference(Z[perm]), KERNEL, 0.1, TIGHT)
    np.testing.assert_allclose(b.X, a.X[perm], atol=1e-10)


def test_unprojected_energy_decreases(rng):
    ens = ParticleEnsemble.from_reference(rng.normal(1.25, 0.6, (300, 2)))
    _, rep = run_wgf(None, None, ens, KERNEL, 1e-3, 20, opts=FlowOptions(unprojected=True))
    assert np.all(np.diff(rep.energy) <= 1e-15)


def test_projected_energy_increase_bounded(rng):
    ens = ParticleEnsemble.from_reference(rng.normal(1.25, 0.6, (300, 2)))
    h = 1e-2
    E = interaction_energy(KERNEL, ens.X)
    for _ in range(5):
        drift = interaction_drift(KERNEL, ens.X)
        ens, _, approx = wgf_step(SPEC2, THETA2, None, ens, KERNEL, h, TIGHT)
        E_new = interaction_energy(KERNEL, ens.X)
        slack = 2 * h * approx.residual_rel * np.linalg.norm(drift) ** 2 / ens.N
        assert E_new <= E + slack
        E = E_new


def test_ring_statistics():
    a = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    X = np.stack([1 + 0.5 * np.cos(a), -2 + 0.5 * np.sin(a)], 1)
    m, s = ring_statistics(X, (1.0, -2.0))
    assert m == pytest.approx(0.5, abs=1e-14) and s == pytest.approx(0.0, abs=1e-14)


def test_free_motion_without_potential(rng):
    spec = NetworkSpec("residual", 3, 3, (8,), "tanh")
    Z, V = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    ens = ParticleEnsemble.from_reference(Z, V)
    new, _, _ = whf_step(spec, init_params(spec, 0), None, ens, LinearPotential((0.0, 0.0, 0.0)), 0.1)
    np.testing.assert_allclose(new.X, Z + 0.1 * V, atol=1e-14)
    np.testing.assert_allclose(new.Lam, V, atol=1e-14)


def test_whf_needs_velocities(rng):
    ens = ParticleEnsemble.from_reference(rng.standard_normal((4, 1)))
    with pytest.raises(ValueError):
        whf_step(None, None, None, ens, LinearPotential.harmonic(1), 0.1, FlowOptions(unprojected=True))


def test_whf_harmonic_oscillator_order():
    # the velocity update is explicit Euler, so the scheme is first order globally
    spec = NetworkSpec("residual", 1, 1, (8, 8), "tanh")
    theta = init_params(spec, 0)
    Z = np.array([[1.0], [0.5]])
    errs = []
    for h in (0.04, 0.02, 0.01):
        K = int(round(2 * np.pi / h))
        ens = ParticleEnsemble.from_reference(Z, np.zeros_like(Z))
        exact = lambda t: ho_closed_form(Z, 0.0, 1.0, t)[0]
        _, rep = run_whf(spec, theta, ens, LinearPotential.harmonic(1), h, K, opts=TIGHT, exact=exact)
        errs.append(trajectory_relative_l2(rep))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 0.9) & (orders <= 1.2))
    assert errs[-1] <= 5e-2


def test_whf_drift_first_order():
    Z = np.array([[1.0], [-0.3], [0.4]])
    drift = []
    for h in (0.02, 0.01):
        ens = ParticleEnsemble.from_reference(Z, np.zeros_like(Z))
        _, rep = run_whf(None, None, ens, LinearPotential.harmonic(1), h, int(round(2 * np.pi / h)),
                         opts=FlowOptions(unprojected=True))
        drift.append(abs(rep.energy[-1] - rep.energy[0]))
    assert 1.5 <= drift[0] / drift[1] <= 2.5


def test_paper_potential_frequencies():
    pot = LinearPotential.paper(10)
    np.testing.assert_allclose(pot.omega, [np.sqrt(3) / 2] + [1.0] * 9)


def test_hamiltonian(rng):
    ens = ParticleEnsemble(np.ones((4, 2)), np.zeros((4, 2)), 2 * np.ones((4, 2)))
    assert hamiltonian(ens, LinearPotential.harmonic(2)) == pytest.approx(0.5 * 8 + 1.0)


def test_ensemble_validation():
    with pytest.raises(DimensionMismatch):
        ParticleEnsemble(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ParticleEnsemble.from_reference(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ParticleEnsemble.from_reference(np.array([[0.0, np.nan], [1.0, 1.0]]))


def test_exports(tmp_path, rng):
    ens = ParticleEnsemble.from_reference(rng.normal(0, 1, (5, 2)))
    _, rep = run_wgf(None, None, ens, KERNEL, 0.1, 3, opts=FlowOptions(unprojected=True), snapshot_every=1)
    write_trajectory_csv(tmp_path / "t.csv", rep.snapshots)
    write_ring_csv(tmp_path / "r.csv", rep)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,particle,x1,x2" and len(lines) == 1 + 4 * 5
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "t,mean_radius,radius_std"


def test_subspace_projection_uses_selected_columns(rng):
    X = rng.uniform(-1, 1, (6, 2))
    m = network(SPEC2).m
    J_full, _ = weighted_tangent_system(SPEC2, THETA2, None, X)
    J_sub, _ = weighted_tangent_system(SPEC2, THETA2, full_subspace(m), X)
    np.testing.assert_array_equal(J_full, J_sub)
