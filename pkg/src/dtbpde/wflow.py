"""Particle solvers for Wasserstein gradient and Hamiltonian flows.

The pushforward map is carried by the particles themselves: ``X`` holds the
images ``T^k(Z)`` of fixed reference samples ``Z``. At each step the velocity
(or acceleration) field is projected onto the tangent space of a vector-valued
network with the empirical metric of the current particles, and the particles
move along the projected field.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .dtb import DTBApprox, IndexSet, as_network, full_subspace, relative_residual, solve_coefficients
from .errors import DimensionMismatch
from .sampling import derive_seed


@dataclass
class ParticleEnsemble:
    X: np.ndarray
    Z: np.ndarray
    Lam: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape != self.Z.shape:
            raise DimensionMismatch(f"X {self.X.shape} and Z {self.Z.shape} must be equal (N, d) arrays")
        if self.X.shape[0] < 2:
            raise ValueError("an ensemble needs at least two particles")
        if self.Lam is not None:
            self.Lam = np.asarray(self.Lam, dtype=np.float64)
            if self.Lam.shape != self.X.shape:
                raise DimensionMismatch(f"velocities {self.Lam.shape} do not match positions {self.X.shape}")
        for name, arr in (("X", self.X), ("Lam", self.Lam)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")

    @classmethod
    def from_reference(cls, Z, Lam=None):
        Z = np.asarray(Z, dtype=np.float64)
        return cls(Z.copy(), Z, None if Lam is None else np.array(Lam, dtype=np.float64))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


# -- fields ------------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionKernel:
    """Radial kernel ``J(x) = |x|^4 / 4 - |x|^2 / 2`` with ``grad J(x) = (|x|^2 - 1) x``."""

    name: str = "aggregation"

    def value(self, x):
        r2 = np.sum(np.asarray(x) ** 2, axis=-1)
        return 0.25 * r2**2 - 0.5 * r2

    def grad(self, x):
        x = np.asarray(x)
        return (np.sum(x**2, axis=-1, keepdims=True) - 1.0) * x


@dataclass(frozen=True)
class LinearPotential:
    """Quadratic potential ``V(x) = sum_i c_i x_i^2 / 2`` (a harmonic oscillator per coordinate)."""

    coeffs: tuple

    @classmethod
    def paper(cls, d: int = 10):
        return cls((0.75,) + (1.0,) * (d - 1))

    @classmethod
    def harmonic(cls, d: int = 1):
        return cls((1.0,) * d)

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.coeffs))

    def value(self, x):
        return 0.5 * np.sum(np.asarray(self.coeffs) * np.asarray(x) ** 2, axis=-1)

    def grad(self, x):
        return np.asarray(self.coeffs) * np.asarray(x)


def interaction_drift(kernel: InteractionKernel, X) -> np.ndarray:
    """``-(1/N) sum_j grad J(X_i - X_j)`` for every particle, by direct pairwise summation.

    For the aggregation kernel the sum collapses to moments of the ensemble,
    but the pairwise form is kept as the reference definition; blocks of rows
    bound the memory to ``O(block * N)``.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N < 2:
        raise ValueError("need at least two particles")
    out = np.empty_like(X)
    block = max(1, 2_000_000 // (N * X.shape[1]))
    for s in range(0, N, block):
        diff = X[s:s + block, None, :] - X[None, :, :]
        out[s:s + block] = -kernel.grad(diff).sum(axis=1) / N
    return out


def interaction_energy(kernel: InteractionKernel, X) -> float:
    """``(1 / 2N^2) sum_ij J(X_i - X_j)``."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    total = 0.0
    block = max(1, 2_000_000 // (N * X.shape[1]))
    for s in range(0, N, block):
        total += float(kernel.value(X[s:s + block, None, :] - X[None, :, :]).sum())
    return total / (2.0 * N * N)


def hamiltonian(ens: ParticleEnsemble, potential: LinearPotential) -> float:
    """Ensemble energy ``(1/2N) sum |Lam_i|^2 + (1/N) sum V(X_i)``."""
    return float(0.5 * np.mean(np.sum(ens.Lam**2, axis=1)) + np.mean(potential.value(ens.X)))


def ring_statistics(X, center) -> tuple[float, float]:
    """Mean and standard deviation of the particle distances to ``center``."""
    r = np.linalg.norm(np.asarray(X) - np.asarray(center), axis=1)
    return float(r.mean()), float(r.std())


# -- projection -------------------------------------------------------------------------


def weighted_tangent_system(net, theta, subspace: IndexSet | None, X):
    """Tangent features at the particles and the empirical metric ``G = J^T J / N``.

    ``J`` has ``N * d`` rows ordered particle-major, matching ``target.ravel()``
    for an ``(N, d)`` target.
    """
    net = as_network(net)
    X = np.asarray(X, dtype=np.float64)
    if net.spec.output_dim != X.shape[1] or net.spec.input_dim != X.shape[1]:
        raise DimensionMismatch(
            f"network maps R^{net.spec.input_dim} -> R^{net.spec.output_dim}, particles live in R^{X.shape[1]}"
        )
    sub = subspace if subspace is not None else full_subspace(net.m)
    J = net.tangent_features(theta, X, sub).features
    return J, J.T @ J / X.shape[0]


def project_field(net, theta, subspace, X, target, opts: linalg.LstsqOptions | None = None, form="jform"):
    """Least-squares projection of a vector field sampled at the particles.

    Returns ``(projected (N, d), DTBApprox)``.
    """
    sub = subspace if subspace is not None else full_subspace(as_network(net).m)
    J, _ = weighted_tangent_system(net, theta, sub, X)
    g = np.asarray(target, dtype=np.float64).ravel()
    alpha = solve_coefficients(J, g, opts, form)
    fitted = J @ alpha
    approx = DTBApprox(np.asarray(theta, dtype=np.float64), sub, alpha, relative_residual(fitted, g))
    return fitted.reshape(X.shape), approx


@dataclass
class FlowOptions:
    lstsq: linalg.LstsqOptions = field(default_factory=linalg.LstsqOptions)
    form: str = "jform"
    # skip the projection and move particles along the raw field
    unprojected: bool = False


def _policy_update(policy, theta, approx, h):
    if policy is None or policy == "fixed":
        return theta
    if policy == "forward":
        return theta + h * approx.embedded()
    raise ValueError(f"unsupported particle policy {policy!r}")


def wgf_step(net, theta, subspace, ens: ParticleEnsemble, kernel: InteractionKernel, h, opts: FlowOptions | None = None,
             policy=None):
    """One explicit step ``X <- X + h K[-grad(J * rho)](X)``.

    Returns ``(ensemble, theta, approx)``; ``approx`` is ``None`` when the
    projection is disabled.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    opts = opts or FlowOptions()
    drift = interaction_drift(kernel, ens.X)
    if opts.unprojected:
        return ParticleEnsemble(ens.X + h * drift, ens.Z, ens.Lam), theta, None
    vel, approx = project_field(net, theta, subspace, ens.X, drift, opts.lstsq, opts.form)
    new = ParticleEnsemble(ens.X + h * vel, ens.Z, ens.Lam)
    return new, _policy_update(policy, theta, approx, h), approx


def whf_step(net, theta, subspace, ens: ParticleEnsemble, potential: LinearPotential, h,
             opts: FlowOptions | None = None, policy=None):
    """``Lam' = Lam + h K[-grad V](X)``, ``X' = X + (h/2)(Lam + Lam')``."""
    if ens.Lam is None:
        raise ValueError("the ensemble carries no velocities")
    if not h > 0:
        raise ValueError("h must be positive")
    opts = opts or FlowOptions()
    acc = -potential.grad(ens.X)
    approx = None
    if not opts.unprojected:
        acc, approx = project_field(net, theta, subspace, ens.X, acc, opts.lstsq, opts.form)
    lam = ens.Lam + h * acc
    new = ParticleEnsemble(ens.X + 0.5 * h * (ens.Lam + lam), ens.Z, lam)
    return new, _policy_update(policy, theta, approx, h), approx


# -- runs ---------------------------------------------------------------------------------


@dataclass
class FlowReport:
    h: float
    times: list = field(default_factory=list)
    residual_rel: list = field(default_factory=list)
    alpha_l2: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    mean_radius: list = field(default_factory=list)
    radius_std: list = field(default_factory=list)
    rel_L2: list = field(default_factory=list)
    err_sq: list = field(default_factory=list)
    ref_sq: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _subspace(net, l, seed):
    from .dtb import select_subspace

    return None if l is None or l >= net.m else select_subspace(net.m, l, derive_seed(seed, "subspace", 0))


def run_wgf(net, theta, ens: ParticleEnsemble, kernel: InteractionKernel, h, K, l=None, center=None,
            opts: FlowOptions | None = None, policy=None, seed=0, snapshot_every=None, energy_every=1) -> tuple:
    """Iterate :func:`wgf_step` ``K`` times; returns ``(ensemble, FlowReport)``.

    Ring statistics are measured about ``center`` (default: the initial
    ensemble mean) at every step; the pairwise interaction energy costs
    ``O(N^2)`` and is recorded every ``energy_every`` steps (NaN otherwise).
    """
    net = None if net is None else as_network(net)
    sub = None if net is None else _subspace(net, l, seed)
    center = np.mean(ens.X, axis=0) if center is None else np.asarray(center, dtype=np.float64)
    rep = FlowReport(h)
    t0 = time.perf_counter()

    def record(k, approx):
        rep.times.append(k * h)
        rep.residual_rel.append(0.0 if approx is None else approx.residual_rel)
        rep.alpha_l2.append(0.0 if approx is None else approx.alpha_l2)
        due = energy_every and (k % energy_every == 0 or k == K)
        rep.energy.append(interaction_energy(kernel, ens.X) if due else float("nan"))
        m, s = ring_statistics(ens.X, center)
        rep.mean_radius.append(m)
        rep.radius_std.append(s)
        if snapshot_every and k % snapshot_every == 0:
            rep.snapshots[k * h] = (ens.X.copy(), None)

    record(0, None)
    for k in range(K):
        ens, theta, approx = wgf_step(net, theta, sub, ens, kernel, h, opts, policy)
        record(k + 1, approx)
    if snapshot_every:
        rep.snapshots[K * h] = (ens.X.copy(), None)
    rep.wall_time = time.perf_counter() - t0
    return ens, rep


def run_whf(net, theta, ens: ParticleEnsemble, potential: LinearPotential, h, K, l=None,
            opts: FlowOptions | None = None, policy=None, seed=0, snapshot_every=None, exact=None) -> tuple:
    """Iterate :func:`whf_step`; ``exact(t)`` (optional) returns reference positions.

    ``rep.rel_L2`` then holds ``|X^k - X(t_k)| / |X(t_k)|`` over the ensemble and
    ``rep.energy`` the Hamiltonian.
    """
    net = None if net is None else as_network(net)
    sub = None if net is None else _subspace(net, l, seed)
    rep = FlowReport(h)
    t0 = time.perf_counter()

    def record(k, approx):
        rep.times.append(k * h)
        rep.residual_rel.append(0.0 if approx is None else approx.residual_rel)
        rep.alpha_l2.append(0.0 if approx is None else approx.alpha_l2)
        rep.energy.append(hamiltonian(ens, potential))
        if exact is not None:
            ref = exact(k * h)
            rep.err_sq.append(float(np.sum((ens.X - ref) ** 2)))
            rep.ref_sq.append(float(np.sum(ref**2)))
            rep.rel_L2.append(float(np.sqrt(rep.err_sq[-1] / rep.ref_sq[-1])))
        if snapshot_every and k % snapshot_every == 0:
            rep.snapshots[k * h] = (ens.X.copy(), ens.Lam.copy())

    record(0, None)
    for k in range(K):
        ens, theta, approx = whf_step(net, theta, sub, ens, potential, h, opts, policy)
        record(k + 1, approx)
    rep.wall_time = time.perf_counter() - t0
    return ens, rep


def trajectory_relative_l2(rep: FlowReport) -> float:
    """Relative L2 error over the whole recorded time window and ensemble."""
    return float(np.sqrt(np.sum(rep.err_sq) / np.sum(rep.ref_sq))) if rep.err_sq else float("nan")


# -- export -------------------------------------------------------------------------------


def write_trajectory_csv(path, snapshots: dict):
    """Rows ``t, particle, x1..xd[, lam1..lamd]`` for every snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header_done = False
        for t in sorted(snapshots):
            X, L = snapshots[t]
            if not header_done:
                d = X.shape[1]
                head = ["t", "particle"] + [f"x{i + 1}" for i in range(d)]
                if L is not None:
                    head += [f"lam{i + 1}" for i in range(d)]
                w.writerow(head)
                header_done = True
            for i in range(X.shape[0]):
                row = [repr(float(t)), i] + [repr(float(v)) for v in X[i]]
                if L is not None:
                    row += [repr(float(v)) for v in L[i]]
                w.writerow(row)


def write_ring_csv(path, rep: FlowReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_radius", "radius_std"])
        for t, m, s in zip(rep.times, rep.mean_radius, rep.radius_std):
            w.writerow([repr(float(t)), repr(float(m)), repr(float(s))])
