"""Time integrators built on tangent-space least-squares fits.

* :func:`forward_euler_run` - explicit Euler with one fit per step and a
  pluggable rule for moving the basis parameters;
* :func:`trapezoidal_heat_run` - implicit trapezoidal rule for the heat
  equation with a fixed basis;
* :func:`ac2d_corrected_run` - Heun-type predictor/corrector with a second
  subspace fitting the residual of the first, basis moved forward each step.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .dtb import (
    WHAT,
    DTBApprox,
    DTBSet,
    IndexSet,
    as_network,
    dtbset_eval,
    relative_residual,
    select_subspace,
    solve_coefficients,
    target_values,
)
from .errors import ProjectionFailure
from .netfam import refit
from .sampling import derive_seed


@dataclass(frozen=True)
class RhsOperator:
    """Pointwise right-hand side ``nu Lap u + c1 u + c3 u^3 + c4 u^4``."""

    nu: float = 0.0
    c1: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    kind: str = "composite"

    @classmethod
    def heat(cls, nu):
        return cls(nu, 0.0, 0.0, 0.0, "heat")

    @classmethod
    def allen_cahn(cls, nu):
        return cls(nu, 1.0, -1.0, 0.0, "allen_cahn")

    @classmethod
    def composite(cls, nu, c1=0.0, c3=0.0, c4=0.0):
        return cls(nu, c1, c3, c4, "composite")

    @property
    def is_linear(self) -> bool:
        return self.c3 == 0 and self.c4 == 0

    def __call__(self, u, grad=None, lap=None):
        out = self.c1 * u + self.c3 * u**3 + self.c4 * u**4
        if self.nu:
            out = out + self.nu * lap
        return out


# operators of the 5-D function-approximation study
O1 = RhsOperator.composite(0.005, 1.0, -1.0, 0.0)
O2 = RhsOperator.composite(0.02, 0.0, 0.0, 0.0)
O3 = RhsOperator.composite(0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class UpdatePolicy:
    """How the basis parameters move between steps.

    ``fixed`` keeps them, ``forward`` adds ``h * alpha`` (scattered into
    parameter space), ``periodic_reset`` refits ``f_theta`` to the current
    solution every ``L`` steps.
    """

    kind: str = "fixed"
    L: int = 20
    refit_iters: int = 1000
    refit_step: float = 1e-3
    refit_pool: int = 4096
    refit_batch: int = 512
    frozen_blocks: tuple = ()

    def __post_init__(self):
        if self.kind not in ("fixed", "forward", "periodic_reset"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "periodic_reset" and self.L < 1:
            raise ValueError("periodic_reset requires L >= 1")


@dataclass
class RunReport:
    h: float
    k: list = field(default_factory=list)
    times: list = field(default_factory=list)
    residual_rel: list = field(default_factory=list)
    alpha_l2: list = field(default_factory=list)
    rel_L2: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    resets: list = field(default_factory=list)
    wall_time: float = 0.0

    def record(self, k, residual, alpha_l2, err, wall_ms):
        self.k.append(k)
        self.times.append(k * self.h)
        self.residual_rel.append(residual)
        self.alpha_l2.append(alpha_l2)
        self.rel_L2.append(err)
        self.wall_ms.append(wall_ms)

    def to_csv(self, path, deterministic: bool = False):
        """Columns ``k, t, residual_rel, alpha_l2, rel_L2_vs_ref, wall_ms``.

        In deterministic mode ``wall_ms`` is written as 0 so reruns are byte-identical.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "residual_rel", "alpha_l2", "rel_L2_vs_ref", "wall_ms"])
            for row in zip(self.k, self.times, self.residual_rel, self.alpha_l2, self.rel_L2, self.wall_ms):
                k, t, r, a, e, ms = row
                w.writerow([k, repr(float(t)), repr(float(r)), repr(float(a)), repr(float(e)),
                            0 if deterministic else round(ms, 3)])


@dataclass
class RunOptions:
    """Knobs shared by the integrators.

    ``reference(t, points)`` (optional) gives the exact or reference solution
    at ``eval_points``; the report then carries the relative L2 error every
    ``report_every`` steps. ``proj_tol`` bounds the relative residual of each
    fit; a failing fit is retried with a redrawn subspace up to ``retries``
    times and then raises :class:`ProjectionFailure` (or only warns in the
    report when ``on_failure="continue"``).
    """

    n_samples: int = 2000
    lstsq: linalg.LstsqOptions = field(default_factory=linalg.LstsqOptions)
    form: str = "jform"
    proj_tol: float | None = 5e-2
    retries: int = 3
    seed: int = 0
    subspace_policy: str | None = None
    eval_points: np.ndarray | None = None
    reference: object = None
    report_every: int = 1
    on_failure: str = "raise"


def _rel_err(u, ref):
    nr = float(np.linalg.norm(ref))
    d = float(np.linalg.norm(u - ref))
    return d / nr if nr > 0 else d


class _Tracker:
    """Keeps ``u`` on the evaluation points up to date and measures errors."""

    def __init__(self, net, phi, opts: RunOptions, h, K):
        self.net, self.opts, self.h, self.K = net, opts, h, K
        self.pts = opts.eval_points
        self.u = None if self.pts is None else phi.value(self.pts).astype(np.float64)

    def add(self, theta, v):
        if self.u is not None:
            self.u = self.u + self.h * self.net.directional(theta, v, self.pts)[0][:, 0]

    def set(self, u):
        self.u = u

    def error(self, k):
        if self.u is None or self.opts.reference is None:
            return math.nan
        if k % self.opts.report_every and k != self.K:
            return math.nan
        return _rel_err(self.u, np.asarray(self.opts.reference(k * self.h, self.pts)).ravel())


def _block_indices(net, names):
    idx = [np.arange(net.m)[net.block_slice(n)] for n in names]
    return np.concatenate(idx) if idx else None


def apply_policy(policy: UpdatePolicy, theta, alpha, h, k, current_u=None, *, spec=None, seed=0,
                 log: list | None = None):
    """Basis parameters for the next step.

    ``alpha`` is a :class:`DTBApprox` or a coefficient vector already
    scattered into parameter space; ``k`` is the index of the state just
    computed. A periodic reset refits to ``current_u`` (callable on points)
    when ``k`` is a positive multiple of ``L``; its :class:`RefitResult` is
    appended to ``log``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if policy.kind == "fixed":
        return theta
    if policy.kind == "forward":
        v = alpha.embedded() if isinstance(alpha, DTBApprox) else np.asarray(alpha, dtype=np.float64)
        return theta + h * v
    if k > 0 and k % policy.L == 0:
        net = as_network(spec)
        res = refit(
            net.spec, theta, current_u, policy.refit_iters, policy.refit_step, derive_seed(seed, "refit", k),
            pool_size=policy.refit_pool, batch=policy.refit_batch,
            frozen=_block_indices(net, policy.frozen_blocks),
        )
        if log is not None:
            log.append((k, res))
        return res.theta
    return theta


def _fit_with_retries(net, theta, sub, g, z, opts: RunOptions, k, l, report_failure):
    best = None
    for attempt in range(opts.retries + 1):
        if attempt:
            sub = select_subspace(net.m, l, derive_seed(opts.seed, "subspace-retry", k, attempt))
        J = net.tangent_features(theta, z, sub).features
        alpha = solve_coefficients(J, g, opts.lstsq, opts.form)
        approx = DTBApprox(theta, sub, alpha, relative_residual(J @ alpha, g))
        if best is None or approx.residual_rel < best[0].residual_rel:
            best = (approx, sub)
        if opts.proj_tol is None or approx.residual_rel <= opts.proj_tol:
            return approx, sub
    msg = f"step {k}: projection residual {best[0].residual_rel:.3e} above tolerance {opts.proj_tol:g}"
    if opts.on_failure == "raise":
        raise ProjectionFailure(msg)
    report_failure(msg)
    return best


def forward_euler_run(net, theta0, rhs: RhsOperator, phi, T, K, sampler, l, policy: UpdatePolicy | None = None,
                      opts: RunOptions | None = None):
    """Explicit Euler in function space with tangent-space fits of ``F[u^k]``.

    Each step draws fresh samples, evaluates ``F`` on the current
    :class:`DTBSet` sum, fits the coefficients (J-form by default) and appends
    the step; the basis then moves per ``policy``. Returns ``(DTBSet, RunReport)``.
    """
    if not T > 0 or K < 1:
        raise ValueError("need T > 0 and K >= 1")
    net = as_network(net)
    policy = policy or UpdatePolicy()
    opts = opts or RunOptions()
    sub_policy = opts.subspace_policy or ("fresh_per_reset" if policy.kind == "periodic_reset" else "frozen")
    h = T / K
    t_start = time.perf_counter()
    dset = DTBSet(h, phi)
    report = RunReport(h)
    tracker = _Tracker(net, phi, opts, h, K)
    theta = np.asarray(theta0, dtype=np.float64)
    sub = select_subspace(net.m, l, derive_seed(opts.seed, "subspace", 0))
    report.record(0, 0.0, 0.0, tracker.error(0), 0.0)
    failures = []
    for k in range(K):
        t0 = time.perf_counter()
        z = sampler(derive_seed(opts.seed, "samples", k), opts.n_samples)
        u, grad, lap = dtbset_eval(dset, net, z, WHAT)
        g = target_values(rhs(u, grad, lap), z)
        approx, sub = _fit_with_retries(net, theta, sub, g, z, opts, k, l, failures.append)
        dset.append(approx, sub.seed)
        v = approx.embedded()
        tracker.add(theta, v)
        n_resets = len(report.resets)
        theta = apply_policy(
            policy, theta, v, h, k + 1,
            lambda pts: dtbset_eval(dset, net, pts, "value"),
            spec=net, seed=opts.seed, log=report.resets,
        )
        if len(report.resets) > n_resets and sub_policy == "fresh_per_reset":
            sub = select_subspace(net.m, l, derive_seed(opts.seed, "subspace", k + 1))
        report.record(k + 1, approx.residual_rel, approx.alpha_l2, tracker.error(k + 1),
                      1e3 * (time.perf_counter() - t0))
    report.wall_time = time.perf_counter() - t_start
    report.failures = failures
    return dset, report


def trapezoidal_heat_run(net, theta0, nu, phi, T, K, sampler, l, opts: RunOptions | None = None):
    """Implicit trapezoidal rule for ``u_t = nu Lap u`` in a fixed tangent basis.

    Writing ``u^k = phi + h J s^k`` and ``c = h nu / 2``, one step is

        J (s^{k+1} - s^k) = nu Lap phi + c L (s^{k+1} + s^k),

    where ``L`` holds the spatial Laplacians of the tangent features. The
    J-form solves this pointwise on the samples in the least-squares sense,
    ``(J - c L) s^{k+1} = (J + c L) s^k + nu Lap phi``, with one truncated SVD
    reused for every step. The G-form tests it against the features and
    integrates by parts (periodic basis, no boundary term):

        (G + c A) s^{k+1} = (G - c A) s^k + b,

    with ``G = J^T J / n``, ``A = sum_i (d_i J)^T (d_i J) / n`` and
    ``b = J^T (nu Lap phi) / n``. Samples are drawn once. ``residual_rel`` of a
    step is the pointwise mismatch of the step equation above relative to its
    right-hand side. Returns ``(DTBSet, RunReport)``.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    if not T > 0 or K < 1:
        raise ValueError("need T > 0 and K >= 1")
    net = as_network(net)
    opts = opts or RunOptions()
    h = T / K
    t_start = time.perf_counter()
    theta = np.asarray(theta0, dtype=np.float64)
    sub = select_subspace(net.m, l, derive_seed(opts.seed, "subspace", 0))
    z = sampler(derive_seed(opts.seed, "samples", 0), opts.n_samples)
    blk = net.tangent_features(theta, z, sub, with_space_derivs=True)
    J, L = blk.features, blk.spatial_laplacians
    n = J.shape[0]
    f0 = nu * phi.laplacian(z)
    c = 0.5 * h * nu
    if opts.form == "jform":
        svd = linalg.truncated_svd(J - c * L, opts.lstsq.rcond)

        def step(s):
            return svd.solve((J + c * L) @ s + f0)
    elif opts.form == "gform":
        D = np.concatenate([blk.spatial_grads[:, :, i] for i in range(net.spec.input_dim)], axis=0)
        G = J.T @ J / n
        A = 2 * c * (D.T @ D) / n
        Q, lam = linalg.psd_pinv_factors(G + 0.5 * A, opts.lstsq.rcond)
        P_minus = G - 0.5 * A
        b = J.T @ f0 / n

        def step(s):
            return Q @ ((Q.T @ (P_minus @ s + b)) / lam)
    else:
        raise ValueError(f"unknown form {opts.form!r}")

    dset = DTBSet(h, phi)
    report = RunReport(h)
    J_eval = phi_eval = None
    if opts.eval_points is not None:
        J_eval = net.tangent_features(theta, opts.eval_points, sub).features
        phi_eval = phi.value(opts.eval_points)

    def err(k, s):
        if J_eval is None or opts.reference is None or (k % opts.report_every and k != K):
            return math.nan
        return _rel_err(phi_eval + h * (J_eval @ s), np.asarray(opts.reference(k * h, opts.eval_points)).ravel())

    s = np.zeros(len(sub))
    history = [s]
    report.record(0, 0.0, 0.0, err(0, s), 0.0)
    for k in range(K):
        t0 = time.perf_counter()
        s_new = step(s)
        alpha = s_new - s
        res = relative_residual(J @ alpha, f0 + c * (L @ (s_new + s)))
        dset.append(DTBApprox(theta, sub, alpha, res), sub.seed)
        s = s_new
        history.append(s)
        report.record(k + 1, res, float(np.linalg.norm(alpha)), err(k + 1, s), 1e3 * (time.perf_counter() - t0))
    report.wall_time = time.perf_counter() - t_start
    report.coefficients = s
    # s^0..s^K together with what is needed to re-evaluate steps elsewhere
    report.coefficient_history = history
    report.basis = (theta, sub)
    return dset, report


def ac2d_corrected_run(net, theta0, nu, phi, T, K, sampler, subspace_sizes, opts: RunOptions | None = None):
    """Allen-Cahn ``u_t = nu Lap u + u - u^3`` with a corrected (Heun-type) DTB step.

    Per step, with fresh samples and two independently drawn subspaces S1, S2:
    fit ``F[u^k]`` on S1, fit the remainder on S2, form the predictor
    ``u_tmp = u^k + h TB(alpha1 + alpha2)``, then fit ``(F[u^k] + F[u_tmp]) / 2``
    the same way (alpha3 on S1, alpha4 on the remainder on S2). The solution
    and the basis parameters both advance by ``h (alpha3 + alpha4)``.
    """
    if not T > 0 or K < 1:
        raise ValueError("need T > 0 and K >= 1")
    net = as_network(net)
    opts = opts or RunOptions()
    rhs = RhsOperator.allen_cahn(nu)
    l1, l2 = subspace_sizes
    h = T / K
    t_start = time.perf_counter()
    dset = DTBSet(h, phi)
    report = RunReport(h)
    tracker = _Tracker(net, phi, opts, h, K)
    theta = np.asarray(theta0, dtype=np.float64)
    report.record(0, 0.0, 0.0, tracker.error(0), 0.0)
    for k in range(K):
        t0 = time.perf_counter()
        z = sampler(derive_seed(opts.seed, "samples", k), opts.n_samples)
        S1 = select_subspace(net.m, l1, derive_seed(opts.seed, "subspace1", k))
        S2 = select_subspace(net.m, l2, derive_seed(opts.seed, "subspace2", k))
        u, grad, lap = dtbset_eval(dset, net, z, WHAT)
        F0 = rhs(u, grad, lap)
        svd1 = linalg.truncated_svd(net.tangent_features(theta, z, S1).features, opts.lstsq.rcond)
        svd2 = linalg.truncated_svd(net.tangent_features(theta, z, S2).features, opts.lstsq.rcond)

        def two_stage(g):
            a1 = svd1.solve(g)
            fit1 = svd1.U @ (svd1.U.T @ g)
            a2 = svd2.solve(g - fit1)
            fit2 = svd2.U @ (svd2.U.T @ (g - fit1))
            v = np.zeros(net.m)
            v[S1.indices] += a1
            v[S2.indices] += a2
            return v, relative_residual(fit1 + fit2, g)

        v12, _ = two_stage(F0)
        du, dgrad, dlap = net.directional(theta, v12, z)
        F_tmp = rhs(u + h * du[:, 0], grad + h * dgrad[:, 0, :], lap + h * dlap[:, 0])
        v34, res = two_stage(0.5 * (F0 + F_tmp))
        union = S1.union(S2)
        approx = DTBApprox(theta, union, v34[union.indices], res)
        dset.append(approx, derive_seed(opts.seed, "subspace1", k))
        tracker.add(theta, v34)
        theta = theta + h * v34
        report.record(k + 1, res, approx.alpha_l2, tracker.error(k + 1), 1e3 * (time.perf_counter() - t0))
    report.wall_time = time.perf_counter() - t_start
    report.final_theta = theta
    return dset, report


def taylor_error_study(net, theta, target, rconds, hs, samples, heldout, subspace: IndexSet | None = None):
    """Compare the tangent-space fit with the parameter-update surrogate.

    For every ``rcond`` the coefficients ``alpha`` of the J-form fit of
    ``target`` on ``samples`` are computed; the row records the relative
    least-squares residual ``eps_LS`` (on ``samples`` and on ``heldout``),
    ``|alpha|_2`` and, for each step ``h``, the relative error ``eps_T(h)`` of
    ``(f_{theta + h alpha} - f_theta) / h`` against the target on ``heldout``.
    """
    net = as_network(net)
    theta = np.asarray(theta, dtype=np.float64)
    sub = subspace if subspace is not None else IndexSet(np.arange(net.m), net.m)
    J = net.tangent_features(theta, samples, sub).features
    J_ho = net.tangent_features(theta, heldout, sub).features
    g = target_values(target, samples)
    g_ho = target_values(target, heldout)
    f_ho = net.forward(theta, heldout)[:, 0]
    rows = []
    for rc in rconds:
        alpha = linalg.lstsq_svd(J, g, linalg.LstsqOptions(rcond=rc))
        v = np.zeros(net.m)
        v[sub.indices] = alpha
        row = {
            "rcond": rc,
            "eps_LS": relative_residual(J @ alpha, g),
            "eps_LS_heldout": relative_residual(J_ho @ alpha, g_ho),
            "alpha_l2": float(np.linalg.norm(alpha)),
            "eps_T": {},
        }
        for hh in hs:
            diff = (net.forward(theta + hh * v, heldout)[:, 0] - f_ho) / hh
            row["eps_T"][hh] = relative_residual(diff, g_ho)
        rows.append(row)
    return rows
