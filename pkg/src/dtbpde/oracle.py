"""Independent reference solutions used to check the DTB solvers."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .errors import AliasingWarning, StepFailure


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid on ``[-1, 1)^d`` with ``M`` points per axis."""

    d: int
    M: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("spectral grids are 1-D or 2-D")
        if self.M < 16 or self.M & (self.M - 1):
            raise ValueError("M must be a power of two >= 16")

    @property
    def spacing(self) -> float:
        return 2.0 / self.M

    @property
    def shape(self):
        return (self.M,) * self.d

    @property
    def axes(self) -> tuple:
        return tuple(range(self.d))

    @property
    def axis(self) -> np.ndarray:
        return -1.0 + self.spacing * np.arange(self.M)

    def points(self) -> np.ndarray:
        """Grid points as an ``(M**d, d)`` array in C order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, fn) -> np.ndarray:
        return np.asarray(fn(self.points()), dtype=np.float64).reshape(self.shape)

    def laplacian_symbol(self) -> np.ndarray:
        """Fourier multiplier of the Laplacian for ``rfftn`` coefficients."""
        k_full = np.pi * np.fft.fftfreq(self.M, d=1.0 / self.M)
        k_half = np.pi * np.fft.rfftfreq(self.M, d=1.0 / self.M)
        ks = [k_full] * (self.d - 1) + [k_half]
        mesh = np.meshgrid(*ks, indexing="ij")
        return -sum(k**2 for k in mesh)

    def grid_id(self) -> str:
        return f"periodic{self.d}d_M{self.M}"


def _tail_fraction(u_hat, grid: SpectralGrid) -> float:
    idx_full = np.abs(np.fft.fftfreq(grid.M, d=1.0 / grid.M))
    idx_half = np.fft.rfftfreq(grid.M, d=1.0 / grid.M)
    mesh = np.meshgrid(*([idx_full] * (grid.d - 1) + [idx_half]), indexing="ij")
    kmax = np.maximum.reduce(mesh) if grid.d > 1 else mesh[0]
    e = np.abs(u_hat) ** 2
    total = e.sum()
    return float(e[kmax > grid.M / 3].sum() / total) if total > 0 else 0.0


def spectral_evolve(grid: SpectralGrid, nu: float, nonlinearity: str, phi, T: float, steps: int,
                    snapshot_times=None) -> dict:
    """Periodic Fourier pseudo-spectral solution of ``u_t = nu Lap u + N(u)``.

    ``N`` is zero (heat) or ``u - u^3`` (Allen-Cahn). Diffusion is integrated
    exactly through an integrating factor and the nonlinearity explicitly with
    classical RK4, so the heat equation carries no time-stepping error.

    ``phi`` is either an array on the grid or a callable on points. Returns a
    dict mapping each snapshot time (default ``T`` only) to the field on the
    grid; snapshot times are rounded to the nearest step.
    """
    if nonlinearity not in ("none", "allen_cahn"):
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    u = np.asarray(phi(grid.points()) if callable(phi) else phi, dtype=np.float64).reshape(grid.shape)
    dt = T / steps
    times = [T] if snapshot_times is None else list(snapshot_times)
    want = {int(round(t / dt)): t for t in times}
    L = nu * grid.laplacian_symbol()
    E = np.exp(0.5 * dt * L)
    E2 = E * E
    u_hat = np.fft.rfftn(u)
    if _tail_fraction(u_hat, grid) > 1e-8:
        warnings.warn("initial data is under-resolved on this grid", AliasingWarning, stacklevel=2)

    def nl(v_hat):
        v = np.fft.irfftn(v_hat, s=grid.shape, axes=grid.axes)
        return dt * np.fft.rfftn(v - v**3)

    out = {}
    if 0 in want:
        out[want[0]] = u.copy()
    for n in range(1, steps + 1):
        if nonlinearity == "none":
            u_hat = E2 * u_hat
        else:
            k1 = nl(u_hat)
            k2 = nl(E * (u_hat + 0.5 * k1))
            k3 = nl(E * u_hat + 0.5 * k2)
            k4 = nl(E2 * u_hat + E * k3)
            u_hat = E2 * u_hat + (E2 * k1 + 2 * E * (k2 + k3) + k4) / 6.0
        if n in want:
            out[want[n]] = np.fft.irfftn(u_hat, s=grid.shape, axes=grid.axes)
    if not all(np.all(np.isfinite(v)) for v in out.values()):
        raise StepFailure("spectral solution blew up")
    if _tail_fraction(u_hat, grid) > 1e-8:
        warnings.warn("spectral tail exceeds 1e-8 of the total energy", AliasingWarning, stacklevel=2)
    return out


def self_converged_reference(grid: SpectralGrid, nu, nonlinearity, phi, T, steps, snapshot_times,
                             tol: float = 1e-6):
    """Run at ``(M, steps)`` and ``(2M, 2 steps)`` and accept only if they agree.

    Returns ``(snapshots, max_relative_change)``; raises ``StepFailure`` when
    the change exceeds ``tol``. ``phi`` must be callable.
    """
    coarse = spectral_evolve(grid, nu, nonlinearity, phi, T, steps, snapshot_times)
    fine_grid = SpectralGrid(grid.d, 2 * grid.M)
    fine = spectral_evolve(fine_grid, nu, nonlinearity, phi, T, 2 * steps, snapshot_times)
    sub = (slice(None, None, 2),) * grid.d
    worst = 0.0
    for t, u in coarse.items():
        ref = fine[t][sub]
        scale = np.linalg.norm(ref)
        change = np.linalg.norm(u - ref) / scale if scale > 0 else np.linalg.norm(u - ref)
        worst = max(worst, float(change))
    if worst > tol:
        raise StepFailure(f"spectral reference not self-converged: relative change {worst:.2e} > {tol:g}")
    return coarse, worst


def trapezoidal_multiplier(grid: SpectralGrid, nu: float, h: float) -> np.ndarray:
    """Fourier symbol of one exact-in-space trapezoidal heat step ``(I - h nu Lap/2)^-1 (I + h nu Lap/2)``."""
    L = nu * grid.laplacian_symbol()
    return (1 + 0.5 * h * L) / (1 - 0.5 * h * L)


def apply_symbol(grid: SpectralGrid, symbol, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64).reshape(grid.shape)
    return np.fft.irfftn(symbol * np.fft.rfftn(u), s=grid.shape, axes=grid.axes)


def reference_digest(grid: SpectralGrid, nu, nonlinearity, phi_id, T, steps) -> str:
    key = json.dumps([grid.grid_id(), float(nu), nonlinearity, phi_id, float(T), int(steps)])
    return hashlib.sha256(key.encode()).hexdigest()[:20]


def write_snapshots_csv(path, grid_id: str, snapshots: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_id", "t", "value"])
        for t in sorted(snapshots):
            for v in np.asarray(snapshots[t]).ravel():
                w.writerow([grid_id, repr(float(t)), repr(float(v))])


def read_snapshots_csv(path, shape) -> dict:
    vals: dict = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for _, t, v in r:
            vals.setdefault(float(t), []).append(float(v))
    return {t: np.asarray(v).reshape(shape) for t, v in vals.items()}


def cached_reference(cache_dir, grid: SpectralGrid, nu, nonlinearity, phi, phi_id: str, T, steps,
                     snapshot_times, tol: float = 1e-6) -> dict:
    """Self-converged reference snapshots, cached as CSV keyed by a digest of the inputs."""
    times_key = ",".join(repr(float(t)) for t in sorted(snapshot_times))
    digest = reference_digest(grid, nu, nonlinearity, f"{phi_id}@{times_key}", T, steps)
    path = os.path.join(cache_dir, f"ref_{digest}.csv") if cache_dir else None
    if path and os.path.exists(path):
        return read_snapshots_csv(path, grid.shape)
    snaps, _ = self_converged_reference(grid, nu, nonlinearity, phi, T, steps, snapshot_times, tol)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        write_snapshots_csv(path, grid.grid_id(), snaps)
    return snaps


def ho_closed_form(x0, v0, omega, t):
    """Position and velocity of uncoupled harmonic oscillators at time ``t``.

    ``omega`` broadcasts against the trailing (coordinate) axis of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    w = np.asarray(omega, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("frequencies must be positive")
    c, s = np.cos(w * t), np.sin(w * t)
    return x0 * c + v0 / w * s, -x0 * w * s + v0 * c


def scalar_ode_oracle(f, u0: float, T: float, tol: float = 1e-10) -> float:
    """High-order adaptive solution of ``u' = f(u)`` at time ``T``."""
    sol = solve_ivp(lambda t, u: [f(u[0])], (0.0, T), [float(u0)], method="DOP853",
                    rtol=tol, atol=tol * 1e-2)
    if not sol.success or not np.isfinite(sol.y[0, -1]):
        raise StepFailure(f"scalar ODE integration failed: {sol.message}")
    return float(sol.y[0, -1])


def pinv_oracle(A, b) -> np.ndarray:
    """Minimum-norm solution by an explicit full SVD (LAPACK ``gesvd``), hard cutoff ``1e-12 sigma_max``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    U, s, Vt = scipy.linalg.svd(A, full_matrices=True, lapack_driver="gesvd")
    cutoff = 1e-12 * (s[0] if s.size else 0.0)
    s_inv = np.zeros((A.shape[1], A.shape[0]))
    for i, sv in enumerate(s):
        if sv > cutoff:
            s_inv[i, i] = 1.0 / sv
    return Vt.T @ (s_inv @ (U.T @ b))
