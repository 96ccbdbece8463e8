"""Heat equation on the periodic interval, evolved in a fixed tangent basis.

The initial state sin(pi z) decays as exp(-nu pi^2 t). We advance it with the
implicit trapezoidal rule and with forward Euler, halving the step each time,
and watch the error against the analytic solution shrink at the expected
rates. Run with ``python demos/heat_1d_trapezoid.py``.
"""
import numpy as np

from dtbpde.evolve import RhsOperator, RunOptions, forward_euler_run, trapezoidal_heat_run
from dtbpde.linalg import LstsqOptions
from dtbpde.netfam import NetworkSpec, PeriodicEmbeddingSpec, init_params, network
from dtbpde.sampling import UniformSampler
from dtbpde.targets import field

NU, T = 0.1, 1.0
spec = NetworkSpec("periodic_mlp", 1, 1, (20, 20), "tanh", PeriodicEmbeddingSpec(5))
theta = init_params(spec, 0, "small_uniform", 0.1)
m = network(spec).m
grid = np.linspace(-1, 1, 128, endpoint=False)[:, None]


def exact(t, p):
    return np.exp(-NU * np.pi**2 * t) * np.sin(np.pi * p[:, 0])


def options(K):
    return RunOptions(n_samples=500, lstsq=LstsqOptions(1e-8), eval_points=grid, reference=exact, report_every=K)


print(f"tangent basis: {m} features, nu={NU}, T={T}")
print(f"{'h':>6} {'trapezoid':>11} {'Euler':>11}")
rows = []
for K in (25, 50, 100):
    _, trap = trapezoidal_heat_run(spec, theta, NU, field("sine", 1), T, K, UniformSampler(1), m, options(K))
    _, eul = forward_euler_run(spec, theta, RhsOperator.heat(NU), field("sine", 1), T, K, UniformSampler(1), m,
                               opts=options(K))
    rows.append((T / K, trap.rel_L2[-1], eul.rel_L2[-1]))
    print(f"{T / K:6.3f} {rows[-1][1]:11.3e} {rows[-1][2]:11.3e}")

e = np.array(rows)
print("observed order, trapezoid:", np.round(np.log2(e[:-1, 1] / e[1:, 1]), 2))
print("observed order, Euler:    ", np.round(np.log2(e[:-1, 2] / e[1:, 2]), 2))
