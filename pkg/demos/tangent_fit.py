"""Least-squares fits in the span of a network's parameter gradients.

A random network is frozen and a smooth 2-D target is fitted by a linear
combination of its tangent features. Tightening the singular-value cutoff
lowers the residual while the coefficient norm grows, the trade-off that
governs every time step of the solvers.
"""
import numpy as np

from dtbpde.dtb import approx_jform, project, select_subspace
from dtbpde.linalg import LstsqOptions
from dtbpde.netfam import NetworkSpec, PeriodicEmbeddingSpec, init_params, network

spec = NetworkSpec("periodic_mlp", 2, 1, (30, 30), "tanh", PeriodicEmbeddingSpec(6))
# small weights keep the features smooth, which suits a smooth target
theta = init_params(spec, 3, "small_uniform", 0.1)
net = network(spec)
rng = np.random.default_rng(0)
train = rng.uniform(-1, 1, (2000, 2))
test = rng.uniform(-1, 1, (2000, 2))


def target(p):
    return np.exp(np.sin(np.pi * p[:, 0])) * np.cos(np.pi * p[:, 1])


sub = select_subspace(net.m, 600, seed=1)
print(f"{net.m} parameters, fitting with a random subset of {len(sub)}")
print(f"{'rcond':>8} {'train resid':>12} {'test error':>11} {'|alpha|':>10}")
for rcond in (1e-2, 1e-4, 1e-6, 1e-8):
    fit = approx_jform(net, theta, sub, target, train, LstsqOptions(rcond))
    pred = project(fit, net, test)
    err = np.linalg.norm(pred - target(test)) / np.linalg.norm(target(test))
    print(f"{rcond:8.0e} {fit.residual_rel:12.3e} {err:11.3e} {fit.alpha_l2:10.3e}")
