"""Ten independent oscillators carried by a particle ensemble.

Each particle follows x'' = -grad V(x) with velocities from a quadratic
potential. The velocity-averaged update is compared with the closed form
over one period; halving the step halves the error and the energy drift,
the signature of a first-order method.
"""
import numpy as np

from dtbpde.oracle import ho_closed_form
from dtbpde.targets import WHF_OMEGA, whf_initial_velocity
from dtbpde.wflow import FlowOptions, LinearPotential, ParticleEnsemble, run_whf, trajectory_relative_l2

Z = np.random.default_rng(0).standard_normal((200, 10))
V0 = whf_initial_velocity(Z)
pot = LinearPotential.paper()


def exact(t):
    return ho_closed_form(Z, V0, WHF_OMEGA, t)[0]


T = 2 * np.pi
print(f"{'h':>7} {'traj error':>11} {'energy drift':>13}")
for h in (0.04, 0.02, 0.01):
    K = int(round(T / h))
    _, rep = run_whf(None, None, ParticleEnsemble.from_reference(Z, V0), pot, T / K, K,
                     opts=FlowOptions(unprojected=True), exact=exact)
    drift = abs(rep.energy[-1] - rep.energy[0]) / abs(rep.energy[0])
    print(f"{T / K:7.4f} {trajectory_relative_l2(rep):11.3e} {drift:13.3e}")
