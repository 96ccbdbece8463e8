"""Particles attracting at long range and repelling at short range.

With J(x) = |x|^4/4 - |x|^2/2 a Gaussian cloud collapses onto a ring. For a
uniform ring the radial force vanishes when 3 R^2 = 1, so the expected radius
is 1/sqrt(3) = 0.577. Pure particle dynamics (no network) are used here so the
demo runs in seconds.
"""
import numpy as np

from dtbpde.sampling import GaussianSampler
from dtbpde.wflow import FlowOptions, InteractionKernel, ParticleEnsemble, run_wgf

Z = GaussianSampler((1.25, 1.25), 0.6)(0, 400)
ens, rep = run_wgf(None, None, ParticleEnsemble.from_reference(Z), InteractionKernel(), h=0.05, K=300,
                   center=(1.25, 1.25), opts=FlowOptions(unprojected=True), energy_every=50)
for t, r, s in list(zip(rep.times, rep.mean_radius, rep.radius_std))[::50]:
    print(f"t={t:5.1f}  mean radius {r:.4f}  spread {s:.4f}")
print(f"final mean radius {rep.mean_radius[-1]:.4f}, stationary ring radius {1 / np.sqrt(3):.4f}")
