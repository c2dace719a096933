"""Additive noise: the solution is Gaussian with variance Phi(t).

With sigma = 1 and b = 0 the scheme is exact mode by mode, so the only
error left is band-limiting: the lattice keeps the frequencies below
Nyquist.  Run: python3 demos/02_additive_gaussian.py
"""

import numpy as np

from spdelab.covariance import KernelSpec
from spdelab.density import check_envelope, estimate_density, run_ensemble
from spdelab.noise import GridSpec, phi_grid
from spdelab.phi import compute_phi
from spdelab.solver import Model

kernel = KernelSpec.white(1)
model = Model.additive(1)

# Band-limit bias of the variance at T = 1 shrinks like h.
for N in (64, 128, 256):
    g = GridSpec.for_horizon(1, N, 1.0, N)
    print(f"N={N:4d} L={g.L:.2f} h={g.h:.3f}  Phi_grid/Phi = {phi_grid(kernel, g, 1.0) / compute_phi(kernel, 1.0):.4f}")

grid = GridSpec.for_horizon(1, 64, 1.0, 64)
ts = [0.25, 0.5, 1.0]
ens = run_ensemble(model, kernel, grid, [(t, np.zeros(1)) for t in ts], 20_000, master_seed=1)
for k, t in enumerate(ts):
    v = ens.samples[k, :, 0].var(ddof=1)
    print(f"t={t}: sample variance {v:.4f}, Phi_grid {phi_grid(kernel, grid, t):.4f}, Phi {compute_phi(kernel, t):.4f}")

# Kernel density estimate at T against the exact Gaussian.
est = estimate_density(ens, 2, bootstrap=50)
y = est.eval_points[0]
phi = compute_phi(kernel, 1.0)
exact = np.exp(-y**2 / (2 * phi)) / np.sqrt(2 * np.pi * phi)
mid = len(y) // 2
print(f"p_hat(0) = {est.values[mid]:.4f} +- {est.mc_rel_err[mid] * est.values[mid]:.4f}, exact {exact[mid]:.4f}")

# For a Gaussian the envelope constants are C2 = C5 = 2.
env = check_envelope([estimate_density(ens, k, bootstrap=50) for k in range(3)],
                     [compute_phi(kernel, t) for t in ts], grid.T)
print(f"envelope: pass={env.passed} C1={env.C1:.3f} C2={env.C2:.3f} C3={env.C3:.3f} C5={env.C5:.3f}")
