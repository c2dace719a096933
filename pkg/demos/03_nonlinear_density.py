"""Nonlinear noise: Gaussian envelope and the Malliavin derivative.

Model: du = 1/2 u'' dt + 1/2 cos(u) dt + (2 + sin u) W(dt, dx), Riesz noise
with gamma = 0.5.  Run: python3 demos/03_nonlinear_density.py
"""

import numpy as np

from spdelab.covariance import KernelSpec
from spdelab.density import check_drift_bound, check_envelope, drift_bound, estimate_density, run_ensemble
from spdelab.malliavin import check_derivative_scaling, derivative_field, malliavin_matrix
from spdelab.noise import GridSpec
from spdelab.phi import compute_phi
from spdelab.rng import CounterStream
from spdelab.solver import Model, check_ellipticity, solve

kernel = KernelSpec.riesz(1, 0.5)
grid = GridSpec.for_horizon(1, 64, 1.0, 64)
model = Model.scalar(1, {"fn": "sin", "offset": 2.0}, {"fn": "cos", "scale": 0.5})

# sigma(a) sigma(b) ranges over [1, 9]: uniformly elliptic.
ell = check_ellipticity(model, 100_000)
print(f"ellipticity: C1_hat={ell.C1_hat:.4f} C2_hat={ell.C2_hat:.4f}")

# One path with its trajectory kept, then the reverse sweep.
sol = solve(model, kernel, grid, CounterStream(3, 0), store=True)
D = derivative_field(sol, model, kernel, (1.0, np.zeros(1)))
M = malliavin_matrix(D, kernel, grid)
print(f"Malliavin matrix {M.entries[0, 0]:.4f}; Phi(1) = {compute_phi(kernel, 1.0):.4f}")

# E||D u||^2 over the last delta of time is comparable to Phi(delta).
rep = check_derivative_scaling(model, kernel, grid, [1 / 16, 1 / 8, 1 / 4, 1 / 2], 200)
print(f"derivative scaling: pass={rep.passed} largest ratio {rep.bound:.3f}")

# Drift convolution stays below |b|_inf T.
print(f"drift: {check_drift_bound(model, kernel, grid, 200):.4f} <= {drift_bound(model, grid.T):.4f}")

# One constant set for three times.
ts = [0.25, 0.5, 1.0]
ens = run_ensemble(model, kernel, grid, [(t, np.zeros(1)) for t in ts], 20_000, master_seed=5)
ests = [estimate_density(ens, k, bootstrap=50) for k in range(3)]
env = check_envelope(ests, [compute_phi(kernel, t) for t in ts], grid.T, C4=model.b.sup_norm())
print(f"envelope: pass={env.passed} C1={env.C1:.4f} C2={env.C2:.3f} C3={env.C3:.4f} "
      f"C4={env.C4} C5={env.C5:.3f} (worst point t={env.worst_point[0]}, y={env.worst_point[1]:.3f})")
