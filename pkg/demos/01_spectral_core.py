"""Tour of the spectral core: the lattice tables, norms and the nonlinearity.

Run with ``python demos/01_spectral_core.py``.
"""

import numpy as np

from sgfluid import SpectralVelocity, build_lattice
from sgfluid.operators import nonlinearity_B, norms, stokes_solve, theta_ratio, trilinear_b

# %% The lattice: modes, Helmholtz factors and the W/V eigenvalues
lat = build_lattice(8, alpha=1.0)
print(f"k_max = {lat.k_max}, {lat.n_modes} modes, grid {lat.grid_n}x{lat.grid_n}")
print(f"lambda1 = {lat.lambda1}, P^2 = {lat.poincare_sq}, K^2 = {lat.stokes_constant_sq:.6f}")
for s in (1, 2, 4, 5):
    sel = lat.ksq == s
    print(f"  |k|^2 = {s}: {sel.sum():2d} modes, lambda = {lat.lam[sel][0]:g}")

# %% A random field and its norm chain
u = SpectralVelocity.random(lat, np.random.default_rng(0), slope=2.0)
nb = norms(u)
print(f"|u|^2 = {nb.l2sq:.4f}  |grad u|^2 = {nb.h1sq:.4f}  |u|_V^2 = {nb.vsq:.4f}  |u|_W^2 = {nb.wsq:.4f}")

# velocity on the grid is divergence free by construction
vel = u.velocity()
print("grid velocity shape:", vel.shape)

# %% The generalized Stokes problem v - alpha Lap v = f
v = stokes_solve(u)
print(f"|v|_W / |u|_V = {np.sqrt(norms(v).wsq / nb.vsq):.4f} (<= K = {lat.stokes_constant:.4f})")

# %% The nonlinearity is energy neutral: b(u, u, u) = 0 and (B(u), u) = 0
val, scale = trilinear_b(u, u, u, with_scale=True)
print(f"b(u,u,u) / scale = {abs(val) / scale:.1e}")
B = nonlinearity_B(u)
print(f"|B(u)|_V = {np.sqrt(norms(B).vsq):.4f}; Theta ratio of u = {theta_ratio(u):.4f}")
