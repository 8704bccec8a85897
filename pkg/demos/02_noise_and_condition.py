"""Noise maps and the viscosity condition.

Builds the default low-mode noise, checks that it inverts on the low modes,
and evaluates the viscosity condition for a few viscosities.
"""

import numpy as np

from sgfluid import SpectralVelocity, build_lattice
from sgfluid.noise import (apply_phi, condition_terms, hypothesis_check, make_noise, project_low,
                           pseudo_inverse_g)
from sgfluid.operators import estimate_theta

lat = build_lattice(4, alpha=1.0)
noise = make_noise(lat, "low", scale=0.05, eps=0.5, n_low=8)
print(f"R = {noise.R:.4e}, L_phi = {noise.L_phi:.4e}, forced modes = {noise.n_low}")

# %% phi(v) g(v) = P_N for any state v
rng = np.random.default_rng(1)
v = SpectralVelocity.random(lat, rng) * 3.0
target = SpectralVelocity.random(lat, rng)
back = apply_phi(noise, v, pseudo_inverse_g(noise, v, target))
print("round-trip error:", np.max(np.abs(back.amp - project_low(noise, target).amp)))

# %% Condition constants; nu = alpha = 1 leaves no room for contraction
for nu in (1.0, 2.0, 4.0):
    l, l0, l1 = condition_terms(lat, nu, noise.R, noise.L_phi)
    print(f"nu = {nu}: l = {l:.3f}, l0 = {l0:.3f}, l1 = {l1:.3f}")

# %% Full check with a sampled Theta
theta = estimate_theta(lat, n_samples=500, seed=0)
report = hypothesis_check(make_noise(lat, "low", 0.05, n_low=8), lat, 2.0, theta)
print("\n".join(report.lines()))
