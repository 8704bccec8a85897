"""How the rates move with the parameters.

No formula for the mixing rate in terms of the viscosity, the noise or the
number of forced modes is assumed; the scans simply report fitted values.
"""

from sgfluid import SimConfig, SpectralVelocity, build_lattice
from sgfluid.config import parse_field
from sgfluid.coupling import CouplingConfig, scan_n_low
from sgfluid.mixing import gamma_sweep
from sgfluid.noise import make_noise

lat = build_lattice(4, alpha=1.0)
x1, x2 = SpectralVelocity.zeros(lat), parse_field("random 7 1.0", lat)
base = SimConfig(lat, nu=2.0, dt=5e-3, t_end=6.0, noise=make_noise(lat, "low", 0.05, n_low=8),
                 record_every=20)

# %% Contraction rate against the number of nudged modes N
cfg = CouplingConfig(50.0, base, x1, x2)
print(" N    l1     rate   CI")
for row in scan_n_low(cfg, 32, [4, 8, 12, 20]):
    print(f"{row.n_low:2d}  {row.l1:5.2f}  {row.rate:6.3f}  [{row.ci[0]:.3f}, {row.ci[1]:.3f}]  {row.verdict}")

# %% Mixing rate against the viscosity
print("\n nu   gamma'  CI")
for row in gamma_sweep(lambda nu: (base.replace(nu=nu, record_every=None), x1, x2), [2.0, 3.0, 4.0], 32):
    print(f"{row.value:4.1f}  {row.gamma:.4f}  [{row.ci[0]:.4f}, {row.ci[1]:.4f}]")
