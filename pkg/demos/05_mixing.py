"""Mixing: the laws started from two states approach each other.

Two ensembles share their noise, so the dictionary distance between them is
measured with paired differences.  A third ensemble with its own noise checks
that the long-run averages agree.
"""

import warnings

from sgfluid import SimConfig, SpectralVelocity, build_lattice
from sgfluid.config import parse_field
from sgfluid.errors import InsufficientBurnin
from sgfluid.mixing import mixing_experiment
from sgfluid.noise import make_noise

lat = build_lattice(4, alpha=1.0)
sim = SimConfig(lat, nu=2.0, dt=5e-3, t_end=8.0, noise=make_noise(lat, "low", 0.05, n_low=8),
                record_every=None)
x1, x2 = SpectralVelocity.zeros(lat), parse_field("random 7 1.0", lat)

with warnings.catch_warnings():
    warnings.simplefilter("ignore", InsufficientBurnin)
    rep = mixing_experiment(sim, x1, x2, n_paths=64)

for t, d, se in zip(rep.t[::8], rep.distance.distance[::8], rep.distance.std_error[::8]):
    print(f"t = {t:5.2f}: distance {d:.3e} +- {se:.1e}")
print()
print("\n".join(rep.lines()))
