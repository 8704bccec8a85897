"""Pseudo-spectral simulation of the stochastic second-grade fluid on the 2D torus.

Submodules
----------
lattice      wavevector lattice, divergence-free fields, transforms
operators    norms, Stokes solve, trilinear form, nonlinearity B
noise        noise map phi, its low-mode inverse g, viscosity condition
integrator   semi-implicit Euler-Maruyama stepping and energy diagnostics
coupling     nudged follower, control h, contraction experiments
mixing       dictionary distances, decay fits, invariant moment
cli          command-line experiment driver
"""

__version__ = "0.1.0"

from .errors import (BlowUpError, ConfigError, DegenerateInput, InsufficientBurnin,
                     InsufficientResolution, InsufficientSignal, InvalidCutoff,
                     InvalidDictionary, InvalidExperiment, InvalidParameter,
                     LatticeMismatch, NoiseDegenerate, SgfluidError)
from .lattice import VOLUME, Lattice, SpectralVelocity, build_lattice, mode_index
from .operators import (NormBundle, bound_ratios, estimate_theta, nonlinearity_B, norms,
                        stokes_solve, theta_ratio, trilinear_b)
from .noise import (NoiseSpec, WienerIncrement, apply_phi, hypothesis_check, make_noise,
                    pseudo_inverse_g, sample_wiener)
from .integrator import (SimConfig, StabilityError, energy_tail, ito_residual, simulate,
                         simulate_ensemble, stability_weight, step)
from .coupling import (CouplingConfig, CouplingState, contraction_experiment, control_h,
                       coupled_step, girsanov_consistency, scan_n_low)
from .mixing import (MixingReport, TestDictionary, build_dictionary, fit_exponential_rate, gamma_sweep,
                     invariant_moment, mixing_experiment, run_ensemble, wasserstein_estimate)
