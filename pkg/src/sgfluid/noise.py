"""Truncated cylindrical noise, the noise map phi and its low-mode inverse g.

The Wiener process is identified with one complex increment per lattice mode,
``dW_k = sqrt(dt/2) (x_k + i y_k)`` on canonical modes and
``dW_{-k} = conj(dW_k)``.  Each real degree of freedom is a unit Brownian
motion of the space U, and ``|c|_U^2 = sum_k |c_k|^2`` over all modes.

The noise map is diagonal with a bounded saturating gain::

    phi(u) dW  has amplitudes  q_k * G(u) * dW_k,   G(u) = 1 + eps * x / (sat + x),
    x = |u|_V^2

and is read as a forcing of ``u - alpha Lap u`` (the velocity increment is
its Stokes solve).  Then ``|phi(u)|_HS(U,V)^2 = G(u)^2 V sum (1+alpha|k|^2) q_k^2``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NoiseDegenerate
from .lattice import VOLUME, SpectralVelocity
from .operators import vsq_amp

PROFILES = ("low", "uniform", "power", "none")


@dataclass(frozen=True)
class WienerIncrement:
    dW: np.ndarray
    dt: float


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Diagonal noise amplitudes ``q`` with multiplicative gain ``eps`` and saturation ``sat``.

    ``n_low`` is the number of leading (lowest-eigenvalue) modes spanning the
    range of P_N; it must close under ``k -> -k`` and all those modes need
    ``q_k > 0``.
    """

    lattice: object
    q: np.ndarray
    eps: float = 0.0
    sat: float = 1.0
    n_low: int = 0

    def __post_init__(self):
        lat = self.lattice
        q = np.array(self.q, dtype=float)
        if q.shape != (lat.n_modes,):
            raise InvalidParameter(f"q must have one entry per mode ({lat.n_modes}), got {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise InvalidParameter("q must be finite and non-negative")
        if np.any(q[0::2] != q[1::2]):
            raise InvalidParameter("q must be symmetric under k -> -k")
        if self.eps < 0:
            raise InvalidParameter(f"eps must be >= 0, got {self.eps}")
        if not self.sat > 0:
            raise InvalidParameter(f"sat must be > 0, got {self.sat}")
        n_low = int(self.n_low)
        if n_low < 0 or n_low > lat.n_modes or n_low % 2:
            raise InvalidParameter(
                f"n_low={self.n_low} must be an even count in [0, {lat.n_modes}] (pairs +-k)"
            )
        if n_low and np.any(q[:n_low] == 0):
            raise NoiseDegenerate("q vanishes on a mode of range(P_N); phi is not invertible there")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "n_low", n_low)
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "sat", float(self.sat))

    @property
    def low_mask(self):
        m = np.zeros(self.lattice.n_modes, dtype=bool)
        m[: self.n_low] = True
        return m

    @property
    def R0(self):
        """Hilbert-Schmidt norm squared of the additive part."""
        return float(VOLUME * np.sum(self.lattice.helm * self.q**2))

    @property
    def R(self):
        """sup_v |phi(v)|_HS(U,V)^2 = (1 + eps)^2 R0."""
        return (1.0 + self.eps) ** 2 * self.R0

    @property
    def L_phi(self):
        """Lipschitz constant of phi from V into HS(U, V).

        ``d/dy [y^2/(sat+y^2)]`` peaks at ``y^2 = sat/3`` with value
        ``9 / (8 sqrt(3 sat))``.
        """
        return self.eps * 9.0 / (8.0 * np.sqrt(3.0 * self.sat)) * np.sqrt(self.R0)

    def g_bound(self):
        """Operator-norm bound of g(v): V -> U (attained when G = 1)."""
        if self.n_low == 0:
            return 0.0
        lat = self.lattice
        lo = slice(0, self.n_low)
        return float(np.max(1.0 / (self.q[lo] * np.sqrt(VOLUME * lat.helm[lo]))))

    def gain(self, u):
        return self.gain_amp(u.amp)

    def gain_amp(self, amp):
        if self.eps == 0.0:
            return np.ones(np.shape(amp)[:-1])
        x = vsq_amp(amp, self.lattice)
        return 1.0 + self.eps * x / (self.sat + x)

    def scaled(self, factor):
        return NoiseSpec(self.lattice, self.q * factor, self.eps, self.sat, self.n_low)

    def qv_constant(self):
        """Constant c with d<A> <= c R |u|_W^2 dt for the energy martingale A.

        A collects the martingale parts of the W-energy balance::

            dA = a1 (phi dW, u) + 2 (curl(u - a Lap u), curl(phi dW)),
            a1 = 2 + 4 (P^2 + a) / a^2

        whose quadratic-variation rate is ``V^2 sum G^2 q_k^2 (a1 + 2|k|^2 h_k)^2 |a_k|^2``;
        dividing by ``R |u|_W^2`` and maximizing per mode gives c.
        """
        lat = self.lattice
        if self.R == 0:
            return 0.0
        a = lat.alpha
        a1 = 2.0 + 4.0 * (lat.poincare_sq + a) / a**2
        per_mode = VOLUME * (1 + self.eps) ** 2 * self.q**2 * (a1 + 2 * lat.ksq * lat.helm) ** 2 / lat.wmult
        return float(per_mode.max() / self.R)


def make_noise(lat, profile="low", scale=1.0, eps=0.0, sat=1.0, n_low=None, power=2.0):
    """Build a NoiseSpec from a named amplitude profile.

    ``low``: q = scale on the first ``n_low`` modes, 0 elsewhere.
    ``uniform``: q = scale everywhere.
    ``power``: q = scale * |k|^-power everywhere.
    ``none``: q = 0 (requires n_low = 0).
    """
    if n_low is None:
        n_low = lat.shell_count(2.0)
    if profile == "low":
        q = np.zeros(lat.n_modes)
        q[:n_low] = scale
    elif profile == "uniform":
        q = np.full(lat.n_modes, float(scale))
    elif profile == "power":
        q = scale * lat.kabs ** (-float(power))
    elif profile == "none":
        q = np.zeros(lat.n_modes)
    else:
        raise InvalidParameter(f"unknown noise profile {profile!r}; choose from {PROFILES}")
    return NoiseSpec(lat, q, eps, sat, n_low)


def sample_wiener(lat, dt, rng):
    """One reality-paired increment with variance dt/2 per real and imaginary part."""
    if dt < 0:
        raise InvalidParameter(f"dt must be >= 0, got {dt}")
    z = rng.standard_normal((2, lat.n_modes // 2))
    return WienerIncrement(increment_from_normals(z, dt), float(dt))


def increment_from_normals(z, dt):
    """Map standard normals ``(..., 2, M/2)`` to paired increments ``(..., M)``."""
    s = np.sqrt(dt / 2.0)
    half = s * (z[..., 0, :] + 1j * z[..., 1, :])
    out = np.empty(half.shape[:-1] + (2 * half.shape[-1],), dtype=complex)
    out[..., 0::2] = half
    out[..., 1::2] = np.conj(half)
    return out


def _coeffs(xi):
    return xi.dW if isinstance(xi, WienerIncrement) else np.asarray(xi)


def apply_phi(spec, u, xi):
    """phi(u) applied to a Wiener increment (or any U-coefficient vector)."""
    spec.lattice.check(u)
    c = _coeffs(xi)
    amp = spec.q * spec.gain(u)[..., None] * c
    return SpectralVelocity(amp, spec.lattice)


def pseudo_inverse_g(spec, u, v):
    """U-coefficients c with ``phi(u) c = P_N v`` (zero outside the low modes)."""
    spec.lattice.check(u, v)
    if spec.n_low == 0:
        return np.zeros(np.broadcast_shapes(u.amp.shape, v.amp.shape), dtype=complex)
    lo = slice(0, spec.n_low)
    if np.any(spec.q[lo] == 0):
        raise NoiseDegenerate("q vanishes on a low mode")
    c = np.zeros(np.broadcast_shapes(u.amp.shape, v.amp.shape), dtype=complex)
    c[..., lo] = v.amp[..., lo] / (spec.q[lo] * spec.gain(u)[..., None])
    return c


def project_low(spec, v):
    """P_N v: keep the first n_low modes."""
    amp = np.where(spec.low_mask, v.amp, 0.0)
    return SpectralVelocity(amp, v.lattice)


def u_norm_sq(c):
    return np.sum(np.abs(c) ** 2, axis=-1)


def hs_norm_sq(spec, u):
    """|phi(u)|_HS(U,V)^2 in closed form."""
    return spec.gain(u) ** 2 * spec.R0


def hs_norm_sq_enumerated(spec, u):
    """|phi(u)|_HS(U,V)^2 by applying phi to every real unit direction of U."""
    lat = spec.lattice
    total = 0.0
    for j in range(lat.n_modes // 2):
        for unit in (1.0, 1j):
            e = np.zeros(lat.n_modes, dtype=complex)
            # real direction x_j = 1 corresponds to dW_k = 1/sqrt(2) (and conj on -k)
            e[2 * j] = unit / np.sqrt(2.0)
            e[2 * j + 1] = np.conj(unit) / np.sqrt(2.0)
            f = apply_phi(spec, u, e)
            total += vsq_amp(f.amp, lat)
    return total


@dataclass(frozen=True)
class ConditionReport:
    lambda1: float
    poincare_sq: float
    K: float
    theta: float
    L_phi: float
    R: float
    nu: float
    alpha: float
    l: float
    l0: float
    l1: float
    lhs: float
    rhs: float
    feasible: bool
    verdict: str
    sweep: tuple  # ((factor, lhs, feasible), ...) for theta multiplied by factor
    theta_samples: int = 0

    def lines(self):
        out = [
            f"lambda1 = {self.lambda1:.10g}",
            f"P^2 = {self.poincare_sq:.10g}",
            f"K = {self.K:.10g}",
            f"theta_hat = {self.theta:.10g} (samples={self.theta_samples})",
            f"R = {self.R:.10g}",
            f"L_phi = {self.L_phi:.10g}",
            f"l = {self.l:.10g}",
            f"l0 = {self.l0:.10g}",
            f"l1 = {self.l1:.10g}",
            f"lhs = {self.lhs:.10g}",
            f"rhs = {self.rhs:.10g}",
        ]
        for factor, lhs, ok in self.sweep:
            out.append(f"sweep theta*{factor:g}: lhs = {lhs:.10g} feasible = {ok}")
        out.append(f"verdict = {self.verdict}")
        return out


def condition_terms(lat, nu, R, L_phi):
    """(l, l0, l1) of the viscosity condition."""
    p2a = lat.poincare_sq + lat.alpha
    lam1 = lat.lambda1
    K2 = lat.stokes_constant_sq
    l = nu / p2a
    l0 = (1.0 + 2.0 / lam1 + 2.0 * p2a / (lam1 * lat.alpha**2)) * K2
    l1 = 2.0 * nu / p2a - 1.0 - K2 * L_phi**2 / lam1
    return l, l0, l1


def hypothesis_check(spec, lat, nu, theta, sweep=(1.0, 2.0, 4.0)):
    """Evaluate the viscosity condition with an empirical Theta.

    ``theta`` is a float or a :class:`~sgfluid.operators.ThetaEstimate`.
    Infeasibility (including ``l1 <= 0``) is reported, never raised.
    """
    lat.check(spec)
    n_samples = getattr(theta, "n_samples", 0)
    theta = float(getattr(theta, "theta", theta))
    if not theta > 0:
        raise InvalidParameter("theta must be positive")
    R, L = spec.R, spec.L_phi
    l, l0, l1 = condition_terms(lat, nu, R, L)
    rhs = l0 * R

    def lhs_at(th):
        return l * l1 / (2.0 * th**2)

    lhs = lhs_at(theta)
    feasible = bool(l1 > 0 and lhs >= rhs)
    if l1 <= 0:
        verdict = "infeasible-contraction"
    else:
        verdict = "feasible" if feasible else "infeasible"
    rows = tuple((float(f), lhs_at(f * theta), bool(l1 > 0 and lhs_at(f * theta) >= rhs)) for f in sweep)
    return ConditionReport(
        lambda1=lat.lambda1,
        poincare_sq=lat.poincare_sq,
        K=lat.stokes_constant,
        theta=theta,
        L_phi=L,
        R=R,
        nu=float(nu),
        alpha=lat.alpha,
        l=l,
        l0=l0,
        l1=l1,
        lhs=lhs,
        rhs=rhs,
        feasible=feasible,
        verdict=verdict,
        sweep=rows,
        theta_samples=int(n_samples),
    )


def _feasible_at(spec, lat, nu, theta, s):
    R, L = spec.R * s * s, spec.L_phi * s
    l, l0, l1 = condition_terms(lat, nu, R, L)
    return l1 > 0 and l * l1 / (2.0 * theta**2) >= l0 * R


def feasible_scale(spec, lat, nu, theta, tol=1e-6, max_iter=200):
    """Largest factor s such that ``spec.scaled(s)`` passes :func:`hypothesis_check`.

    R grows like s^2 and L_phi like s, so feasibility is monotone in s and a
    bisection finds the boundary.  Returns 0.0 when even vanishing noise
    fails (``l1 <= 0`` at s -> 0).
    """
    theta = float(getattr(theta, "theta", theta))
    if not _feasible_at(spec, lat, nu, theta, 0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while _feasible_at(spec, lat, nu, theta, hi):
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            return np.inf
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _feasible_at(spec, lat, nu, theta, mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return lo
