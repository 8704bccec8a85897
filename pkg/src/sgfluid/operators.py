"""Deterministic spectral operators on divergence-free lattice fields.

Norm conventions (all with the explicit ``(2*pi)^2`` volume factor)::

    |u|^2     = V sum |a_k|^2                      (L2)
    ||u||^2   = V sum |k|^2 |a_k|^2                (H1 seminorm)
    ||u||_V^2 = |u|^2 + alpha ||u||^2
    ||u||_*^2 = |curl(u - alpha Lap u)|^2 = V sum (1+alpha|k|^2)^2 |k|^2 |a_k|^2
    ||u||_W^2 = ||u||_V^2 + ||u||_*^2
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateInput
from .lattice import VOLUME, SpectralVelocity


@dataclass(frozen=True)
class NormBundle:
    l2sq: np.ndarray
    h1sq: np.ndarray
    vsq: np.ndarray
    starsq: np.ndarray
    wsq: np.ndarray

    def as_tuple(self):
        return (self.l2sq, self.h1sq, self.vsq, self.starsq, self.wsq)


def _check(u, lat):
    if lat is None:
        return u.lattice
    lat.check(u)
    return lat


def norms(u, lat=None):
    """All five energy norms of ``u`` (broadcast over ensemble axes)."""
    lat = _check(u, lat)
    p = np.abs(u.amp) ** 2
    l2sq = VOLUME * p.sum(axis=-1)
    h1sq = VOLUME * (p * lat.ksq).sum(axis=-1)
    starsq = VOLUME * (p * lat.helm**2 * lat.ksq).sum(axis=-1)
    vsq = l2sq + lat.alpha * h1sq
    return NormBundle(l2sq, h1sq, vsq, starsq, vsq + starsq)


def vsq_amp(amp, lat):
    return VOLUME * (np.abs(amp) ** 2 * lat.helm).sum(axis=-1)


def wsq_amp(amp, lat):
    return VOLUME * (np.abs(amp) ** 2 * lat.wmult).sum(axis=-1)


def h1sq_amp(amp, lat):
    return VOLUME * (np.abs(amp) ** 2 * lat.ksq).sum(axis=-1)


def h3sq(u):
    """Torus H^3 norm, V sum (1 + |k|^2)^3 |a_k|^2."""
    lat = u.lattice
    return VOLUME * (np.abs(u.amp) ** 2 * (1.0 + lat.ksq) ** 3).sum(axis=-1)


def l2_inner(u, v):
    """(u, v) in L2."""
    u.lattice.check(v)
    return VOLUME * np.real(np.sum(u.amp * np.conj(v.amp), axis=-1))


def v_inner(u, v):
    u.lattice.check(v)
    return VOLUME * np.real(np.sum(u.lattice.helm * u.amp * np.conj(v.amp), axis=-1))


def w_inner(u, v):
    u.lattice.check(v)
    return VOLUME * np.real(np.sum(u.lattice.wmult * u.amp * np.conj(v.amp), axis=-1))


def curl_amp(u):
    """Fourier coefficients of the scalar vorticity curl u (= -|k| a_k)."""
    return -u.lattice.kabs * u.amp


def stokes_solve(f, lat=None):
    """Solve ``v - alpha Lap v = f`` for divergence-free zero-mean ``v``."""
    lat = _check(f, lat)
    return SpectralVelocity(f.amp / lat.helm, lat)


def stokes_residual(v, f):
    """Per-mode residual of ``v - alpha Lap v - f``."""
    v.lattice.check(f)
    return v.amp * v.lattice.helm - f.amp


# -- nonlinear terms ---------------------------------------------------------


def _cross_amp(q_coef, v_amp, lat):
    """Leray-projected stream amplitudes of ``q * (-v2, v1)`` for scalar ``q``.

    ``q_coef`` and ``v_amp`` are per-mode coefficient arrays with matching
    leading axes.  The product is formed on the de-aliased grid and
    projected on the canonical half of the lattice; the conjugate half is
    filled by symmetry so the result is exactly real-paired.
    """
    m = lat.modes
    v1 = -1j * m[:, 1] / lat.kabs * v_amp
    v2 = 1j * m[:, 0] / lat.kabs * v_amp
    g = lat.to_grid(np.stack([q_coef, v1, v2]))
    q, u1, u2 = g[0], g[1], g[2]
    F = lat.from_grid(np.stack([-q * u2, q * u1]))
    half = slice(0, None, 2)
    k1, k2, kabs = m[half, 0], m[half, 1], lat.kabs[half]
    b = -1j * (-k2 * F[0][..., half] + k1 * F[1][..., half]) / kabs
    out = np.empty(np.broadcast_shapes(np.shape(q_coef), np.shape(v_amp)), dtype=complex)
    out[..., 0::2] = b
    out[..., 1::2] = np.conj(b)
    return out


def curl_cross(u, v):
    """Divergence-free part of ``curl(u - alpha Lap u) x v``."""
    lat = u.lattice
    lat.check(v)
    q = -lat.helm * lat.kabs * u.amp
    return SpectralVelocity(_cross_amp(q, v.amp, lat), lat)


def nonlinearity_amp(amp, lat):
    """Raw-array version of :func:`nonlinearity_B` used by the time steppers."""
    return _cross_amp(-lat.helm * lat.kabs * amp, amp, lat)


def nonlinearity_B(u, lat=None):
    """B(u, u) = P[curl(u - alpha Lap u) x u], projected on the lattice."""
    lat = _check(u, lat)
    return SpectralVelocity(nonlinearity_amp(u.amp, lat), lat)


def trilinear_b(u, v, w, lat=None, with_scale=False):
    """b(u, v, w) = sum_ij int u_i (d_i v_j) w_j dx, by exact grid quadrature.

    With ``with_scale=True`` also returns ``int |u_i d_i v_j w_j| dx``, the
    natural magnitude against which round-off in the value is judged.
    """
    lat = _check(u, lat)
    lat.check(v, w)
    m = lat.modes
    uc = u.velocity_coefficients()
    vc = v.velocity_coefficients()
    wc = w.velocity_coefficients()
    # d_i v_j has coefficients i k_i vhat_j
    dv = np.stack([1j * m[:, i] * vc[j] for i in range(2) for j in range(2)])
    g = lat.to_grid(np.concatenate([uc, dv, wc]))
    ug, dvg, wg = g[0:2], g[2:6].reshape((2, 2) + g.shape[1:]), g[6:8]
    integrand = np.einsum("i...,ij...,j...->...", ug, dvg, wg)
    cell = VOLUME / lat.grid_n**2
    val = integrand.sum(axis=(-2, -1)) * cell
    if with_scale:
        mag = np.einsum("i...,ij...,j...->...", np.abs(ug), np.abs(dvg), np.abs(wg))
        return val, mag.sum(axis=(-2, -1)) * cell
    return val


def bound_ratios(u, v, w, lat=None):
    """Realized ratios of the two trilinear bounds.

    Returns ``(r1, r2)`` with::

        r1 = |(curl(u - a Lap u) x v, w)| / (|u|_H3 |v|_V |w|_W)
        r2 = |(curl(u - a Lap u) x u, w)| / (|u|_V^2 |w|_W)
    """
    lat = _check(u, lat)
    lat.check(v, w)
    nu_h3 = np.sqrt(h3sq(u))
    nv = np.sqrt(norms(v).vsq)
    nu_v = norms(u).vsq
    nw = np.sqrt(norms(w).wsq)
    if np.any(nu_h3 == 0) or np.any(nv == 0) or np.any(nw == 0):
        raise DegenerateInput("bound ratios need nonzero u, v and w")
    r1 = np.abs(l2_inner(curl_cross(u, v), w)) / (nu_h3 * nv * nw)
    r2 = np.abs(l2_inner(nonlinearity_B(u), w)) / (nu_v * nw)
    return r1, r2


def theta_ratio(u):
    """``sup_w |(B(u,u), w)| / (|u|_V^2 |w|_W)``, attained at w = W-Riesz image of B."""
    lat = u.lattice
    b = nonlinearity_amp(u.amp, lat)
    dual = 2.0 * np.pi * np.sqrt((np.abs(b) ** 2 / lat.wmult).sum(axis=-1))
    vsq = norms(u).vsq
    if np.any(vsq == 0):
        raise DegenerateInput("theta ratio needs nonzero u")
    return dual / vsq


@dataclass(frozen=True)
class ThetaEstimate:
    """Empirical lower bound for the constant Theta of the B(u,u) estimate."""

    theta: float
    sample_max: float
    n_samples: int
    refined: bool
    k_max: int
    alpha: float


def estimate_theta(lat, n_samples=1000, seed=0, refine=True, n_refine=4, batch=250):
    """Maximize :func:`theta_ratio` over random fields (optionally polished by L-BFGS).

    Samples mix smooth and rough spectra and sparse fields; the best few are
    used as starting points for a local maximization.  The result is a lower
    bound for the true supremum on the lattice.
    """
    from .rng import NS_THETA, stream

    rng = stream(seed, NS_THETA, 0)
    best = []
    sample_max = 0.0
    done = 0
    while done < n_samples:
        nb = min(batch, n_samples - done)
        slopes = rng.uniform(0.0, 3.0, size=(nb, 1))
        shape = (nb, lat.n_modes // 2)
        half = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * lat.kabs[0::2] ** -slopes
        sparse = rng.random(nb) < 0.3
        mask = rng.random(shape) < 0.15
        mask[:, 0] = True
        half = np.where(sparse[:, None] & ~mask, 0.0, half)
        u = SpectralVelocity.from_half(lat, half)
        r = theta_ratio(u)
        sample_max = max(sample_max, float(r.max()))
        order = np.argsort(r)[::-1][:n_refine]
        best.extend((float(r[i]), half[i]) for i in order)
        done += nb
    best.sort(key=lambda t: t[0], reverse=True)
    theta = sample_max
    if refine:
        nh = lat.n_modes // 2

        def neg(x):
            u = SpectralVelocity.from_half(lat, x[:nh] + 1j * x[nh:])
            return -float(theta_ratio(u))

        for _, h0 in best[:n_refine]:
            x0 = np.concatenate([h0.real, h0.imag])
            x0 = x0 / np.linalg.norm(x0)
            res = optimize.minimize(neg, x0, method="L-BFGS-B", options={"maxiter": 200})
            theta = max(theta, -float(res.fun))
    return ThetaEstimate(theta, sample_max, int(n_samples), bool(refine), lat.k_max, lat.alpha)
