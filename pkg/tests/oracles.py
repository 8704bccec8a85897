"""Reference computations that avoid the package's FFT machinery.

Fields are rebuilt from their stream amplitudes by direct summation of plane
waves on an arbitrary grid, and basis fields for the eigenproblem are derived
symbolically with sympy.
"""

import numpy as np
import scipy.linalg
import sympy as sp

V = (2 * np.pi) ** 2


def plane_waves(modes, n):
    x = 2 * np.pi * np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.exp(1j * (modes[:, 0, None, None] * X + modes[:, 1, None, None] * Y))


def synth(coef, modes, n):
    """Real part of sum_k coef_k exp(i k.x) on an n x n grid (direct sum)."""
    return np.real(np.tensordot(coef, plane_waves(modes, n), axes=(-1, 0)))


def velocity_fields(amp, modes, n):
    """u, grad u (as d_i u_j) on an n x n grid from stream amplitudes."""
    kabs = np.sqrt((modes**2).sum(1))
    e = np.stack([-1j * modes[:, 1] / kabs, 1j * modes[:, 0] / kabs])  # (2, M)
    pw = plane_waves(modes, n)
    u = np.real(np.einsum("jm,m,mxy->jxy", e, amp, pw))
    du = np.real(np.einsum("im,jm,m,mxy->ijxy", 1j * modes.T, e, amp, pw))
    return u, du


def quad(f, n):
    return f.sum(axis=(-2, -1)) * V / n**2


def norms_by_quadrature(amp, modes, alpha, n):
    """(l2sq, h1sq, vsq, starsq, wsq) by quadrature of the physical fields."""
    u, du = velocity_fields(amp, modes, n)
    ksq = (modes**2).sum(1)
    l2 = quad((u**2).sum(0), n)
    h1 = quad((du**2).sum((0, 1)), n)
    # curl(u - alpha Lap u) = (1 + alpha|k|^2) curl u per mode, curl u = d1 u2 - d2 u1
    kabs = np.sqrt(ksq)
    # scalar vorticity of one basis field is -|k| exp(ik.x)
    q = synth(-(1 + alpha * ksq) * kabs * amp, modes, n)
    star = quad(q**2, n)
    vsq = l2 + alpha * h1
    return l2, h1, vsq, star, vsq + star


def b_by_quadrature(ua, va, wa, modes, n):
    u, _ = velocity_fields(ua, modes, n)
    _, dv = velocity_fields(va, modes, n)
    w, _ = velocity_fields(wa, modes, n)
    return quad(np.einsum("ixy,ijxy,jxy->xy", u, dv, w), n)


def eigen_oracle(k_max, alpha):
    """Generalized eigenvalues of (v, e)_W = lam (v, e)_V on the lattice basis.

    Basis fields u = (-d_y psi, d_x psi) with psi = exp(i k.x)/|k| are built
    with sympy; Gram matrices come from grid quadrature of the symbolic
    expressions, and scipy solves the dense generalized problem.
    """
    x, y, k1, k2, a = sp.symbols("x y k1 k2 a", real=True)
    psi = sp.exp(sp.I * (k1 * x + k2 * y)) / sp.sqrt(k1**2 + k2**2)
    u = [-sp.diff(psi, y), sp.diff(psi, x)]
    lap = lambda f: sp.diff(f, x, 2) + sp.diff(f, y, 2)
    grads = [sp.diff(c, d) for c in u for d in (x, y)]
    phi = [c - a * lap(c) for c in u]
    curl = sp.diff(phi[1], x) - sp.diff(phi[0], y)
    f = sp.lambdify((x, y, k1, k2, a), [*u, *grads, curl], "numpy")

    modes = [(i, j) for i in range(-k_max, k_max + 1) for j in range(-k_max, k_max + 1) if (i, j) != (0, 0)]
    n = 4 * k_max + 4
    g = 2 * np.pi * np.arange(n) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    F = np.array([np.broadcast_to(np.asarray(c, dtype=complex), X.shape)
                  for m in modes for c in f(X, Y, m[0], m[1], alpha)])
    F = F.reshape(len(modes), 7, n * n)
    w = V / n**2
    l2 = np.einsum("pn,qn->pq", F[:, 0], F[:, 0].conj()) + np.einsum("pn,qn->pq", F[:, 1], F[:, 1].conj())
    h1 = sum(np.einsum("pn,qn->pq", F[:, c], F[:, c].conj()) for c in range(2, 6))
    gv = (l2 + alpha * h1) * w
    gw = gv + np.einsum("pn,qn->pq", F[:, 6], F[:, 6].conj()) * w
    lam = scipy.linalg.eigh(gw.conj().T, gv.conj().T, eigvals_only=True)
    return np.sort(lam), modes
