import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgfluid.errors import DegenerateInput, LatticeMismatch
from sgfluid.lattice import VOLUME, SpectralVelocity, build_lattice
from sgfluid.operators import (bound_ratios, curl_amp, curl_cross, estimate_theta, l2_inner,
                               nonlinearity_B, norms, stokes_residual, stokes_solve, theta_ratio,
                               trilinear_b, v_inner)

from oracles import b_by_quadrature, norms_by_quadrature, synth

seeds = st.integers(0, 2**32 - 1)


def field(lat, seed, slope=1.0, batch=()):
    return SpectralVelocity.random(lat, np.random.default_rng(seed), slope=slope, batch=batch)


# -- norms ---------------------------------------------------------------------


def test_single_mode_norms(lat4):
    a = 0.7
    u = SpectralVelocity.mode(lat4, (1, 0), a)
    nb = norms(u)
    assert nb.l2sq == pytest.approx(2 * VOLUME * a**2)
    assert nb.h1sq == pytest.approx(2 * VOLUME * a**2)
    assert nb.vsq == pytest.approx(2 * nb.l2sq)  # (1 + alpha) l2sq
    assert nb.starsq == pytest.approx(4 * nb.h1sq)  # (1 + alpha)^2 h1sq
    q = norms_by_quadrature(u.amp, lat4.modes, 1.0, 32)
    np.testing.assert_allclose(q, nb.as_tuple(), rtol=1e-12)


def test_zero_field_norms(lat4):
    assert all(np.all(x == 0) for x in norms(SpectralVelocity.zeros(lat4)).as_tuple())


@pytest.mark.parametrize("k_max", [2, 5, 8])
def test_norms_match_quadrature(k_max):
    lat = build_lattice(k_max, 0.8)
    u = field(lat, k_max)
    q = norms_by_quadrature(u.amp, lat.modes, 0.8, 6 * k_max + 3)
    np.testing.assert_allclose(q, norms(u).as_tuple(), rtol=1e-8)


@given(seeds, st.floats(0.1, 4.0))
def test_norm_identities_and_poincare_chain(seed, alpha):
    lat = build_lattice(4, alpha)
    nb = norms(field(lat, seed))
    assert nb.vsq == nb.l2sq + alpha * nb.h1sq
    assert nb.wsq == nb.vsq + nb.starsq
    p2 = lat.poincare_sq
    assert nb.vsq / (p2 + alpha) <= nb.h1sq * (1 + 1e-12)
    assert nb.h1sq <= nb.vsq / alpha * (1 + 1e-12)
    # |curl u|^2 = h1sq on the torus, and |curl u|^2 <= (2/alpha) |u|_V^2
    assert nb.h1sq <= 2 / alpha * nb.vsq


def test_norms_reject_other_lattice(lat4):
    u = SpectralVelocity.zeros(build_lattice(3, 1.0))
    with pytest.raises(LatticeMismatch):
        norms(u, lat4)


# -- Stokes -------------------------------------------------------------------


def test_stokes_single_mode(lat4):
    f = SpectralVelocity.mode(lat4, (1, 0), 1.0)
    v = stokes_solve(f)
    np.testing.assert_allclose(v.amp, f.amp / 2)
    # residual v - alpha Lap v - f in physical space, via direct sums
    n = 16
    vel = lambda w: np.stack([synth(c, lat4.modes, n) for c in w.velocity_coefficients()])
    lap = SpectralVelocity(-lat4.ksq * v.amp, lat4)
    res = vel(v) - 1.0 * vel(lap) - vel(f)
    assert np.max(np.abs(res)) < 1e-14


def test_stokes_small_alpha_is_identity():
    lat = build_lattice(3, 1e-14)
    f = field(lat, 1)
    np.testing.assert_allclose(stokes_solve(f).amp, f.amp, rtol=1e-12)


@given(seeds, st.floats(0.1, 3.0))
def test_stokes_weak_form(seed, alpha):
    lat = build_lattice(3, alpha)
    f, g = field(lat, seed), field(lat, seed + 1)
    v = stokes_solve(f)
    assert v_inner(v, g) == pytest.approx(l2_inner(f, g), rel=1e-12, abs=1e-12 * VOLUME)
    assert np.max(np.abs(stokes_residual(v, f)) / np.maximum(np.abs(f.amp), 1e-300)) < 1e-12


def test_stokes_operator_norm_is_K(lat4):
    # ||v||_W <= K ||f||_V, with equality on the outermost shell
    k = np.argmax(lat4.lam / lat4.helm**2)
    f = SpectralVelocity.mode(lat4, tuple(lat4.modes[k]), 1.0)
    v = stokes_solve(f)
    assert np.sqrt(norms(v).wsq / norms(f).vsq) == pytest.approx(lat4.stokes_constant, rel=1e-13)
    for s in range(5):
        f = field(lat4, s)
        assert norms(stokes_solve(f)).wsq <= lat4.stokes_constant_sq * norms(f).vsq * (1 + 1e-12)


# -- trilinear form and B -------------------------------------------------------


def test_b_matches_quadrature_on_refined_grid(lat8):
    rng = np.random.default_rng(3)
    for _ in range(5):
        u, v, w = (SpectralVelocity.random(lat8, rng) for _ in range(3))
        n = int(np.ceil(1.5 * lat8.grid_n))
        ref = b_by_quadrature(u.amp, v.amp, w.amp, lat8.modes, n)
        val, scale = trilinear_b(u, v, w, with_scale=True)
        assert abs(val - ref) <= 1e-8 * max(abs(ref), scale * 1e-3)


@given(seeds)
def test_b_skew_in_last_two_slots(seed):
    lat = build_lattice(5, 1.0)
    u, v = field(lat, seed), field(lat, seed ^ 1)
    val, scale = trilinear_b(u, v, v, with_scale=True)
    assert abs(val) <= 1e-10 * scale
    val, scale = trilinear_b(u, u, u, with_scale=True)
    assert abs(val) <= 1e-10 * scale


def test_monochromatic_B_vanishes(lat8):
    for k in [(1, 0), (2, 3), (8, -8)]:
        u = SpectralVelocity.mode(lat8, k, 1.3 - 0.4j)
        b = nonlinearity_B(u)
        assert np.max(np.abs(b.amp)) <= 1e-13 * np.sqrt(norms(u).wsq)


@given(seeds)
def test_B_output_real_and_divergence_free(seed):
    lat = build_lattice(4, 1.0)
    u = field(lat, seed)
    b = nonlinearity_B(u)
    assert b.is_real()
    c = b.velocity_coefficients()
    div = lat.modes[:, 0] * c[0] + lat.modes[:, 1] * c[1]
    assert np.max(np.abs(div)) <= 1e-14 * np.max(np.abs(c)) * lat.k_max


def test_curl_identity(lat8):
    rng = np.random.default_rng(7)
    for _ in range(10):
        u, v, w = (SpectralVelocity.random(lat8, rng) for _ in range(3))
        phi = u.helmholtz()
        lhs = l2_inner(curl_cross(u, v), w)
        b1, s1 = trilinear_b(v, phi, w, with_scale=True)
        b2, s2 = trilinear_b(w, phi, v, with_scale=True)
        assert abs(lhs - (b1 - b2)) <= 1e-8 * (s1 + s2)


def test_curl_transport_orthogonality(lat8):
    rng = np.random.default_rng(8)
    for _ in range(10):
        u = SpectralVelocity.random(lat8, rng)
        q = curl_amp(u.helmholtz())
        cb = curl_amp(nonlinearity_B(u))
        val = VOLUME * np.real(np.sum(q * np.conj(cb)))
        scale = VOLUME * np.sqrt(np.sum(np.abs(q) ** 2) * np.sum(np.abs(cb) ** 2))
        assert abs(val) <= 1e-9 * scale


def test_energy_orthogonality_of_B(lat8):
    u = field(lat8, 5)
    assert abs(l2_inner(nonlinearity_B(u), u)) <= 1e-10 * np.sqrt(
        l2_inner(nonlinearity_B(u), nonlinearity_B(u)) * l2_inner(u, u))


def test_B_batched_matches_single(lat4):
    u = field(lat4, 2, batch=(3,))
    batched = nonlinearity_B(u).amp
    for i in range(3):
        np.testing.assert_allclose(batched[i], nonlinearity_B(u[i]).amp, atol=1e-14)


# -- bound ratios and Theta -----------------------------------------------------


def test_bound_ratios_monochromatic_zero(lat4):
    u = SpectralVelocity.mode(lat4, (2, 1), 1.0)
    r1, r2 = bound_ratios(u, u, u)
    assert r1 == pytest.approx(0, abs=1e-14)
    assert r2 == pytest.approx(0, abs=1e-14)


def test_bound_ratios_degenerate(lat4):
    z = SpectralVelocity.zeros(lat4)
    with pytest.raises(DegenerateInput):
        bound_ratios(z, field(lat4, 1), field(lat4, 2))
    with pytest.raises(DegenerateInput):
        theta_ratio(z)


@given(seeds, st.floats(1e-3, 1e3))
def test_theta_ratio_is_homogeneous(seed, c):
    lat = build_lattice(3, 1.0)
    u = field(lat, seed)
    assert theta_ratio(u * c) == pytest.approx(theta_ratio(u), rel=1e-10)
    r = bound_ratios(u, u, u)
    r_c = bound_ratios(u * c, u * c, u * c)
    assert r_c[1] == pytest.approx(r[1], rel=1e-10)


def test_theta_ratio_dominates_test_fields(lat4):
    # theta_ratio is the sup over w, so any particular w gives a smaller ratio
    u = field(lat4, 11)
    for s in range(5):
        w = field(lat4, 100 + s)
        ratio = abs(l2_inner(nonlinearity_B(u), w)) / (norms(u).vsq * np.sqrt(norms(w).wsq))
        assert ratio <= theta_ratio(u) * (1 + 1e-12)


def test_estimate_theta_reports_samples(lat4):
    est = estimate_theta(lat4, n_samples=200, seed=1, refine=False)
    assert est.n_samples == 200 and not est.refined
    assert est.theta == est.sample_max > 0
    refined = estimate_theta(lat4, n_samples=200, seed=1, refine=True, n_refine=2)
    assert refined.theta >= est.theta
