import numpy as np
import pytest

from sgfluid.errors import BlowUpError, InsufficientResolution, InvalidParameter
from sgfluid.integrator import (SimConfig, StabilityError, Stepper, energy_tail, ito_ladder,
                                ito_residual, kappa_grid, kappa_limit, simulate, simulate_ensemble,
                                stability_weight, step)
from sgfluid.lattice import SpectralVelocity, build_lattice, mode_index
from sgfluid.noise import WienerIncrement, make_noise, sample_wiener
from sgfluid.operators import norms
from sgfluid.rng import stream

LAT = build_lattice(4, 1.0)
NOISE = make_noise(LAT, "low", 0.05, n_low=8)


def cfg(**kw):
    base = dict(lattice=LAT, nu=2.0, dt=1e-3, t_end=1.0, noise=None, record_every=1, seed=0)
    base.update(kw)
    return SimConfig(**base)


def small_field(seed=0, vnorm=1e-3):
    u = SpectralVelocity.random(LAT, np.random.default_rng(seed), slope=2.0)
    return u * (vnorm / np.sqrt(norms(u).vsq))


def test_config_validation():
    for bad in (dict(dt=0.0), dict(t_end=-1.0), dict(nu=-1.0), dict(record_every=0)):
        with pytest.raises(InvalidParameter):
            cfg(**bad)


def test_monochromatic_step_is_linear_decay():
    c = cfg(dt=0.01)
    u = SpectralVelocity.mode(LAT, (2, 1), 0.8 + 0.2j)
    out = step(u, c)
    k = mode_index(LAT, (2, 1))
    factor = 1 / (1 + 0.01 * 2.0 * 5 / 6)
    np.testing.assert_allclose(out.amp[k], u.amp[k] * factor, rtol=1e-14)
    assert np.count_nonzero(np.abs(out.amp) > 1e-14) == 2


def test_pure_noise_response():
    c = cfg(dt=0.01, noise=make_noise(LAT, "uniform", 0.3))
    xi = sample_wiener(LAT, 0.01, stream(3))
    out = step(SpectralVelocity.zeros(LAT), c, xi)
    expect = 0.3 * xi.dW / LAT.helm / (1 + 0.01 * 2.0 * LAT.ksq / LAT.helm)
    np.testing.assert_allclose(out.amp, expect, rtol=1e-14)


def test_zero_stays_zero():
    traj = simulate(SpectralVelocity.zeros(LAT), cfg(t_end=0.5))
    assert np.all(traj.wsq == 0) and np.all(traj.final.amp == 0)


def test_first_order_convergence():
    u0 = SpectralVelocity.random(LAT, np.random.default_rng(0), slope=2.0)
    u0 = u0 * (2.0 / np.sqrt(norms(u0).vsq))

    def final(dt):
        return simulate(u0, cfg(dt=dt, t_end=0.5, record_every=None)).final

    ref = final(1.25e-4)
    errs = [np.sqrt(norms(final(dt) - ref).vsq) for dt in (4e-3, 2e-3, 1e-3)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.8) and np.all(orders < 1.3)


def test_deterministic_decay_bound():
    u0 = small_field(1)
    c = cfg(nu=1.0, t_end=5.0, record_every=100)
    traj = simulate(u0, c)
    rate = 2 * c.nu / (LAT.poincare_sq + LAT.alpha)
    assert np.all(traj.vsq <= np.exp(-rate * traj.t) * traj.vsq[0] * 1.02)


def test_determinism_and_path_independence():
    c = cfg(noise=NOISE, t_end=0.2, record_every=10, seed=4)
    u0 = small_field(2, 0.5)
    a = simulate(u0, c)
    b = simulate(u0, c)
    np.testing.assert_array_equal(a.rows(), b.rows())
    ens = simulate_ensemble(u0, c, 3)
    ens_t = simulate_ensemble(u0, c, 3, threads=2)
    np.testing.assert_array_equal(ens.wsq, ens_t.wsq)
    np.testing.assert_array_equal(ens.wsq[:, 0], a.wsq)


def test_terminal_only_record():
    traj = simulate(small_field(), cfg(t_end=0.1, record_every=None))
    assert traj.t.tolist() == [pytest.approx(0.1)]


def test_reality_preserved():
    traj = simulate(small_field(3, 1.0), cfg(noise=NOISE, t_end=0.2))
    assert traj.final.is_real()


def test_energy_functional_columns():
    c = cfg(noise=NOISE, t_end=0.3, record_every=7)
    traj = simulate(small_field(0, 0.3), c)
    l, l0, _ = c.constants()
    np.testing.assert_allclose(traj.drift_ref, l0 * c.R * traj.t)
    integral = traj.E_f - traj.wsq
    assert np.all(np.diff(integral) >= 0)
    assert traj.rows().shape == (len(traj.t), 8)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_stability_error_and_blowup():
    big = SpectralVelocity.random(LAT, np.random.default_rng(0), slope=0.0) * 1e3
    with pytest.raises(StabilityError) as exc:
        simulate(big, cfg(dt=0.05, t_end=1.0))
    assert exc.value.t > 0
    assert isinstance(exc.value, BlowUpError)
    bad = np.full(LAT.n_modes, np.inf + 0j)
    with pytest.raises(BlowUpError):
        step(SpectralVelocity(bad, LAT), cfg())


def test_infinite_initial_condition():
    bad = SpectralVelocity(np.full(LAT.n_modes, np.inf + 0j), LAT)
    with pytest.raises(InvalidParameter):
        simulate(bad, cfg())


def test_step_accepts_raw_increment():
    c = cfg(noise=NOISE, dt=0.01)
    xi = sample_wiener(LAT, 0.01, stream(1))
    u = small_field(0, 0.2)
    np.testing.assert_array_equal(step(u, c, xi).amp, step(u, c, WienerIncrement(xi.dW, 0.01)).amp)
    assert np.array_equal(Stepper(c).advance(u.amp, xi.dW), step(u, c, xi.dW).amp)


# -- Ito residual ----------------------------------------------------------------


def test_ito_residual_requires_every_step():
    c = cfg(record_every=2, t_end=0.01)
    with pytest.raises(InsufficientResolution):
        ito_residual(simulate(small_field(), c), c)


def test_ito_residual_noise_free_is_second_order():
    u0 = small_field(0, 1.0)
    c = cfg(t_end=0.5)
    rep = ito_ladder(u0, c, dts=(1e-2, 5e-3, 2.5e-3), n_paths=1)
    assert rep.exponent == pytest.approx(2.0, abs=0.1)
    assert rep.ito_rates == (0.0, 0.0, 0.0)


def test_ito_rate_matches_expectation():
    c = cfg(noise=NOISE, t_end=0.5, dt=5e-3)
    traj = simulate_ensemble(SpectralVelocity.zeros(LAT), c, 32, per_step=True)
    res = ito_residual(traj, c)
    assert res.ito_rate == pytest.approx(res.ito_rate_expected, rel=0.05)
    assert res.ito_rate_expected <= res.ito_bound


# -- tails and weights -------------------------------------------------------------------


def test_tail_trivial_cases():
    c = cfg(t_end=0.2, record_every=10)
    traj = simulate_ensemble(SpectralVelocity.zeros(LAT), c, 2)
    est = energy_tail(traj, 0.0, c, kappa_max=1.0)
    assert est.estimate == 1.0 and est.bound == 2.0 and est.passed
    est = energy_tail(traj, 0.5, c, kappa_max=1.0)
    assert est.estimate == 1.0 and est.passed
    with pytest.raises(InvalidParameter):
        energy_tail(traj, 2.0, c, kappa_max=1.0)


def test_kappa_grid():
    c = cfg(noise=NOISE)
    lim = kappa_limit(c)
    l, _, _ = c.constants()
    assert lim == pytest.approx(0.5 * l / (NOISE.qv_constant() * NOISE.R))
    assert kappa_grid(c) == pytest.approx((lim / 8, lim / 4, lim / 2, lim))
    assert kappa_limit(cfg()) == np.inf


def test_stability_weight_examples():
    t = np.linspace(0, 2, 21)
    tt, s = stability_weight(t, np.zeros_like(t))
    assert np.all(s == 1)
    tt, s = stability_weight(t, np.full_like(t, 3.0), 0.5)
    np.testing.assert_allclose(s, np.exp(-3.0 * (tt - 0.5)), rtol=1e-12)
    w = np.abs(np.random.default_rng(0).standard_normal(21))
    assert np.all(np.diff(stability_weight(t, w)[1]) <= 0)
