"""Ensemble estimates of the distance to equilibrium and of the invariant moment.

The dual-Lipschitz distance between two laws is bounded below by a fixed
dictionary of functionals::

    psi_j(u) = 0.5 * tanh((u, w_j)_V / c_j),    c_j >= |w_j|_V

Each psi_j has sup norm <= 1/2 and Lipschitz constant <= 1/2 in V, so
``|psi_j|_inf + Lip(psi_j) <= 1``.  Two ensembles started from different
states are driven by the same noise streams (common random numbers) for the
decay series; a third, independent ensemble supplies the long-run comparison.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import (InsufficientBurnin, InsufficientSignal, InvalidDictionary,
                     InvalidParameter)
from .integrator import run_paths
from .lattice import VOLUME, SpectralVelocity
from .operators import vsq_amp, wsq_amp

DICTIONARY_VERSION = "tanh-v1"


@dataclass(frozen=True, eq=False)
class TestDictionary:
    lattice: object
    weights: np.ndarray  # (J, M) stream amplitudes of w_j
    scales: np.ndarray  # (J,)
    version: str = DICTIONARY_VERSION

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if len(self.weights) == 0:
            raise InvalidDictionary("dictionary is empty")
        vn = np.sqrt(vsq_amp(self.weights, self.lattice))
        if np.any(self.scales < vn * (1 - 1e-12)):
            raise InvalidDictionary("each scale c_j must be at least |w_j|_V")

    def __len__(self):
        return len(self.weights)

    def evaluate(self, amp):
        """psi_j of fields ``amp`` with shape ``(..., M)``; returns ``(..., J)``."""
        lat = self.lattice
        proj = VOLUME * np.real(np.conj(amp) @ (lat.helm * self.weights).T)
        return 0.5 * np.tanh(proj / self.scales)


def build_dictionary(lat, n=64, seed=0, max_ksq=5.0):
    """``n`` functionals with random low-mode weights (|k|^2 <= max_ksq), |w_j|_V = c_j = 1."""
    if n < 1:
        raise InvalidDictionary("dictionary needs at least one functional")
    gen = rngmod.stream(seed, rngmod.NS_DICTIONARY, 0)
    w = SpectralVelocity.random(lat, gen, slope=0.0, batch=(n,), max_ksq=max_ksq).amp
    w = w / np.sqrt(vsq_amp(w, lat))[:, None]
    return TestDictionary(lat, w, np.ones(n))


def checkpoint_schedule(t_end, dt, n_linear=40, base=0.5):
    """Dense linear grid on [0, t_end] merged with the geometric times ``base * 2^j``."""
    lin = np.linspace(0.0, t_end, n_linear + 1)
    geo = []
    t = base
    while t <= t_end + 1e-12:
        geo.append(t)
        t *= 2.0
    steps = np.unique(np.round(np.concatenate([lin, geo]) / dt).astype(int))
    return steps * dt


@dataclass
class EnsembleSamples:
    t: np.ndarray
    samples: np.ndarray  # (n_checkpoints, n_paths, M); blown-up paths removed
    n_blowup: int
    alive: np.ndarray
    lattice: object = field(repr=False, default=None)


def run_ensemble(x0, n_paths, checkpoints, cfg, namespace=rngmod.NS_ENSEMBLE_A, threads=1):
    """States of ``n_paths`` trajectories from ``x0`` at the checkpoint times.

    Paths that blow up are dropped from every checkpoint; their count is kept.
    """
    if n_paths < 1:
        raise InvalidParameter("n_paths must be >= 1")
    cfg.lattice.check(x0)
    steps = sorted({int(round(t / cfg.dt)) for t in np.atleast_1d(checkpoints)})
    if steps[0] < 0:
        raise InvalidParameter("checkpoint times must be >= 0")
    horizon = steps[-1] * cfg.dt
    c = cfg.replace(t_end=horizon, record_every=None)
    traj = run_paths(x0.amp, c, n_paths, namespace=namespace, checkpoint_steps=steps,
                     on_blowup="drop", threads=threads)
    alive = traj.alive
    samples = np.stack([traj.checkpoints[s][alive] for s in steps])
    return EnsembleSamples(np.array(steps) * cfg.dt, samples, int(np.count_nonzero(~alive)), alive,
                           cfg.lattice)


@dataclass(frozen=True)
class DistanceSeries:
    t: np.ndarray
    per_psi: np.ndarray  # (n_t, J) signed mean differences
    distance: np.ndarray  # max_j |per_psi|
    std_error: np.ndarray  # std-error of the maximizing difference
    argmax: np.ndarray
    paired: bool


def _psi_values(samples, dictionary):
    return dictionary.evaluate(samples.samples)  # (n_t, n_paths, J)


def _distance_from_values(va, vb, paired):
    if paired:
        d = va - vb
        diff = d.mean(axis=1)
        n = d.shape[1]
        se = d.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(diff)
    else:
        diff = va.mean(axis=1) - vb.mean(axis=1)
        na, nb = va.shape[1], vb.shape[1]
        va_ = va.var(axis=1, ddof=1) / na if na > 1 else 0.0
        vb_ = vb.var(axis=1, ddof=1) / nb if nb > 1 else 0.0
        se = np.sqrt(va_ + vb_)
    j = np.argmax(np.abs(diff), axis=1)
    rows = np.arange(len(j))
    return diff, np.abs(diff[rows, j]), np.broadcast_to(se, diff.shape)[rows, j], j


def wasserstein_estimate(samples_a, samples_b, dictionary, paired=None):
    """Dictionary lower bound on the dual-Lipschitz distance at each checkpoint.

    ``paired`` (default: both ensembles share paths one-to-one) computes the
    std-error from per-path differences, as appropriate for common noise.
    """
    if dictionary is None or len(dictionary) == 0:
        raise InvalidDictionary("dictionary is empty")
    if not np.allclose(samples_a.t, samples_b.t):
        raise InvalidParameter("ensembles have different checkpoints")
    if paired is None:
        paired = samples_a.samples.shape[1] == samples_b.samples.shape[1]
    va, vb = _psi_values(samples_a, dictionary), _psi_values(samples_b, dictionary)
    diff, dist, se, j = _distance_from_values(va, vb, paired)
    return DistanceSeries(samples_a.t, diff, dist, se, j, bool(paired))


@dataclass(frozen=True)
class ExpFit:
    gamma: float
    r_squared: float
    intercept: float
    stderr: float
    window: tuple
    n_points: int
    no_decay: bool


def fit_exponential_rate(t, series, std_error=None, min_points=4):
    """Least-squares fit of ``log(series) = a - gamma t``.

    With ``std_error`` the fit uses the leading run of points where
    ``series > 3 std_error``; otherwise every positive point.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    if std_error is not None:
        ok = y > 3.0 * np.asarray(std_error, dtype=float)
        ok &= y > 0
        stop = len(ok) if ok.all() else int(np.argmin(ok))
        sel = np.zeros(len(y), dtype=bool)
        sel[:stop] = True
    else:
        sel = y > 0
    if np.count_nonzero(sel) < min_points:
        raise InsufficientSignal(f"only {np.count_nonzero(sel)} usable points (need {min_points})")
    tt, ly = t[sel], np.log(y[sel])
    if np.ptp(ly) == 0:
        return ExpFit(0.0, 1.0, float(ly[0]), 0.0, (float(tt[0]), float(tt[-1])), len(tt), True)
    res = stats.linregress(tt, ly)
    gamma = -float(res.slope)
    no_decay = bool(gamma <= 2.0 * res.stderr)
    return ExpFit(gamma, float(res.rvalue**2), float(res.intercept), float(res.stderr),
                  (float(tt[0]), float(tt[-1])), int(len(tt)), no_decay)


_NO_FIT = ExpFit(np.nan, np.nan, np.nan, np.nan, (np.nan, np.nan), 0, True)


def _window_mask(t, window):
    return (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)


def _fixed_window_rate(t, y):
    y = np.maximum(y, 1e-300)
    return -stats.linregress(t, np.log(y)).slope


def bootstrap_rate(va, vb, t, window, seed=0, n_resamples=499, confidence=0.95):
    """Percentile CI of the dictionary decay rate, resampling paired paths."""
    sel = _window_mask(t, window)
    va, vb, tt = va[sel], vb[sel], t[sel]
    idx = np.arange(va.shape[1])

    def stat(i):
        i = i.astype(int)
        return _fixed_window_rate(tt, _distance_from_values(va[:, i], vb[:, i], True)[1])

    res = stats.bootstrap((idx,), stat, vectorized=False, n_resamples=n_resamples,
                          confidence_level=confidence, method="percentile",
                          random_state=rngmod.stream(seed, rngmod.NS_BOOTSTRAP, 1))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


@dataclass(frozen=True)
class CoupledDistance:
    t: np.ndarray
    mean: np.ndarray  # E min(1, |X1 - X2|_V)
    std_error: np.ndarray
    per_path: np.ndarray = field(repr=False, default=None)


def coupled_distance(samples_a, samples_b):
    """Pathwise ``E min(1, |X1 - X2|_V)`` for two ensembles driven by the same noise."""
    if samples_a.samples.shape != samples_b.samples.shape:
        raise InvalidParameter("coupled distance needs paired ensembles of equal size")
    d = np.minimum(1.0, np.sqrt(vsq_amp(samples_a.samples - samples_b.samples, samples_a.lattice)))
    n = d.shape[1]
    se = d.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(d))
    return CoupledDistance(samples_a.t, d.mean(axis=1), se, d)


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    std_error: float
    bound: float
    burnin: float
    n_paths: int
    n_times: int

    @property
    def passed(self):
        return bool(self.estimate <= self.bound * 1.1)


def invariant_moment(samples, cfg, burnin, gamma=None):
    """Time-and-ensemble average of ``|u|_W^2`` over checkpoints ``t >= burnin``.

    The std-error comes from per-path time averages.  Warns with
    InsufficientBurnin when ``burnin < 3 / gamma``.
    """
    if gamma is not None and gamma > 0 and burnin < 3.0 / gamma:
        warnings.warn(f"burn-in {burnin:g} is shorter than 3/gamma' = {3.0 / gamma:g}",
                      InsufficientBurnin, stacklevel=2)
    sel = samples.t >= burnin - 1e-12
    if not sel.any():
        raise InvalidParameter("no checkpoints after burn-in")
    w = wsq_amp(samples.samples[sel], samples.lattice)  # (n_t, n_paths)
    per_path = w.mean(axis=0)
    n = len(per_path)
    se = float(per_path.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MomentEstimate(float(per_path.mean()), se, float(cfg.moment_bound), float(burnin),
                          n, int(sel.sum()))


def long_run_agreement(samples_a, samples_b, dictionary, burnin):
    """Per-functional z-scores of the time-averaged psi_j between independent ensembles."""
    sel = samples_a.t >= burnin - 1e-12
    ma = dictionary.evaluate(samples_a.samples[sel]).mean(axis=0)  # per-path averages (n, J)
    mb = dictionary.evaluate(samples_b.samples[sel]).mean(axis=0)
    se = np.sqrt(ma.var(axis=0, ddof=1) / len(ma) + mb.var(axis=0, ddof=1) / len(mb))
    z = (ma.mean(axis=0) - mb.mean(axis=0)) / np.where(se > 0, se, np.inf)
    return z


@dataclass
class MixingReport:
    t: np.ndarray
    distance: DistanceSeries
    coupled: CoupledDistance
    fit: ExpFit
    rate_ci: tuple
    half_rates: tuple
    coupled_fit: ExpFit
    coupled_ci: tuple
    agreement_z: np.ndarray
    moment: MomentEstimate
    n_blowup: int
    n_paths: int
    burnin: float
    dictionary_version: str = DICTIONARY_VERSION

    COLUMNS = ("t", "distance", "distance_se", "argmax_psi", "coupled", "coupled_se")

    def rows(self):
        d, c = self.distance, self.coupled
        return np.column_stack([self.t, d.distance, d.std_error, d.argmax, c.mean, c.std_error])

    @property
    def agreement_rms(self):
        return float(np.sqrt(np.mean(self.agreement_z**2)))

    def verdicts(self):
        f = self.fit
        lo, hi = self.rate_ci
        a, b = self.half_rates
        return {
            "decay": bool(f.gamma > 0 and lo > 0 and f.r_squared >= 0.9),
            "coupled_decay": bool(self.coupled_fit.gamma > 0 and self.coupled_ci[0] > 0),
            "half_ensembles": bool(abs(a - b) <= 0.5 * max(abs(a), abs(b))),
            "long_run_agreement": bool(self.agreement_rms <= 2.0),
            "moment": self.moment.passed,
        }

    def lines(self):
        f, cf, m = self.fit, self.coupled_fit, self.moment
        out = [
            f"n_paths = {self.n_paths}",
            f"n_blowup = {self.n_blowup}",
            f"dictionary = {self.dictionary_version} ({self.distance.per_psi.shape[1]} functionals)",
            f"gamma = {f.gamma:.10g}",
            f"gamma_ci = [{self.rate_ci[0]:.10g}, {self.rate_ci[1]:.10g}]",
            f"gamma_r2 = {f.r_squared:.10g}",
            f"fit_window = [{f.window[0]:.10g}, {f.window[1]:.10g}] ({f.n_points} points)",
            f"gamma_half_ensembles = [{self.half_rates[0]:.10g}, {self.half_rates[1]:.10g}]",
            f"coupled_gamma = {cf.gamma:.10g}",
            f"coupled_gamma_ci = [{self.coupled_ci[0]:.10g}, {self.coupled_ci[1]:.10g}]",
            f"coupled_r2 = {cf.r_squared:.10g}",
            f"burnin = {self.burnin:.10g}",
            f"agreement_rms_z = {self.agreement_rms:.10g}",
            f"agreement_max_abs_z = {float(np.max(np.abs(self.agreement_z))):.10g}",
        ]
        out += moment_lines(m)
        out += [f"{k} = {'pass' if v else 'fail'}" for k, v in self.verdicts().items()]
        return out


def moment_lines(m):
    return [
        f"moment = {m.estimate:.10g}",
        f"moment_se = {m.std_error:.10g}",
        f"moment_bound = {m.bound:.10g}",
        f"moment_ok = {m.passed}",
    ]


def _bootstrap_coupled(per_path, t, window, seed, n_resamples=499):
    sel = _window_mask(t, window)
    d, tt = per_path[sel], t[sel]
    idx = np.arange(d.shape[1])

    def stat(i):
        return _fixed_window_rate(tt, d[:, i.astype(int)].mean(axis=1))

    res = stats.bootstrap((idx,), stat, vectorized=False, n_resamples=n_resamples,
                          method="percentile", random_state=rngmod.stream(seed, rngmod.NS_BOOTSTRAP, 2))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def mixing_experiment(cfg, x1, x2, n_paths, dictionary=None, checkpoints=None, burnin=None,
                      threads=1):
    """Distance decay between the laws started at ``x1`` and ``x2`` plus long-run checks.

    Ensembles: A from x1 and B from x2 share noise streams (decay series and
    coupled distance); C from x2 uses an independent namespace (long-run
    agreement with A).  The invariant moment is estimated on A.
    """
    lat = cfg.lattice
    dictionary = build_dictionary(lat, seed=cfg.seed) if dictionary is None else dictionary
    checkpoints = checkpoint_schedule(cfg.t_end, cfg.dt) if checkpoints is None else checkpoints
    burnin = 0.5 * cfg.t_end if burnin is None else burnin
    a = run_ensemble(x1, n_paths, checkpoints, cfg, rngmod.NS_ENSEMBLE_A, threads)
    b = run_ensemble(x2, n_paths, checkpoints, cfg, rngmod.NS_ENSEMBLE_A, threads)
    c = run_ensemble(x2, n_paths, checkpoints, cfg, rngmod.NS_ENSEMBLE_B, threads)
    keep = a.alive & b.alive
    for s, src in ((a, a.alive), (b, b.alive)):
        s.samples = s.samples[:, keep[src]]
    n_blowup = int(n_paths - keep.sum()) + c.n_blowup

    dist = wasserstein_estimate(a, b, dictionary, paired=True)
    va, vb = _psi_values(a, dictionary), _psi_values(b, dictionary)
    try:
        fit = fit_exponential_rate(dist.t, dist.distance, dist.std_error)
        ci = bootstrap_rate(va, vb, dist.t, fit.window, seed=cfg.seed)
        sel = _window_mask(dist.t, fit.window)
        half = va.shape[1] // 2
        halves = tuple(
            float(_fixed_window_rate(dist.t[sel],
                                     _distance_from_values(va[sel][:, s], vb[sel][:, s], True)[1]))
            for s in (slice(0, half), slice(half, None))
        )
    except InsufficientSignal:
        fit, ci, halves = _NO_FIT, (np.nan, np.nan), (np.nan, np.nan)

    cd = coupled_distance(a, b)
    try:
        cfit = fit_exponential_rate(cd.t, cd.mean, cd.std_error)
        cci = _bootstrap_coupled(cd.per_path, cd.t, cfit.window, cfg.seed)
    except InsufficientSignal:
        cfit, cci = _NO_FIT, (np.nan, np.nan)

    z = long_run_agreement(a, c, dictionary, burnin)
    moment = invariant_moment(a, cfg, burnin, gamma=fit.gamma if np.isfinite(fit.gamma) else None)
    return MixingReport(dist.t, dist, cd, fit, ci, halves, cfit, cci, z, moment, n_blowup,
                        n_paths, float(burnin), dictionary.version)


def moment_experiment(cfg, x0, n_paths, checkpoints=None, burnin=None, threads=1):
    """Invariant-moment estimate alone, from one ensemble started at ``x0``."""
    checkpoints = checkpoint_schedule(cfg.t_end, cfg.dt) if checkpoints is None else checkpoints
    burnin = 0.5 * cfg.t_end if burnin is None else burnin
    s = run_ensemble(x0, n_paths, checkpoints, cfg, rngmod.NS_ENSEMBLE_A, threads)
    return invariant_moment(s, cfg, burnin), s.n_blowup


@dataclass(frozen=True)
class SweepRow:
    value: object
    gamma: float
    ci: tuple
    r_squared: float


def gamma_sweep(build, values, n_paths, dictionary_size=64, threads=1):
    """Fitted gamma' across a parameter sweep; no formula in the parameters is assumed.

    ``build(value)`` returns ``(cfg, x1, x2)``, which lets the sweep vary any
    of nu, alpha, the noise or the cutoff, rebuilding the lattice if needed.
    """
    rows = []
    for v in values:
        cfg, x1, x2 = build(v)
        d = build_dictionary(cfg.lattice, dictionary_size, seed=cfg.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InsufficientBurnin)
            rep = mixing_experiment(cfg, x1, x2, n_paths, d, threads=threads)
        rows.append(SweepRow(v, rep.fit.gamma, rep.rate_ci, rep.fit.r_squared))
    return rows
