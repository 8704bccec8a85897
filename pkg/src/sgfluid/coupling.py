"""Nudged follower process, the Girsanov control h and contraction experiments.

The follower obeys the Galerkin system plus the feedback
``-rho P_N (I - alpha Lap)(u_tilde - u)`` on the ``u - alpha Lap u`` level,
i.e. the per-amplitude drift ``-rho (u_tilde_k - u_k)`` on the low modes.
The feedback is integrated implicitly against the leader's new state, so one
step reads (``h_k = 1 + alpha|k|^2``, low modes only carry the rho terms)::

    ut'_k (1 + dt nu |k|^2 / h_k + dt rho) = rhs_k(ut) + dt rho u'_k

which is evaluated as ``ut' = u' + (rhs(ut) - rhs(u)) / (1 + dt nu |k|^2/h_k + dt rho)``.

The same step is reproduced by the plain system driven by ``dW + h dt`` with::

    h = -g(ut_n) rho P_N (I - alpha Lap)(ut_{n+1} - u_{n+1})

which is the discrete form of the shifted-noise identity.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import BlowUpError, InvalidExperiment, InvalidParameter, NoiseDegenerate
from .integrator import Stepper, stability_weight
from .lattice import VOLUME, SpectralVelocity
from .noise import WienerIncrement, increment_from_normals
from .operators import vsq_amp, wsq_amp


@dataclass(frozen=True, eq=False)
class CouplingConfig:
    rho: float
    sim: object
    x0: SpectralVelocity
    x0_tilde: SpectralVelocity
    stabilizing: bool = True  # False flips the feedback sign (diverging control case)

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidParameter(f"rho must be >= 0, got {self.rho}")
        self.sim.lattice.check(self.x0, self.x0_tilde)
        if self.rho > 0 and (self.sim.noise is None or self.sim.noise.n_low == 0):
            raise NoiseDegenerate("nudging needs a noise map invertible on n_low > 0 modes")

    @property
    def n_low(self):
        return 0 if self.sim.noise is None else self.sim.noise.n_low

    @property
    def signed_rho(self):
        return self.rho if self.stabilizing else -self.rho


@dataclass(frozen=True)
class CouplingState:
    u: SpectralVelocity
    u_tilde: SpectralVelocity
    h_sq_integral: np.ndarray
    r_vsq: np.ndarray
    t: float = 0.0


def initial_state(cfg, batch=()):
    lat = cfg.sim.lattice
    shape = tuple(batch) + (lat.n_modes,)
    u = SpectralVelocity(np.broadcast_to(cfg.x0.amp, shape), lat)
    ut = SpectralVelocity(np.broadcast_to(cfg.x0_tilde.amp, shape), lat)
    zero = np.zeros(tuple(batch))
    return CouplingState(u, ut, zero, vsq_amp(ut.amp - u.amp, lat), 0.0)


class _CoupledStepper:
    def __init__(self, cfg):
        self.cfg = cfg
        self.base = Stepper(cfg.sim)
        lat = cfg.sim.lattice
        self.lat = lat
        low = np.zeros(lat.n_modes)
        low[: cfg.n_low] = 1.0
        self.low = low
        rho = cfg.signed_rho
        self.rho_dt = cfg.sim.dt * rho * low
        self.f_denom = 1.0 / (1.0 / self.base.denom + self.rho_dt)

    def control(self, ut_amp, r_amp):
        """U-coefficients of h given the follower state (gain) and a difference r."""
        cfg = self.cfg
        if cfg.rho == 0:
            return np.zeros(np.broadcast_shapes(ut_amp.shape, r_amp.shape), dtype=complex)
        nz = cfg.sim.noise
        g = nz.gain_amp(ut_amp)
        n = cfg.n_low
        c = np.zeros(np.broadcast_shapes(ut_amp.shape, r_amp.shape), dtype=complex)
        c[..., :n] = -cfg.signed_rho * self.lat.helm[:n] * r_amp[..., :n] / (nz.q[:n] * g[..., None])
        return c

    def step(self, u, ut, dW, dW_f):
        b = self.base
        rhs_l = b.drift_part(u)
        rhs_f = b.drift_part(ut)
        if b.noise is not None:
            if dW is not None:
                rhs_l = rhs_l + b.noise_part(u, dW)[0]
            if dW_f is not None:
                rhs_f = rhs_f + b.noise_part(ut, dW_f)[0]
        u_new = rhs_l * b.denom
        # difference form: identical states give r = 0 exactly
        ut_new = u_new + (rhs_f - rhs_l) * self.f_denom
        h = self.control(ut, ut_new - u_new)
        return u_new, ut_new, h


def coupled_step(state, cfg, xi, xi_follower=None, return_control=False):
    """Advance leader and follower by one step.

    Both use ``xi`` unless ``xi_follower`` supplies an independent increment
    (negative-control experiments).  The returned state carries the updated
    ``|r|_V^2`` and the running integral of ``|h|_U^2``.
    """
    lat = cfg.sim.lattice
    lat.check(state.u, state.u_tilde)
    dW = None if xi is None else (xi.dW if isinstance(xi, WienerIncrement) else np.asarray(xi))
    dWf = dW
    if xi_follower is not None:
        dWf = xi_follower.dW if isinstance(xi_follower, WienerIncrement) else np.asarray(xi_follower)
    stepper = _CoupledStepper(cfg)
    u_new, ut_new, h = stepper.step(state.u.amp, state.u_tilde.amp, dW, dWf)
    for amp in (u_new, ut_new):
        if not np.all(np.isfinite(amp)):
            raise BlowUpError(state.t + cfg.sim.dt, float(np.max(np.sqrt(wsq_amp(state.u_tilde.amp, lat)))))
    hsq = np.sum(np.abs(h) ** 2, axis=-1)
    new = CouplingState(
        SpectralVelocity(u_new, lat),
        SpectralVelocity(ut_new, lat),
        state.h_sq_integral + hsq * cfg.sim.dt,
        vsq_amp(ut_new - u_new, lat),
        state.t + cfg.sim.dt,
    )
    return (new, h) if return_control else new


def control_h(state, cfg):
    """``h = -g(u_tilde) rho P_N (I - alpha Lap)(u_tilde - u)`` and ``|h|_U^2``."""
    c = _CoupledStepper(cfg).control(state.u_tilde.amp, state.u_tilde.amp - state.u.amp)
    return c, np.sum(np.abs(c) ** 2, axis=-1)


@dataclass(frozen=True)
class GirsanovResult:
    discrepancy: float
    scale: float  # max_t |u_tilde(t)|_V along run (i)
    n_steps: int

    @property
    def relative(self):
        return self.discrepancy / self.scale if self.scale > 0 else self.discrepancy


def girsanov_consistency(cfg, T=None, seed=None, path=0):
    """Compare the nudged follower with the plain system driven by ``W + int h dt``.

    Run (i) is the coupled pair; run (ii) restarts the plain dynamics from
    ``x0_tilde`` with the increments of (i) shifted by ``h dt``.  Returns the
    largest V-distance between the two follower paths.
    """
    sim = cfg.sim
    if seed is not None and seed != sim.seed:
        raise InvalidExperiment(f"run (ii) seed {seed} differs from run (i) seed {sim.seed}")
    if sim.noise is None:
        raise InvalidExperiment("the shifted-noise identity needs a noise map")
    T = sim.t_end if T is None else T
    n_steps = int(round(T / sim.dt))
    lat = sim.lattice
    gen = rngmod.stream(sim.seed, rngmod.NS_SIMULATE, path)
    cs = _CoupledStepper(cfg)
    base = Stepper(sim)

    u, ut = cfg.x0.amp.copy(), cfg.x0_tilde.amp.copy()
    plain = ut.copy()
    disc = 0.0
    scale = float(np.sqrt(vsq_amp(ut, lat)))
    for _ in range(n_steps):
        dW = increment_from_normals(gen.standard_normal((2, lat.n_modes // 2)), sim.dt)
        u, ut, h = cs.step(u, ut, dW, dW)
        plain = base.advance(plain, dW + h * sim.dt)
        disc = max(disc, float(np.sqrt(vsq_amp(ut - plain, lat))))
        scale = max(scale, float(np.sqrt(vsq_amp(ut, lat))))
    return GirsanovResult(disc, scale, n_steps)


# -- ensembles ----------------------------------------------------------------


@dataclass
class CouplingRun:
    t: np.ndarray
    r_vsq: np.ndarray  # (n_records, n_paths)
    h_sq_integral: np.ndarray
    leader_wsq: np.ndarray
    follower_wsq: np.ndarray
    r_int_weighted: np.ndarray  # int_0^t e^s |r(s)|_V^2 ds
    alive: np.ndarray

    COLUMNS = ("t", "r_vsq", "et_r_vsq", "h_sq_integral", "leader_wsq", "follower_wsq")

    def rows(self, path=0):
        return np.column_stack([
            self.t, self.r_vsq[:, path], np.exp(self.t) * self.r_vsq[:, path],
            self.h_sq_integral[:, path], self.leader_wsq[:, path], self.follower_wsq[:, path],
        ])


def _coupled_chunk(cfg, n_paths, start, independent, namespace):
    sim = cfg.sim
    lat = sim.lattice
    cs = _CoupledStepper(cfg)
    n_steps = sim.n_steps
    every = sim.record_every or n_steps
    u = np.broadcast_to(cfg.x0.amp, (n_paths, lat.n_modes)).copy()
    ut = np.broadcast_to(cfg.x0_tilde.amp, (n_paths, lat.n_modes)).copy()
    lead = follow = None
    if sim.noise is not None:
        lead = rngmod.NormalBlocks(rngmod.streams(sim.seed, namespace, n_paths, start), (2, lat.n_modes // 2))
        follow = lead
        if independent:
            follow = rngmod.NormalBlocks(
                rngmod.streams(sim.seed, rngmod.NS_FOLLOWER, n_paths, start), (2, lat.n_modes // 2))
    hint = np.zeros(n_paths)
    rint = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    r_prev = vsq_amp(ut - u, lat)
    recs = []

    def record(n):
        recs.append((n * sim.dt, vsq_amp(ut - u, lat), hint.copy(), wsq_amp(u, lat),
                     wsq_amp(ut, lat), rint.copy()))

    record(0)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            dW = dWf = None
            if lead is not None:
                dW = increment_from_normals(lead.next(), sim.dt)
                dWf = increment_from_normals(follow.next(), sim.dt) if independent else dW
            u, ut, h = cs.step(u, ut, dW, dWf)
            bad = alive & ~(np.isfinite(wsq_amp(u, lat)) & np.isfinite(wsq_amp(ut, lat)))
            if bad.any():
                alive &= ~bad
                u[bad] = 0.0
                ut[bad] = 0.0
                h[bad] = 0.0
            hint += np.sum(np.abs(h) ** 2, axis=-1) * sim.dt
            r_new = vsq_amp(ut - u, lat)
            t0, t1 = n * sim.dt, (n + 1) * sim.dt
            rint += 0.5 * sim.dt * (np.exp(t0) * r_prev + np.exp(t1) * r_new)
            r_prev = r_new
            if (n + 1) % every == 0 or n + 1 == n_steps:
                record(n + 1)
    cols = [np.array(c) for c in zip(*recs)]
    return cols, alive


def run_coupled(cfg, n_paths, independent=False, namespace=rngmod.NS_SIMULATE, threads=1):
    """Integrate ``n_paths`` coupled pairs; ``independent`` gives the follower its own noise.

    Pair ``i`` draws from stream ``(seed, namespace, i)`` (and ``NS_FOLLOWER``
    for an independent follower), so the result does not depend on ``threads``.
    """
    bounds = np.linspace(0, n_paths, max(1, min(threads, n_paths)) + 1).astype(int)
    spans = list(zip(bounds[:-1], bounds[1:]))

    def work(span):
        lo, hi = span
        return _coupled_chunk(cfg, hi - lo, lo, independent, namespace)

    if len(spans) == 1:
        parts = [work(spans[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as ex:
            parts = list(ex.map(work, spans))
    cols = [parts[0][0][0]] + [np.concatenate([p[0][i] for p in parts], axis=1) for i in range(1, 6)]
    alive = np.concatenate([p[1] for p in parts])
    return CouplingRun(*cols, alive)


@dataclass(frozen=True)
class RateFit:
    rate: float
    r_squared: float
    ci: tuple
    window: tuple


def _log_slope(t, y):
    res = stats.linregress(t, np.log(y))
    return -res.slope, res.rvalue**2


def fit_mean_decay(t, series, window, seed=0, n_resamples=999, confidence=0.95):
    """Decay rate of the path-mean of ``series`` over ``window`` with a path bootstrap CI."""
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    tt = t[sel]
    y = series[sel]
    mean = y.mean(axis=1)
    if np.any(mean <= 0) or len(tt) < 4:
        return RateFit(float("nan"), float("nan"), (float("nan"), float("nan")), tuple(window))
    rate, r2 = _log_slope(tt, mean)
    idx = np.arange(y.shape[1])

    def stat(i):
        m = y[:, i.astype(int)].mean(axis=1)
        return _log_slope(tt, m)[0]

    boot = stats.bootstrap((idx,), stat, vectorized=False, n_resamples=n_resamples,
                           confidence_level=confidence, method="percentile",
                           random_state=rngmod.stream(seed, rngmod.NS_BOOTSTRAP, 0))
    ci = (float(boot.confidence_interval.low), float(boot.confidence_interval.high))
    return RateFit(float(rate), float(r2), ci, tuple(window))


def wilson(k, n, confidence=0.95):
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class ContractionReport:
    run: CouplingRun
    fit: RateFit
    l1: float
    varpi: float
    kappa0: float
    moment_stat: float  # sup_t E[(e^t |r|^2 + int e^s |r|^2 ds)^varpi]
    moment_bound: float
    d3_budget: float
    d3_fraction: float
    d3_ci: tuple
    d1_C: float
    d1_gamma0: float
    d1_fraction: float
    d1_ci: tuple
    weighted_C: float  # smallest C with E[sigma |r|^2] <= |r0|^2 e^{C t} on the records
    median_weighted_nonincreasing: bool
    n_blowup: int
    negative_control: bool

    @property
    def verdict(self):
        if self.negative_control:
            lo, hi = self.fit.ci
            return "no-decay" if lo <= 0 <= hi or not np.isfinite(self.fit.rate) else "decay"
        if not np.isfinite(self.fit.rate):
            return "identical" if self.run.r_vsq.max() == 0 else "no-signal"
        return "contracting" if self.fit.ci[0] > 0 else "no-decay"

    def lines(self):
        f = self.fit
        return [
            f"negative_control = {self.negative_control}",
            f"rate = {f.rate:.10g}",
            f"rate_ci = [{f.ci[0]:.10g}, {f.ci[1]:.10g}]",
            f"rate_r2 = {f.r_squared:.10g}",
            f"fit_window = [{f.window[0]:.10g}, {f.window[1]:.10g}]",
            f"l1 = {self.l1:.10g}",
            f"varpi = {self.varpi:.10g}",
            f"kappa0 = {self.kappa0:.10g}",
            f"moment_stat = {self.moment_stat:.10g}",
            f"moment_bound = {self.moment_bound:.10g}",
            f"d3_budget = {self.d3_budget:.10g}",
            f"d3_fraction = {self.d3_fraction:.10g}",
            f"d3_ci = [{self.d3_ci[0]:.10g}, {self.d3_ci[1]:.10g}]",
            f"d1_C = {self.d1_C:.10g}",
            f"d1_gamma0 = {self.d1_gamma0:.10g}",
            f"d1_fraction = {self.d1_fraction:.10g}",
            f"d1_ci = [{self.d1_ci[0]:.10g}, {self.d1_ci[1]:.10g}]",
            f"weighted_C = {self.weighted_C:.10g}",
            f"median_weighted_nonincreasing = {self.median_weighted_nonincreasing}",
            f"n_blowup = {self.n_blowup}",
            f"verdict = {self.verdict}",
        ]


def default_h_budget(cfg):
    """Scale for ``int |h|_U^2 dt``: ``rho^2 max_low(h_k / (V q_k^2)) |r0|_V^2 / l1``.

    ``|h|_U^2 <= rho^2 max_low(h_k / (V q_k^2)) |P_N r|_V^2``, and a path
    contracting at rate ``l1`` has ``int |r|_V^2 dt <= |r0|_V^2 / l1``.
    """
    sim = cfg.sim
    lat = sim.lattice
    n = cfg.n_low
    if n == 0 or cfg.rho == 0:
        return 0.0
    l1 = sim.constants()[2]
    r0 = float(vsq_amp(cfg.x0_tilde.amp - cfg.x0.amp, lat))
    c = np.max(lat.helm[:n] / (VOLUME * sim.noise.q[:n] ** 2))
    return float(cfg.rho**2 * c * r0 / max(l1, 1e-12))


def contraction_experiment(cfg, n_paths, negative_control=False, window=None, varpi=0.25,
                           theta=None, h_budget=None, seed=0, threads=1):
    """Ensemble statistics of ``r = u_tilde - u`` for a coupled configuration.

    ``negative_control`` runs the follower with its own noise and no nudging.
    The decay rate of ``E|r|_V^2`` is fitted on ``window`` (default: the
    second half of the horizon).
    """
    if h_budget is None:
        h_budget = default_h_budget(cfg)
    if negative_control:
        cfg = CouplingConfig(0.0, cfg.sim, cfg.x0, cfg.x0_tilde, cfg.stabilizing)
    sim = cfg.sim
    run = run_coupled(cfg, n_paths, independent=negative_control, threads=threads)
    alive = run.alive
    T = run.t[-1]
    window = (0.5 * T, T) if window is None else window
    r = run.r_vsq[:, alive]
    fit = fit_mean_decay(run.t, r, window, seed=seed)
    l, _, l1 = sim.constants()

    r0 = r[0].max()
    if theta is not None:
        kappa0 = 4.0 * varpi * float(getattr(theta, "theta", theta)) ** 2 / l
    else:
        from .integrator import kappa_limit
        kappa0 = min(kappa_limit(sim), 1e6)
    w0 = float(run.leader_wsq[0, 0])
    stat = np.max(np.mean((np.exp(run.t)[:, None] * r + run.r_int_weighted[:, alive]) ** varpi, axis=1))
    bound = 2.0 * r0**varpi * np.exp(kappa0 * w0)

    n_alive = int(alive.sum())
    d3 = int(np.count_nonzero(run.h_sq_integral[-1, alive] <= h_budget))
    rate = fit.rate if np.isfinite(fit.rate) and fit.rate > 0 else 0.0
    gamma0 = 0.25 * rate
    C = 2.0 * np.sqrt(r0) if r0 > 0 else 1.0
    exceed = np.sqrt(r) >= C * np.exp(-gamma0 * run.t)[:, None]
    d1_counts = exceed.sum(axis=1)
    worst = int(d1_counts.max())

    sig = stability_weight(run.t, run.follower_wsq[:, alive], 0.0)[1]
    weighted = np.mean(sig * r, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cs = np.where((run.t > 0) & (r0 > 0), np.log(np.maximum(weighted, 1e-300) / r0) / run.t, -np.inf)
    weighted_C = float(np.max(cs[1:])) if len(cs) > 1 else 0.0

    med = np.median(np.exp(run.t)[:, None] * r, axis=1)
    late = run.t >= 1.0
    nonincreasing = bool(np.all(np.diff(med[late]) <= 1e-12 * max(med[late].max(), 1e-300)))

    return ContractionReport(
        run=run, fit=fit, l1=l1, varpi=varpi, kappa0=float(kappa0), moment_stat=float(stat),
        moment_bound=float(bound), d3_budget=float(h_budget), d3_fraction=d3 / max(n_alive, 1),
        d3_ci=wilson(d3, n_alive), d1_C=float(C), d1_gamma0=float(gamma0),
        d1_fraction=worst / max(n_alive, 1), d1_ci=wilson(worst, n_alive), weighted_C=weighted_C,
        median_weighted_nonincreasing=nonincreasing, n_blowup=n_paths - n_alive,
        negative_control=negative_control,
    )


@dataclass(frozen=True)
class ScanRow:
    n_low: int
    l1: float
    rate: float
    ci: tuple
    verdict: str


def scan_n_low(cfg, n_paths, values, scale=None, threads=1):
    """Contraction rate as a function of the number of forced (and nudged) modes.

    Each entry rebuilds a ``low`` noise profile on the first ``n`` modes with
    amplitude ``scale`` (default: the largest current amplitude).
    """
    from .noise import make_noise

    sim = cfg.sim
    nz = sim.noise
    scale = float(np.max(nz.q)) if scale is None else scale
    rows = []
    for n in values:
        noise = make_noise(sim.lattice, "low", scale, nz.eps, nz.sat, int(n))
        c = CouplingConfig(cfg.rho, sim.replace(noise=noise), cfg.x0, cfg.x0_tilde, cfg.stabilizing)
        rep = contraction_experiment(c, n_paths, threads=threads)
        rows.append(ScanRow(int(n), rep.l1, rep.fit.rate, rep.fit.ci, rep.verdict))
    return rows
