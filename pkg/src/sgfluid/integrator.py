"""Semi-implicit Euler-Maruyama integration of the Galerkin system.

Per mode, in V-coordinates (``h_k = 1 + alpha |k|^2``)::

    a' = [a - dt B_k(a)/h_k + q_k G(a) dW_k / h_k] / (1 + dt nu |k|^2 / h_k)

The viscous term is implicit, the nonlinearity and the noise explicit.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import rng as rngmod
from .errors import BlowUpError, InsufficientResolution, InvalidParameter
from .lattice import VOLUME, SpectralVelocity
from .noise import WienerIncrement, condition_terms, increment_from_normals
from .operators import h1sq_amp, nonlinearity_amp, norms, vsq_amp, wsq_amp


class StabilityError(BlowUpError):
    """The explicit nonlinearity left its step-size bound ``dt |u|_W <= c_cfl``."""


@dataclass(frozen=True, eq=False)
class SimConfig:
    lattice: object
    nu: float
    dt: float
    t_end: float
    noise: object = None
    record_every: object = 1  # int, or None for the terminal state only
    seed: int = 0
    c_cfl: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter(f"dt must be > 0, got {self.dt}")
        if self.t_end < 0:
            raise InvalidParameter(f"t_end must be >= 0, got {self.t_end}")
        if self.nu < 0:
            raise InvalidParameter(f"nu must be >= 0, got {self.nu}")
        if self.record_every is not None and int(self.record_every) < 1:
            raise InvalidParameter("record_every must be a positive integer or None")
        if self.noise is not None:
            self.lattice.check(self.noise)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def R(self):
        return 0.0 if self.noise is None else self.noise.R

    @property
    def L_phi(self):
        return 0.0 if self.noise is None else self.noise.L_phi

    def constants(self):
        """(l, l0, l1) of the energy and contraction estimates."""
        return condition_terms(self.lattice, self.nu, self.R, self.L_phi)

    @property
    def moment_bound(self):
        """l0 R / l, the stationary bound on E|u|_W^2."""
        l, l0, _ = self.constants()
        return l0 * self.R / l

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)


class Stepper:
    """Precomputed per-mode factors for one SimConfig."""

    def __init__(self, cfg):
        lat = cfg.lattice
        self.cfg = cfg
        self.lat = lat
        self.dt = cfg.dt
        self.inv_helm = 1.0 / lat.helm
        self.denom = 1.0 / (1.0 + cfg.dt * cfg.nu * lat.ksq / lat.helm)
        self.noise = cfg.noise
        self.forcing_scale = None if cfg.noise is None else cfg.noise.q / lat.helm

    def drift_part(self, amp):
        return amp - self.dt * nonlinearity_amp(amp, self.lat) * self.inv_helm

    def noise_part(self, amp, dW):
        """Velocity increment ``(I - alpha Lap)^{-1} phi(u) dW`` and the gain used."""
        g = self.noise.gain_amp(amp)
        return self.forcing_scale * g[..., None] * dW, g

    def advance(self, amp, dW=None):
        rhs = self.drift_part(amp)
        if self.noise is not None and dW is not None:
            rhs = rhs + self.noise_part(amp, dW)[0]
        return rhs * self.denom


def step(u, cfg, xi=None):
    """One step of the Galerkin system; ``xi`` is a WienerIncrement (ignored without noise)."""
    cfg.lattice.check(u)
    dW = None if xi is None else (xi.dW if isinstance(xi, WienerIncrement) else np.asarray(xi))
    out = Stepper(cfg).advance(u.amp, dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(cfg.dt, np.sqrt(np.max(wsq_amp(u.amp, cfg.lattice))))
    return SpectralVelocity(out, cfg.lattice)


@dataclass
class Trajectory:
    """Energy records of one path (1-D arrays) or an ensemble (``(n_records, n_paths)``)."""

    t: np.ndarray
    l2sq: np.ndarray
    h1sq: np.ndarray
    vsq: np.ndarray
    starsq: np.ndarray
    wsq: np.ndarray
    E_f: np.ndarray
    drift_ref: np.ndarray
    final: SpectralVelocity
    dt: float
    record_every: object
    martingale: np.ndarray = None  # per step: 2 (phi(u_n) dW_n, u_n)
    ito: np.ndarray = None  # per step: realized |(I - a Lap)^-1 phi(u_n) dW_n|_V^2
    ito_expected: np.ndarray = None  # per step: E of the above given u_n
    checkpoints: dict = field(default_factory=dict)  # step index -> amp array
    alive: np.ndarray = None

    COLUMNS = ("t", "l2sq", "h1sq", "vsq", "starsq", "wsq", "E_f", "drift_ref")

    def rows(self, path=None):
        cols = [getattr(self, c) for c in self.COLUMNS[1:]]
        if cols[0].ndim == 2:
            p = 0 if path is None else path
            cols = [c[:, p] for c in cols]
        return np.column_stack([self.t] + cols)


def _record_steps(n_steps, record_every):
    if record_every is None:
        return [n_steps]
    steps = list(range(0, n_steps + 1, int(record_every)))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def _run_chunk(amp0, cfg, generators, per_step, checkpoint_steps, on_blowup):
    lat = cfg.lattice
    stepper = Stepper(cfg)
    n_steps = cfg.n_steps
    P = amp0.shape[0]
    amp = amp0.copy()
    record_at = set(_record_steps(n_steps, cfg.record_every))
    ck_at = set(checkpoint_steps or ())
    l, l0, _ = cfg.constants()

    recs = []
    ckpts = {}
    wsq_prev = wsq_amp(amp, lat)
    integral = np.zeros(P)
    alive = np.ones(P, dtype=bool)
    mart = ito = ito_exp = None
    if per_step:
        mart = np.zeros((n_steps, P))
        ito = np.zeros((n_steps, P))
        ito_exp = np.zeros((n_steps, P))
    normals = None
    if cfg.noise is not None and generators is not None:
        normals = rngmod.NormalBlocks(generators, (2, lat.n_modes // 2))

    def record(n):
        nb = norms(SpectralVelocity(amp, lat))
        recs.append((n * cfg.dt, nb.l2sq, nb.h1sq, nb.vsq, nb.starsq, nb.wsq, nb.wsq + 0.5 * l * integral))

    if 0 in record_at:
        record(0)
    if 0 in ck_at:
        ckpts[0] = amp.copy()

    for n in range(n_steps):
        rhs = stepper.drift_part(amp)
        if normals is not None:
            dW = increment_from_normals(normals.next(), cfg.dt)
            inc, g = stepper.noise_part(amp, dW)
            rhs = rhs + inc
            if per_step:
                forcing = cfg.noise.q * g[:, None] * dW
                mart[n] = 2.0 * VOLUME * np.real(np.sum(forcing * np.conj(amp), axis=-1))
                ito[n] = vsq_amp(inc, lat)
                ito_exp[n] = VOLUME * g**2 * np.sum(cfg.noise.q**2 / lat.helm) * cfg.dt
        new = rhs * stepper.denom

        wsq_new = wsq_amp(new, lat)
        bad = ~np.isfinite(wsq_new)
        if cfg.c_cfl is not None:
            bad |= cfg.dt * np.sqrt(np.where(np.isfinite(wsq_new), wsq_new, 0.0)) > cfg.c_cfl
        bad &= alive
        if bad.any():
            if on_blowup == "raise":
                p = int(np.flatnonzero(bad)[0])
                last = float(np.sqrt(wsq_prev[p]))
                if np.isfinite(wsq_new[p]):
                    raise StabilityError((n + 1) * cfg.dt, last)
                raise BlowUpError((n + 1) * cfg.dt, last)
            alive &= ~bad
            new[bad] = 0.0
            wsq_new = np.where(bad, 0.0, wsq_new)

        integral += 0.5 * cfg.dt * (wsq_prev + wsq_new)
        amp, wsq_prev = new, wsq_new
        if n + 1 in record_at:
            record(n + 1)
        if n + 1 in ck_at:
            ckpts[n + 1] = amp.copy()

    cols = list(zip(*recs))
    arrays = [np.array(c) for c in cols]
    return arrays, amp, ckpts, mart, ito, ito_exp, alive


def run_paths(amp0, cfg, n_paths, namespace=rngmod.NS_SIMULATE, per_step=False,
              checkpoint_steps=None, on_blowup="raise", threads=1, first_index=0):
    """Integrate ``n_paths`` trajectories from ``amp0`` (shape ``(M,)`` or ``(n_paths, M)``).

    Path ``i`` draws from stream ``(cfg.seed, namespace, first_index + i)``.
    Paths are split into ``threads`` contiguous chunks run concurrently; since
    every path owns its stream the result does not depend on the split.
    """
    lat = cfg.lattice
    amp0 = np.broadcast_to(np.asarray(amp0, dtype=complex), (n_paths, lat.n_modes))
    bounds = np.linspace(0, n_paths, max(1, min(threads, n_paths)) + 1).astype(int)

    def work(lo, hi):
        gens = None
        if cfg.noise is not None:
            gens = rngmod.streams(cfg.seed, namespace, hi - lo, start=first_index + lo)
        return _run_chunk(amp0[lo:hi], cfg, gens, per_step, checkpoint_steps, on_blowup)

    spans = list(zip(bounds[:-1], bounds[1:]))
    if len(spans) == 1:
        parts = [work(*spans[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as ex:
            parts = list(ex.map(lambda s: work(*s), spans))

    arrays = [np.concatenate([p[0][i] for p in parts], axis=-1) if i else parts[0][0][0]
              for i in range(7)]
    final = np.concatenate([p[1] for p in parts])
    ckpts = {k: np.concatenate([p[2][k] for p in parts]) for k in parts[0][2]}
    extra = [None if parts[0][j] is None else np.concatenate([p[j] for p in parts], axis=-1)
             for j in (3, 4, 5)]
    alive = np.concatenate([p[6] for p in parts])

    t = np.asarray(arrays[0], dtype=float)
    _, l0, _ = cfg.constants()
    drift = l0 * cfg.R * t
    return Trajectory(
        t=t, l2sq=arrays[1], h1sq=arrays[2], vsq=arrays[3], starsq=arrays[4], wsq=arrays[5],
        E_f=arrays[6], drift_ref=np.broadcast_to(drift[:, None], arrays[5].shape).copy(),
        final=SpectralVelocity(final, lat), dt=cfg.dt, record_every=cfg.record_every,
        martingale=extra[0], ito=extra[1], ito_expected=extra[2], checkpoints=ckpts, alive=alive,
    )


def _squeeze(traj):
    for name in Trajectory.COLUMNS[1:] + ("martingale", "ito", "ito_expected"):
        v = getattr(traj, name)
        if v is not None:
            setattr(traj, name, v[:, 0])
    traj.final = traj.final[0]
    traj.checkpoints = {k: v[0] for k, v in traj.checkpoints.items()}
    return traj


def simulate(u0, cfg, path=0, namespace=rngmod.NS_SIMULATE, per_step=False):
    """One trajectory from ``u0``; deterministic given ``(cfg.seed, namespace, path)``.

    Raises BlowUpError (or its StabilityError subclass) on divergence.
    """
    cfg.lattice.check(u0)
    if not np.isfinite(norms(u0).wsq):
        raise InvalidParameter("initial condition has infinite W-norm")
    traj = run_paths(u0.amp, cfg, 1, namespace=namespace, per_step=per_step, first_index=path)
    return _squeeze(traj)


def simulate_ensemble(u0, cfg, n_paths, namespace=rngmod.NS_SIMULATE, per_step=False,
                      threads=1, on_blowup="raise"):
    """Ensemble of independent trajectories sharing ``u0``; arrays are ``(n_records, n_paths)``."""
    cfg.lattice.check(u0)
    return run_paths(u0.amp, cfg, n_paths, namespace=namespace, per_step=per_step,
                     threads=threads, on_blowup=on_blowup)


# -- diagnostics ------------------------------------------------------------


@dataclass(frozen=True)
class ItoResidual:
    mean_abs: float
    mean_signed: float
    ito_rate: float  # realized quadratic variation per unit time, path average
    ito_rate_expected: float
    ito_bound: float  # K^2 R / lambda1


def ito_residual(traj, cfg):
    """Per-step residual of the discrete energy balance for ``|u|_V^2``.

    ``res_n = vsq_{n+1} - vsq_n + 2 nu |u_n|^2 dt - M_n - Q_n`` with ``M_n`` the
    martingale increment and ``Q_n`` the realized quadratic-variation (Ito)
    term.
    """
    if traj.record_every != 1:
        raise InsufficientResolution("ito_residual needs a trajectory recorded at every step")
    vsq, h1 = np.atleast_2d(traj.vsq.T).T, np.atleast_2d(traj.h1sq.T).T
    res = vsq[1:] - vsq[:-1] + 2.0 * cfg.nu * h1[:-1] * cfg.dt
    lat = cfg.lattice
    bound = lat.stokes_constant_sq * cfg.R / lat.lambda1
    if traj.martingale is None:
        if cfg.noise is not None:
            raise InsufficientResolution("noisy trajectory lacks per-step martingale records")
        return ItoResidual(float(np.mean(np.abs(res))), float(np.mean(res)), 0.0, 0.0, bound)
    mart = np.atleast_2d(traj.martingale.T).T
    ito = np.atleast_2d(traj.ito.T).T
    res = res - mart - ito
    T = len(res) * cfg.dt
    rate = float(np.mean(ito.sum(axis=0)) / T)
    rate_exp = float(np.mean(np.atleast_2d(traj.ito_expected.T).T.sum(axis=0)) / T)
    return ItoResidual(float(np.mean(np.abs(res))), float(np.mean(res)), rate, rate_exp, bound)


@dataclass(frozen=True)
class LadderReport:
    dts: tuple
    mean_abs: tuple
    exponent: float
    ito_rates: tuple
    ito_rate_expected: tuple
    ito_bound: float


def ito_ladder(u0, cfg, dts=(1e-2, 5e-3, 2.5e-3), n_paths=64, namespace=rngmod.NS_SIMULATE):
    """Residual scaling across a step-size ladder; the exponent is the log-log slope."""
    reports = []
    for dt in dts:
        c = cfg.replace(dt=dt, record_every=1)
        traj = simulate_ensemble(u0, c, n_paths, namespace=namespace, per_step=cfg.noise is not None)
        reports.append(ito_residual(traj, c))
    m = np.array([r.mean_abs for r in reports])
    slope = np.polyfit(np.log(dts), np.log(m), 1)[0]
    return LadderReport(tuple(dts), tuple(m), float(slope), tuple(r.ito_rate for r in reports),
                        tuple(r.ito_rate_expected for r in reports), reports[0].ito_bound)


@dataclass(frozen=True)
class TailEstimate:
    kappa0: float
    estimate: float
    std_error: float
    bound: float
    passed: bool


def kappa_limit(cfg):
    """kappa/2 with kappa = l / (c R), c the exact quadratic-variation constant of the noise."""
    if cfg.noise is None or cfg.R == 0:
        return np.inf
    l, _, _ = cfg.constants()
    return 0.5 * l / (cfg.noise.qv_constant() * cfg.R)


def kappa_grid(cfg, fractions=(0.125, 0.25, 0.5, 1.0)):
    lim = kappa_limit(cfg)
    if not np.isfinite(lim):
        lim = 1.0
    return tuple(f * lim for f in fractions)


def energy_tail(traj, kappa0, cfg, kappa_max=None):
    """Empirical ``E exp(kappa0 sup_t (E_u(t) - l0 R t))`` against ``2 exp(kappa0 |u0|_W^2)``.

    ``traj`` is an ensemble trajectory with a common initial state; the
    supremum runs over its record times.  ``kappa0`` may be a scalar or a
    sequence; one TailEstimate is returned per value.
    """
    kmax = kappa_limit(cfg) if kappa_max is None else kappa_max
    scalar = np.ndim(kappa0) == 0
    out = []
    E = np.atleast_2d(traj.E_f.T).T
    D = np.atleast_2d(traj.drift_ref.T).T
    w0 = float(np.atleast_1d(traj.wsq[0]).ravel()[0])
    S = np.max(E - D, axis=0)
    for k0 in np.atleast_1d(kappa0):
        if not 0 <= k0 <= kmax * (1 + 1e-12):
            raise InvalidParameter(f"kappa0={k0} outside [0, {kmax}]")
        vals = np.exp(k0 * S)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        bound = 2.0 * np.exp(k0 * w0)
        out.append(TailEstimate(float(k0), est, se, bound, bool(est <= bound + 2.0 * se)))
    return out[0] if scalar else out


def stability_weight(t, wsq, t_start=0.0):
    """sigma(l, t_start) = exp(-int_{t_start}^l |X2(s)|_W^2 ds) on the record times l >= t_start."""
    t = np.asarray(t, dtype=float)
    wsq = np.asarray(wsq, dtype=float)
    sel = t >= t_start - 1e-12
    tt, ww = t[sel], wsq[sel]
    integral = cumulative_trapezoid(ww, tt, axis=0, initial=0.0)
    return tt, np.exp(-integral)
