"""Truncated Fourier lattice on the torus [0, 2*pi)^2 and divergence-free fields.

A velocity field is stored as one complex *stream amplitude* per retained
wavevector ``k``::

    u(x) = sum_k a_k * (i k_perp / |k|) * exp(i k.x),    k_perp = (-k2, k1)

The basis vectors ``i k_perp/|k|`` have unit length and are orthogonal to
``k``, so every field is divergence free by construction, and ``u`` is real
exactly when ``a_{-k} = conj(a_k)``.  In terms of a stream function psi,
``a_k = |k| psi_k``.

Modes are ordered by ``|k|^2``; inside a shell each canonical wavevector
(``k2 > 0`` or ``k2 == 0, k1 > 0``) is immediately followed by its negative.
Even slots therefore hold independent amplitudes and odd slots their
conjugates.

All inner products carry the volume factor ``(2*pi)^2`` explicitly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import InvalidCutoff, LatticeMismatch

VOLUME = (2.0 * np.pi) ** 2


@dataclass(frozen=True, eq=False)
class Lattice:
    """Wavevector set ``0 < max(|k1|, |k2|) <= k_max`` with per-mode tables.

    Attributes
    ----------
    modes : (M, 2) int array
    ksq : |k|^2
    helm : 1 + alpha |k|^2, the multiplier of ``u - alpha*Lap(u)``
    lam : 1 + (1 + alpha |k|^2) |k|^2, eigenvalues of ``(v,e)_W = lam (v,e)_V``
    grid_n : physical grid size, at least ``3 (k_max + 1)`` so that products of
        up to three lattice fields are integrated and de-aliased exactly.
    """

    k_max: int
    alpha: float
    modes: np.ndarray
    ksq: np.ndarray
    kabs: np.ndarray
    helm: np.ndarray
    lam: np.ndarray
    grid_n: int
    _rows: np.ndarray = field(repr=False)
    _cols: np.ndarray = field(repr=False)

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def poincare_sq(self):
        """P^2 = 1 / min |k|^2 (equal to 1 on the unit-periodic torus)."""
        return float(1.0 / self.ksq.min())

    @property
    def lambda1(self):
        return float(self.lam.min())

    @property
    def wmult(self):
        """Per-mode multiplier of the squared W-norm: helm * lam."""
        return self.helm * self.lam

    @property
    def stokes_constant_sq(self):
        """K^2: squared norm of (I - alpha Lap)^{-1} as a map V -> W."""
        return float(np.max(self.lam / self.helm**2))

    @property
    def stokes_constant(self):
        return float(np.sqrt(self.stokes_constant_sq))

    def same_as(self, other):
        return self is other or (
            self.k_max == other.k_max and self.alpha == other.alpha and self.grid_n == other.grid_n
        )

    def check(self, *fields_):
        for f in fields_:
            if not self.same_as(f.lattice):
                raise LatticeMismatch(
                    f"field lives on (k_max={f.lattice.k_max}, alpha={f.lattice.alpha}), "
                    f"expected (k_max={self.k_max}, alpha={self.alpha})"
                )

    def shell_count(self, max_ksq):
        """Number of leading modes with |k|^2 <= max_ksq (a valid n_low)."""
        return int(np.count_nonzero(self.ksq <= max_ksq))

    # -- transforms -------------------------------------------------------
    # Coefficients are placed on the rfft2 half plane (k2 >= 0).  Modes with
    # k2 < 0 are implied by Hermitian symmetry.

    def to_grid(self, coef, out_dtype=float):
        """Inverse transform of per-mode coefficients ``(..., M) -> (..., n, n)``."""
        n = self.grid_n
        coef = np.asarray(coef)
        spec = np.zeros(coef.shape[:-1] + (n, n // 2 + 1), dtype=complex)
        keep = self.modes[:, 1] >= 0
        spec[..., self._rows[keep], self._cols[keep]] = coef[..., keep]
        return scipy.fft.irfft2(spec, s=(n, n), norm="forward")

    def from_grid(self, values):
        """Forward transform ``(..., n, n) -> (..., M)`` restricted to the lattice."""
        spec = scipy.fft.rfft2(values, norm="forward")
        out = spec[..., self._rows, self._cols]
        neg = self.modes[:, 1] < 0
        out[..., neg] = np.conj(out[..., neg])
        return out

    def grid(self, n=None):
        n = self.grid_n if n is None else n
        x = 2.0 * np.pi * np.arange(n) / n
        return np.meshgrid(x, x, indexing="ij")


def build_lattice(k_max, alpha, grid_n=None):
    """Construct the truncated lattice for cutoff ``k_max`` and length scale ``alpha``."""
    if int(k_max) != k_max or k_max < 1:
        raise InvalidCutoff(f"k_max must be an integer >= 1, got {k_max!r}")
    if not alpha > 0:
        raise InvalidCutoff(f"alpha must be positive, got {alpha!r}")
    k_max = int(k_max)
    alpha = float(alpha)

    canon = [
        (k1, k2)
        for k1 in range(-k_max, k_max + 1)
        for k2 in range(0, k_max + 1)
        if k2 > 0 or k1 > 0
    ]
    canon.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    modes = np.array([m for k in canon for m in (k, (-k[0], -k[1]))], dtype=int)

    ksq = (modes**2).sum(axis=1).astype(float)
    helm = 1.0 + alpha * ksq
    lam = 1.0 + helm * ksq

    min_n = 3 * (k_max + 1)
    if grid_n is None:
        grid_n = scipy.fft.next_fast_len(min_n, real=True)
    elif grid_n < min_n:
        raise InvalidCutoff(f"grid_n={grid_n} cannot de-alias k_max={k_max} (need >= {min_n})")

    k1, k2 = modes[:, 0], modes[:, 1]
    rows = np.where(k2 >= 0, k1, -k1) % grid_n
    cols = np.abs(k2)

    for arr in (modes, ksq, helm, lam, rows, cols):
        arr.flags.writeable = False
    kabs = np.sqrt(ksq)
    kabs.flags.writeable = False
    return Lattice(k_max, alpha, modes, ksq, kabs, helm, lam, int(grid_n), rows, cols)


@dataclass(frozen=True, eq=False)
class SpectralVelocity:
    """Divergence-free velocity: stream amplitudes ``amp[..., M]`` on a lattice.

    Leading axes of ``amp`` index an ensemble of fields; all operators in the
    package broadcast over them.
    """

    amp: np.ndarray
    lattice: Lattice

    def __post_init__(self):
        amp = np.array(self.amp, dtype=complex)
        if amp.shape[-1:] != (self.lattice.n_modes,):
            raise LatticeMismatch(
                f"amplitude length {amp.shape[-1:]} does not match {self.lattice.n_modes} modes"
            )
        amp.flags.writeable = False
        object.__setattr__(self, "amp", amp)

    # construction helpers
    @classmethod
    def zeros(cls, lat, batch=()):
        return cls(np.zeros(tuple(batch) + (lat.n_modes,), dtype=complex), lat)

    @classmethod
    def mode(cls, lat, k, amplitude):
        """Single real shear wave: amplitude on ``k`` and its conjugate on ``-k``."""
        k = tuple(int(c) for c in k)
        idx = _mode_index(lat, k)
        amp = np.zeros(lat.n_modes, dtype=complex)
        amp[idx] = amplitude
        amp[idx ^ 1] = np.conj(amplitude)
        return cls(amp, lat)

    @classmethod
    def from_half(cls, lat, half):
        """Build a real field from the canonical (even-slot) amplitudes."""
        half = np.asarray(half, dtype=complex)
        amp = np.empty(half.shape[:-1] + (lat.n_modes,), dtype=complex)
        amp[..., 0::2] = half
        amp[..., 1::2] = np.conj(half)
        return cls(amp, lat)

    @classmethod
    def random(cls, lat, rng, slope=1.0, batch=(), max_ksq=None):
        """Random real field with amplitude spectrum ``|k|^-slope``."""
        shape = tuple(batch) + (lat.n_modes // 2,)
        half = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        kabs = lat.kabs[0::2]
        half = half * kabs**-slope
        if max_ksq is not None:
            half = np.where(lat.ksq[0::2] <= max_ksq, half, 0.0)
        return cls.from_half(lat, half)

    # arithmetic
    def __add__(self, other):
        self.lattice.check(other)
        return SpectralVelocity(self.amp + other.amp, self.lattice)

    def __sub__(self, other):
        self.lattice.check(other)
        return SpectralVelocity(self.amp - other.amp, self.lattice)

    def __mul__(self, c):
        return SpectralVelocity(self.amp * c, self.lattice)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralVelocity(-self.amp, self.lattice)

    def __getitem__(self, idx):
        return SpectralVelocity(self.amp[idx], self.lattice)

    # representation checks
    def is_real(self, atol=0.0):
        d = np.abs(self.amp[..., 1::2] - np.conj(self.amp[..., 0::2]))
        return bool(np.all(d <= atol))

    def velocity_coefficients(self):
        """Cartesian Fourier coefficients ``(2, ..., M)`` of ``(u1, u2)``."""
        lat = self.lattice
        e1 = -1j * lat.modes[:, 1] / lat.kabs
        e2 = 1j * lat.modes[:, 0] / lat.kabs
        return np.stack([e1 * self.amp, e2 * self.amp])

    def velocity(self, n=None):
        """Physical velocity components ``(2, ..., n, n)`` on the de-aliased grid."""
        lat = self.lattice
        c = self.velocity_coefficients()
        if n is None:
            return lat.to_grid(c)
        return _synthesize(lat, c, n)

    def helmholtz(self):
        """The field ``u - alpha*Lap(u)`` (multiplies each amplitude by 1 + alpha |k|^2)."""
        return SpectralVelocity(self.amp * self.lattice.helm, self.lattice)


def _mode_index(lat, k):
    hit = np.flatnonzero((lat.modes[:, 0] == k[0]) & (lat.modes[:, 1] == k[1]))
    if hit.size == 0:
        raise LatticeMismatch(f"wavevector {k} is not on the lattice (k_max={lat.k_max})")
    return int(hit[0])


def mode_index(lat, k):
    """Position of wavevector ``k`` in the lattice ordering."""
    return _mode_index(lat, tuple(int(c) for c in k))


def _synthesize(lat, coef, n):
    """Evaluate per-mode coefficients on an arbitrary ``n x n`` grid."""
    spec = np.zeros(coef.shape[:-1] + (n, n // 2 + 1), dtype=complex)
    keep = lat.modes[:, 1] >= 0
    rows = lat.modes[keep, 0] % n
    cols = lat.modes[keep, 1]
    if n <= 2 * lat.k_max:
        raise InvalidCutoff(f"grid of size {n} cannot represent k_max={lat.k_max}")
    spec[..., rows, cols] = coef[..., keep]
    return scipy.fft.irfft2(spec, s=(n, n), norm="forward")
