"""Continuous- and discrete-time LTI primitives.

Rational transfer functions in s, IIR filters in z, frequency-response
evaluation, stability tests, frequency-matched discretization, and
difference-equation simulation. Identification, controller synthesis and
the virtual plant are all built on top of this module.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import (
    FitFailureError,
    InvalidParameterError,
    PoleOnAxisError,
    RateMismatchError,
)

TWO_PI = 2.0 * np.pi

SIGNAL_UNITS = ("N", "mA", "V", "m", "dimensionless")

#: |den(s)| below this at an evaluation point counts as a pole on the axis.
POLE_TOL = 1e-12


def _coeffs(c, name):
    arr = np.atleast_1d(np.asarray(c, dtype=float)).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidParameterError(f"{name} must be a non-empty 1-D coefficient array")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} coefficients must be finite")
    return arr


def _trim_leading_zeros(c):
    i = 0
    while i < c.size - 1 and c[i] == 0.0:
        i += 1
    return c[i:]


@dataclass(frozen=True)
class RationalTF:
    """Continuous-time rational transfer function.

    Coefficients are real, in descending powers of s. The denominator's
    leading coefficient must be nonzero. Instances are immutable;
    arithmetic returns new objects.
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _trim_leading_zeros(_coeffs(self.num, "num"))
        den = _coeffs(self.den, "den")
        if den[0] == 0.0:
            raise InvalidParameterError("den leading coefficient must be nonzero")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def constant(cls, gain):
        return cls(np.array([float(gain)]), np.array([1.0]))

    def __call__(self, s):
        """Evaluate at complex s (scalar or array); no pole guard."""
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def __mul__(self, other):
        if isinstance(other, RationalTF):
            return RationalTF(np.polymul(self.num, other.num),
                              np.polymul(self.den, other.den))
        return RationalTF(self.num * float(other), self.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, RationalTF):
            return RationalTF(np.polymul(self.num, other.den),
                              np.polymul(self.den, other.num))
        return RationalTF(self.num / float(other), self.den)

    def __add__(self, other):
        if not isinstance(other, RationalTF):
            other = RationalTF.constant(other)
        num = np.polyadd(np.polymul(self.num, other.den),
                         np.polymul(other.num, self.den))
        return RationalTF(num, np.polymul(self.den, other.den))

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, RationalTF):
            other = RationalTF.constant(other)
        num = np.polysub(np.polymul(self.num, other.den),
                         np.polymul(other.num, self.den))
        return RationalTF(num, np.polymul(self.den, other.den))

    def __rsub__(self, other):
        return RationalTF.constant(other) - self

    def dc_gain(self):
        return self.num[-1] / self.den[-1]

    def to_json(self):
        return json.dumps({"num": self.num.tolist(), "den": self.den.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["num"], float), np.asarray(d["den"], float))


@dataclass(frozen=True)
class DiscreteFilter:
    """IIR filter: feedforward b, feedback a (a[0] normalized to 1), rate fs."""

    b: np.ndarray
    a: np.ndarray
    fs: float

    def __post_init__(self):
        b = _coeffs(self.b, "b")
        a = _coeffs(self.a, "a")
        if a[0] == 0.0:
            raise InvalidParameterError("a[0] must be nonzero")
        if a[0] != 1.0:
            b = b / a[0]
            a = a / a[0]
        if not self.fs > 0:
            raise InvalidParameterError("fs must be positive")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "fs", float(self.fs))

    def poles(self):
        if self.a.size < 2:
            return np.array([], dtype=complex)
        return np.roots(self.a)

    def response_at(self, freqs_hz):
        """Complex response on the unit circle at the given frequencies (Hz)."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
        if np.any(f < 0) or np.any(f > self.fs / 2):
            raise InvalidParameterError("frequencies must lie in [0, fs/2]")
        _, h = signal.freqz(self.b, self.a, worN=f, fs=self.fs)
        return h

    def scaled(self, gain):
        return DiscreteFilter(self.b * float(gain), self.a.copy(), self.fs)

    def to_json(self):
        return json.dumps({"b": self.b.tolist(), "a": self.a.tolist(), "fs": self.fs})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["b"], float), np.asarray(d["a"], float), float(d["fs"]))

    @classmethod
    def identity(cls, fs):
        return cls(np.array([1.0]), np.array([1.0]), fs)


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex response sampled at strictly increasing positive frequencies."""

    freqs_hz: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs_hz, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=complex))
        if f.shape != v.shape or f.ndim != 1:
            raise InvalidParameterError("freqs and values must be matching 1-D arrays")
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise InvalidParameterError("frequencies must be strictly increasing and > 0")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "values", v)

    @property
    def points(self):
        return list(zip(self.freqs_hz.tolist(), self.values.tolist()))

    def magnitude(self):
        return np.abs(self.values)

    def magnitude_db(self):
        return 20.0 * np.log10(np.abs(self.values))

    def phase_deg(self):
        return np.degrees(np.angle(self.values))

    def covers(self, band):
        lo, hi = band
        return self.freqs_hz[0] <= lo * (1 + 1e-9) and self.freqs_hz[-1] >= hi * (1 - 1e-9)


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled real time series with a unit label."""

    samples: np.ndarray
    fs: float
    unit: str = "dimensionless"

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.samples, dtype=float))
        if x.ndim != 1:
            raise InvalidParameterError("samples must be 1-D")
        if not np.all(np.isfinite(x)):
            raise InvalidParameterError("samples must be finite")
        if not self.fs > 0:
            raise InvalidParameterError("fs must be positive")
        if self.unit not in SIGNAL_UNITS:
            raise InvalidParameterError(f"unit must be one of {SIGNAL_UNITS}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "fs", float(self.fs))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.fs

    def time(self):
        return np.arange(self.samples.size) / self.fs


def make_second_order(gain, fn, zeta):
    """Unity-structure second-order system k*wn^2 / (s^2 + 2*zeta*wn*s + wn^2)."""
    if not (fn > 0 and zeta > 0):
        raise InvalidParameterError("fn and zeta must be positive")
    wn = TWO_PI * fn
    return RationalTF(np.array([gain * wn * wn]),
                      np.array([1.0, 2.0 * zeta * wn, wn * wn]))


def freq_response(tf, freqs_hz):
    """Evaluate tf at s = j*2*pi*f for strictly increasing positive freqs."""
    f = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
    if np.any(f <= 0) or np.any(np.diff(f) <= 0):
        raise InvalidParameterError("frequencies must be strictly increasing and > 0")
    s = 1j * TWO_PI * f
    den = np.polyval(tf.den, s)
    bad = np.abs(den) < POLE_TOL
    if np.any(bad):
        raise PoleOnAxisError(
            f"denominator vanishes at f={f[bad][0]:.6g} Hz (pole on the imaginary axis)")
    return FrequencyResponse(f, np.polyval(tf.num, s) / den)


def is_stable(filt):
    """True iff all poles of the discrete filter lie strictly inside the unit circle."""
    p = filt.poles()
    return bool(np.all(np.abs(p) < 1.0)) if p.size else True


def simulate_discrete(filt, input_signal):
    """Direct-form difference-equation output from zero initial state."""
    if input_signal.fs != filt.fs:
        raise RateMismatchError(
            f"input at {input_signal.fs} Hz, filter at {filt.fs} Hz")
    y = signal.lfilter(filt.b, filt.a, input_signal.samples)
    return Signal(np.asarray(y, dtype=float), filt.fs, input_signal.unit)


@dataclass(frozen=True)
class DiscretizeResult:
    """Fitted filter plus the fit residual (RMS over log-magnitude nepers
    and phase radians, stacked)."""

    filter: DiscreteFilter
    residual: float
    grid_hz: np.ndarray = field(repr=False, default=None)


def _interp_response(target, grid):
    """Resample a FrequencyResponse onto `grid` (log-mag and unwrapped phase,
    linear in log-frequency)."""
    lf_t = np.log(target.freqs_hz)
    lf_g = np.log(grid)
    logmag = np.interp(lf_g, lf_t, np.log(np.abs(target.values)))
    phase = np.interp(lf_g, lf_t, np.unwrap(np.angle(target.values)))
    return np.exp(logmag) * np.exp(1j * phase)


def _sk_initial_fit(z, h, order, iterations=8):
    """Sanathanan-Koerner iteration: linear LS on |B(z) - H*A(z)| with
    successive 1/|A| reweighting. Returns stacked [b, a1..an]."""
    nb = order + 1
    w = np.ones(z.size)
    p = None
    for _ in range(iterations):
        cols = [z ** (order - k) for k in range(nb)]
        cols += [-h * z ** (order - k) for k in range(1, order + 1)]
        A = np.array(cols).T * w[:, None]
        rhs = (h * z ** order) * w
        M = np.concatenate([A.real, A.imag])
        v = np.concatenate([rhs.real, rhs.imag])
        sol, *_ = np.linalg.lstsq(M, v, rcond=None)
        a = np.concatenate(([1.0], sol[nb:]))
        w = 1.0 / np.maximum(np.abs(np.polyval(a, z)), 1e-12)
        p = sol
    return p


#: Pole radii up to this count as marginal (clampable) rather than unstable.
_MARGINAL_RADIUS = 1.0 + 1e-6


def _numerator_ls(a, z, h, nb):
    """Best numerator for a fixed denominator (linear least squares)."""
    denom = np.polyval(a, z)
    cols = np.array([z ** (nb - 1 - k) / denom for k in range(nb)]).T
    M = np.concatenate([cols.real, cols.imag])
    v = np.concatenate([h.real, h.imag])
    b, *_ = np.linalg.lstsq(M, v, rcond=None)
    return np.concatenate([b, a[1:]])


def _stable_projection(p, z, h, nb):
    """Reflect outside poles into the unit circle and re-solve the numerator;
    used as a restart when a stable fit is required but an optimum is not."""
    a = np.concatenate(([1.0], p[nb:]))
    roots = np.roots(a)
    mags = np.abs(roots)
    roots = np.where(mags > 1.0, 1.0 / np.conj(roots), roots)
    return _numerator_ls(np.real(np.poly(roots)), z, h, nb)


def _stable_pole_starts(rng, order, z, h, nb, count):
    """Diverse all-stable denominator guesses with linearly solved numerators.

    Half the draws pin one pole next to z = 1 (integrator-flavored), which
    is where loop-shaping targets tend to live; the rest are fully random.
    """
    starts = []
    for k in range(count):
        roots = []
        if k % 2 == 0:
            roots.append(0.9998)
        while len(roots) < order:
            radius = rng.uniform(0.05, 0.9)
            if order - len(roots) >= 2 and rng.uniform() < 0.5:
                angle = rng.uniform(0.05, 1.8)
                roots.extend([radius * np.exp(1j * angle),
                              radius * np.exp(-1j * angle)])
            else:
                roots.append(radius * (1.0 if rng.uniform() < 0.7 else -1.0))
        a = np.real(np.poly(np.asarray(roots[:order], dtype=complex)))
        try:
            starts.append(_numerator_ls(a, z, h, nb))
        except np.linalg.LinAlgError:
            continue
    return starts


def discretize_fit(target, order, fs, band, grid_points=200, restarts=8, seed=0,
                   require_stable=False):
    """Fit an order-`order` discrete filter at rate fs to a frequency response.

    Minimizes equally weighted squared log-magnitude and phase deviations
    from `target` over a logarithmic grid of `grid_points` frequencies in
    `band`. Deterministic multi-restart nonlinear least squares seeded by a
    Sanathanan-Koerner linear solution. With `require_stable`, only
    candidates whose poles lie inside the unit circle are eligible (a
    reflected-pole restart is added if none of the plain restarts qualify).
    """
    lo, hi = float(band[0]), float(band[1])
    if order < 1:
        raise InvalidParameterError("order must be >= 1")
    if not (0 < lo < hi < fs / 2):
        raise InvalidParameterError("band must satisfy 0 < lo < hi < fs/2")
    if not target.covers((lo, hi)):
        raise InvalidParameterError("target response does not cover the fit band")

    grid = np.geomspace(lo, hi, grid_points)
    h = _interp_response(target, grid)
    z = np.exp(1j * TWO_PI * grid / fs)
    nb = order + 1

    def unpack(p):
        return p[:nb], np.concatenate(([1.0], p[nb:]))

    def residuals(p):
        b, a = unpack(p)
        hc = np.polyval(b, z) / np.polyval(a, z)
        r = hc / h
        mag = np.log(np.maximum(np.abs(r), 1e-300))
        return np.concatenate([mag, np.angle(r)])

    def pole_radius(p):
        a = np.concatenate(([1.0], p[nb:]))
        return np.max(np.abs(np.roots(a))) if a.size > 1 else 0.0

    def residuals_constrained(p):
        # stiff hinge on pole radius keeps the search in the stable region
        a = np.concatenate(([1.0], p[nb:]))
        radii = np.abs(np.roots(a)) if a.size > 1 else np.zeros(1)
        penalty = 100.0 * np.maximum(radii - 0.99995, 0.0)
        return np.concatenate([residuals(p), penalty])

    fun = residuals_constrained if require_stable else residuals

    def solve(start):
        try:
            return optimize.least_squares(fun, start, x_scale="jac",
                                          max_nfev=400)
        except (ValueError, np.linalg.LinAlgError):
            return None

    p0 = _sk_initial_fit(z, h, order)
    rng = np.random.default_rng(seed)
    starts = [p0]
    if require_stable:
        starts.append(_stable_projection(p0, z, h, nb))
        starts.extend(_stable_pole_starts(rng, order, z, h, nb,
                                          max(restarts, 6)))
    while len(starts) < max(restarts, 1):
        starts.append(p0 * (1.0 + 0.2 * rng.standard_normal(p0.shape)))
    candidates = [res for res in map(solve, starts) if res is not None]
    if require_stable:
        candidates = [c for c in candidates if pole_radius(c.x) < _MARGINAL_RADIUS]
    if not candidates:
        raise FitFailureError("no admissible fit found", best_residual=np.inf)

    best = min(candidates, key=lambda c: c.cost)
    b, a = unpack(best.x)
    rms = float(np.sqrt(np.mean(residuals(best.x) ** 2)))
    return DiscretizeResult(DiscreteFilter(b, a, fs), rms, grid)
