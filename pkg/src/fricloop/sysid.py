"""Identification of the measurement chain and the actuation gain.

Implements the characterization procedures used on the tribometer:
impulse-spectrum averaging for the sensor dynamics, digital lock-in
amplitude/phase extraction for swept-sine runs, second-order model fits,
and per-trial actuation gain estimation.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import (
    FitFailureError,
    InsufficientDataError,
    InvalidParameterError,
    InvalidTrialError,
)
from .lti import TWO_PI, FrequencyResponse, RationalTF, Signal, make_second_order

#: Impact onset = first sample whose magnitude exceeds this multiple of the
#: pre-trigger RMS (RMS of the leading tenth of the record).
ONSET_RMS_FACTOR = 10.0

#: Band used for impulse-spectrum power normalization (Hz).
NORMALIZATION_BAND = (10.0, 1000.0)


@dataclass(frozen=True)
class LockInResult:
    frequency: float
    amplitude: float
    phase_deg: float  # in (-180, 180]


@dataclass(frozen=True)
class ImpulseAverage:
    """Mean impulse spectrum with per-record power shifts (dB).

    `outliers` lists record indices whose shift magnitude exceeded the
    configured bound; the mean still includes them.
    """

    response: FrequencyResponse
    shifts_db: np.ndarray
    outliers: tuple
    shift_bound_db: float


@dataclass(frozen=True)
class SecondOrderFit:
    """Second-order model fit. `low_confidence` is set when the natural
    frequency lands above the fit band (no usable curvature in band)."""

    tf: RationalTF
    gain: float
    fn: float
    zeta: float
    residual: float
    low_confidence: bool


@dataclass(frozen=True)
class GainEstimate:
    mean: float
    min: float
    max: float
    per_trial: tuple  # of (frequency_hz, gain, direction)

    def __post_init__(self):
        if not (0 < self.min <= self.mean <= self.max):
            raise InvalidTrialError(
                f"gain estimate out of order or non-positive: "
                f"min={self.min}, mean={self.mean}, max={self.max}")


def lock_in(sig, f_ref):
    """Amplitude and phase of the f_ref component of a signal.

    In-phase/quadrature demodulation after truncating to an integer number
    of reference periods (removes spectral leakage). Phase convention:
    a*sin(2*pi*f*t + phi) reports (a, phi).
    """
    if not 0 < f_ref < sig.fs / 2:
        raise InvalidParameterError("f_ref must lie in (0, fs/2)")
    n = len(sig)
    periods = int(np.floor(n * f_ref / sig.fs))
    if periods < 10:
        raise InsufficientDataError(
            f"need >= 10 periods of {f_ref} Hz, got {n * f_ref / sig.fs:.2f}")
    m = int(np.floor(periods * sig.fs / f_ref))
    t = np.arange(m) / sig.fs
    x = sig.samples[:m]
    w = TWO_PI * f_ref * t
    in_phase = 2.0 * np.mean(x * np.sin(w))
    quadrature = 2.0 * np.mean(x * np.cos(w))
    amp = float(np.hypot(in_phase, quadrature))
    phase = float(np.degrees(np.arctan2(quadrature, in_phase)))
    if phase <= -180.0:
        phase += 360.0
    return LockInResult(float(f_ref), amp, phase)


def _impact_onset(x):
    pre = max(8, x.size // 10)
    floor = np.sqrt(np.mean(x[:pre] ** 2))
    if floor == 0.0:
        floor = np.finfo(float).tiny
    idx = np.nonzero(np.abs(x) > ONSET_RMS_FACTOR * floor)[0]
    if idx.size == 0:
        raise InsufficientDataError("no impact onset found (no sample above 10x pre-trigger RMS)")
    return int(idx[0])


def average_impulse_spectra(impulses, window_s, shift_bound_db=3.0):
    """Average impact spectra after per-record power normalization.

    Each record is truncated to `window_s` after its detected impact onset
    and Fourier-transformed. Magnitudes are scaled so every record's power
    over 10 Hz-1 kHz matches the first record's; the complex mean is
    returned together with the per-record shifts in dB. Shifts beyond
    `shift_bound_db` flag the record as an outlier (kept in the mean).
    """
    if len(impulses) < 2:
        raise InsufficientDataError("need at least 2 impulse records")
    fs = impulses[0].fs
    if any(s.fs != fs for s in impulses):
        raise InvalidParameterError("impulse records must share a sample rate")
    nwin = int(round(window_s * fs))
    if nwin < 16:
        raise InvalidParameterError("window too short")

    spectra = []
    for i, rec in enumerate(impulses):
        onset = _impact_onset(rec.samples)
        if rec.samples.size - onset < nwin:
            raise InsufficientDataError(f"record {i} shorter than window after onset")
        seg = rec.samples[onset:onset + nwin]
        spectra.append(np.fft.rfft(seg) / fs)
    freqs = np.fft.rfftfreq(nwin, 1.0 / fs)

    lo, hi = NORMALIZATION_BAND
    band = (freqs >= lo) & (freqs <= hi)
    powers = np.array([np.sum(np.abs(sp[band]) ** 2) for sp in spectra])
    if np.any(powers == 0.0):
        raise InsufficientDataError("a record has zero power in the normalization band")
    scales = np.sqrt(powers[0] / powers)
    shifts_db = 20.0 * np.log10(scales)
    outliers = tuple(int(i) for i in np.nonzero(np.abs(shifts_db) > shift_bound_db)[0])

    mean = np.mean([sp * c for sp, c in zip(spectra, scales)], axis=0)
    keep = freqs > 0
    resp = FrequencyResponse(freqs[keep], mean[keep])
    return ImpulseAverage(resp, shifts_db, outliers, float(shift_bound_db))


def fit_second_order(resp, band):
    """Least-squares second-order fit (gain, fn, zeta) to a frequency response.

    Residuals are log-magnitude (nepers) and phase (radians) over the points
    of `resp` inside `band`. Parameters are searched in log space to stay
    positive. Raises FitFailureError with the best candidate on failure.
    """
    lo, hi = band
    mask = (resp.freqs_hz >= lo) & (resp.freqs_hz <= hi)
    f = resp.freqs_hz[mask]
    h = resp.values[mask]
    if f.size < 10:
        raise InsufficientDataError("need >= 10 response points inside the band")

    mag = np.abs(h)
    # heuristics: gain from the lowest in-band points, fn from the magnitude
    # peak (or band edge when the response is flat), zeta moderate
    k0 = float(np.mean(mag[:max(2, f.size // 20)]))
    peak = int(np.argmax(mag))
    fn0 = float(f[peak]) if mag[peak] > 1.5 * k0 else float(hi)
    starts = [(k0, fn0, 0.2), (k0, fn0, 0.05), (k0, hi * 2.0, 0.7), (k0, hi / 2.0, 0.4)]

    def residuals(p):
        k, fn, zeta = np.exp(p)
        hm = make_second_order(k, fn, zeta)(1j * TWO_PI * f)
        r = hm / h
        return np.concatenate([np.log(np.abs(r)), np.angle(r)])

    best = None
    for k, fn, zeta in starts:
        try:
            res = optimize.least_squares(residuals, np.log([k, fn, zeta]),
                                         x_scale="jac", max_nfev=400)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitFailureError("second-order fit failed", best_residual=np.inf)

    k, fn, zeta = np.exp(best.x)
    residual = float(np.sqrt(np.mean(residuals(best.x) ** 2)))
    return SecondOrderFit(make_second_order(k, fn, zeta), float(k), float(fn),
                          float(zeta), residual, low_confidence=bool(fn > hi))


def estimate_gain(trials):
    """Per-trial actuation gain (force/current at the modulation frequency).

    Each trial is (drive: Signal [mA], force: Signal [N], frequency: Hz,
    direction: str). Gain = lock-in force amplitude / lock-in drive
    amplitude. Aggregates the arithmetic mean, min and max.
    """
    if not trials:
        raise InsufficientDataError("no trials given")
    per_trial = []
    for i, (drive, force, f_mod, direction) in enumerate(trials):
        if drive.fs != force.fs:
            raise InvalidParameterError(f"trial {i}: drive and force rates differ")
        d = lock_in(drive, f_mod)
        if d.amplitude <= 0.0:
            raise InvalidTrialError(f"trial {i}: zero drive amplitude at {f_mod} Hz")
        g = lock_in(force, f_mod).amplitude / d.amplitude
        if g <= 0.0:
            raise InvalidTrialError(f"trial {i}: non-positive gain {g}")
        per_trial.append((float(f_mod), float(g), str(direction)))
    gains = np.array([g for _, g, _ in per_trial])
    return GainEstimate(float(np.mean(gains)), float(np.min(gains)),
                        float(np.max(gains)), tuple(per_trial))


def load_signal_csv(path, unit="dimensionless"):
    """Load a (time, value) two-column CSV as a Signal; fs from the time step."""
    times, values = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                continue  # header line
            times.append(t)
            values.append(v)
    if len(times) < 2:
        raise InsufficientDataError(f"{path}: fewer than 2 samples")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-6):
        raise InvalidParameterError(f"{path}: time column is not uniform")
    return Signal(np.asarray(values), 1.0 / dt[0], unit)
