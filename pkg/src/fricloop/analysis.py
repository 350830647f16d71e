"""Post-hoc tracking evaluation.

Pipeline order matches the experimental protocol: zero-phase band-pass,
swipe segmentation by friction-force zero-crossings, cross-correlation
alignment, then the linear-fit R^2 on the retained middle-50% samples.
Measured force is rectified by per-swipe direction before pooling so both
swipe directions compare against the same one-sided reference.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .errors import (
    AlignmentError,
    InsufficientDataError,
    InvalidParameterError,
    UndefinedMetricError,
)
from .lti import Signal
from .sysid import lock_in


def bandpass_zero_phase(x, lo, hi):
    """Forward-backward second-order Butterworth band-pass (zero net phase).

    Edge transients are absorbed by reflection padding three settling
    times (taken as 3/lo seconds) long.
    """
    if not (0 < lo < hi < x.fs / 2):
        raise InvalidParameterError("need 0 < lo < hi < fs/2")
    sos = _sig.butter(2, [lo, hi], btype="bandpass", fs=x.fs, output="sos")
    padlen = min(len(x) - 1, int(3.0 * x.fs / lo))
    y = _sig.sosfiltfilt(sos, x.samples, padtype="even", padlen=padlen)
    return Signal(y, x.fs, x.unit)


def lowpass_zero_phase(x, corner):
    """Forward-backward second-order Butterworth low-pass."""
    if not 0 < corner < x.fs / 2:
        raise InvalidParameterError("corner must lie in (0, fs/2)")
    sos = _sig.butter(2, corner, btype="lowpass", fs=x.fs, output="sos")
    padlen = min(len(x) - 1, int(3.0 * x.fs / corner))
    y = _sig.sosfiltfilt(sos, x.samples, padtype="even", padlen=padlen)
    return Signal(y, x.fs, x.unit)


@dataclass(frozen=True)
class SwipeSegment:
    """One swipe between consecutive friction zero-crossings, with the
    centered middle-50% sub-range retained for analysis."""

    start: int
    end: int
    direction: str  # "right" (positive force) or "left"
    mid_start: int
    mid_end: int

    @classmethod
    def from_span(cls, start, end, direction):
        length = end - start
        mid_start = start + length // 4
        return cls(start, end, direction, mid_start, mid_start + length // 2)


def segment_swipes(f, debounce_s=0.05):
    """Split a low-passed friction trace into swipes at zero-crossings.

    Crossings closer than `debounce_s` are merged. Leading and trailing
    partial swipes are dropped; returns [] when there is no crossing.
    """
    x = f.samples
    sign_change = np.nonzero(np.signbit(x[:-1]) != np.signbit(x[1:]))[0] + 1
    if sign_change.size == 0:
        return []
    min_gap = int(debounce_s * f.fs)
    crossings = [int(sign_change[0])]
    for c in sign_change[1:]:
        if c - crossings[-1] >= min_gap:
            crossings.append(int(c))
    segments = []
    for a, b in zip(crossings[:-1], crossings[1:]):
        direction = "right" if np.mean(x[a:b]) >= 0 else "left"
        segments.append(SwipeSegment.from_span(a, b, direction))
    return segments


def align_by_xcorr(ref, meas, max_lag_s):
    """Shift `meas` to the lag of largest normalized cross-correlation.

    A positive lag means `meas` trails `ref`; the returned signal is
    advanced by that lag (edge samples are held). Searches integer lags in
    [-max_lag_s, +max_lag_s].
    """
    if ref.fs != meas.fs:
        raise InvalidParameterError("signals must share a sample rate")
    if max_lag_s < 0:
        raise InvalidParameterError("max_lag_s must be >= 0")
    a = ref.samples - np.mean(ref.samples)
    b = meas.samples - np.mean(meas.samples)
    if np.all(a == 0.0) or np.all(b == 0.0):
        raise AlignmentError("zero-variance input; correlation undefined")
    n = min(a.size, b.size)
    max_lag = int(round(max_lag_s * ref.fs))
    max_lag = min(max_lag, n - 2)

    best_lag, best_corr = 0, -np.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            aa, bb = a[:n - lag], b[lag:n]
        else:
            aa, bb = a[-lag:n], b[:n + lag]
        denom = np.sqrt(np.dot(aa, aa) * np.dot(bb, bb))
        if denom == 0.0:
            continue
        corr = np.dot(aa, bb) / denom
        if corr > best_corr:
            best_corr, best_lag = corr, lag

    shifted = np.empty_like(meas.samples)
    if best_lag > 0:
        shifted[:-best_lag] = meas.samples[best_lag:]
        shifted[-best_lag:] = meas.samples[-1]
    elif best_lag < 0:
        shifted[-best_lag:] = meas.samples[:best_lag]
        shifted[:-best_lag] = meas.samples[0]
    else:
        shifted[:] = meas.samples
    return Signal(shifted, meas.fs, meas.unit), best_lag / ref.fs


def r_squared(ref, meas):
    """Coefficient of determination of the best linear fit meas ~ a*ref + b."""
    r = np.asarray(ref.samples if isinstance(ref, Signal) else ref, float)
    m = np.asarray(meas.samples if isinstance(meas, Signal) else meas, float)
    if r.shape != m.shape:
        raise InvalidParameterError("ref and meas must have equal length")
    r = r - np.mean(r)
    m = m - np.mean(m)
    denom_r = np.dot(r, r)
    if denom_r == 0.0:
        raise UndefinedMetricError("zero-variance reference")
    denom_m = np.dot(m, m)
    if denom_m == 0.0:
        return 0.0
    c = np.dot(r, m)
    return float(c * c / (denom_r * denom_m))


@dataclass(frozen=True)
class TrackingReport:
    r2: float
    lag_s: float
    per_swipe_r2: tuple
    n_swipes: int
    band_hz: tuple
    schema_version: int = 1

    def to_json(self):
        return json.dumps({
            "schema_version": self.schema_version,
            "r2": self.r2,
            "lag_s": self.lag_s,
            "per_swipe_r2": list(self.per_swipe_r2),
            "n_swipes": self.n_swipes,
            "band_hz": list(self.band_hz),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["r2"], d["lag_s"], tuple(d["per_swipe_r2"]), d["n_swipes"],
                   tuple(d["band_hz"]), d["schema_version"])


def evaluate_tracking(ref, meas, band=(10.0, 1000.0), max_lag_s=0.002,
                      debounce_s=0.05, envelope_corner_hz=5.0):
    """Full tracking evaluation of a rendering run.

    Band-passes reference and measurement, rectifies the measurement by
    per-swipe direction, aligns by cross-correlation, and pools the
    middle-50% samples of every swipe into one linear fit.
    """
    bp_ref = bandpass_zero_phase(ref, *band)
    bp_meas = bandpass_zero_phase(meas, *band)
    segments = segment_swipes(lowpass_zero_phase(meas, envelope_corner_hz),
                              debounce_s)
    if not segments:
        raise InsufficientDataError("no swipes found in the measured trace")

    rect = np.zeros_like(bp_meas.samples)
    for seg in segments:
        s = 1.0 if seg.direction == "right" else -1.0
        rect[seg.start:seg.end] = s * bp_meas.samples[seg.start:seg.end]
    aligned, lag = align_by_xcorr(bp_ref, Signal(rect, meas.fs, meas.unit),
                                  max_lag_s)

    ref_parts, meas_parts, per_swipe = [], [], []
    for seg in segments:
        rr = bp_ref.samples[seg.mid_start:seg.mid_end]
        mm = aligned.samples[seg.mid_start:seg.mid_end]
        if rr.size < 8 or np.ptp(rr) == 0.0:
            continue
        ref_parts.append(rr)
        meas_parts.append(mm)
        per_swipe.append(r_squared(rr, mm))
    if not ref_parts:
        raise InsufficientDataError("no usable swipe middles")
    pooled = r_squared(np.concatenate(ref_parts), np.concatenate(meas_parts))
    return TrackingReport(pooled, lag, tuple(per_swipe), len(per_swipe),
                          tuple(band))


@dataclass(frozen=True)
class SensitivityRow:
    freq_hz: float
    amplitude_n: float
    magnitude_ratio: float
    ratio_std: float
    phase_deg: float
    phase_std_deg: float
    delay_ms: float
    n_swipes: int
    ok: bool  # False when fewer than 3 usable swipes


@dataclass(frozen=True)
class SensitivityTable:
    rows: tuple
    schema_version: int = 1

    def to_json(self):
        return json.dumps({
            "schema_version": self.schema_version,
            "rows": [vars(r) for r in self.rows],
        }, indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["freq_hz", "amplitude_n", "magnitude_ratio", "ratio_std",
                    "phase_deg", "phase_std_deg", "delay_ms", "n_swipes", "ok"])
        for r in self.rows:
            w.writerow([f"{r.freq_hz:.17g}", f"{r.amplitude_n:.17g}",
                        f"{r.magnitude_ratio:.17g}", f"{r.ratio_std:.17g}",
                        f"{r.phase_deg:.17g}", f"{r.phase_std_deg:.17g}",
                        f"{r.delay_ms:.17g}", r.n_swipes, int(r.ok)])
        return buf.getvalue()


def _wrap_deg(p):
    return (p + 180.0) % 360.0 - 180.0


def sensitivity_condition(freq_hz, amplitude_n, ref, meas, debounce_s=0.05,
                          envelope_corner_hz=5.0):
    """Per-swipe lock-in magnitude/phase of one frequency x amplitude run."""
    segments = segment_swipes(lowpass_zero_phase(meas, envelope_corner_hz),
                              debounce_s)
    ratios, phases = [], []
    for seg in segments:
        s = 1.0 if seg.direction == "right" else -1.0
        window_ref = Signal(ref.samples[seg.mid_start:seg.mid_end], ref.fs, ref.unit)
        window_meas = Signal(s * meas.samples[seg.mid_start:seg.mid_end],
                             meas.fs, meas.unit)
        try:
            li_ref = lock_in(window_ref, freq_hz)
            li_meas = lock_in(window_meas, freq_hz)
        except InsufficientDataError:
            continue
        if li_ref.amplitude <= 0.0:
            continue
        ratios.append(li_meas.amplitude / li_ref.amplitude)
        phases.append(_wrap_deg(li_meas.phase_deg - li_ref.phase_deg))
    n = len(ratios)
    if n == 0:
        return SensitivityRow(freq_hz, amplitude_n, np.nan, np.nan, np.nan,
                              np.nan, np.nan, 0, False)
    ratios = np.asarray(ratios)
    phases = np.asarray(phases)
    phase_mean = float(np.mean(phases))
    delay_ms = -phase_mean / 360.0 / freq_hz * 1000.0
    return SensitivityRow(freq_hz, amplitude_n, float(np.mean(ratios)),
                          float(np.std(ratios)), phase_mean,
                          float(np.std(phases)), delay_ms, n, n >= 3)


def empirical_sensitivity(runs, **kwargs):
    """Sensitivity table from (freq_hz, amplitude_n, ref, meas) runs."""
    rows = [sensitivity_condition(f, a, ref, meas, **kwargs)
            for f, a, ref, meas in runs]
    return SensitivityTable(tuple(rows))
