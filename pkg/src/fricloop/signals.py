"""Reference-signal generation: squares, sines, and stitched textures.

The six texture profiles are synthetic stand-ins: band-limited noise
(10 Hz-1 kHz) shaped by per-texture spectral envelopes spanning fine,
low-amplitude broadband content through coarse, low-frequency-heavy
content. Recorded force traces can be substituted via CSV ingestion.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .lti import TWO_PI, Signal


def gen_square(f, amp, dur, fs):
    """50% duty square wave alternating +/-amp, starting positive."""
    if not 0 < f < fs / 2:
        raise InvalidParameterError("f must lie in (0, fs/2)")
    t = np.arange(int(round(dur * fs))) / fs
    phase = np.mod(t * f, 1.0)
    return Signal(np.where(phase < 0.5, amp, -amp).astype(float), fs, "N")


def gen_sine(f, amp, dur, fs):
    """amp * sin(2*pi*f*t)."""
    if not 0 < f < fs / 2:
        raise InvalidParameterError("f must lie in (0, fs/2)")
    t = np.arange(int(round(dur * fs))) / fs
    return Signal(amp * np.sin(TWO_PI * f * t), fs, "N")


def sensitivity_grid(n_freqs=20, f_lo=20.0, f_hi=1000.0, amps_n=(0.010, 0.020, 0.030, 0.040)):
    """Frequency x amplitude grid of the sensitivity protocol:
    log-spaced frequencies and the standard millinewton amplitudes."""
    freqs = np.geomspace(f_lo, f_hi, n_freqs)
    return [(float(f), float(a)) for f in freqs for a in amps_n]


@dataclass(frozen=True)
class TextureSpec:
    """Source segments to be stitched into one long reference."""

    segments: tuple  # of Signal, common fs
    overlap_s: float
    total_s: float

    def __post_init__(self):
        if len(self.segments) == 0:
            raise InvalidParameterError("need at least one segment")
        fs = self.segments[0].fs
        if any(s.fs != fs for s in self.segments):
            raise InvalidParameterError("segments must share a sample rate")
        shortest = min(len(s) for s in self.segments)
        if int(round(self.overlap_s * fs)) >= shortest:
            raise InvalidParameterError("overlap must be shorter than every segment")
        if self.total_s <= 0:
            raise InvalidParameterError("total duration must be positive")


def stitch_feather(spec):
    """Concatenate segments with linear cross-fades of `overlap_s`.

    Segments are cycled until `total_s` is reached; the output is trimmed
    to exactly that duration.
    """
    fs = spec.segments[0].fs
    n_overlap = int(round(spec.overlap_s * fs))
    n_total = int(round(spec.total_s * fs))
    fade_in = np.linspace(0.0, 1.0, n_overlap, endpoint=False) if n_overlap else None

    out = spec.segments[0].samples.copy()
    i = 1
    while out.size < n_total:
        nxt = spec.segments[i % len(spec.segments)].samples
        if n_overlap:
            tail = out[-n_overlap:]
            out = np.concatenate([
                out[:-n_overlap],
                tail * (1.0 - fade_in) + nxt[:n_overlap] * fade_in,
                nxt[n_overlap:],
            ])
        else:
            out = np.concatenate([out, nxt])
        i += 1
    return Signal(out[:n_total], fs, spec.segments[0].unit)


#: Synthetic spectral envelopes: (corner_hz, rolloff_power, rms_n).
#: Ordered roughly coarse to fine; amplitudes sit in the experiment's
#: 10-40 mN reference range.
TEXTURE_PROFILES = {
    "HT": (45.0, 1.6, 0.028),   # coarse, strong low-frequency ridges
    "DM": (90.0, 1.4, 0.024),   # mid-coarse weave
    "FL": (70.0, 1.8, 0.018),   # smooth with slow undulation
    "EV": (150.0, 1.2, 0.020),  # soft pile, mid-band energy
    "SW": (260.0, 1.1, 0.016),  # fine elastic knit
    "MS": (380.0, 0.9, 0.012),  # finest, near-broadband, low amplitude
}


def texture_segment(name, dur, fs, seed, band=(10.0, 1000.0)):
    """One synthetic texture force segment: shaped, band-limited noise."""
    try:
        corner, power, rms = TEXTURE_PROFILES[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown texture {name!r}; choose from {sorted(TEXTURE_PROFILES)}") from None
    n = int(round(dur * fs))
    rng = np.random.default_rng(np.random.SeedSequence([zlib.crc32(name.encode()), seed]))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    envelope = 1.0 / (1.0 + (f / corner) ** power)
    envelope[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec * envelope, n)
    x *= rms / np.sqrt(np.mean(x ** 2))
    return Signal(x, fs, "N")


def texture_reference(name, total_s=20.0, fs=10_000.0, seed=0,
                      segment_s=2.5, overlap_s=0.1):
    """Stitched long texture reference built from independent segments."""
    n_seg = int(np.ceil(total_s / segment_s)) + 1
    segments = tuple(texture_segment(name, segment_s, fs, seed * 1000 + k)
                     for k in range(n_seg))
    return stitch_feather(TextureSpec(segments, overlap_s, total_s))
