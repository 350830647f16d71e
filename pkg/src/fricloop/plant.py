"""Virtual finger-tribometer plant.

Generates friction forces under sinusoidal swipe kinematics with a timed
stick / partial-slip / full-slip contact cycle, adds electroadhesion force
from the control current through a drifting per-direction actuation gain,
superimposes 1/f friction noise pinned to two spectral anchors, passes the
result through the sensor dynamics and the anti-alias filter, and
quantizes to the converter resolutions. One call to `plant_step` advances
one control period, internally substepped at `internal_fs`.

Electroadhesion acts by increasing the friction magnitude, so its
contribution carries the sign of the swipe direction and is scaled by the
slip fraction (0 while stuck, ramping to 1 through partial slip).

In carrier fidelity the drive is an amplitude-modulated carrier whose
rectified force is pi/2 * |envelope| * |sin(2*pi*fc*t)| * gain, which
preserves the envelope's mean force while placing the ripple at twice the
carrier frequency.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import signal as _sig

from .errors import ActuationError, ConfigError
from .lti import RationalTF, make_second_order

TWO_PI = 2.0 * math.pi

#: 60 kHz-equivalent logging rate for high-rate traces.
TRACE_FS = 60_000.0


class ContactState(IntEnum):
    STUCK = 0
    PARTIAL_SLIP = 1
    FULL_SLIP = 2


@dataclass(frozen=True)
class LoadProfile:
    """Normal-load trajectory: constant, or a slow sinusoidal variation."""

    kind: str = "constant"
    mean_n: float = 0.5
    amplitude_n: float = 0.0
    freq_hz: float = 0.0

    def value(self, t):
        if self.kind == "constant":
            return self.mean_n
        if self.kind == "sine":
            return self.mean_n + self.amplitude_n * math.sin(TWO_PI * self.freq_hz * t)
        raise ConfigError(f"unknown load profile kind {self.kind!r}")


def _default_sensor():
    # tribometer mechanics: resonance near 4.4 kHz, light damping
    return make_second_order(1.0, 4400.0, 0.1)


def _default_antialias():
    # second-order low-pass giving 35 dB attenuation at 40 kHz
    return make_second_order(1.0, 5300.0, 0.707)


@dataclass(frozen=True)
class PlantConfig:
    friction_coeff: float = 0.5
    load: LoadProfile = field(default_factory=LoadProfile)
    gain_nominal: float = 0.06   # N/mA
    gain_min: float = 0.01
    gain_max: float = 0.14
    direction_asymmetry: float = 0.3   # per-direction multiplicative split
    walk_sigma: float = 0.1            # log-gain random-walk stationary sigma
    walk_tau_s: float = 1.0
    carrier_freq: float = 20_000.0
    control_fs: float = 10_000.0
    internal_fs: float = 0.0           # 0 -> 60 kHz envelope / 240 kHz carrier
    noise_anchor_10hz: float = 1e-3    # N/sqrt(Hz) amplitude spectral density
    noise_anchor_1khz: float = 1e-5
    noise_corner_hz: float = 4.0
    sensor_tf: RationalTF = field(default_factory=_default_sensor)
    antialias_tf: RationalTF = field(default_factory=_default_antialias)
    adc_bits: int = 14
    dac_bits: int = 16
    adc_fullscale_n: float = 2.0       # ADC spans +/- this
    current_max_ma: float = 5.0        # drive range is [0, current_max]
    stick_dwell_s: float = 0.05
    partial_slip_s: float = 0.03
    # 0.45 Hz swiping gives ~1.1 s swipes, so the retained middle halves
    # carry >10 periods of even the lowest (20 Hz) protocol frequency
    swipe_freq: float = 0.45           # Hz; 0 freezes the kinematics
    swipe_amplitude_m: float = 0.04
    fidelity: str = "envelope"         # "envelope" | "carrier"
    record_internal: bool = True       # keep per-substep buffers for tracing

    def resolved_internal_fs(self):
        if self.internal_fs > 0:
            return float(self.internal_fs)
        return 240_000.0 if self.fidelity == "carrier" else 60_000.0

    def validate(self):
        if not (0 < self.gain_min <= self.gain_nominal <= self.gain_max):
            raise ConfigError("need 0 < gain_min <= gain_nominal <= gain_max")
        if self.fidelity not in ("envelope", "carrier"):
            raise ConfigError("fidelity must be 'envelope' or 'carrier'")
        fs_i = self.resolved_internal_fs()
        if self.fidelity == "carrier" and fs_i < 4 * self.carrier_freq:
            raise ConfigError("carrier fidelity needs internal_fs >= 4*carrier_freq")
        sub = fs_i / self.control_fs
        if abs(sub - round(sub)) > 1e-9 or sub < 1:
            raise ConfigError("control_fs must divide internal_fs")
        if self.friction_coeff <= 0 or self.load.mean_n <= 0:
            raise ConfigError("friction coefficient and mean load must be positive")
        if self.stick_dwell_s < 0 or self.partial_slip_s < 0:
            raise ConfigError("contact-phase durations must be non-negative")
        if self.swipe_freq < 0 or self.swipe_amplitude_m <= 0:
            raise ConfigError("bad swipe kinematics")
        if not (0 <= self.direction_asymmetry < 1):
            raise ConfigError("direction_asymmetry must lie in [0, 1)")


class _Biquad:
    """Second-order direct-form II transposed section, scalar hot path."""

    __slots__ = ("b0", "b1", "b2", "a1", "a2", "s0", "s1")

    def __init__(self, b, a):
        b = np.concatenate([np.asarray(b, float), np.zeros(3)])[:3]
        a = np.concatenate([np.asarray(a, float), np.zeros(3)])[:3]
        b = b / a[0]
        self.b0, self.b1, self.b2 = b.tolist()
        _, self.a1, self.a2 = (a / a[0]).tolist()
        self.s0 = 0.0
        self.s1 = 0.0

    def step(self, x):
        y = self.b0 * x + self.s0
        self.s0 = self.b1 * x - self.a1 * y + self.s1
        self.s1 = self.b2 * x - self.a2 * y
        return y


class _Cascade:
    """Biquad cascade for orders above two."""

    __slots__ = ("sections",)

    def __init__(self, b, a):
        sos = _sig.tf2sos(b, a)
        self.sections = [_Biquad(row[:3], row[3:]) for row in sos]

    def step(self, x):
        for s in self.sections:
            x = s.step(x)
        return x


def _make_filter(b, a):
    if max(len(np.atleast_1d(b)), len(np.atleast_1d(a))) <= 3:
        return _Biquad(b, a)
    return _Cascade(b, a)


class _NoiseStream:
    """Deterministic buffered standard-normal draws (plain-float list so
    the simulation hot path stays off numpy scalar arithmetic)."""

    __slots__ = ("rng", "buf", "idx", "chunk")

    def __init__(self, rng, chunk=1 << 15):
        self.rng = rng
        self.chunk = chunk
        self.buf = rng.standard_normal(chunk).tolist()
        self.idx = 0

    def next(self):
        if self.idx >= self.chunk:
            self.buf = self.rng.standard_normal(self.chunk).tolist()
            self.idx = 0
        v = self.buf[self.idx]
        self.idx += 1
        return v


def _sections_of(tf, fs):
    """Bilinear-discretize a continuous TF into mutable biquad sections:
    [b0, b1, b2, a1, a2, s0, s1] per section (direct form II transposed)."""
    b, a = _sig.bilinear(tf.num, tf.den, fs)
    sos = _sig.tf2sos(b, a)
    sections = []
    for row in sos:
        b0, b1, b2, a0, a1, a2 = row
        sections.append([b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0, 0.0, 0.0])
    return sections


class PlantState:
    """Mutable simulation state owned by exactly one loop."""

    __slots__ = (
        "cfg", "seed", "internal_fs", "n_sub", "dt", "t_sub_count",
        "contact", "direction", "phase_elapsed", "x", "v", "x_stick",
        "stick_spring", "partial_entry_force", "prior_slip", "gain_t",
        "walk", "walk_rho", "walk_scale", "noise_stream", "walk_stream",
        "chain_sections", "noise_b0", "noise_b1", "noise_a1", "noise_s0",
        "rot_re", "rot_im", "osc_re", "osc_im",
        "adc_lsb", "dac_lsb", "daq_lsb", "sub_contact_force", "sub_measured",
        "trace_stride", "last_measured",
    )

    @property
    def time_s(self):
        return self.t_sub_count * self.dt

    @property
    def velocity(self):
        return self.v

    @property
    def position(self):
        return self.x


def init_plant(cfg, seed):
    """Deterministic initial state: stuck contact, nominal gain."""
    cfg.validate()
    st = PlantState.__new__(PlantState)
    st.cfg = cfg
    st.seed = int(seed)
    st.internal_fs = cfg.resolved_internal_fs()
    st.n_sub = int(round(st.internal_fs / cfg.control_fs))
    st.dt = 1.0 / st.internal_fs
    st.t_sub_count = 0

    st.contact = ContactState.STUCK
    st.direction = 1.0
    st.phase_elapsed = 0.0
    st.x = 0.0
    st.v = 0.0
    st.x_stick = 0.0
    st.partial_entry_force = 0.0
    st.prior_slip = False

    # stick spring tuned so the timed dwell ends at 1.2x the Coulomb level
    w0 = cfg.load.value(0.0)
    breakaway = 1.2 * cfg.friction_coeff * w0
    if cfg.swipe_freq > 0 and cfg.stick_dwell_s > 0:
        dx = cfg.swipe_amplitude_m * (1.0 - math.cos(TWO_PI * cfg.swipe_freq * cfg.stick_dwell_s))
        # elastic force travels from -mu*W to +1.2*mu*W over the dwell
        st.stick_spring = (breakaway + cfg.friction_coeff * w0) / max(dx, 1e-12)
    else:
        st.stick_spring = 0.0

    st.gain_t = cfg.gain_nominal
    st.walk = 0.0
    dt_ctrl = 1.0 / cfg.control_fs
    st.walk_rho = math.exp(-dt_ctrl / cfg.walk_tau_s)
    st.walk_scale = cfg.walk_sigma * math.sqrt(1.0 - st.walk_rho ** 2)

    ss = np.random.SeedSequence(st.seed)
    noise_seed, walk_seed = ss.spawn(2)
    st.noise_stream = _NoiseStream(np.random.default_rng(noise_seed))
    st.walk_stream = _NoiseStream(np.random.default_rng(walk_seed), chunk=1 << 12)

    # 1/f amplitude shaping: white noise through k/(s + w_corner), k pinned
    # to the geometric mean of the two anchors' f*ASD products
    a0 = math.sqrt((cfg.noise_anchor_10hz * 10.0) * (cfg.noise_anchor_1khz * 1000.0))
    k = a0 * TWO_PI / math.sqrt(2.0 / st.internal_fs)
    bn, an = _sig.bilinear([k], [1.0, TWO_PI * cfg.noise_corner_hz], st.internal_fs)
    st.noise_b0, st.noise_b1 = (bn / an[0]).tolist()
    st.noise_a1 = (an / an[0]).tolist()[1]
    st.noise_s0 = 0.0

    # measurement chain: sensor dynamics then anti-alias filter, as one
    # cascade of biquad sections
    st.chain_sections = (_sections_of(cfg.sensor_tf, st.internal_fs)
                         + _sections_of(cfg.antialias_tf, st.internal_fs))

    # swipe oscillator advanced by complex rotation (renormalized in-loop)
    st.rot_re = math.cos(TWO_PI * cfg.swipe_freq * st.dt)
    st.rot_im = math.sin(TWO_PI * cfg.swipe_freq * st.dt)
    st.osc_re = 1.0
    st.osc_im = 0.0

    st.adc_lsb = 2.0 * cfg.adc_fullscale_n / (1 << cfg.adc_bits)
    st.daq_lsb = 2.0 * cfg.adc_fullscale_n / (1 << 16)
    st.dac_lsb = cfg.current_max_ma / (1 << cfg.dac_bits)

    st.sub_contact_force = np.zeros(st.n_sub)
    st.sub_measured = np.zeros(st.n_sub)
    st.trace_stride = max(1, int(round(st.internal_fs / TRACE_FS)))
    st.last_measured = 0.0
    return st


def quantize_mid_tread(v, lsb, lo, hi):
    v = min(max(v, lo), hi)
    return min(max(round(v / lsb) * lsb, lo), hi)


def plant_step(state, u):
    """Advance one control period under drive current u (mA envelope).

    Returns (state, f_m, W, contact): the quantized force sample seen by
    the controller at the end of the period, the current normal load, and
    the contact state. Non-finite u raises; out-of-range u is clipped to
    the DAC range.
    """
    if not math.isfinite(u):
        raise ActuationError(f"non-finite drive current {u!r}")
    st = state
    cfg = st.cfg
    u = min(max(u, 0.0), cfg.current_max_ma)

    # per-direction gain with a bounded log-space random walk, held for the
    # whole control period
    st.walk = st.walk_rho * st.walk + st.walk_scale * st.walk_stream.next()
    dir_factor = 1.0 + cfg.direction_asymmetry * st.direction
    gain = cfg.gain_nominal * dir_factor * math.exp(st.walk)
    gain_t = min(max(gain, cfg.gain_min), cfg.gain_max)
    st.gain_t = gain_t

    mu = cfg.friction_coeff
    amp = cfg.swipe_amplitude_m
    omega = TWO_PI * cfg.swipe_freq
    dt = st.dt
    carrier = cfg.fidelity == "carrier"
    half_pi = math.pi / 2.0
    wc = TWO_PI * cfg.carrier_freq
    sin = math.sin
    load = cfg.load
    constant_load = load.kind == "constant"
    w_now = load.mean_n
    dwell = cfg.stick_dwell_s
    partial = cfg.partial_slip_s
    spring = st.stick_spring
    record = cfg.record_internal

    sections = st.chain_sections
    one_each = len(sections) == 2
    if one_each:
        g0, g1, g2, g3, g4, gs0, gs1 = sections[0]
        l0, l1, l2, l3, l4, ls0, ls1 = sections[1]
    nb0, nb1, na1, ns0 = st.noise_b0, st.noise_b1, st.noise_a1, st.noise_s0
    stream = st.noise_stream
    nbuf = stream.buf
    nidx = stream.idx
    nlen = stream.chunk

    rr, ri = st.rot_re, st.rot_im
    cre, cim = st.osc_re, st.osc_im

    sub_ff = st.sub_contact_force
    sub_fm = st.sub_measured
    fullscale = cfg.adc_fullscale_n

    y = st.last_measured
    count = st.t_sub_count
    v_prev = st.v
    contact = int(st.contact)
    direction = st.direction
    phase_elapsed = st.phase_elapsed
    x_stick = st.x_stick
    prior_slip = st.prior_slip
    entry_force = st.partial_entry_force
    x = st.x
    v = st.v
    for i in range(st.n_sub):
        count += 1

        if omega > 0.0:
            cre, cim = cre * rr - cim * ri, cre * ri + cim * rr
            x = amp * cim
            v = amp * omega * cre
        crossing = v * v_prev < 0.0 or (v == 0.0 and v_prev != 0.0)
        v_prev = v

        if not constant_load:
            w_now = load.value(count * dt)

        # contact cycle: reversal -> stuck (timed) -> partial slip (timed)
        # -> full slip until the next reversal
        if crossing:
            contact = 0
            phase_elapsed = 0.0
            x_stick = x
            prior_slip = True
            direction = 1.0 if v >= 0.0 else -1.0
        else:
            phase_elapsed += dt

        coulomb = mu * w_now * direction
        slip_fraction = 1.0
        if contact == 0:  # stuck
            breakaway = 1.2 * mu * w_now
            base = (-coulomb if prior_slip else 0.0) + spring * (x - x_stick)
            base = min(max(base, -breakaway), breakaway)
            slip_fraction = 0.0
            if phase_elapsed >= dwell:
                contact = 1
                phase_elapsed = 0.0
                entry_force = base
        if contact == 1:  # partial slip
            r = phase_elapsed / partial if partial > 0.0 else 1.0
            if r >= 1.0:
                contact = 2
            else:
                base = entry_force + (coulomb - entry_force) * r
                slip_fraction = r
        if contact == 2:  # full slip
            base = coulomb

        # electroadhesion increases friction magnitude once slipping
        if carrier:
            drive = u * half_pi * abs(sin(wc * count * dt))
        else:
            drive = u
        f_contact = base + direction * slip_fraction * gain_t * drive

        # 1/f noise: buffered white draw through the shaping one-pole
        if nidx >= nlen:
            stream.buf = nbuf = stream.rng.standard_normal(nlen).tolist()
            nidx = 0
        w = nbuf[nidx]
        nidx += 1
        noise = nb0 * w + ns0
        ns0 = nb1 * w - na1 * noise

        # measurement chain
        f = f_contact + noise
        if one_each:
            yg = g0 * f + gs0
            gs0 = g1 * f - g3 * yg + gs1
            gs1 = g2 * f - g4 * yg
            y = l0 * yg + ls0
            ls0 = l1 * yg - l3 * y + ls1
            ls1 = l2 * yg - l4 * y
        else:
            v_in = f
            for sec in sections:
                b0, b1, b2, a1, a2, s0, s1 = sec
                out = b0 * v_in + s0
                sec[5] = b1 * v_in - a1 * out + s1
                sec[6] = b2 * v_in - a2 * out
                v_in = out
            y = v_in

        if record:
            # raw post-filter value; 16-bit DAQ quantization is applied
            # vectorized at trace assembly
            sub_ff[i] = f_contact
            sub_fm[i] = y

    if one_each:
        sections[0][5] = gs0
        sections[0][6] = gs1
        sections[1][5] = ls0
        sections[1][6] = ls1
    st.noise_s0 = ns0
    stream.idx = nidx
    if omega > 0.0:
        # keep the oscillator on the unit circle
        norm = 1.0 / math.sqrt(cre * cre + cim * cim)
        st.osc_re = cre * norm
        st.osc_im = cim * norm
    st.x = x
    st.v = v
    st.contact = ContactState(contact)
    st.direction = direction
    st.phase_elapsed = phase_elapsed
    st.x_stick = x_stick
    st.prior_slip = prior_slip
    st.partial_entry_force = entry_force
    st.t_sub_count = count
    st.last_measured = y
    f_m = quantize_mid_tread(y, st.adc_lsb, -fullscale, fullscale)
    return st, f_m, w_now, st.contact
