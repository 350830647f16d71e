"""Loop-shaping synthesis and the 10 kHz control-side runtime.

The closed loop from reference force to rendered friction force is
controller * actuation / (1 + controller * actuation * antialias * sensor).
Setting the target response to unity and solving gives the ideal
continuous controller; a third-order discrete emulation is fitted to it,
its gain is divided by the robustness backoff, and, if the loop is still
unstable anywhere on the declared actuation-gain range, the gain is walked
down further until every closed-loop pole clears the design margin. The
runtime side implements the DC-friction mitigator state machine and the
biased, clipped control-current computation.
"""

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import signal as _sig

from .errors import DegeneracyError, DesignRejectedError, SingularDesignError
from .lti import (
    TWO_PI,
    DiscreteFilter,
    RationalTF,
    discretize_fit,
    freq_response,
)
from .plant import ContactState, _make_filter

#: Fitted controller poles on/outside the unit circle are pulled to this radius.
POLE_CLAMP_RADIUS = 0.99995

NEUTRAL_CURRENT_MA = 2.5


def _trim(c, ref=None):
    tol = 1e-12 * (np.max(np.abs(c)) if ref is None else ref)
    i = 0
    while i < c.size - 1 and abs(c[i]) <= tol:
        i += 1
    return c[i:]


def closed_loop_tf(controller, actuation, antialias, sensor):
    """Closed-loop response C*P / (1 + C*P*L*G) in reduced rational form."""
    nc, dc = controller.num, controller.den
    np_, dp = actuation.num, actuation.den
    nl, dl = antialias.num, antialias.den
    ng, dg = sensor.num, sensor.den

    num = np.polymul(np.polymul(nc, np_), np.polymul(dl, dg))
    open_den = np.polymul(np.polymul(dc, dp), np.polymul(dl, dg))
    open_num = np.polymul(np.polymul(nc, np_), np.polymul(nl, ng))
    den = np.polyadd(open_den, np.concatenate(
        [np.zeros(max(0, open_den.size - open_num.size)), open_num]))

    scale = max(np.max(np.abs(open_den)), np.max(np.abs(open_num)), 1e-300)
    den = _trim(den, ref=scale)
    num = _trim(num)
    if np.max(np.abs(den)) <= 1e-12 * scale:
        raise DegeneracyError("closed-loop denominator vanished identically")
    if num.size - 1 > den.size - 1 and np.max(np.abs(num)) > 0:
        raise DegeneracyError("exact cancellation left an improper closed loop")
    return RationalTF(num, den)


def synthesize_ideal(target, actuation, antialias, sensor):
    """Ideal controller T / (P * (1 - T*L*G)) for a desired closed-loop T."""
    if isinstance(target, (int, float)):
        target = RationalTF.constant(target)
    nt, dt = target.num, target.den
    np_, dp = actuation.num, actuation.den
    nl, dl = antialias.num, antialias.den
    ng, dg = sensor.num, sensor.den

    if np.max(np.abs(np_)) == 0.0:
        raise SingularDesignError("actuation gain is identically zero")
    full = np.polymul(dt, np.polymul(dl, dg))
    prod = np.polymul(nt, np.polymul(nl, ng))
    inner = np.polysub(full, np.concatenate(
        [np.zeros(max(0, full.size - prod.size)), prod]))
    scale = max(np.max(np.abs(full)), np.max(np.abs(prod)))
    inner = _trim(inner, ref=scale)
    if np.max(np.abs(inner)) <= 1e-12 * scale:
        raise SingularDesignError("T*L*G is identically one; no controller exists")

    num = np.polymul(nt, np.polymul(dp, np.polymul(dl, dg)))
    den = np.polymul(np_, inner)
    return RationalTF(_trim(num), den)


@dataclass(frozen=True)
class DesignTarget:
    """Knobs of the emulation-based discrete design."""

    band: tuple = (10.0, 1000.0)
    epsilon: float = 0.0            # target log-magnitude deviation in band
    gamma: float = 0.0              # target phase deviation in band
    order: int = 3
    fs: float = 10_000.0
    backoff: float = 2.5
    design_gain: float = 0.06       # N/mA the ideal controller is solved at
    fit_top_hz: float = 2000.0      # fit weight is zero above this
    grid_points: int = 200
    restarts: int = 8
    seed: int = 0
    gain_range: tuple = (0.01, 0.14)
    gain_grid_points: int = 20
    latency_samples: int = 1        # extra loop delay beyond the hold
    gain_margin_factor: float = 1.25  # tuned design stays stable to this x max gain
    stable_radius: float = 0.9999
    ladder_step: float = 0.97
    ladder_floor: float = 0.05

    def validate(self):
        lo, hi = self.band
        if not (0 < lo < hi < self.fs / 2):
            raise SingularDesignError("band must lie inside (0, fs/2)")
        if self.order < 1 or self.backoff < 1:
            raise SingularDesignError("need order >= 1 and backoff >= 1")
        if not (0 < self.gain_range[0] <= self.gain_range[1]):
            raise SingularDesignError("bad gain range")


@dataclass(frozen=True)
class DesignReport:
    fit_residual: float
    backoff: float
    extra_scale: float       # additional gain reduction applied for stability
    effective_backoff: float
    bandwidth_hz: dict       # gain -> predicted -3 dB frequency (or None)
    stability: tuple         # of (gain, max_pole_radius, stable)
    fit_band_hz: tuple
    latency_samples: int
    design_gain: float
    schema_version: int = 1

    def to_json(self):
        d = {
            "schema_version": self.schema_version,
            "fit_residual": self.fit_residual,
            "backoff": self.backoff,
            "extra_scale": self.extra_scale,
            "effective_backoff": self.effective_backoff,
            "bandwidth_hz": {f"{k:.6g}": v for k, v in self.bandwidth_hz.items()},
            "stability": [
                {"gain": g, "max_pole_radius": r, "stable": s}
                for g, r, s in self.stability
            ],
            "fit_band_hz": list(self.fit_band_hz),
            "latency_samples": self.latency_samples,
            "design_gain": self.design_gain,
        }
        return json.dumps(d, indent=2, sort_keys=True)


@dataclass(frozen=True)
class DesignResult:
    filter: DiscreteFilter
    report: DesignReport


def _clamp_poles(filt):
    p = filt.poles()
    if p.size == 0 or np.all(np.abs(p) < 1.0):
        return filt
    p = np.where(np.abs(p) >= 1.0, p / np.abs(p) * POLE_CLAMP_RADIUS, p)
    return DiscreteFilter(filt.b.copy(), np.real(np.poly(p)), filt.fs)


def measurement_loop_filter(gain, antialias, sensor, fs):
    """ZOH discretization of P*L*G at the control rate."""
    plg = RationalTF.constant(gain) * antialias * sensor
    bd, ad, _ = _sig.cont2discrete((plg.num, plg.den), 1.0 / fs, method="zoh")
    return np.atleast_1d(np.squeeze(bd)), np.atleast_1d(ad.squeeze())


def closed_loop_poles(controller, gain, antialias, sensor, latency_samples=1):
    """Poles of the sampled-data loop including the computation delay."""
    bd, ad = measurement_loop_filter(gain, antialias, sensor, controller.fs)
    delay = np.concatenate([[1.0], np.zeros(latency_samples)])
    t1 = np.polymul(np.polymul(controller.a, ad), delay)
    t2 = np.polymul(controller.b, bd)
    n = max(t1.size, t2.size)
    char = (np.concatenate([np.zeros(n - t1.size), t1])
            + np.concatenate([np.zeros(n - t2.size), t2]))
    return np.roots(char)


def predicted_closed_loop(controller, gain, antialias, sensor, freqs_hz,
                          latency_samples=1):
    """Complex reference-to-force response of the designed sampled-data loop."""
    f = np.asarray(freqs_hz, dtype=float)
    z = np.exp(1j * TWO_PI * f / controller.fs)
    c = np.polyval(controller.b, z) / np.polyval(controller.a, z)
    bd, ad = measurement_loop_filter(gain, antialias, sensor, controller.fs)
    hd = np.polyval(bd, z) / np.polyval(ad, z)
    return c * gain / (1.0 + c * hd * z ** (-latency_samples))


def predicted_bandwidth(controller, gain, antialias, sensor, latency_samples=1):
    """First frequency where |predicted closed loop| falls below -3 dB."""
    f = np.geomspace(10.0, controller.fs / 2 * 0.999, 1200)
    mag = np.abs(predicted_closed_loop(controller, gain, antialias, sensor, f,
                                       latency_samples))
    below = np.nonzero(mag < 2 ** -0.5)[0]
    return float(f[below[0]]) if below.size else None


def _refine_for_stability(filt, target, antialias, sensor):
    """Closed-loop shaping refinement of the backed-off emulation fit.

    Reshapes the controller so that the predicted closed loop stays close
    to unity magnitude and zero phase over the design band (the stated
    tracking targets) at the design gain and its swipe-to-swipe neighbors,
    does not peak above the band, and keeps every closed-loop pole inside
    the margin radius for gains up to `gain_margin_factor` times the top
    of the declared range. One controller pole is pinned just inside z = 1
    (the integrator that makes low-frequency tracking exact); the free
    parameters are the numerator and the remaining pole pair. Gains that
    still violate the margin after a pass join the constraint set for
    another pass.
    """
    from scipy import optimize

    fs = filt.fs
    lo_band, hi_band = target.band
    f_band = np.geomspace(lo_band, hi_band, 120)
    f_guard = np.geomspace(hi_band, min(3000.0, 0.45 * fs), 40)
    z_band = np.exp(1j * TWO_PI * f_band / fs)
    z_guard = np.exp(1j * TWO_PI * f_guard / fs)
    nb = filt.b.size
    lo, hi = target.gain_range
    g0 = target.design_gain
    shape_gains = (0.7 * g0, g0, 1.3 * g0)
    check_gains = [hi * target.gain_margin_factor, hi,
                   math.sqrt(hi * max(g0, lo))]
    rho_goal = min(target.stable_radius - 0.006, 0.993)
    delay = np.concatenate([[1.0], np.zeros(target.latency_samples)])
    integrator = np.array([1.0, -POLE_CLAMP_RADIUS])

    # start from the laddered emulation fit: quadratic factor from its two
    # fastest poles, numerator as fitted
    own = sorted(filt.poles(), key=lambda r: abs(abs(r) - POLE_CLAMP_RADIUS))
    quad = np.real(np.poly(own[1:3])) if len(own) >= 3 else np.array([1.0, 0.0, 0.0])
    params = np.concatenate([filt.b, quad[1:]])

    def unpack(p):
        a = np.polymul(integrator, np.concatenate(([1.0], p[nb:])))
        return p[:nb], a

    def char_radii(b, a, bd, ad):
        t1 = np.polymul(np.polymul(a, ad), delay)
        t2 = np.polymul(b, bd)
        n = max(t1.size, t2.size)
        char = (np.concatenate([np.zeros(n - t1.size), t1])
                + np.concatenate([np.zeros(n - t2.size), t2]))
        return np.abs(np.roots(char))

    shape_filters = [measurement_loop_filter(g, antialias, sensor, fs)
                     for g in shape_gains]

    def closed_loop(b, a, g, bd, ad, zz, zlat):
        c = np.polyval(b, zz) / np.polyval(a, zz)
        hd = np.polyval(bd, zz) / np.polyval(ad, zz)
        return c * g / (1.0 + c * hd * zlat)

    zlat_band = z_band ** (-target.latency_samples)
    zlat_guard = z_guard ** (-target.latency_samples)
    grid_gains = np.geomspace(lo, hi * target.gain_margin_factor,
                              target.gain_grid_points)

    for _ in range(4):
        check_filters = [measurement_loop_filter(g, antialias, sensor, fs)
                         for g in check_gains]

        def residuals(p):
            b, a = unpack(p)
            parts = []
            for g, (bd, ad) in zip(shape_gains, shape_filters):
                t = closed_loop(b, a, g, bd, ad, z_band, zlat_band)
                parts.append(np.log(np.maximum(np.abs(t), 1e-300)))
                # phase enters as excess group delay beyond 0.5 ms; small
                # common delay is benign (removed by alignment downstream)
                delay_ms = -np.angle(t) / (TWO_PI * f_band) * 1e3
                parts.append(5.0 * np.maximum(delay_ms - 0.5, 0.0))
                t_guard = closed_loop(b, a, g, bd, ad, z_guard, zlat_guard)
                parts.append(10.0 * np.maximum(np.abs(t_guard) - 1.06, 0.0))
            free = np.abs(np.roots(np.concatenate(([1.0], p[nb:]))))
            parts.append(100.0 * np.maximum(free - (1.0 - 1e-5), 0.0))
            for bd, ad in check_filters:
                parts.append(50.0 * np.maximum(char_radii(b, a, bd, ad)
                                               - rho_goal, 0.0))
            return np.concatenate(parts)

        res = optimize.least_squares(residuals, params, x_scale="jac",
                                     max_nfev=800)
        params = res.x
        b, a = unpack(params)
        violations = [float(g) for g in grid_gains
                      if np.max(char_radii(
                          b, a, *measurement_loop_filter(g, antialias, sensor,
                                                         fs)))
                      >= target.stable_radius]
        if not violations:
            break
        check_gains = sorted(set(check_gains) | set(violations))
    return DiscreteFilter(b, a, fs)


def _stability_table(controller, target, antialias, sensor, margin_factor=1.0):
    lo, hi = target.gain_range
    gains = np.geomspace(lo, hi * margin_factor, target.gain_grid_points)
    rows = []
    for g in gains:
        radius = float(np.max(np.abs(closed_loop_poles(
            controller, g, antialias, sensor, target.latency_samples))))
        rows.append((float(g), radius, radius < 1.0))
    return tuple(rows)


def design_discrete(target, actuation, antialias, sensor):
    """Emulation-based discrete controller design with robustness backoff.

    Fits an order-`target.order` discrete filter to the ideal continuous
    controller over (band_lo, fit_top_hz), divides the gain by the backoff,
    and then reduces it further, one ladder step at a time, until the
    closed loop is strictly stable for every gain up to
    `gain_margin_factor` times the top of the declared range (so the
    shipped design carries at least that gain margin). Raises
    DesignRejectedError when the ladder floor is reached first.
    """
    target.validate()
    gain = target.design_gain if target.design_gain else actuation.dc_gain()
    ideal = synthesize_ideal(1.0, RationalTF.constant(gain), antialias, sensor)
    grid = np.geomspace(target.band[0], target.fit_top_hz, target.grid_points)
    fit = discretize_fit(freq_response(ideal, grid), target.order, target.fs,
                         (target.band[0], target.fit_top_hz),
                         grid_points=target.grid_points,
                         restarts=target.restarts, seed=target.seed,
                         require_stable=True)
    base = _clamp_poles(fit.filter).scaled(1.0 / target.backoff)

    # stability-aware refinement first; fall back to plain gain laddering
    # from whichever candidate survives the widest
    ideal_h = freq_response(ideal, grid).values
    refined = _clamp_poles(_refine_for_stability(base, target, antialias,
                                                 sensor))
    candidate = None
    scale = 1.0
    for start in (refined, base):
        s = 1.0
        while s >= target.ladder_floor:
            cand = start.scaled(s)
            guard = _stability_table(cand, target, antialias, sensor,
                                     margin_factor=target.gain_margin_factor)
            worst = max(r for _, r, _ in guard)
            if worst < target.stable_radius:
                break
            s *= target.ladder_step
        else:
            continue
        if candidate is None or s > scale or (start is refined and s == scale):
            candidate, scale = cand, s
        if start is refined and s == 1.0:
            break
    if candidate is None:
        guard = _stability_table(refined, target, antialias, sensor,
                                 margin_factor=target.gain_margin_factor)
        report = DesignReport(
            fit.residual, target.backoff, target.ladder_floor,
            target.backoff / target.ladder_floor, {}, guard,
            (target.band[0], target.fit_top_hz), target.latency_samples, gain)
        raise DesignRejectedError(
            "no stable design above the ladder floor", report=report)

    table = _stability_table(candidate, target, antialias, sensor)
    bandwidths = {}
    for g in (target.gain_range[0], gain, target.gain_range[1]):
        bandwidths[float(g)] = predicted_bandwidth(
            candidate, g, antialias, sensor, target.latency_samples)
    # report the shipped filter's in-band deviation from the ideal shape
    shipped = candidate.response_at(grid) * (target.backoff / scale)
    ratio = shipped / ideal_h
    final_residual = float(np.sqrt(np.mean(
        np.concatenate([np.log(np.abs(ratio)), np.angle(ratio)]) ** 2)))
    report = DesignReport(
        final_residual, target.backoff, scale, target.backoff / scale,
        bandwidths, table, (target.band[0], target.fit_top_hz),
        target.latency_samples, gain)
    return DesignResult(candidate, report)


class MitigatorMode(Enum):
    NEUTRAL = "neutral"
    SAMPLING = "sampling"
    CONTROLLING = "controlling"


class Action(Enum):
    FORCE_NEUTRAL = "force_neutral"
    TRACK = "track"


@dataclass
class MitigatorState:
    """DC friction estimator: averages the measured force over the first
    `window` samples of each full-slip phase."""

    mode: MitigatorMode = MitigatorMode.NEUTRAL
    n: int = 0
    dc_estimate: float = 0.0
    window: int = 100  # 10 ms at 10 kHz


def mitigator_step(ms, contact, f_m):
    """Advance the mitigator one sample; returns (state, action)."""
    if contact != ContactState.FULL_SLIP:
        ms.mode = MitigatorMode.NEUTRAL
        ms.n = 0
        ms.dc_estimate = 0.0
        return ms, Action.FORCE_NEUTRAL
    if ms.mode == MitigatorMode.NEUTRAL:
        ms.mode = MitigatorMode.SAMPLING
        ms.n = 0
        ms.dc_estimate = 0.0
    if ms.mode == MitigatorMode.SAMPLING:
        ms.dc_estimate += f_m / ms.window
        ms.n += 1
        if ms.n >= ms.window:
            ms.mode = MitigatorMode.CONTROLLING
        return ms, Action.FORCE_NEUTRAL
    return ms, Action.TRACK


class ControllerState:
    """Runtime state of the discrete controller plus its DC mitigator.

    The filter state is frozen (not advanced) whenever the mitigator forces
    the neutral output, so tracking resumes from the previous swipe's
    operating point instead of kicking at slip onset.
    """

    __slots__ = ("filter", "_engine", "mitigator", "u_max", "faults")

    def __init__(self, filt, window=100, u_max=5.0):
        self.filter = filt
        self._engine = _make_filter(filt.b, filt.a)
        self.mitigator = MitigatorState(window=window)
        self.u_max = u_max
        self.faults = 0


def control_step(ctrl, f_r, f_m, contact):
    """One 10 kHz control update; returns the drive current in mA."""
    if not (math.isfinite(f_r) and math.isfinite(f_m)):
        ctrl.faults += 1
        return NEUTRAL_CURRENT_MA
    ctrl.mitigator, action = mitigator_step(ctrl.mitigator, contact, f_m)
    if action is Action.FORCE_NEUTRAL:
        return NEUTRAL_CURRENT_MA
    error = f_r - f_m + ctrl.mitigator.dc_estimate
    u = NEUTRAL_CURRENT_MA + ctrl._engine.step(error)
    if u < 0.0:
        return 0.0
    if u > ctrl.u_max:
        return ctrl.u_max
    return u
