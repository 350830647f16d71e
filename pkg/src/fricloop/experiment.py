"""Experiment orchestration: the 10 kHz loop against the virtual plant.

`run_experiment` designs (or accepts) a controller, runs the closed- or
open-loop rendering for the configured duration, and emits a config
snapshot, the controller and its design report, a 60 kHz-equivalent trace,
and a tracking report into one output directory. Everything is
deterministic per seed; reruns produce byte-identical files.

Trace row alignment: row k carries the force sample and plant state at the
end of control period k together with the control command computed from
the measurement of that same row, so Algorithm-style invariants (neutral
current while not fully slipping) hold row-by-row; the command physically
drives the plant `latency_samples` periods later.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .analysis import TrackingReport, evaluate_tracking, sensitivity_condition, SensitivityTable
from .controller import (
    NEUTRAL_CURRENT_MA,
    ControllerState,
    DesignTarget,
    control_step,
    design_discrete,
)
from .errors import (
    AlignmentError,
    ConfigError,
    InsufficientDataError,
    InvalidParameterError,
    UndefinedMetricError,
)
from .io import Trace, write_json
from .lti import DiscreteFilter, RationalTF, Signal
from .plant import ContactState, LoadProfile, PlantConfig, init_plant, plant_step
from .signals import gen_sine, gen_square, sensitivity_grid, texture_reference
from .sysid import load_signal_csv

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ReferenceSpec:
    """Declarative reference-force source."""

    kind: str = "square"      # square | sine | texture | csv
    freq_hz: float = 20.0
    amplitude_n: float = 0.025
    texture: str = "MS"
    csv_path: str = ""

    def build(self, duration_s, fs, seed):
        if self.kind == "square":
            return gen_square(self.freq_hz, self.amplitude_n, duration_s, fs)
        if self.kind == "sine":
            return gen_sine(self.freq_hz, self.amplitude_n, duration_s, fs)
        if self.kind == "texture":
            return texture_reference(self.texture, duration_s, fs, seed)
        if self.kind == "csv":
            sig = load_signal_csv(self.csv_path, unit="N")
            if abs(sig.fs - fs) > 1e-6 * fs:
                raise ConfigError(
                    f"reference CSV rate {sig.fs} Hz != control rate {fs} Hz")
            n = int(round(duration_s * fs))
            if len(sig) < n:
                raise ConfigError("reference CSV shorter than the experiment")
            return Signal(sig.samples[:n], fs, "N")
        raise ConfigError(f"unknown reference kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    design: DesignTarget = field(default_factory=DesignTarget)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    controller: DiscreteFilter = None   # explicit filter skips the design
    duration_s: float = 4.0
    seed: int = 0
    mode: str = "closed"                # closed | open
    write_trace: bool = True
    trace_format: str = "npy"           # npy | csv

    def validate(self):
        self.plant.validate()
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.mode not in ("closed", "open"):
            raise ConfigError("mode must be 'closed' or 'open'")
        if self.reference.kind in ("square", "sine"):
            if not 0 < self.reference.freq_hz < self.plant.control_fs / 2:
                raise ConfigError("reference frequency outside (0, control_fs/2)")


@dataclass
class RunRecord:
    """Control-rate arrays plus the optional high-rate trace."""

    control_fs: float
    f_r: np.ndarray
    f_m: np.ndarray          # signed ADC sample at the end of each period
    u: np.ndarray            # command computed at that row (DAC-quantized)
    contact: np.ndarray      # plant contact at the end of each period
    contact_ctrl: np.ndarray  # contact the controller acted on at that row
    gain: np.ndarray
    load: np.ndarray
    direction: np.ndarray
    trace: Trace = None

    def reference_signal(self):
        return Signal(self.f_r, self.control_fs, "N")

    def measured_signal(self):
        return Signal(self.f_m, self.control_fs, "N")


def _quantize_dac(u, lsb, u_max):
    u = min(max(u, 0.0), u_max)
    return min(max(round(u / lsb) * lsb, 0.0), u_max)


def run_control_loop(plant_state, ctrl_state, reference, mode="closed",
                     latency_samples=1, nominal_gain=0.06):
    """Sample-synchronous execution of the control loop against the plant.

    Closed loop feeds the controller the direction-rectified measurement
    (slip direction is plant ground truth); open loop renders the reference
    feed-forward through the nominal actuation gain. The command computed
    at step k drives the plant `latency_samples` steps later.
    """
    cfg = plant_state.cfg
    n = len(reference)
    f_r = reference.samples
    dac_lsb = plant_state.dac_lsb
    u_max = cfg.current_max_ma
    closed = mode == "closed"
    inv_gain = 1.0 / nominal_gain

    rec_fm = np.empty(n)
    rec_u = np.empty(n)
    rec_contact = np.empty(n, dtype=np.int8)
    rec_contact_ctrl = np.empty(n, dtype=np.int8)
    rec_gain = np.empty(n)
    rec_load = np.empty(n)
    rec_dir = np.empty(n, dtype=np.int8)

    record_trace = cfg.record_internal
    if record_trace:
        stride = plant_state.trace_stride
        per_step = plant_state.n_sub // stride
        sel = slice(stride - 1, plant_state.n_sub, stride)
        tr_ff = np.empty(n * per_step)
        tr_fm = np.empty(n * per_step)

    pending = [NEUTRAL_CURRENT_MA] * latency_samples
    f_m_prev = 0.0
    contact_prev = plant_state.contact
    dir_prev = plant_state.direction

    for k in range(n):
        if closed:
            u_cmd = control_step(ctrl_state, f_r[k], dir_prev * f_m_prev,
                                 contact_prev)
        else:
            u_cmd = NEUTRAL_CURRENT_MA + f_r[k] * inv_gain
        u_cmd = _quantize_dac(u_cmd, dac_lsb, u_max)

        pending.append(u_cmd)
        u_apply = pending.pop(0)
        _, f_m, w_now, contact = plant_step(plant_state, u_apply)

        rec_fm[k] = f_m
        rec_u[k] = u_cmd
        rec_contact[k] = int(contact)
        rec_contact_ctrl[k] = int(contact_prev)
        rec_gain[k] = plant_state.gain_t
        rec_load[k] = w_now
        rec_dir[k] = 1 if plant_state.direction > 0 else -1
        if record_trace:
            base = k * per_step
            tr_ff[base:base + per_step] = plant_state.sub_contact_force[sel]
            tr_fm[base:base + per_step] = plant_state.sub_measured[sel]

        f_m_prev = f_m
        contact_prev = contact
        dir_prev = plant_state.direction

    trace = None
    if record_trace:
        m = n * per_step
        t = (np.arange(m) + 1.0) / (cfg.control_fs * per_step)
        # 16-bit DAQ quantization of the logged force channel
        full = cfg.adc_fullscale_n
        lsb = plant_state.daq_lsb
        np.clip(tr_fm, -full, full, out=tr_fm)
        tr_fm = np.clip(np.round(tr_fm / lsb) * lsb, -full, full)
        rep = lambda a: np.repeat(np.asarray(a, dtype=float), per_step)
        trace = Trace(np.column_stack([
            t, rep(f_r[:n]), tr_fm, tr_ff, rep(rec_u), rep(rec_load),
            rep(rec_contact), rep(rec_gain)]), cfg.control_fs * per_step)

    return RunRecord(cfg.control_fs, np.asarray(f_r[:n], dtype=float), rec_fm,
                     rec_u, rec_contact, rec_contact_ctrl, rec_gain, rec_load,
                     rec_dir, trace)


@dataclass(frozen=True)
class RunResult:
    out_dir: str
    paths: dict
    record: RunRecord
    report: TrackingReport
    controller: DiscreteFilter
    design_report_json: str


def run_experiment(cfg, out_dir=None):
    """Run one rendering experiment; optionally write the run directory."""
    cfg.validate()
    control_fs = cfg.plant.control_fs
    reference = cfg.reference.build(cfg.duration_s, control_fs, cfg.seed)

    design_report_json = ""
    filt = cfg.controller
    if cfg.mode == "closed" and filt is None:
        result = design_discrete(cfg.design,
                                 RationalTF.constant(cfg.plant.gain_nominal),
                                 cfg.plant.antialias_tf, cfg.plant.sensor_tf)
        filt = result.filter
        design_report_json = result.report.to_json()

    plant_state = init_plant(cfg.plant, cfg.seed)
    ctrl_state = None
    if cfg.mode == "closed":
        ctrl_state = ControllerState(filt, u_max=cfg.plant.current_max_ma)
    record = run_control_loop(plant_state, ctrl_state, reference, cfg.mode,
                              cfg.design.latency_samples,
                              cfg.plant.gain_nominal)

    try:
        if record.trace is not None:
            report = evaluate_tracking(record.trace.reference_signal(),
                                       record.trace.measured_signal())
        else:
            report = evaluate_tracking(record.reference_signal(),
                                       record.measured_signal())
    except (AlignmentError, InsufficientDataError, UndefinedMetricError):
        report = None  # degenerate reference (e.g. all-zero); no tracking

    paths = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["config"] = write_json(os.path.join(out_dir, "config.json"),
                                     config_to_json(cfg))
        if filt is not None:
            paths["controller"] = write_json(
                os.path.join(out_dir, "controller.json"), filt.to_json())
        if design_report_json:
            paths["design_report"] = write_json(
                os.path.join(out_dir, "design_report.json"), design_report_json)
        if cfg.write_trace and record.trace is not None:
            paths["trace"] = record.trace.write(out_dir, cfg.trace_format)
        if report is not None:
            paths["tracking_report"] = write_json(
                os.path.join(out_dir, "tracking_report.json"), report.to_json())
    return RunResult(out_dir or "", paths, record, report, filt,
                     design_report_json)


def run_sweep(cfg, n_freqs=20, f_lo=20.0, f_hi=1000.0,
              amplitudes_n=(0.010, 0.020, 0.030, 0.040),
              duration_per_condition_s=5.0, out_dir=None):
    """Sensitivity sweep over the frequency x amplitude grid.

    Designs the controller once, then runs each condition with its own
    sub-seed. Per-condition lock-in results land in one table; traces are
    not written (summaries only).
    """
    cfg.validate()
    filt = cfg.controller
    if cfg.mode == "closed" and filt is None:
        filt = design_discrete(cfg.design,
                               RationalTF.constant(cfg.plant.gain_nominal),
                               cfg.plant.antialias_tf,
                               cfg.plant.sensor_tf).filter

    plant_cfg = replace(cfg.plant, record_internal=False)
    rows = []
    grid = sensitivity_grid(n_freqs, f_lo, f_hi, amplitudes_n)
    for idx, (f, amp) in enumerate(grid):
        reference = gen_sine(f, amp, duration_per_condition_s,
                             plant_cfg.control_fs)
        plant_state = init_plant(plant_cfg, cfg.seed * 100_000 + idx)
        ctrl_state = (ControllerState(filt, u_max=plant_cfg.current_max_ma)
                      if cfg.mode == "closed" else None)
        record = run_control_loop(plant_state, ctrl_state, reference, cfg.mode,
                                  cfg.design.latency_samples,
                                  plant_cfg.gain_nominal)
        rows.append(sensitivity_condition(f, amp, record.reference_signal(),
                                          record.measured_signal()))
    table = SensitivityTable(tuple(rows))

    paths = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["config"] = write_json(os.path.join(out_dir, "config.json"),
                                     config_to_json(cfg))
        if filt is not None:
            paths["controller"] = write_json(
                os.path.join(out_dir, "controller.json"), filt.to_json())
        paths["sensitivity_json"] = write_json(
            os.path.join(out_dir, "sensitivity.json"), table.to_json())
        with open(os.path.join(out_dir, "sensitivity.csv"), "w") as fh:
            fh.write(table.to_csv())
        paths["sensitivity_csv"] = os.path.join(out_dir, "sensitivity.csv")
    return table, paths


# --- config (de)serialization -------------------------------------------

def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_json(cfg):
    d = _jsonable(cfg)
    d["schema_version"] = SCHEMA_VERSION
    return json.dumps(d, indent=2, sort_keys=True)


def _build(cls, d, special=()):
    kwargs = {}
    for f in fields(cls):
        if d is not None and f.name in d and f.name not in special:
            v = d[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def config_from_dict(d):
    d = dict(d or {})
    plant_d = d.get("plant", {})
    special = {"load", "sensor_tf", "antialias_tf"}
    plant = _build(PlantConfig, plant_d, special)
    if "load" in plant_d:
        plant = replace(plant, load=_build(LoadProfile, plant_d["load"]))
    for key in ("sensor_tf", "antialias_tf"):
        if key in plant_d:
            tf = RationalTF(np.asarray(plant_d[key]["num"], float),
                            np.asarray(plant_d[key]["den"], float))
            plant = replace(plant, **{key: tf})
    design = _build(DesignTarget, d.get("design", {}))
    reference = _build(ReferenceSpec, d.get("reference", {}))
    controller = None
    if d.get("controller"):
        c = d["controller"]
        controller = DiscreteFilter(np.asarray(c["b"], float),
                                    np.asarray(c["a"], float), float(c["fs"]))
    top = _build(ExperimentConfig, d,
                 special={"plant", "design", "reference", "controller",
                          "schema_version"})
    return replace(top, plant=plant, design=design, reference=reference,
                   controller=controller)


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))
