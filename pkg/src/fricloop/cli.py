"""Command-line entry points: design, run, sweep, analyze, characterize.

Configuration comes from a JSON file (see `experiment.config_to_json`)
with flag overrides; `--seed` is mandatory for `run` and `sweep` so that
every simulation is explicitly reproducible.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .analysis import evaluate_tracking
from .controller import design_discrete
from .errors import FricloopError
from .experiment import (
    ExperimentConfig,
    ReferenceSpec,
    config_to_json,
    load_config,
    run_experiment,
    run_sweep,
)
from .io import Trace, write_json
from .lti import FrequencyResponse, RationalTF
from .sysid import average_impulse_spectra, estimate_gain, fit_second_order, load_signal_csv, lock_in


def _load_or_default(path):
    return load_config(path) if path else ExperimentConfig()


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "fidelity", None):
        cfg = replace(cfg, plant=replace(cfg.plant, fidelity=args.fidelity,
                                         internal_fs=0.0))
    if getattr(args, "duration", None):
        cfg = replace(cfg, duration_s=args.duration)
    if getattr(args, "reference", None):
        ref = args.reference
        if ref.startswith("texture:"):
            cfg = replace(cfg, reference=ReferenceSpec(kind="texture",
                                                       texture=ref.split(":", 1)[1]))
        else:
            cfg = replace(cfg, reference=replace(cfg.reference, kind=ref))
    if getattr(args, "trace_format", None):
        cfg = replace(cfg, trace_format=args.trace_format)
    return cfg


def cmd_design(args):
    cfg = _apply_overrides(_load_or_default(args.config), args)
    result = design_discrete(cfg.design, RationalTF.constant(cfg.plant.gain_nominal),
                             cfg.plant.antialias_tf, cfg.plant.sensor_tf)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "controller.json"), result.filter.to_json())
    write_json(os.path.join(args.out, "design_report.json"), result.report.to_json())
    nominal = result.report.design_gain
    bw = result.report.bandwidth_hz.get(nominal)
    print(f"controller written to {args.out}; predicted -3 dB bandwidth at "
          f"{nominal:g} N/mA: {bw if bw else 'n/a'} Hz")
    return 0


def cmd_run(args):
    cfg = _apply_overrides(_load_or_default(args.config), args)
    result = run_experiment(cfg, out_dir=args.out)
    if result.report is not None:
        print(f"run complete: R^2 = {result.report.r2:.4f} over "
              f"{result.report.n_swipes} swipes, "
              f"lag = {result.report.lag_s * 1e3:.3f} ms")
    else:
        print("run complete (reference too degenerate for a tracking report)")
    for name, path in sorted(result.paths.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_sweep(args):
    cfg = _apply_overrides(_load_or_default(args.config), args)
    table, paths = run_sweep(cfg, duration_per_condition_s=args.duration or 5.0,
                             out_dir=args.out)
    ok = sum(1 for r in table.rows if r.ok)
    print(f"sweep complete: {len(table.rows)} conditions, {ok} with >=3 swipes")
    for name, path in sorted(paths.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_analyze(args):
    trace = Trace.read(args.trace)
    report = evaluate_tracking(trace.reference_signal(), trace.measured_signal())
    os.makedirs(args.out, exist_ok=True)
    path = write_json(os.path.join(args.out, "tracking_report.json"),
                      report.to_json())
    print(f"R^2 = {report.r2:.4f} over {report.n_swipes} swipes "
          f"(lag {report.lag_s * 1e3:.3f} ms) -> {path}")
    return 0


def cmd_characterize(args):
    with open(args.config) as fh:
        spec = json.load(fh)
    os.makedirs(args.out, exist_ok=True)
    wrote = []

    impulses = spec.get("impulse_csv", [])
    if impulses:
        records = [load_signal_csv(p, unit="N") for p in impulses]
        avg = average_impulse_spectra(records, spec.get("window_s", 0.5))
        band = tuple(spec.get("sensor_fit_band_hz", (10.0, 1000.0)))
        fit = fit_second_order(avg.response, band)
        payload = json.loads(fit.tf.to_json())
        payload.update(gain=fit.gain, fn_hz=fit.fn, zeta=fit.zeta,
                       residual=fit.residual, low_confidence=fit.low_confidence,
                       power_shifts_db=avg.shifts_db.tolist(),
                       outlier_records=list(avg.outliers))
        wrote.append(write_json(os.path.join(args.out, "sensor_fit.json"),
                                json.dumps(payload, indent=2, sort_keys=True)))

    sine_runs = spec.get("filter_runs", [])
    if sine_runs:
        freqs, values = [], []
        for run in sorted(sine_runs, key=lambda r: r["freq_hz"]):
            inp = load_signal_csv(run["input_csv"], unit="V")
            out = load_signal_csv(run["output_csv"], unit="V")
            li_in, li_out = lock_in(inp, run["freq_hz"]), lock_in(out, run["freq_hz"])
            freqs.append(run["freq_hz"])
            values.append(li_out.amplitude / li_in.amplitude *
                          np.exp(1j * np.radians(li_out.phase_deg - li_in.phase_deg)))
        resp = FrequencyResponse(np.asarray(freqs), np.asarray(values))
        band = tuple(spec.get("filter_fit_band_hz", (freqs[0], 6000.0)))
        fit = fit_second_order(resp, band)
        payload = json.loads(fit.tf.to_json())
        payload.update(gain=fit.gain, fn_hz=fit.fn, zeta=fit.zeta,
                       residual=fit.residual, low_confidence=fit.low_confidence)
        wrote.append(write_json(os.path.join(args.out, "antialias_fit.json"),
                                json.dumps(payload, indent=2, sort_keys=True)))

    trials_spec = spec.get("gain_trials", [])
    if trials_spec:
        trials = [(load_signal_csv(t["drive_csv"], unit="mA"),
                   load_signal_csv(t["force_csv"], unit="N"),
                   t["freq_hz"], t.get("direction", "right"))
                  for t in trials_spec]
        est = estimate_gain(trials)
        payload = {"mean": est.mean, "min": est.min, "max": est.max,
                   "per_trial": [{"freq_hz": f, "gain": g, "direction": d}
                                 for f, g, d in est.per_trial]}
        wrote.append(write_json(os.path.join(args.out, "gain_estimate.json"),
                                json.dumps(payload, indent=2, sort_keys=True)))

    if not wrote:
        print("characterize config named no inputs "
              "(impulse_csv / filter_runs / gain_trials)", file=sys.stderr)
        return 1
    for p in wrote:
        print(f"wrote {p}")
    return 0


def cmd_print_config(args):
    print(config_to_json(_load_or_default(args.config)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fricloop",
        description="Closed-loop electroadhesion friction rendering simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--fidelity", choices=["envelope", "carrier"])

    p = sub.add_parser("design", help="synthesize a controller and report")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("run", help="run one rendering experiment")
    common(p, seed_required=True)
    p.add_argument("--mode", choices=["closed", "open"])
    p.add_argument("--duration", type=float)
    p.add_argument("--reference",
                   help="square | sine | texture:NAME | csv (overrides config)")
    p.add_argument("--trace-format", dest="trace_format", choices=["npy", "csv"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the sensitivity grid")
    common(p, seed_required=True)
    p.add_argument("--mode", choices=["closed", "open"])
    p.add_argument("--duration", type=float,
                   help="seconds per grid condition (default 5)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="recompute tracking from a stored trace")
    p.add_argument("--trace", required=True, help="trace .npy or .csv path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("characterize", help="identify models from recorded CSVs")
    p.add_argument("--config", required=True, help="characterization input JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("print-config", help="print the effective config JSON")
    p.add_argument("--config")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FricloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
