"""Trace and report file formats.

A trace is a fixed-order columnar table sampled at the 60 kHz-equivalent
logging rate: t_s, f_r_N, f_m_N, f_f_N, u_mA, W_N, contact {0,1,2},
P_t_NpermA. Binary form is a plain .npy 2-D array plus a JSON sidecar
naming the columns; text form is CSV with a header row. Both round-trip
float64 exactly, and neither embeds timestamps, so reruns with the same
seed are byte-identical.
"""

import json
import os

import numpy as np

from .errors import InvalidParameterError
from .lti import Signal

TRACE_COLUMNS = ("t_s", "f_r_N", "f_m_N", "f_f_N", "u_mA", "W_N", "contact",
                 "P_t_NpermA")

SCHEMA_VERSION = 1


class Trace:
    """High-rate simulation trace with the canonical column order."""

    def __init__(self, data, fs):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(TRACE_COLUMNS):
            raise InvalidParameterError(
                f"trace must be (n, {len(TRACE_COLUMNS)}); got {data.shape}")
        self.data = data
        self.fs = float(fs)

    def column(self, name):
        return self.data[:, TRACE_COLUMNS.index(name)]

    def reference_signal(self):
        return Signal(self.column("f_r_N"), self.fs, "N")

    def measured_signal(self):
        return Signal(self.column("f_m_N"), self.fs, "N")

    def write(self, out_dir, fmt="npy", name="trace"):
        os.makedirs(out_dir, exist_ok=True)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "columns": list(TRACE_COLUMNS),
            "fs": self.fs,
            "format": fmt,
        }
        with open(os.path.join(out_dir, f"{name}_meta.json"), "w") as fh:
            fh.write(json.dumps(meta, indent=2, sort_keys=True))
        if fmt == "npy":
            path = os.path.join(out_dir, f"{name}.npy")
            np.save(path, self.data)
        elif fmt == "csv":
            path = os.path.join(out_dir, f"{name}.csv")
            np.savetxt(path, self.data, fmt="%.17g", delimiter=",",
                       header=",".join(TRACE_COLUMNS), comments="")
        else:
            raise InvalidParameterError(f"unknown trace format {fmt!r}")
        return path

    @classmethod
    def read(cls, path):
        """Load a trace from .npy or .csv; fs comes from the sidecar when
        present, otherwise from the time column."""
        base, ext = os.path.splitext(path)
        if ext == ".npy":
            data = np.load(path)
        elif ext == ".csv":
            data = np.loadtxt(path, delimiter=",", skiprows=1)
        else:
            raise InvalidParameterError(f"unknown trace extension {ext!r}")
        meta_path = base + "_meta.json"
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                fs = json.load(fh)["fs"]
        else:
            t = data[:, 0]
            fs = 1.0 / (t[1] - t[0])
        return cls(data, fs)


def write_json(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")
    return path
