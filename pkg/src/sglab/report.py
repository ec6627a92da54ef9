"""On-disk run artifacts.

Stable filenames inside a run directory:

    metrics.csv   long format ``metric,value``
    samples.csv   header ``x0[,x1]``, one sample per row
    run.json      flat sidecar: every config key as ``config.<key>``, seed,
                  model-call counts and timings
    fig_*.svg     figures, when a run produces them
"""
from __future__ import annotations

import json
import os

import numpy as np

from .eval.metrics import MetricReport
from .sampler import SampleRun

METRICS_CSV = "metrics.csv"
SAMPLES_CSV = "samples.csv"
RUN_JSON = "run.json"


class ReportError(OSError):
    pass


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ReportError(f"output directory {path} is not writable")


def write_samples(samples, path):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    header = ",".join(f"x{i}" for i in range(x.shape[1]))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if x.shape[0]:
            np.savetxt(fh, x, fmt="%.17g", delimiter=",")


def read_samples(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = fh.read()
    if not body.strip():
        return np.zeros((0, len(header)))
    return np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)


def sidecar(config=None, run: SampleRun | None = None, extra: dict | None = None) -> dict:
    """Flat key/value provenance record."""
    out = {}
    if config is not None:
        out.update({f"config.{k}": v for k, v in config.values.items()})
        out["seed"] = config["seed"]
        out["config_echo"] = config.echo()
    if run is not None:
        out["seed"] = run.seed
        out["calls_total"] = run.total_calls
        out["calls_per_step"] = list(run.calls)
        out["steps"] = len(run.calls)
        out["wall_seconds"] = float(sum(run.step_seconds))
        out["n_samples"] = int(run.samples.shape[0])
    out.update(extra or {})
    return out


def write_json(data: dict, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (tuple, np.ndarray)):
        return list(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def emit_report(report: MetricReport, run: SampleRun | None, out_dir, config=None, figures: dict | None = None, extra: dict | None = None) -> list[str]:
    """Write metrics.csv, samples.csv (if a run is given), run.json and figures.

    ``figures`` maps names like ``fig_two_mode.svg`` to objects with a
    ``save(path)`` method.  Returns the written paths.
    """
    _ensure_dir(out_dir)
    written = []
    try:
        path = os.path.join(out_dir, METRICS_CSV)
        report.to_csv(path)
        written.append(path)
        if run is not None:
            path = os.path.join(out_dir, SAMPLES_CSV)
            write_samples(run.samples, path)
            written.append(path)
        meta = sidecar(config, run, extra)
        meta.update({f"metric.{k}": v for k, v in report.metrics.items()})
        meta.update({f"provenance.{k}": v for k, v in report.provenance.items()})
        path = os.path.join(out_dir, RUN_JSON)
        write_json(meta, path)
        written.append(path)
        for name, fig in (figures or {}).items():
            if not (name.startswith("fig_") and name.endswith(".svg")):
                raise ValueError(f"figure name {name!r} must look like fig_*.svg")
            path = os.path.join(out_dir, name)
            fig.save(path)
            written.append(path)
    except OSError as exc:
        raise ReportError(f"write failed for {exc.filename or out_dir}: {exc.strerror}") from None
    return written
