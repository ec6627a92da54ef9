from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..analytic import DensityGrid
from ..swirl import SwirlManifold

METRIC_KEYS = (
    "tv_distance",
    "valley_mass",
    "outlier_fraction",
    "mean_manifold_distance",
    "mode_recall",
    "heat_residual_max",
    "escaped_mass",
)


class GridMismatch(ValueError):
    pass


def histogram_density(samples, lower, upper, resolution) -> DensityGrid:
    """Normalised histogram; samples outside the box go to ``escaped_mass``."""
    x = np.asarray(samples, dtype=float)
    grid = DensityGrid.empty(lower, upper, resolution)
    x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    if x.shape[1] != grid.dim:
        raise ValueError(f"{x.shape[1]}-D samples on a {grid.dim}-D grid")
    inside = np.all((x >= grid.lower) & (x < grid.upper), axis=1)
    idx = np.floor((x[inside] - grid.lower) / grid.spacing).astype(np.intp)
    idx = np.minimum(idx, np.asarray(grid.resolution) - 1)
    counts = np.zeros(grid.resolution)
    np.add.at(counts, tuple(idx.T), 1.0)
    n_in = int(inside.sum())
    if n_in == 0:
        raise ValueError("every sample lies outside the histogram box")
    out = grid.with_values(counts / (n_in * grid.cell_volume))
    out.escaped_mass = 1.0 - n_in / x.shape[0]
    return out


def tv_distance(a: DensityGrid, b: DensityGrid) -> float:
    if not a.same_layout(b):
        raise GridMismatch("density grids differ in box or resolution")
    return float(0.5 * np.abs(a.values - b.values).sum() * a.cell_volume)


def valley_mass(data, interval=(-0.25, 0.25)) -> float:
    """Probability mass in [lo, hi] of 1-D samples or of a 1-D grid."""
    lo, hi = interval
    if not lo < hi:
        raise ValueError("valley interval needs lo < hi")
    if isinstance(data, DensityGrid):
        if data.dim != 1:
            raise ValueError("valley_mass is 1-D only")
        edges = data.lower[0] + np.arange(data.resolution[0] + 1) * data.spacing[0]
        overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
        return float((data.values * overlap).sum())
    x = np.asarray(data, dtype=float)
    if x.ndim > 1:
        if x.shape[1] != 1:
            raise ValueError("valley_mass is 1-D only")
        x = x[:, 0]
    return float(np.mean((x >= lo) & (x <= hi)))


def bootstrap_se(fn, *arrays, n_boot=200, seed=0) -> float:
    """Paired bootstrap standard error of fn(*arrays) over a shared row index."""
    rng = np.random.default_rng(seed)
    n = len(arrays[0])
    vals = []
    for _ in range(n_boot):
        i = rng.integers(0, n, size=n)
        vals.append(fn(*(a[i] for a in arrays)))
    return float(np.std(vals, ddof=1))


def swirl_outlier_stats(samples, manifold: SwirlManifold, epsilon=0.2, bins=64):
    """(outlier_fraction, mean_manifold_distance, mode_recall)."""
    x = np.asarray(samples, dtype=float).reshape(-1, 2)
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d, spiral, arc = manifold.nearest(x)
    inlier = d <= epsilon
    b = np.minimum((arc / manifold.length * bins).astype(np.intp), bins - 1)
    hit = np.zeros((2, bins), dtype=bool)
    hit[spiral[inlier], b[inlier]] = True
    return float(1.0 - inlier.mean()), float(d.mean()), float(hit.mean())


@dataclass
class MetricReport:
    metrics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, name, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {name} is not finite")
        if name in ("valley_mass", "outlier_fraction", "mode_recall", "escaped_mass", "tv_distance") and not -1e-12 <= value <= 1 + 1e-12:
            raise ValueError(f"metric {name}={value} outside [0, 1]")
        self.metrics[name] = value
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k, v in self.metrics.items():
                w.writerow([k, repr(v)])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"metrics": self.metrics, "provenance": self.provenance}, fh, indent=1, sort_keys=True)
            fh.write("\n")
