"""Closed-form ground truth on isotropic Gaussian mixtures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import VP, NoiseSchedule, _check_unit, vp_alpha_sigma

LOG_FLOOR = -745.0


@dataclass(frozen=True)
class MixtureDensity:
    weights: np.ndarray
    means: np.ndarray  # (k, d)
    stds: np.ndarray  # (k,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        s = np.asarray(self.stds, dtype=float).reshape(-1)
        if s.size == 1 and w.size > 1:
            s = np.full(w.size, s[0])
        if not (w.size == mu.shape[0] == s.size):
            raise ValueError("weights, means and stds disagree on component count")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise ValueError("component stds must be positive")
        if mu.shape[1] not in (1, 2):
            raise ValueError("only 1D and 2D mixtures are supported")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def component(self, i: int) -> "MixtureDensity":
        return MixtureDensity(np.ones(1), self.means[i : i + 1], self.stds[i : i + 1])

    def sample(self, n: int, rng: np.random.Generator, return_labels=False):
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        x = self.means[labels] + self.stds[labels, None] * rng.standard_normal((n, self.dim))
        return (x, labels) if return_labels else x


def two_mode(std: float = 0.05, center: float = 1.0) -> MixtureDensity:
    return MixtureDensity(np.array([0.5, 0.5]), np.array([[-center], [center]]), np.array([std, std]))


def standard_normal(dim: int = 1) -> MixtureDensity:
    return MixtureDensity(np.ones(1), np.zeros((1, dim)), np.ones(1))


def _points(x, dim):
    """Coerce x to (n, dim); returns (points, output shape for scalars)."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        lead = x.shape
        return x.reshape(-1, 1), lead
    if x.shape[-1] != dim:
        raise ValueError(f"points of dimension {x.shape[-1]} for a {dim}-D mixture")
    lead = x.shape[:-1]
    return x.reshape(-1, dim), lead


def _component_logpdf(m: MixtureDensity, pts):
    d = m.dim
    sq = ((pts[:, None, :] - m.means[None, :, :]) ** 2).sum(-1)
    var = m.stds**2
    return np.log(m.weights) - 0.5 * sq / var - 0.5 * d * np.log(2 * math.pi * var)


def mixture_log_density(m: MixtureDensity, x):
    pts, lead = _points(x, m.dim)
    out = logsumexp(_component_logpdf(m, pts), axis=1)
    return np.maximum(out, LOG_FLOOR).reshape(lead)


def mixture_density_at(m: MixtureDensity, x):
    pts, lead = _points(x, m.dim)
    return np.exp(logsumexp(_component_logpdf(m, pts), axis=1)).reshape(lead)


def responsibilities(m: MixtureDensity, pts):
    lp = _component_logpdf(m, pts)
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def mixture_score_at(m: MixtureDensity, x):
    x = np.asarray(x, dtype=float)
    pts, _ = _points(x, m.dim)
    r = responsibilities(m, pts)
    pull = (m.means[None, :, :] - pts[:, None, :]) / (m.stds**2)[None, :, None]
    s = (r[:, :, None] * pull).sum(1)
    return s.reshape(x.shape)


def mixture_laplacian_density(m: MixtureDensity, x):
    pts, lead = _points(x, m.dim)
    lp = _component_logpdf(m, pts)
    sq = ((pts[:, None, :] - m.means[None, :, :]) ** 2).sum(-1)
    var = m.stds**2
    factor = sq / var**2 - m.dim / var
    return (np.exp(lp) * factor).sum(1).reshape(lead)


def diffused_mixture(data: MixtureDensity, schedule: NoiseSchedule, t: float) -> MixtureDensity:
    """Marginal of the forward process started from ``data``: still a mixture."""
    _check_unit(t)
    a, b = schedule.coefficients(t)
    stds = np.sqrt(a * a * data.stds**2 + b * b)
    return MixtureDensity(data.weights, a * data.means, stds)


def heat_family(data: MixtureDensity, variance: float) -> MixtureDensity:
    """data convolved with N(0, variance I)."""
    return MixtureDensity(data.weights, data.means, np.sqrt(data.stds**2 + variance))


# -- grids ----------------------------------------------------------------


@dataclass
class DensityGrid:
    lower: np.ndarray
    upper: np.ndarray
    resolution: tuple
    values: np.ndarray
    escaped_mass: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        self.resolution = tuple(int(r) for r in np.atleast_1d(self.resolution))
        self.values = np.asarray(self.values, dtype=float).reshape(self.resolution)
        if np.any(self.upper <= self.lower) or min(self.resolution) < 1:
            raise ValueError("degenerate grid box")

    @classmethod
    def empty(cls, lower, upper, resolution):
        res = tuple(int(r) for r in np.atleast_1d(resolution))
        return cls(lower, upper, res, np.zeros(res))

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        return [lo + (np.arange(r) + 0.5) * h for lo, r, h in zip(self.lower, self.resolution, self.spacing)]

    def points(self) -> np.ndarray:
        """Cell centres, (prod(resolution), dim) in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)

    def same_layout(self, other: "DensityGrid") -> bool:
        return (
            self.resolution == other.resolution
            and np.allclose(self.lower, other.lower, rtol=0, atol=1e-12)
            and np.allclose(self.upper, other.upper, rtol=0, atol=1e-12)
        )

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def normalized(self) -> "DensityGrid":
        total = self.mass()
        if not total > 0:
            raise ValueError("cannot normalize a grid with no mass")
        return DensityGrid(self.lower, self.upper, self.resolution, self.values / total, self.escaped_mass, dict(self.meta))

    def with_values(self, values) -> "DensityGrid":
        return DensityGrid(self.lower, self.upper, self.resolution, values, self.escaped_mass, dict(self.meta))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for i, ax in enumerate(self.axes()):
                w.writerow([f"axis{i}"] + [repr(float(c)) for c in ax])
            rows = self.values.reshape(self.resolution[0], -1)
            for row in rows:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "DensityGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        axes = []
        while rows and rows[0] and rows[0][0].startswith("axis"):
            axes.append(np.array([float(v) for v in rows.pop(0)[1:]]))
        values = np.array([[float(v) for v in r] for r in rows])
        res = tuple(len(a) for a in axes)
        lower, upper = [], []
        for a in axes:
            h = (a[-1] - a[0]) / (len(a) - 1) if len(a) > 1 else 1.0
            lower.append(a[0] - h / 2)
            upper.append(a[-1] + h / 2)
        return cls(lower, upper, res, values.reshape(res))


def density_grid(m: MixtureDensity, lower, upper, resolution, normalize=True) -> DensityGrid:
    g = DensityGrid.empty(lower, upper, resolution)
    if g.dim != m.dim:
        raise ValueError("grid and mixture dimensions differ")
    g = g.with_values(mixture_density_at(m, g.points()).reshape(g.resolution))
    return g.normalized() if normalize else g


def _normalize_log(log_values, grid: DensityGrid) -> DensityGrid:
    log_values = np.maximum(log_values, LOG_FLOOR)
    shift = log_values.max()
    vals = np.exp(log_values - shift)
    return grid.with_values(vals.reshape(grid.resolution)).normalized()


def sg_log_density(data: MixtureDensity, schedule: NoiseSchedule, t: float, delta: float, omega: float, x):
    """Unnormalised log of p_t^(1+omega) / p_{t+delta}^omega."""
    if t + delta > 1.0 + 1e-12:
        raise ValueError(f"t + delta = {t + delta} exceeds 1")
    if omega < 0:
        raise ValueError("omega must be non-negative")
    lp = mixture_log_density(diffused_mixture(data, schedule, t), x)
    if omega == 0 or delta == 0:
        return lp
    lq = mixture_log_density(diffused_mixture(data, schedule, min(t + delta, 1.0)), x)
    return (1.0 + omega) * lp - omega * lq


def sg_density_grid(data, schedule, t, delta, omega, lower, upper, resolution) -> DensityGrid:
    g = DensityGrid.empty(lower, upper, resolution)
    logv = sg_log_density(data, schedule, t, delta, omega, g.points())
    out = _normalize_log(logv, g)
    out.meta.update(t=t, delta=delta, omega=omega)
    return out


def heat_variance(schedule: NoiseSchedule, t: float) -> float:
    """Variance-expansion clock u(t) = sigma_t^2 of the schedule."""
    if schedule.kind == VP:
        return vp_alpha_sigma(schedule, t)[1] ** 2
    return schedule.coefficients(t)[1] ** 2


def heat_g2(schedule: NoiseSchedule, t: float) -> float:
    """g(t)^2 = du/dt for the variance-expansion family."""
    if schedule.kind == VP:
        a, _ = vp_alpha_sigma(schedule, t)
        return schedule.beta(t) * a * a
    return 2.0 * t


def heat_residual(data: MixtureDensity, schedule: NoiseSchedule, t: float, x, h: float = 1e-5):
    """d/dt p_t(x) - g(t)^2/2 * Laplacian p_t(x) on p_t = data * N(0, sigma_t^2).

    The time derivative is a central difference across the analytic family;
    the Laplacian is closed form.  Points are returned in the shape of ``x``.
    """
    lo, hi = max(t - h, 0.0), min(t + h, 1.0)
    p_hi = mixture_density_at(heat_family(data, heat_variance(schedule, hi)), x)
    p_lo = mixture_density_at(heat_family(data, heat_variance(schedule, lo)), x)
    dpdt = (p_hi - p_lo) / (hi - lo)
    lap = mixture_laplacian_density(heat_family(data, heat_variance(schedule, t)), x)
    return dpdt - 0.5 * heat_g2(schedule, t) * lap


# -- analytic score / velocity field ---------------------------------------


class MixtureField:
    """Exact model outputs for mixture data.

    ``condition`` ``None`` is the unconditional (empty-label) field; an integer
    selects one mixture component as the class.  VP schedules yield scores,
    RF schedules yield velocities E[eps - x0 | z_t].
    """

    def __init__(self, data: MixtureDensity, schedule: NoiseSchedule):
        self.data = data
        self.schedule = schedule
        self.dim = data.dim
        self.output = "score" if schedule.kind == VP else "velocity"
        self.n_classes = data.n_components

    def _mixture_for(self, condition):
        if condition is None:
            return self.data
        if not (0 <= int(condition) < self.data.n_components):
            raise ValueError(f"unknown condition id {condition!r}")
        return self.data.component(int(condition))

    def __call__(self, x, t: float, condition=None):
        m = self._mixture_for(condition)
        x = np.asarray(x, dtype=float)
        if self.output == "score":
            return mixture_score_at(diffused_mixture(m, self.schedule, t), x)
        return mixture_velocity_at(m, x, t)


def mixture_velocity_at(m: MixtureDensity, z, t: float):
    """Rectified-flow velocity E[eps - x0 | z_t = z] for mixture data."""
    _check_unit(t)
    z = np.asarray(z, dtype=float)
    pts, _ = _points(z, m.dim)
    a, b = 1.0 - t, t
    var = a * a * m.stds**2 + b * b  # (k,)
    r = responsibilities(diffused_mixture(m, NoiseSchedule(kind="rf"), t), pts)
    resid = pts[:, None, :] - a * m.means[None, :, :]
    e_x0 = m.means[None] + (a * m.stds**2 / var)[None, :, None] * resid
    e_eps = (b / var)[None, :, None] * resid
    v = (r[:, :, None] * (e_eps - e_x0)).sum(1)
    return v.reshape(z.shape)
