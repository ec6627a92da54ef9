"""Double-swirl data: two interleaved Archimedean spirals with Gaussian jitter."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .analytic import MixtureDensity


@dataclass(frozen=True)
class SwirlSpec:
    theta_min: float = 0.5 * math.pi
    theta_max: float = 3.0 * math.pi
    radius_scale: float = 0.25  # r = radius_scale * theta
    jitter: float = 0.05

    def curve(self, theta) -> np.ndarray:
        """Points of the first spiral; the second is its point reflection."""
        r = self.radius_scale * theta
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


class SwirlManifold:
    """Dense arc-length discretisation of both spirals."""

    def __init__(self, spec: SwirlSpec = SwirlSpec(), points_per_spiral: int = 10_000):
        self.spec = spec
        fine = np.linspace(spec.theta_min, spec.theta_max, 200_001)
        c = spec.curve(fine)
        seg = np.hypot(*np.diff(c, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(arc[-1])
        s = np.linspace(0.0, self.length, points_per_spiral)
        theta = np.interp(s, arc, fine)
        one = spec.curve(theta)
        self.arc = s
        self.points = np.concatenate([one, -one])
        self.spiral_id = np.repeat([0, 1], points_per_spiral)
        self.arc_of_point = np.concatenate([s, s])
        self._theta_of_arc = (arc, fine)

    @cached_property
    def tree(self):
        return cKDTree(self.points)

    def theta_at(self, s):
        arc, fine = self._theta_of_arc
        return np.interp(s, arc, fine)

    def nearest(self, x):
        """(distance, spiral id, arc length) of the closest manifold point."""
        d, idx = self.tree.query(np.asarray(x, dtype=float).reshape(-1, 2))
        return d, self.spiral_id[idx], self.arc_of_point[idx]

    def sample(self, n: int, rng: np.random.Generator, return_labels=False):
        s = rng.uniform(0.0, self.length, size=n)
        which = rng.integers(0, 2, size=n)
        pts = self.spec.curve(self.theta_at(s))
        pts = np.where(which[:, None] == 1, -pts, pts)
        pts = pts + self.spec.jitter * rng.standard_normal((n, 2))
        return (pts, which) if return_labels else pts

    def fitted_mixture(self, n_components: int = 200) -> MixtureDensity:
        """Equal-weight isotropic mixture along the spirals (metric baselines only)."""
        per = n_components // 2
        s = (np.arange(per) + 0.5) * self.length / per
        one = self.spec.curve(self.theta_at(s))
        spacing = self.length / per
        std = math.sqrt(self.spec.jitter**2 + spacing**2 / 12.0)
        means = np.concatenate([one, -one])
        k = means.shape[0]
        return MixtureDensity(np.full(k, 1.0 / k), means, np.full(k, std))
