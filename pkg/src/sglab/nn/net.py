"""Small MLP score / velocity network."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..schedule import NoiseSchedule
from .graph import ValueGraph

# what the raw MLP output means
SCORE = "score"  # raw output is the score
EPS = "eps"  # raw output predicts eps; score = -raw / sigma_t
VELOCITY = "velocity"  # raw output is a flow velocity

EMPTY = None  # the empty label


def time_embedding(t, dim: int = 16) -> np.ndarray:
    """Sinusoidal features with frequencies geometric from 1 to 1000."""
    t = np.atleast_1d(np.asarray(t, dtype=float)).reshape(-1, 1)
    freqs = np.geomspace(1.0, 1000.0, dim // 2)
    arg = t * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class ScoreNet:
    dim: int
    hidden: tuple = (128, 128)
    emb_dim: int = 16
    n_classes: int = 0
    parameterization: str = SCORE
    schedule: NoiseSchedule | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.parameterization not in (SCORE, EPS, VELOCITY):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.parameterization == EPS and self.schedule is None:
            raise ValueError("eps parameterization needs a schedule")
        if not self.params:
            self.params = {name: np.zeros(shape) for name, shape in self.param_shapes().items()}

    @property
    def widths(self) -> list[int]:
        return [self.dim + self.emb_dim, *self.hidden, self.dim]

    @property
    def vocab_size(self) -> int:
        return self.n_classes + 1

    def param_shapes(self) -> dict[str, tuple]:
        w = self.widths
        shapes = {"cond": (self.vocab_size, w[1])}
        for i in range(len(w) - 1):
            shapes[f"W{i}"] = (w[i], w[i + 1])
            shapes[f"b{i}"] = (w[i + 1],)
        return shapes

    def init(self, rng: np.random.Generator) -> "ScoreNet":
        """He-style init for hidden layers, a small output layer."""
        w = self.widths
        params = {"cond": np.zeros((self.vocab_size, w[1]))}
        n_layers = len(w) - 1
        for i in range(n_layers):
            scale = math.sqrt(2.0 / w[i]) if i < n_layers - 1 else 0.1 / math.sqrt(w[i])
            params[f"W{i}"] = rng.standard_normal((w[i], w[i + 1])) * scale
            params[f"b{i}"] = np.zeros(w[i + 1])
        self.params = params
        return self

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def condition_rows(self, c, n: int) -> np.ndarray:
        """Embedding row per sample: 0 for the empty label, k+1 for class k."""
        if c is None:
            return np.zeros(n, dtype=np.intp)
        if np.isscalar(c):
            c = np.full(n, c)
        c = np.asarray(c)
        if c.dtype == object:
            c = np.array([-1 if v is None else v for v in c])
        c = c.astype(np.intp)
        if np.any(c >= self.n_classes) or np.any(c < -1):
            raise ValueError(f"unknown condition id in {np.unique(c)}")
        return c + 1  # -1 encodes the empty label

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("t outside [0, 1]")
        return x, t, np.concatenate([x, time_embedding(t, self.emb_dim)], axis=1)

    def output_scale(self, t):
        """Per-row factor turning the raw output into the field value."""
        if self.parameterization != EPS:
            return None
        t = np.atleast_1d(np.asarray(t, dtype=float))
        sig = np.sqrt(-np.expm1(-self.schedule.beta_integral(t)))
        return -1.0 / sig

    def raw(self, x, t, c=None) -> np.ndarray:
        x, t, h = self._inputs(x, t)
        p = self.params
        n_layers = len(self.widths) - 1
        rows = self.condition_rows(c, x.shape[0])
        for i in range(n_layers):
            h = h @ p[f"W{i}"] + p[f"b{i}"]
            if i == 0:
                h = h + p["cond"][rows]
            if i < n_layers - 1:
                h = h / (1.0 + np.exp(-h))
        return h

    def forward(self, x, t, c=None) -> np.ndarray:
        shape = np.shape(x)
        out = self.raw(x, t, c)
        scale = self.output_scale(np.broadcast_to(np.asarray(t, dtype=float), (out.shape[0],)))
        if scale is not None:
            out = out * scale[:, None]
        return out.reshape(shape)

    __call__ = forward

    def build(self, graph: ValueGraph, x, t, c=None):
        """Record the forward pass on ``graph``; returns (raw output node, scale)."""
        x, t, h0 = self._inputs(x, t)
        nodes = {name: graph.param(name, value) for name, value in self.params.items()}
        n_layers = len(self.widths) - 1
        rows = self.condition_rows(c, x.shape[0])
        h = graph.const(h0)
        for i in range(n_layers):
            h = graph.add(graph.matmul(h, nodes[f"W{i}"]), nodes[f"b{i}"])
            if i == 0:
                h = graph.add(h, graph.rows(nodes["cond"], rows))
            if i < n_layers - 1:
                h = graph.silu(h)
        return h, self.output_scale(t)


def net_forward(net: ScoreNet, x, t, c=None):
    return net.forward(x, t, c)


class NetField:
    """Adapter exposing a trained ScoreNet as a score / velocity field."""

    def __init__(self, net: ScoreNet):
        self.net = net
        self.dim = net.dim
        self.output = "velocity" if net.parameterization == VELOCITY else "score"
        self.n_classes = net.n_classes

    def __call__(self, x, t: float, condition=None):
        return self.net.forward(x, t, condition)
