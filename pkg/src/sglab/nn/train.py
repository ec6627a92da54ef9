from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..analytic import MixtureDensity
from .losses import CFM, DSM, RF_LOSS, dsm_loss, flow_loss
from .net import ScoreNet
from .optim import AdamState, adam_update

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: str = DSM
    weighting: str = "sigma2"
    batch_size: int = 256
    steps: int = 20000
    lr: float = 2e-3
    lr_final: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    drop_prob: float = 0.1
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.loss not in (DSM, CFM, RF_LOSS):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if not self.lr > 0 or not self.lr_final > 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.steps < 0 or self.log_every < 1:
            raise ValueError("batch_size >= 1, steps >= 0 and log_every >= 1 required")

    def learning_rate(self, step: int) -> float:
        """Cosine decay from lr to lr_final over the run."""
        if self.steps <= 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))


class SampleSource:
    """Draws training batches either from a mixture or from a fixed sample array."""

    def __init__(self, data, labels=None):
        self.mixture = data if isinstance(data, MixtureDensity) else None
        self.samples = None if self.mixture is not None else np.asarray(data, dtype=float)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.intp)
        if self.samples is not None and self.samples.ndim == 1:
            self.samples = self.samples[:, None]

    @property
    def dim(self):
        return self.mixture.dim if self.mixture is not None else self.samples.shape[1]

    def batch(self, n, rng):
        if self.mixture is not None:
            return self.mixture.sample(n, rng, return_labels=True)
        idx = rng.integers(0, self.samples.shape[0], size=n)
        return self.samples[idx], None if self.labels is None else self.labels[idx]


def train(net: ScoreNet, config: TrainConfig, data, schedule, labels=None, callback=None):
    """Fit ``net`` in place; returns (net, loss trace as [(step, loss)])."""
    rng = np.random.default_rng(config.seed)
    source = data if isinstance(data, SampleSource) else SampleSource(data, labels)
    if source.dim != net.dim:
        raise ValueError(f"data dimension {source.dim} does not match network dimension {net.dim}")
    state = AdamState()
    trace = []
    running = 0.0
    for step in range(config.steps):
        x0, y = source.batch(config.batch_size, rng)
        if net.n_classes == 0:
            y = None
        if config.loss == DSM:
            value, graph, loss = dsm_loss(net, x0, y, schedule, rng, config.drop_prob, config.weighting)
        else:
            value, graph, loss = flow_loss(net, x0, y, schedule, rng, config.loss, config.drop_prob)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step}")
        grads = graph.backward(loss)
        adam_update(net.params, grads, state, config.learning_rate(step), config.beta1, config.beta2, config.eps)
        running += value
        if (step + 1) % config.log_every == 0:
            mean = running / config.log_every
            trace.append((step + 1, mean))
            running = 0.0
            log.debug("step %d loss %.6f", step + 1, mean)
            if callback is not None:
                callback(step + 1, mean)
    return net, trace


def write_loss_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, value in trace:
            w.writerow([step, repr(float(value))])


def read_loss_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(s), float(v)) for s, v in rows]
