"""Denoising score matching and flow-matching objectives.

Each loss is split into a draw step (times, noise, dropped conditions) and a
deterministic build step, so a fixed set of draws can be re-evaluated under
perturbed parameters for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..schedule import RF, VP, NoiseSchedule
from .graph import ValueGraph
from .net import ScoreNet

DSM = "dsm"
CFM = "cfm"
RF_LOSS = "rf"


@dataclass
class Draws:
    t: np.ndarray  # (n,)
    eps: np.ndarray  # (n, d)
    cond: np.ndarray | None  # (n,) ints, -1 for the empty label


def draw(x0, labels, schedule: NoiseSchedule, rng: np.random.Generator, drop_prob=0.1, kind=DSM) -> Draws:
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    lo = schedule.t_eps
    hi = 1.0 - schedule.t_eps if kind != DSM else 1.0
    t = rng.uniform(lo, hi, size=n)
    eps = rng.standard_normal(x0.shape)
    cond = None
    if labels is not None:
        cond = np.asarray(labels, dtype=np.intp).copy()
        drop = rng.random(n) < drop_prob
        cond[drop] = -1
    return Draws(t, eps, cond)


def vp_alpha_sigma_array(schedule: NoiseSchedule, t):
    log_a = -0.5 * schedule.beta_integral(np.asarray(t, dtype=float))
    return np.exp(log_a), np.sqrt(-np.expm1(2.0 * log_a))


def dsm_target(x0, eps, t, schedule):
    """Conditional score grad log q_t(x_t | x_0) = -(x_t - alpha x_0) / sigma^2."""
    a, s = vp_alpha_sigma_array(schedule, t)
    xt = a[:, None] * x0 + s[:, None] * eps
    return xt, -(xt - a[:, None] * x0) / (s * s)[:, None]


def dsm_weight(schedule, t, weighting="sigma2"):
    if weighting == "sigma2":
        return vp_alpha_sigma_array(schedule, t)[1] ** 2
    if weighting == "none":
        return np.ones_like(t)
    raise ValueError(f"unknown weighting {weighting!r}")


def _weighted_mse(graph: ValueGraph, pred, scale, target, weight):
    n = target.shape[0]
    if scale is not None:
        pred = graph.mul(pred, scale[:, None])
    diff = graph.sub(pred, target)
    sq = graph.square(diff)
    if weight is not None:
        sq = graph.mul(sq, weight[:, None])
    return graph.mul(graph.sum(sq), 1.0 / n)


def dsm_loss_from_draws(net: ScoreNet, x0, draws: Draws, schedule: NoiseSchedule, weighting="sigma2"):
    if schedule.kind != VP:
        raise ValueError("denoising score matching needs a VP schedule")
    x0 = np.asarray(x0, dtype=float).reshape(-1, net.dim)
    xt, target = dsm_target(x0, draws.eps, draws.t, schedule)
    graph = ValueGraph()
    out, scale = net.build(graph, xt, draws.t, draws.cond)
    loss = _weighted_mse(graph, out, scale, target, dsm_weight(schedule, draws.t, weighting))
    return float(loss.value), graph, loss


def dsm_loss(net, x0, labels, schedule, rng, drop_prob=0.1, weighting="sigma2"):
    draws = draw(x0, labels, schedule, rng, drop_prob, DSM)
    return dsm_loss_from_draws(net, x0, draws, schedule, weighting)


def _ab_arrays(schedule, t):
    if schedule.kind == RF:
        return 1.0 - t, t, -np.ones_like(t), np.ones_like(t)
    a, b = vp_alpha_sigma_array(schedule, t)
    da = -0.5 * schedule.beta(t) * a
    db = -a * da / b
    return a, b, da, db


def rf_target(x0, eps):
    return eps - x0


def cfm_target(z, eps, t, schedule):
    """Conditional velocity (a'/a) z - (b lambda'/2) eps for the path a x0 + b eps.

    lambda = log(a^2/b^2).  Under a = 1 - t, b = t this is exactly eps - x0.
    """
    a, b, da, db = _ab_arrays(schedule, np.asarray(t, dtype=float))
    lam_prime = 2.0 * (da / a - db / b)
    return (da / a)[:, None] * z - (0.5 * b * lam_prime)[:, None] * eps


def flow_loss_from_draws(net: ScoreNet, x0, draws: Draws, schedule: NoiseSchedule, kind=RF_LOSS):
    x0 = np.asarray(x0, dtype=float).reshape(-1, net.dim)
    if kind == RF_LOSS:
        if schedule.kind != RF:
            raise ValueError("the rectified-flow loss needs an RF schedule")
        t = draws.t
        z = (1.0 - t)[:, None] * x0 + t[:, None] * draws.eps
        target = rf_target(x0, draws.eps)
    elif kind == CFM:
        a, b, _, _ = _ab_arrays(schedule, draws.t)
        z = a[:, None] * x0 + b[:, None] * draws.eps
        target = cfm_target(z, draws.eps, draws.t, schedule)
    else:
        raise ValueError(f"unknown flow loss {kind!r}")
    graph = ValueGraph()
    out, scale = net.build(graph, z, draws.t, draws.cond)
    loss = _weighted_mse(graph, out, scale, target, None)
    return float(loss.value), graph, loss


def flow_loss(net, x0, labels, schedule, rng, kind=RF_LOSS, drop_prob=0.1):
    draws = draw(x0, labels, schedule, rng, drop_prob, kind)
    return flow_loss_from_draws(net, x0, draws, schedule, kind)
