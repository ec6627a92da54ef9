"""Acceptance checks, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the terminal summary.  The full module takes several minutes on one core
(criterion 5 trains a 2-D flow model for 50k steps).
"""
import math
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from gradcheck import check_param_grads, sample_entries

from sglab import experiments
from sglab.analytic import (
    MixtureField,
    density_grid,
    diffused_mixture,
    heat_family,
    heat_g2,
    heat_residual,
    heat_variance,
    mixture_density_at,
    mixture_laplacian_density,
    mixture_score_at,
    standard_normal,
    sg_density_grid,
    sg_log_density,
    two_mode,
)
from sglab.config import ConfigError, parse_config, parse_text
from sglab.eval import bootstrap_se, fokker_planck_evolve, histogram_density, swirl_outlier_stats, tv_distance, valley_mass
from sglab.guidance import PAG_MESSAGE, GuidanceConfigError, GuidanceStack, Shift, StepCache, cfg_combine, sg_combine, sg_prev_combine, shift_delta
from sglab.nn import EPS, VELOCITY, NetField, ScoreNet, draw, dsm_loss_from_draws, flow_loss_from_draws, load_checkpoint
from sglab.sampler import SamplerConfig, guided_drift, run_chain
from sglab.schedule import NoiseSchedule

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")
VP = NoiseSchedule()
RF = NoiseSchedule(kind="rf")
TWO = two_mode()
BOX = (-3.0, 3.0, 600)
VALLEY = (-0.25, 0.25)


def report(number, ok, detail, seconds, budget):
    in_time = seconds <= budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"criterion {number}: {status}  {detail}  [{seconds:.1f}s / budget {budget:.0f}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert in_time, line


def _valley(x):
    return valley_mass(x, VALLEY)


def _paired_gap(base, other):
    """(gap, bootstrap SE) of valley_mass(base) - valley_mass(other), paired by chain."""
    gap = _valley(base) - _valley(other)
    se = bootstrap_se(lambda a, b: _valley(a) - _valley(b), base, other, n_boot=200, seed=0)
    return gap, se


def test_criterion_1_sg_score_density_consistency():
    start = time.perf_counter()
    t, delta, h = 0.38, 0.2, 1e-5
    x = np.random.default_rng(0).uniform(-2.5, 2.5, 200)
    s_t = mixture_score_at(diffused_mixture(TWO, VP, t), x)
    s_shift = mixture_score_at(diffused_mixture(TWO, VP, t + delta), x)
    worst = 0.0
    for omega in (1.0, 3.0):
        guided = sg_combine(s_t, s_shift, omega)
        # the grid and the point evaluator differ only by the normalising constant
        grid = sg_density_grid(TWO, VP, t, delta, omega, *BOX)
        offset = np.log(grid.values) - sg_log_density(TWO, VP, t, delta, omega, grid.points())
        assert np.ptp(offset) < 1e-9
        fd = (sg_log_density(TWO, VP, t, delta, omega, x + h) - sg_log_density(TWO, VP, t, delta, omega, x - h)) / (2 * h)
        rel = np.abs(guided - fd) / np.maximum(np.abs(fd), 1e-12)
        worst = max(worst, float(rel.max()))
    report(1, worst <= 1e-4, f"max rel err {worst:.2e} over {x.size} points, omega in {{1, 3}} (tol 1e-4)",
           time.perf_counter() - start, 10)


def test_criterion_2_suppression_ordering():
    start = time.perf_counter()
    t, delta = 0.38, 0.2
    omegas = (0.0, 1.0, 2.0, 3.0)
    analytic = [valley_mass(sg_density_grid(TWO, VP, t, delta, w, *BOX), VALLEY) for w in omegas]
    analytic_ok = all(a > b for a, b in zip(analytic, analytic[1:]))
    field = MixtureField(TWO, VP)
    sampler = SamplerConfig("ddim", 50, t_end=t, seed=1)
    runs = [run_chain(field, GuidanceStack(omega_sg=w, shift=Shift("constant", delta * 1000)), sampler, 100_000, VP).samples[:, 0]
            for w in omegas]
    ratios = []
    for a, b in zip(runs, runs[1:]):
        gap, se = _paired_gap(a, b)
        ratios.append(gap / se)
    particle_ok = all(r > 3 for r in ratios)
    detail = ("analytic " + " > ".join(f"{v:.4f}" for v in analytic)
              + "; particle gap/SE " + ", ".join(f"{r:.1f}" for r in ratios) + " (need > 3)")
    report(2, analytic_ok and particle_ok, detail, time.perf_counter() - start, 120)


def test_criterion_3_heat_identity():
    start = time.perf_counter()
    x = np.linspace(*BOX)
    worst = worst_fd = 0.0
    for t in np.round(np.arange(0.1, 1.0, 0.1), 10):
        m = heat_family(TWO, heat_variance(VP, t))
        pmax = mixture_density_at(m, x).max()
        worst = max(worst, float(np.max(np.abs(heat_residual(TWO, VP, t, x, h=1e-5))) / pmax))
        # fully finite-difference route: central differences in t and in x
        h, hx = 1e-5, 1e-3
        dpdt = (mixture_density_at(heat_family(TWO, heat_variance(VP, t + h)), x)
                - mixture_density_at(heat_family(TWO, heat_variance(VP, t - h)), x)) / (2 * h)
        lap = (mixture_density_at(m, x + hx) - 2 * mixture_density_at(m, x) + mixture_density_at(m, x - hx)) / hx**2
        worst_fd = max(worst_fd, float(np.max(np.abs(dpdt - 0.5 * heat_g2(VP, t) * lap)) / pmax))
    fill = []
    for t in np.round(np.arange(0.1, 1.0, 0.1), 10):
        m = heat_family(TWO, heat_variance(VP, t))
        merged = mixture_laplacian_density(m, np.array([0.0]))[()] <= 0
        if merged:
            continue
        p_now = mixture_density_at(m, np.array([0.0]))[()]
        p_next = mixture_density_at(heat_family(TWO, heat_variance(VP, t + 0.01)), np.array([0.0]))[()]
        fill.append((t, p_next > p_now))
    fill_ok = len(fill) >= 7 and all(ok for _, ok in fill)
    ok = worst <= 1e-4 and worst_fd <= 1e-4 and fill_ok
    detail = (f"residual/max p {worst:.1e} (closed Laplacian), {worst_fd:.1e} (finite differences), tol 1e-4; "
              f"valley fill holds at t={','.join(f'{t:.1f}' for t, _ in fill)} (modes merged beyond)")
    report(3, ok, detail, time.perf_counter() - start, 10)


def test_criterion_4_cross_oracle():
    start = time.perf_counter()
    field = MixtureField(TWO, VP)
    sampler = SamplerConfig("sde", 1000, tau=1.0, seed=3)
    stack = GuidanceStack(omega_sg=1.0, shift=Shift("constant", 10))
    times = sampler.grid(VP)
    lo, hi, res = BOX
    prior = density_grid(standard_normal(1), lo, hi, res)
    fp = fokker_planck_evolve(prior, guided_drift(field, stack, VP, 1.0), times, diffusion=lambda t: 0.5 * VP.beta(t))
    guided = run_chain(field, stack, sampler, 100_000, VP).samples
    tv_guided = tv_distance(fp, histogram_density(guided, lo, hi, res))
    plain = run_chain(field, GuidanceStack(), sampler, 100_000, VP).samples
    truth = density_grid(diffused_mixture(TWO, VP, float(times[-1])), lo, hi, res)
    tv_plain = tv_distance(histogram_density(plain, lo, hi, res), truth)
    ok = tv_guided <= 0.05 and tv_plain <= 0.05
    report(4, ok, f"FP vs particles (omega=1) TV {tv_guided:.4f}; unguided vs truth TV {tv_plain:.4f} (tol 0.05)",
           time.perf_counter() - start, 300)


def test_criterion_5_swirl(tmp_path):
    cfg = parse_config(os.path.join(CONFIGS, "swirl.cfg"), [f"output_dir={tmp_path}"])
    assert cfg["train.steps"] == 50_000
    start = time.perf_counter()
    experiments.run_train(cfg)
    train_seconds = time.perf_counter() - start
    start = time.perf_counter()
    net = load_checkpoint(cfg.checkpoint_path())
    field, manifold = NetField(net), cfg.swirl()
    stats = {}
    for omega in (0.0, 1.0, 3.0, 7.0):
        stack = GuidanceStack(omega_sg=omega, shift=Shift("constant", 10))
        run = run_chain(field, stack, SamplerConfig("ode", 28, seed=0), 20_000, RF)
        stats[omega] = swirl_outlier_stats(run.samples, manifold, 0.2)
    eval_seconds = time.perf_counter() - start
    frac = [stats[w][0] for w in (0.0, 1.0, 3.0)]
    ok = frac[0] >= frac[1] >= frac[2] and stats[7.0][1] > stats[3.0][1] and eval_seconds <= 120
    detail = ("outlier fraction " + " >= ".join(f"{f:.4f}" for f in frac)
              + f"; mean distance omega=7 {stats[7.0][1]:.4f} > omega=3 {stats[3.0][1]:.4f}"
              + f"; eval {eval_seconds:.0f}s / 120s")
    report(5, ok, detail, train_seconds, 1200)


def test_criterion_6_sg_prev_regime():
    start = time.perf_counter()
    steps = 50
    tv_late = experiments.sg_prev_reference_tv(TWO, VP, 0.75, 0.01, 1.0 / steps)
    tv_early = experiments.sg_prev_reference_tv(TWO, VP, 0.25, 0.01, 1.0 / steps)
    field = MixtureField(TWO, VP)
    sampler = SamplerConfig("ddim", steps, t_end=0.38, seed=1)
    base = run_chain(field, GuidanceStack(), sampler, 100_000, VP).samples[:, 0]
    prev = GuidanceStack(omega_sg=3.0, shift=Shift("prev"), sg_prev_threshold=500)
    guided = run_chain(field, prev, sampler, 100_000, VP).samples[:, 0]
    gap, se = _paired_gap(base, guided)
    ok = tv_late < tv_early and gap > 3 * se
    detail = (f"reference TV t=0.75 {tv_late:.4f} < t=0.25 {tv_early:.4f}; SG-prev valley {_valley(guided):.4f} "
              f"< unguided {_valley(base):.4f}, gap {gap / se:.1f} SE (need > 3)")
    report(6, ok, detail, time.perf_counter() - start, 180)


def test_criterion_7_efficiency_ledger():
    start = time.perf_counter()
    net = ScoreNet(1, parameterization=EPS, schedule=VP).init(np.random.default_rng(0))
    field = NetField(net)
    sampler = SamplerConfig("ode", 28, seed=0)
    stacks = {
        "unguided": GuidanceStack(),
        "sg": GuidanceStack(omega_sg=3.0, shift=Shift("constant", 10)),
        "sg_prev": GuidanceStack(omega_sg=3.0, shift=Shift("prev")),
    }
    calls = {k: run_chain(field, s, sampler, 10, VP).total_calls for k, s in stacks.items()}
    # interleaved repeats, median wall time
    walls = {"unguided": [], "sg_prev": []}
    for _ in range(7):
        for k in walls:
            t0 = time.perf_counter()
            run_chain(field, stacks[k], sampler, 4000, VP)
            walls[k].append(time.perf_counter() - t0)
    plain, prev = np.median(walls["unguided"]), np.median(walls["sg_prev"])
    ratio = prev / plain
    ok = calls == {"unguided": 28, "sg": 56, "sg_prev": 28} and abs(ratio - 1) <= 0.10
    detail = f"calls {calls['unguided']}/{calls['sg']}/{calls['sg_prev']}; SG-prev wall {prev:.3f}s vs {plain:.3f}s ({ratio:.3f}x, tol 10%)"
    report(7, ok, detail, time.perf_counter() - start, 60)


def test_criterion_8_gradient_engine(tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    x0, y = TWO.sample(128, rng, return_labels=True)
    worst = {}
    for name, sched, param in (("dsm", VP, EPS), ("rf", RF, VELOCITY)):
        net = ScoreNet(1, n_classes=2, parameterization=param, schedule=sched).init(np.random.default_rng(1))
        net.params["cond"] = np.random.default_rng(2).normal(scale=0.3, size=net.params["cond"].shape)
        assert net.widths == [17, 128, 128, 1]
        if name == "dsm":
            d = draw(x0, y, sched, rng, 0.2, "dsm")
            fn = lambda net=net, d=d: dsm_loss_from_draws(net, x0, d, VP)  # noqa: E731
        else:
            d = draw(x0, y, sched, rng, 0.2, "rf")
            fn = lambda net=net, d=d: flow_loss_from_draws(net, x0, d, RF, "rf")  # noqa: E731
        _, graph, node = fn()
        grads = graph.backward(node)
        entries = sample_entries(net.params, 250, rng)
        worst[name] = check_param_grads(net.params, lambda fn=fn: fn()[0], grads, entries, h=1e-4, floor=1e-6)
    cfg = parse_config(os.path.join(CONFIGS, "two_mode_train.cfg"), [f"output_dir={tmp_path}"])
    experiments.run_train(cfg)
    trained = load_checkpoint(cfg.checkpoint_path())
    x = np.linspace(*BOX)[:, None]
    truth = mixture_score_at(diffused_mixture(TWO, VP, 0.38), x)
    mse = float(np.mean((NetField(trained)(x, 0.38) - truth) ** 2))
    ok = max(worst.values()) <= 1e-4 and mse <= 0.05
    detail = (f"grad rel err dsm {worst['dsm']:.1e}, rf {worst['rf']:.1e} on 250 params each (tol 1e-4); "
              f"score grid MSE at t=0.38 after {cfg['train.steps']} steps {mse:.4f} (tol 0.05)")
    report(8, ok, detail, time.perf_counter() - start, 600)


def test_criterion_9_guidance_algebra():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    checks = []
    for _ in range(200):
        s = rng.normal(size=(int(rng.integers(1, 5)), 2)) * 10
        other = rng.normal(size=s.shape) * 10
        w = float(rng.uniform(0, 10))
        checks.append(np.array_equal(cfg_combine(s, s, w), s))
        checks.append(np.array_equal(sg_combine(s, s, w), s))
        checks.append(np.array_equal(sg_prev_combine(s, StepCache(output=s.copy(), valid=True), w, 0.2, 0.5), s))
        checks.append(np.array_equal(cfg_combine(s, other, 0.0), other))
        checks.append(np.allclose(cfg_combine(s, other, 1.0), s, rtol=0, atol=1e-12))
    for t in np.linspace(0, 1, 101):
        for value in (0, 10, 50, 400, 5000):
            d = shift_delta(GuidanceStack(shift=Shift("constant", value)), float(t))
            checks.append(0 <= d <= 1 - t + 1e-15 and math.isclose(d, min(value / 1000, 1 - t), abs_tol=1e-15))
    try:
        GuidanceStack(omega_pag=0.3)
        checks.append(False)
    except GuidanceConfigError as exc:
        checks.append(str(exc) == PAG_MESSAGE)
    try:
        parse_config(None, ["guidance.omega_pag=0.3"])
        checks.append(False)
    except ConfigError as exc:
        checks.append("guidance.omega_pag" in str(exc))
    path = os.path.join(CONFIGS, "default_profile.cfg")
    text = open(path).read()
    cfg = parse_config(path)
    checks.append(cfg.echo() == text)
    again = type(cfg)(parse_text(cfg.echo()))
    checks.append(again.echo() == cfg.echo())
    ok = all(checks)
    report(9, ok, f"{sum(checks)}/{len(checks)} identities hold (no-ops, endpoints, clamping, PAG, round-trip)",
           time.perf_counter() - start, 5)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
