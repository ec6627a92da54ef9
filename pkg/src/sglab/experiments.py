"""Experiment orchestration behind the command-line verbs.

Each ``run_*`` function takes a validated ExperimentConfig, writes its
artifacts under ``config.output_dir()`` and returns a small summary dict.
"""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analytic import MixtureField, density_grid, diffused_mixture, sg_density_grid, standard_normal, two_mode
from .config import ExperimentConfig
from .eval.fokker_planck import fokker_planck_evolve
from .eval.metrics import MetricReport, histogram_density, swirl_outlier_stats, tv_distance, valley_mass
from .guidance import GuidanceStack, Shift
from .nn import NetField, ScoreNet, load_checkpoint, save_checkpoint, train
from .nn.train import write_loss_trace
from .report import RUN_JSON, emit_report, read_samples, sidecar, write_json, write_samples
from .sampler import DDIM, ODE, SDE, SamplerConfig, guided_drift, run_chain
from .schedule import RF, VP, NoiseSchedule
from .svg import line_plot, scatter_panels

CHECKPOINT = "checkpoint.sglab"
LOSS_CSV = "loss.csv"
SWEEP_CSV = "sweep.csv"
ORACLE_FILES = ("oracle_fp.csv", "oracle_particles.csv", "oracle_truth.csv")
FIGURE_FILES = ("fig_two_mode.svg", "fig_sg_prev.svg", "fig_swirl.svg", RUN_JSON)
SWIRL_TRAIN_POINTS = 400_000


class ExperimentError(RuntimeError):
    pass


class MissingCheckpoint(ExperimentError):
    pass


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# -- data and fields ----------------------------------------------------------

def training_data(cfg: ExperimentConfig, rng):
    """(data, labels, n_classes) for the configured data source."""
    kind = cfg["data.kind"]
    cond = cfg["train.conditional"]
    if kind in ("two_mode", "mixture"):
        m = cfg.mixture()
        return m, None, m.n_components if cond else 0
    if kind == "swirl":
        x, labels = cfg.swirl().sample(SWIRL_TRAIN_POINTS, rng, return_labels=True)
        return x, (labels if cond else None), 2 if cond else 0
    path = cfg["data.path"]
    if not os.path.exists(path):
        raise ExperimentError(f"data.path not found: {path}")
    x = read_samples(path)
    if x.shape[1] != cfg.data_dim():
        raise ExperimentError(f"data.path has {x.shape[1]} columns, data.dim is {cfg.data_dim()}")
    return x, None, 0


def build_field(cfg: ExperimentConfig):
    """(field, schedule) for sampling, analytic or from a checkpoint."""
    schedule = cfg.schedule()
    if cfg["field.kind"] == "analytic":
        if cfg["data.kind"] == "samples":
            raise ExperimentError("field.kind=analytic needs a mixture or swirl data source")
        return MixtureField(cfg.mixture(), schedule), schedule
    path = cfg.checkpoint_path()
    if not os.path.exists(path):
        raise MissingCheckpoint(f"missing checkpoint {path}; run 'train' first or set field.checkpoint")
    net = load_checkpoint(path)
    if net.schedule is not None and net.schedule.kind != schedule.kind:
        raise ExperimentError(f"checkpoint was trained with schedule.kind={net.schedule.kind}, config has {schedule.kind}")
    return NetField(net), (net.schedule or schedule)


def _truth_mixture(cfg: ExperimentConfig):
    if cfg["data.kind"] == "samples":
        return None
    m = cfg.mixture()
    c = cfg["guidance.condition"]
    return m if c is None else m.component(c)


# -- verbs ----------------------------------------------------------------------

def run_train(cfg: ExperimentConfig) -> dict:
    out = _mkdir(cfg.output_dir())
    seed = cfg["seed"]
    data_rng = np.random.default_rng([seed, 1])
    data, labels, n_classes = training_data(cfg, data_rng)
    schedule = cfg.schedule()
    net = ScoreNet(
        cfg.data_dim(),
        hidden=tuple(int(h) for h in cfg["train.hidden"]),
        emb_dim=cfg["train.emb_dim"],
        n_classes=n_classes,
        parameterization=cfg.parameterization(),
        schedule=schedule,
    ).init(np.random.default_rng([seed, 2]))
    start = time.perf_counter()
    net, trace = train(net, cfg.train_config(), data, schedule, labels=labels)
    seconds = time.perf_counter() - start
    ckpt = cfg["field.checkpoint"] or os.path.join(out, CHECKPOINT)
    save_checkpoint(net, ckpt)
    write_loss_trace(trace, os.path.join(out, LOSS_CSV))
    write_json(sidecar(cfg, extra={"train_seconds": seconds, "checkpoint": ckpt, "n_params": net.n_params(),
                                   "final_loss": trace[-1][1] if trace else None}), os.path.join(out, RUN_JSON))
    return {"checkpoint": ckpt, "seconds": seconds, "final_loss": trace[-1][1] if trace else None}


def sample(cfg: ExperimentConfig):
    field, schedule = build_field(cfg)
    return run_chain(field, cfg.guidance(), cfg.sampler(), cfg["sampler.n"], schedule)


def run_sample(cfg: ExperimentConfig) -> dict:
    out = _mkdir(cfg.output_dir())
    run = sample(cfg)
    write_samples(run.samples, os.path.join(out, "samples.csv"))
    if run.trajectory is not None:
        with open(os.path.join(out, "trajectory.csv"), "w") as fh:
            dim = run.samples.shape[1]
            fh.write("t,index," + ",".join(f"x{i}" for i in range(dim)) + "\n")
            for t, x in run.trajectory:
                for i, row in enumerate(x):
                    fh.write(f"{t!r},{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    write_json(sidecar(cfg, run), os.path.join(out, RUN_JSON))
    return {"calls": run.total_calls, "n": int(run.samples.shape[0])}


def evaluate(cfg: ExperimentConfig, run) -> MetricReport:
    """Metrics of a finished run against whatever truth the config implies."""
    report = MetricReport(provenance={"seed": cfg["seed"], "config": cfg.echo()})
    x = run.samples
    if x.shape[0] == 0:
        return report
    lo, hi, res = cfg["eval.lower"], cfg["eval.upper"], cfg["eval.resolution"]
    dim = x.shape[1]
    if dim == 2:
        res = min(res, 300)
    hist = histogram_density(x, [lo] * dim, [hi] * dim, [res] * dim)
    truth = _truth_mixture(cfg)
    if truth is not None:
        schedule = cfg.schedule()
        t_end = float(run.times[-1])
        ref = density_grid(diffused_mixture(truth, schedule, t_end), [lo] * dim, [hi] * dim, [res] * dim)
        report.add("tv_distance", tv_distance(hist, ref))
    if dim == 1:
        report.add("valley_mass", valley_mass(x, (cfg["eval.valley_lo"], cfg["eval.valley_hi"])))
    if cfg["data.kind"] == "swirl":
        frac, dist, recall = swirl_outlier_stats(x, cfg.swirl(), cfg["eval.epsilon"])
        report.add("outlier_fraction", frac)
        report.add("mean_manifold_distance", dist)
        report.add("mode_recall", recall)
    report.add("escaped_mass", hist.escaped_mass)
    return report


def run_eval(cfg: ExperimentConfig) -> dict:
    run = sample(cfg)
    report = evaluate(cfg, run)
    emit_report(report, run, cfg.output_dir(), cfg)
    return dict(report.metrics)


def _sweep_point(values: dict, out_dir: str):
    cfg = ExperimentConfig(values).with_overrides(output_dir=out_dir)
    return run_eval(cfg)


def _label(v: float) -> str:
    return repr(float(v)).replace(".", "p").replace("-", "m")


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Evaluate every (omega_sg, shift) pair; one subdirectory per point."""
    out = _mkdir(cfg.output_dir())
    points = []
    for omega in cfg["sweep.omegas"]:
        for shift in cfg["sweep.shifts"]:
            vals = dict(cfg.values)
            vals["guidance.omega_sg"] = float(omega)
            vals["guidance.shift.value"] = float(shift)
            sub = os.path.join(os.path.abspath(out), f"omega_{_label(omega)}__shift_{_label(shift)}")
            ExperimentConfig(vals).validate()
            points.append((float(omega), float(shift), vals, sub))
    if cfg["sweep.workers"] > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg["sweep.workers"]) as pool:
            results = list(pool.map(_sweep_point, [p[2] for p in points], [p[3] for p in points]))
    else:
        results = [_sweep_point(p[2], p[3]) for p in points]
    names = []
    for r in results:
        names += [k for k in r if k not in names]
    rows = []
    with open(os.path.join(out, SWEEP_CSV), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega_sg", "shift", *names])
        for (omega, shift, _, _), r in zip(points, results):
            w.writerow([repr(omega), repr(shift), *(repr(r[k]) if k in r else "" for k in names)])
            rows.append({"omega_sg": omega, "shift": shift, **r})
    write_json(sidecar(cfg, extra={"points": len(points)}), os.path.join(out, RUN_JSON))
    return rows


def run_oracle(cfg: ExperimentConfig) -> dict:
    """Fokker-Planck grid evolution of the configured guided dynamics."""
    schedule = cfg.schedule()
    if schedule.kind != VP:
        raise ExperimentError("schedule.kind: the density oracle mirrors VP dynamics")
    sampler = cfg.sampler()
    if sampler.kind == DDIM:
        raise ExperimentError("sampler.kind: the density oracle mirrors sde or ode samplers, not ddim")
    stack = cfg.guidance()
    if stack.prev_enabled:
        raise ExperimentError("guidance.shift.kind: previous-step guidance has no closed drift field for the oracle")
    field, schedule = build_field(cfg)
    out = _mkdir(cfg.output_dir())
    dim = field.dim
    lo, hi = cfg["eval.lower"], cfg["eval.upper"]
    res = cfg["eval.resolution"] if dim == 1 else min(cfg["eval.resolution"], 150)
    box = ([lo] * dim, [hi] * dim, [res] * dim)
    tau = sampler.tau if sampler.kind == SDE else 0.0
    times = sampler.grid(schedule)
    initial = density_grid(standard_normal(dim), *box)
    start = time.perf_counter()
    fp = fokker_planck_evolve(initial, guided_drift(field, stack, schedule, tau), times,
                              diffusion=lambda t: 0.5 * tau * tau * schedule.beta(t))
    fp_seconds = time.perf_counter() - start
    fp.to_csv(os.path.join(out, ORACLE_FILES[0]))
    report = MetricReport(provenance={"seed": cfg["seed"], "config": cfg.echo()})
    run = None
    if cfg["sampler.n"] > 0:
        run = run_chain(field, stack, sampler, cfg["sampler.n"], schedule)
        hist = histogram_density(run.samples, *box)
        hist.to_csv(os.path.join(out, ORACLE_FILES[1]))
        report.add("tv_fp_vs_particles", tv_distance(fp, hist))
        report.add("escaped_mass", hist.escaped_mass)
    truth = _truth_mixture(cfg)
    if truth is not None:
        ref = density_grid(diffused_mixture(truth, schedule, float(times[-1])), *box)
        ref.to_csv(os.path.join(out, ORACLE_FILES[2]))
        report.add("tv_fp_vs_truth", tv_distance(fp, ref))
        if run is not None:
            report.add("tv_particles_vs_truth", tv_distance(hist, ref))
    emit_report(report, run, out, cfg, extra={"fp_seconds": fp_seconds, "fp_substeps": fp.meta["substeps"]})
    return dict(report.metrics)


# -- figures --------------------------------------------------------------------

def sg_prev_reference_tv(data, schedule: NoiseSchedule, t: float, delta: float, step: float, lower=-3.0, upper=3.0, resolution=600) -> float:
    """TV between the two guidance reference densities at time ``t``.

    Self-guidance contrasts against p_{t+delta}; the previous-step variant
    contrasts against the output one sampler step earlier, p_{t+step}.
    """
    a = density_grid(diffused_mixture(data, schedule, min(1.0, t + delta)), lower, upper, resolution)
    b = density_grid(diffused_mixture(data, schedule, min(1.0, t + step)), lower, upper, resolution)
    return tv_distance(a, b)


def two_mode_figure(cfg: ExperimentConfig):
    schedule = NoiseSchedule(kind=VP, beta_min=cfg["schedule.beta_min"], beta_max=cfg["schedule.beta_max"])
    data = cfg.mixture() if cfg["data.kind"] in ("two_mode", "mixture") and cfg.data_dim() == 1 else two_mode(cfg["data.std"])
    t, delta = cfg["figures.t"], cfg["figures.delta"]
    lo, hi, res = cfg["eval.lower"], cfg["eval.upper"], cfg["eval.resolution"]
    series, masses = {}, {}
    xs = None
    for omega in cfg["figures.omegas"]:
        g = sg_density_grid(data, schedule, t, delta, omega, lo, hi, res)
        xs = g.axes()[0]
        series[f"w={omega:g}"] = g.values
        masses[f"figure.valley_mass.omega_{omega:g}"] = valley_mass(g, (cfg["eval.valley_lo"], cfg["eval.valley_hi"]))
    fig = line_plot(xs, series, title=f"self-guided density, t={t:g}, shift={delta:g}")
    return fig, masses


def sg_prev_figure(cfg: ExperimentConfig):
    schedule = NoiseSchedule(kind=VP, beta_min=cfg["schedule.beta_min"], beta_max=cfg["schedule.beta_max"])
    data = two_mode(cfg["data.std"])
    steps = cfg["sampler.steps"] or 28
    delta = cfg["guidance.shift.value"] / cfg["schedule.discretization_steps"]
    ts = np.linspace(0.05, 0.95, 19)
    tvs = np.array([sg_prev_reference_tv(data, schedule, t, delta, 1.0 / steps) for t in ts])
    fig = line_plot(ts, {"TV(shifted, previous step)": tvs}, title="guidance reference gap", xlabel="t", ylabel="TV")
    return fig, {"figure.sg_prev_tv.t_0.25": sg_prev_reference_tv(data, schedule, 0.25, delta, 1.0 / steps),
                 "figure.sg_prev_tv.t_0.75": sg_prev_reference_tv(data, schedule, 0.75, delta, 1.0 / steps)}


def swirl_figure(cfg: ExperimentConfig):
    manifold = cfg.swirl()
    if cfg["field.kind"] == "learned":
        path = cfg.checkpoint_path()
        if not os.path.exists(path):
            raise MissingCheckpoint(f"missing checkpoint {path}; run 'train' on the swirl config first")
        net = load_checkpoint(path)
        field, schedule = NetField(net), net.schedule or NoiseSchedule(kind=RF)
    else:
        schedule = NoiseSchedule(kind=RF)
        field = MixtureField(manifold.fitted_mixture(), schedule)
    if field.output != "velocity":
        raise ExperimentError("the swirl figure needs a rectified-flow velocity field")
    panels, stats = [], {}
    shift = Shift(cfg["guidance.shift.kind"], cfg["guidance.shift.value"]) if cfg["guidance.shift.kind"] != "prev" else Shift("constant", 10.0)
    for omega in cfg["figures.swirl_omegas"]:
        stack = GuidanceStack(omega_sg=omega, shift=shift)
        run = run_chain(field, stack, SamplerConfig(ODE, 28, seed=cfg["seed"]), cfg["figures.n"], schedule)
        frac, dist, recall = swirl_outlier_stats(run.samples, manifold, cfg["eval.epsilon"])
        stats[f"figure.swirl.omega_{omega:g}.outlier_fraction"] = frac
        stats[f"figure.swirl.omega_{omega:g}.mean_manifold_distance"] = dist
        stats[f"figure.swirl.omega_{omega:g}.mode_recall"] = recall
        panels.append((f"w={omega:g} outliers={frac:.3f}", run.samples, manifold.points[::50]))
    return scatter_panels(panels, box=(-1.5, 1.5)), stats


def run_figures(cfg: ExperimentConfig) -> list[str]:
    """Write exactly FIGURE_FILES into the output directory."""
    out = _mkdir(cfg.output_dir())
    start = time.perf_counter()
    figs, extra = {}, {}
    for name, build in zip(FIGURE_FILES, (two_mode_figure, sg_prev_figure, swirl_figure)):
        fig, vals = build(cfg)
        figs[name] = fig
        extra.update(vals)
    paths = []
    for name, fig in figs.items():
        path = os.path.join(out, name)
        fig.save(path)
        paths.append(path)
    extra["figures_seconds"] = time.perf_counter() - start
    write_json(sidecar(cfg, extra=extra), os.path.join(out, RUN_JSON))
    paths.append(os.path.join(out, RUN_JSON))
    return paths

