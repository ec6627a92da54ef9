"""Flat ``section.key = value`` experiment configuration.

Every key is declared in SCHEMA with its type and default.  ``echo`` renders
the full effective configuration in schema order, and parsing that text gives
back the same configuration, so it doubles as the provenance record.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .analytic import MixtureDensity, two_mode
from .guidance import GuidanceConfigError, GuidanceStack, Shift
from .nn.losses import CFM, DSM, RF_LOSS
from .nn.net import EPS, SCORE, VELOCITY
from .nn.train import TrainConfig
from .sampler import DEFAULT_STEPS, SamplerConfig
from .schedule import RF, VP, NoiseSchedule
from .swirl import SwirlManifold, SwirlSpec

OUTPUT_ROOT_ENV = "SGLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: str  # int, float, bool, str, floats, choice, optint, optfloat
    default: object
    choices: tuple = ()


SCHEMA: dict[str, Key] = {
    "seed": Key("int", 0),
    "output_dir": Key("str", "runs/default"),
    "data.kind": Key("choice", "two_mode", ("two_mode", "mixture", "swirl", "samples")),
    "data.dim": Key("int", 1),
    "data.means": Key("floats", (-1.0, 1.0)),
    "data.weights": Key("floats", ()),
    "data.std": Key("float", 0.05),
    "data.path": Key("str", ""),
    "data.swirl.jitter": Key("float", 0.05),
    "data.swirl.radius_scale": Key("float", 0.25),
    "data.swirl.theta_min": Key("float", 0.5 * math.pi),
    "data.swirl.theta_max": Key("float", 3.0 * math.pi),
    "schedule.kind": Key("choice", VP, (VP, RF)),
    "schedule.beta_min": Key("float", 0.1),
    "schedule.beta_max": Key("float", 20.0),
    "schedule.discretization_steps": Key("int", 1000),
    "schedule.t_eps": Key("float", 1e-3),
    "field.kind": Key("choice", "analytic", ("analytic", "learned")),
    "field.checkpoint": Key("str", ""),
    "train.loss": Key("choice", DSM, (DSM, CFM, RF_LOSS)),
    "train.parameterization": Key("choice", "auto", ("auto", SCORE, EPS, VELOCITY)),
    "train.hidden": Key("floats", (128.0, 128.0)),
    "train.emb_dim": Key("int", 16),
    "train.conditional": Key("bool", True),
    "train.steps": Key("int", 20000),
    "train.batch_size": Key("int", 256),
    "train.lr": Key("float", 2e-3),
    "train.lr_final": Key("float", 1e-4),
    "train.beta1": Key("float", 0.9),
    "train.beta2": Key("float", 0.999),
    "train.eps": Key("float", 1e-8),
    "train.drop_prob": Key("float", 0.1),
    "train.weighting": Key("choice", "sigma2", ("sigma2", "none")),
    "train.log_every": Key("int", 100),
    "guidance.omega_cfg": Key("float", 0.0),
    "guidance.omega_sg": Key("float", 0.0),
    "guidance.omega_pag": Key("float", 0.0),
    "guidance.shift.kind": Key("choice", "constant", ("constant", "dynamic", "prev")),
    "guidance.shift.value": Key("float", 10.0),
    "guidance.sg_prev_threshold": Key("float", 500.0),
    "guidance.use_prev": Key("bool", False),
    "guidance.condition": Key("optint", None),
    "sampler.kind": Key("choice", "ddim", ("ddim", "ode", "sde")),
    "sampler.steps": Key("int", 0),
    "sampler.tau": Key("float", 1.0),
    "sampler.t_end": Key("optfloat", None),
    "sampler.n": Key("int", 10000),
    "sampler.store_trajectory": Key("bool", False),
    "eval.lower": Key("float", -3.0),
    "eval.upper": Key("float", 3.0),
    "eval.resolution": Key("int", 600),
    "eval.valley_lo": Key("float", -0.25),
    "eval.valley_hi": Key("float", 0.25),
    "eval.epsilon": Key("float", 0.2),
    "sweep.omegas": Key("floats", (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)),
    "sweep.shifts": Key("floats", (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)),
    "sweep.workers": Key("int", 1),
    "figures.t": Key("float", 0.38),
    "figures.delta": Key("float", 0.2),
    "figures.omegas": Key("floats", (0.0, 1.0, 2.0, 3.0)),
    "figures.swirl_omegas": Key("floats", (0.0, 1.0, 3.0, 7.0)),
    "figures.n": Key("int", 4000),
}


def _parse_value(key: str, raw: str):
    spec = SCHEMA[key]
    raw = raw.strip()
    try:
        if spec.type == "int":
            return int(raw)
        if spec.type == "float":
            return float(raw)
        if spec.type == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if spec.type == "str":
            return raw
        if spec.type == "choice":
            if raw not in spec.choices:
                raise ConfigError(f"{key}: {raw!r} is not one of {', '.join(spec.choices)}")
            return raw
        if spec.type == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if spec.type == "optint":
            return None if raw.lower() in ("", "none") else int(raw)
        if spec.type == "optfloat":
            return None if raw.lower() in ("", "none") else float(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {spec.type}") from None
    raise AssertionError(spec.type)


def _format_value(key: str, value) -> str:
    t = SCHEMA[key].type
    if value is None:
        return "none"
    if t == "bool":
        return "true" if value else "false"
    if t in ("float", "optfloat"):
        return repr(float(value))
    if t == "floats":
        return ",".join(repr(float(v)) for v in value)
    return str(value)


class ExperimentConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: spec.default for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = v

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.echo() == other.echo()

    def with_overrides(self, **kv) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            vals[k.replace("__", ".")] = v
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    def echo(self) -> str:
        return "".join(f"{k} = {_format_value(k, self.values[k])}\n" for k in SCHEMA)

    # -- builders -------------------------------------------------------
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(
            kind=self["schedule.kind"],
            beta_min=self["schedule.beta_min"],
            beta_max=self["schedule.beta_max"],
            discretization_steps=self["schedule.discretization_steps"],
            t_eps=self["schedule.t_eps"],
        )

    def swirl(self) -> SwirlManifold:
        return SwirlManifold(SwirlSpec(
            theta_min=self["data.swirl.theta_min"],
            theta_max=self["data.swirl.theta_max"],
            radius_scale=self["data.swirl.radius_scale"],
            jitter=self["data.swirl.jitter"],
        ))

    def mixture(self) -> MixtureDensity:
        kind = self["data.kind"]
        if kind == "two_mode":
            return two_mode(self["data.std"])
        if kind == "swirl":
            return self.swirl().fitted_mixture()
        if kind == "mixture":
            import numpy as np

            dim = self["data.dim"]
            means = np.asarray(self["data.means"], dtype=float).reshape(-1, dim)
            k = means.shape[0]
            w = self["data.weights"] or tuple([1.0 / k] * k)
            w = np.asarray(w, dtype=float)
            return MixtureDensity(w / w.sum(), means, np.full(k, self["data.std"]))
        raise ConfigError("data.kind=samples has no analytic mixture")

    def guidance(self) -> GuidanceStack:
        return GuidanceStack(
            omega_cfg=self["guidance.omega_cfg"],
            omega_sg=self["guidance.omega_sg"],
            omega_pag=self["guidance.omega_pag"],
            shift=Shift(self["guidance.shift.kind"], self["guidance.shift.value"]),
            sg_prev_threshold=self["guidance.sg_prev_threshold"],
            use_prev=self["guidance.use_prev"],
            condition=self["guidance.condition"],
            discretization_steps=self["schedule.discretization_steps"],
        )

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            kind=self["sampler.kind"],
            steps=self["sampler.steps"] or DEFAULT_STEPS[self["sampler.kind"]],
            tau=self["sampler.tau"],
            t_end=self["sampler.t_end"],
            seed=self["seed"],
            store_trajectory=self["sampler.store_trajectory"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self["train.loss"],
            weighting=self["train.weighting"],
            batch_size=self["train.batch_size"],
            steps=self["train.steps"],
            lr=self["train.lr"],
            lr_final=self["train.lr_final"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            eps=self["train.eps"],
            drop_prob=self["train.drop_prob"],
            seed=self["seed"],
            log_every=self["train.log_every"],
        )

    def parameterization(self) -> str:
        p = self["train.parameterization"]
        if p != "auto":
            return p
        return EPS if self["train.loss"] == DSM else VELOCITY

    def data_dim(self) -> int:
        kind = self["data.kind"]
        if kind == "swirl":
            return 2
        if kind == "two_mode":
            return 1
        return self["data.dim"]

    def output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = self["output_dir"]
        return os.path.join(root, out) if root and not os.path.isabs(out) else out

    def checkpoint_path(self) -> str:
        return self["field.checkpoint"] or os.path.join(self.output_dir(), "checkpoint.sglab")

    # -- validation -----------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        """Check every section; the first failure names its key."""
        checks = [
            ("data.dim", lambda: self["data.dim"] in (1, 2), "must be 1 or 2"),
            ("data.std", lambda: self["data.std"] > 0, "must be positive"),
            ("data.means", lambda: len(self["data.means"]) % self["data.dim"] == 0 and len(self["data.means"]) > 0, "needs a whole number of points"),
            ("data.path", lambda: self["data.kind"] != "samples" or self["data.path"], "required when data.kind=samples"),
            ("data.swirl.jitter", lambda: self["data.swirl.jitter"] > 0, "must be positive"),
            ("train.steps", lambda: self["train.steps"] >= 0, "must be >= 0"),
            ("train.batch_size", lambda: self["train.batch_size"] >= 1, "must be >= 1"),
            ("train.lr", lambda: self["train.lr"] > 0, "must be positive"),
            ("train.drop_prob", lambda: 0 <= self["train.drop_prob"] <= 1, "must lie in [0, 1]"),
            ("train.hidden", lambda: len(self["train.hidden"]) >= 1 and all(h >= 1 and h == int(h) for h in self["train.hidden"]), "needs positive integer widths"),
            ("train.loss", lambda: (self["train.loss"] == DSM) == (self["schedule.kind"] == VP) or self["train.loss"] == CFM, "incompatible with schedule.kind"),
            ("sampler.steps", lambda: self["sampler.steps"] >= 0, "must be >= 0 (0 selects the sampler default)"),
            ("sampler.n", lambda: self["sampler.n"] >= 0, "must be >= 0"),
            ("sampler.tau", lambda: self["sampler.tau"] >= 0, "must be >= 0"),
            ("sampler.kind", lambda: self["schedule.kind"] == VP or self["sampler.kind"] == "ode", "rectified flow samples with sampler.kind=ode"),
            ("eval.upper", lambda: self["eval.upper"] > self["eval.lower"], "must exceed eval.lower"),
            ("eval.resolution", lambda: self["eval.resolution"] >= 1, "must be >= 1"),
            ("eval.valley_hi", lambda: self["eval.valley_hi"] > self["eval.valley_lo"], "must exceed eval.valley_lo"),
            ("eval.epsilon", lambda: self["eval.epsilon"] > 0, "must be positive"),
            ("sweep.workers", lambda: self["sweep.workers"] >= 1, "must be >= 1"),
        ]
        for key, ok, why in checks:
            if not ok():
                raise ConfigError(f"{key}: {why}")
        t_end = self["sampler.t_end"]
        if t_end is not None and not 0 <= t_end < 1:
            raise ConfigError("sampler.t_end: must lie in [0, 1)")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(f"schedule.kind: {exc}") from None
        try:
            self.guidance()
        except GuidanceConfigError as exc:
            key = "guidance.omega_pag" if "PAG" in str(exc) else "guidance.shift.kind"
            if "scales" in str(exc):
                key = "guidance.omega_sg"
            if "threshold" in str(exc):
                key = "guidance.sg_prev_threshold"
            raise ConfigError(f"{key}: {exc}") from None
        return self


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def parse_overrides(items) -> dict:
    values = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def parse_config(path=None, overrides=None) -> ExperimentConfig:
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            values.update(parse_text(fh.read(), str(path)))
    values.update(parse_overrides(overrides))
    return ExperimentConfig(values).validate()
