"""Experiment configuration: nested dataclasses loaded from YAML.

A configuration file mirrors :class:`ExperimentConfig` section by section.
Unknown keys are rejected with their dotted path.  Scalar overrides use the
same dotted paths, e.g. ``teacher.rho_cls=0.5`` or ``seeds=[0,1,2]``; the
right-hand side is parsed as a YAML scalar or flow sequence.
"""

from __future__ import annotations

import copy
import dataclasses
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import yaml

from .augmentation import AugmentationRanges
from .ema import MomentumWarmup
from .schedule import CLAMP, LITERAL_MIN, ThresholdSchedule
from .simulation import QualityCurve, SceneSpec, TeacherModel
from .structures import CLASS_NAMES, class_id

KINDS = ("threshold-sweep", "schedule-ablation", "strategy-ablation", "fpfn-sweep", "toy-ssl-loop")
PRESETS = ("default", "paper")


class ConfigError(ValueError):
    """Invalid configuration; the message lists every problem found."""


@dataclass(frozen=True)
class SceneConfig:
    counts: dict = field(default_factory=lambda: {"Car": 6.0, "Pedestrian": 2.5, "Cyclist": 1.5})
    max_per_class: int = 15
    x_range: tuple = (0.0, 70.4)
    y_range: tuple = (-40.0, 40.0)
    dim_jitter: float = 0.05
    iou_cap: float = 0.05
    max_retries: int = 200

    def to_spec(self, seed: int) -> SceneSpec:
        return SceneSpec(
            class_counts={class_id(k): float(v) for k, v in self.counts.items()},
            max_per_class=self.max_per_class, x_range=tuple(self.x_range), y_range=tuple(self.y_range),
            dim_jitter=self.dim_jitter, iou_cap=self.iou_cap, max_retries=self.max_retries, seed=seed,
        )


@dataclass(frozen=True)
class TeacherConfig:
    sigma0: float = 0.08
    sigma_inf: float = 0.04
    t_max: Optional[int] = None  # defaults to the iteration budget
    rho_cls: float = 0.3
    rho_iou: float = 0.7
    duplicates: tuple = (2, 6)
    clutter_rate: float = 8.0
    yaw_noise: float = 1.0
    hardness_spread: float = 0.4
    iou_kind: str = "3d"

    def to_model(self, seed: int, iterations: int) -> TeacherModel:
        curve = QualityCurve(self.sigma0, self.sigma_inf, self.t_max or iterations)
        return TeacherModel(
            quality_curve=curve, rho_cls=self.rho_cls, rho_iou=self.rho_iou,
            duplicates_per_gt=tuple(self.duplicates), clutter_rate=self.clutter_rate, yaw_noise=self.yaw_noise,
            hardness_spread=self.hardness_spread, iou_kind=self.iou_kind, seed=seed,
        )


@dataclass(frozen=True)
class ScheduleConfig:
    sigma_start: float = 0.6
    sigma_end: float = 0.4
    step_len: int = 300
    decay: float = 0.1
    mode: str = CLAMP

    def to_schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(self.sigma_start, self.sigma_end, self.step_len, self.decay, self.mode)


@dataclass(frozen=True)
class StrategyConfig:
    name: str
    dense: bool
    dynamic: bool
    threshold: float = 0.4  # used when not dynamic


def _default_strategies():
    return (
        StrategyConfig("naive", dense=False, dynamic=False, threshold=0.0),
        StrategyConfig("sparse-fixed", dense=False, dynamic=False, threshold=0.4),
        StrategyConfig("sparse-dynamic", dense=False, dynamic=True),
        StrategyConfig("dense-fixed", dense=True, dynamic=False, threshold=0.4),
        StrategyConfig("dense-dynamic", dense=True, dynamic=True),
    )


@dataclass(frozen=True)
class SimulationConfig:
    iterations: int = 2000
    n_scenes: int = 200
    unlabeled_batch: int = 1  # unlabeled scenes scored per iteration
    nms_iou: float = 0.1
    final_window: float = 0.1  # trailing fraction of iterations pooled into the final F1
    log_every: int = 10
    dense_sweep: bool = True  # threshold sweeps and schedule ablations use dense labels


@dataclass(frozen=True)
class FPFNConfig:
    thresholds: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    n_scenes: int = 100
    iteration: Optional[int] = None  # teacher quality taken at this iteration; defaults to the budget


@dataclass(frozen=True)
class LossConfig:
    lambda_u: float = 1.0


@dataclass(frozen=True)
class ToyConfig:
    feature_dim: int = 32
    anchors_per_object: int = 4
    anchor_noise: float = 0.12
    background_anchors: int = 12
    feature_noise: float = 0.05
    nuisance_dim: int = 32
    nuisance_scale: float = 0.2
    n_labeled: int = 2
    n_unlabeled: int = 200
    n_test: int = 30
    pretrain_iters: int = 200
    ssl_iters: int = 1000
    lr: float = 0.01
    labeled_batch: int = 1
    unlabeled_batch: int = 1
    momentum_start: float = 0.99
    momentum_end: float = 0.999
    momentum_warmup: int = 500
    schedule: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(step_len=150))
    flip_prob: float = 0.5
    scale_range: tuple = (0.95, 1.05)
    rot_range: tuple = (-math.pi / 4, math.pi / 4)
    nms_iou: float = 0.1
    eval_every: int = 100


@dataclass(frozen=True)
class FullScaleConfig:
    """Full-scale training knobs, recorded for reference and not used by the simulations."""

    pretrain_epochs: int = 80
    pretrain_traversals: int = 10
    pretrain_batch: int = 8
    ssl_epochs: int = 100
    ssl_traversals: int = 5
    ssl_batch: int = 8
    gpus: int = 4
    optimizer: str = "adamw"
    max_lr: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "strategy-ablation"
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs"
    jobs: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    thresholds: tuple = (0.3, 0.4, 0.5, 0.6)
    schedules: tuple = ((0.4, 0.6), (0.6, 0.4), (0.7, 0.3), (0.8, 0.3))
    strategies: tuple = field(default_factory=_default_strategies)
    fpfn: FPFNConfig = field(default_factory=FPFNConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    full_scale: FullScaleConfig = field(default_factory=FullScaleConfig)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def schedule_for(self, start: float, end: float) -> ThresholdSchedule:
        s = self.schedule
        return ThresholdSchedule(float(start), float(end), s.step_len, s.decay, s.mode)

    def warmup(self) -> MomentumWarmup:
        t = self.toy
        return MomentumWarmup(t.momentum_start, t.momentum_end, t.momentum_warmup)

    def strong_ranges(self) -> AugmentationRanges:
        t = self.toy
        return AugmentationRanges(t.flip_prob, tuple(t.scale_range), tuple(t.rot_range))


def _plain(obj):
    """Tuples to lists, recursively, for YAML output."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _freeze(obj):
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


def _from_dict(cls, data, path: str, errors: list):
    if not isinstance(data, dict):
        errors.append(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        return cls() if path else None
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = f"{path + '.' if path else ''}{f.name}"
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _from_dict(hint, value, sub, errors)
        elif f.name == "strategies":
            if not isinstance(value, list):
                errors.append(f"{sub}: expected a list of strategies")
                continue
            items = []
            for i, item in enumerate(value):
                if not isinstance(item, dict) or not {"name", "dense", "dynamic"} <= set(item):
                    errors.append(f"{sub}[{i}]: needs name, dense and dynamic")
                    continue
                unknown = set(item) - {"name", "dense", "dynamic", "threshold"}
                if unknown:
                    errors.append(f"{sub}[{i}]: unknown keys {sorted(unknown)}")
                    continue
                items.append(StrategyConfig(**item))
            kwargs[f.name] = tuple(items)
        elif f.name == "counts":
            kwargs[f.name] = dict(value) if isinstance(value, dict) else value
        else:
            kwargs[f.name] = _freeze(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{path or '<root>'}: {exc}")
        return cls()


def from_dict(data: dict) -> ExperimentConfig:
    errors: list = []
    cfg = _from_dict(ExperimentConfig, data or {}, "", errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    validate(cfg)
    return cfg


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` listing every problem; return silently if valid."""
    errs = []

    def check(cond, msg):
        if not cond:
            errs.append(msg)

    check(cfg.kind in KINDS, f"kind: must be one of {', '.join(KINDS)}, got {cfg.kind!r}")
    seeds = cfg.seeds if isinstance(cfg.seeds, tuple) else (cfg.seeds,)
    check(len(seeds) > 0, "seeds: must be non-empty")
    check(all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds),
          "seeds: must be non-negative integers")
    check(len(set(seeds)) == len(seeds), "seeds: duplicates are not allowed")
    check(isinstance(cfg.jobs, int) and cfg.jobs >= 1, "jobs: must be an integer >= 1")

    sc = cfg.scene
    check(isinstance(sc.counts, dict), "scene.counts: must map class names to mean counts")
    if isinstance(sc.counts, dict):
        for k, v in sc.counts.items():
            check(k in CLASS_NAMES, f"scene.counts.{k}: unknown class (expected one of {', '.join(CLASS_NAMES)})")
            check(_is_num(v) and v >= 0, f"scene.counts.{k}: must be a non-negative number")
    for name in ("x_range", "y_range"):
        r = getattr(sc, name)
        check(isinstance(r, tuple) and len(r) == 2 and all(_is_num(x) for x in r) and r[1] > r[0],
              f"scene.{name}: must be [low, high] with high > low")
    check(_is_num(sc.iou_cap) and 0 <= sc.iou_cap <= 1, "scene.iou_cap: must lie in [0, 1]")
    check(isinstance(sc.max_retries, int) and sc.max_retries >= 1, "scene.max_retries: must be >= 1")

    te = cfg.teacher
    check(_is_num(te.sigma0) and te.sigma0 >= 0, "teacher.sigma0: must be >= 0")
    check(_is_num(te.sigma_inf) and te.sigma_inf >= 0, "teacher.sigma_inf: must be >= 0")
    check(te.t_max is None or (isinstance(te.t_max, int) and te.t_max >= 1), "teacher.t_max: must be >= 1 or null")
    for name in ("rho_cls", "rho_iou"):
        v = getattr(te, name)
        check(_is_num(v) and 0 <= v <= 1, f"teacher.{name}: must lie in [0, 1]")
    d = te.duplicates
    check(isinstance(d, tuple) and len(d) == 2 and all(isinstance(x, int) for x in d) and 0 <= d[0] <= d[1],
          "teacher.duplicates: must be [low, high] integers with 0 <= low <= high")
    check(_is_num(te.clutter_rate) and te.clutter_rate >= 0, "teacher.clutter_rate: must be >= 0")
    check(te.iou_kind in ("3d", "bev"), "teacher.iou_kind: must be '3d' or 'bev'")

    si = cfg.simulation
    check(isinstance(si.iterations, int) and si.iterations >= 1, "simulation.iterations: must be >= 1")
    check(isinstance(si.n_scenes, int) and si.n_scenes >= 1, "simulation.n_scenes: must be >= 1")
    check(isinstance(si.unlabeled_batch, int) and si.unlabeled_batch >= 1, "simulation.unlabeled_batch: must be >= 1")
    check(_is_num(si.nms_iou) and 0 <= si.nms_iou <= 1, "simulation.nms_iou: must lie in [0, 1]")
    check(_is_num(si.final_window) and 0 < si.final_window <= 1, "simulation.final_window: must lie in (0, 1]")
    check(isinstance(si.log_every, int) and si.log_every >= 1, "simulation.log_every: must be >= 1")

    for path, s in (("schedule", cfg.schedule), ("toy.schedule", cfg.toy.schedule)):
        try:
            s.to_schedule()
        except (ValueError, TypeError) as exc:
            errs.append(f"{path}: {exc}")
        check(s.mode in (CLAMP, LITERAL_MIN), f"{path}.mode: must be {CLAMP!r} or {LITERAL_MIN!r}")

    check(len(cfg.thresholds) >= 1, "thresholds: must be non-empty")
    check(all(_is_num(t) and 0 <= t <= 1 for t in cfg.thresholds), "thresholds: values must lie in [0, 1]")
    for i, pair in enumerate(cfg.schedules):
        ok = isinstance(pair, tuple) and len(pair) == 2 and all(_is_num(x) and 0 <= x <= 1 for x in pair)
        check(ok, f"schedules[{i}]: must be [start, end] within [0, 1]")
    names = [s.name for s in cfg.strategies]
    check(len(names) >= 1, "strategies: must be non-empty")
    check(len(set(names)) == len(names), "strategies: names must be unique")
    for i, s in enumerate(cfg.strategies):
        check(isinstance(s.dense, bool) and isinstance(s.dynamic, bool), f"strategies[{i}]: dense/dynamic must be booleans")
        check(_is_num(s.threshold) and 0 <= s.threshold <= 1, f"strategies[{i}].threshold: must lie in [0, 1]")

    ff = cfg.fpfn
    th = ff.thresholds
    check(len(th) >= 1 and all(_is_num(t) for t in th), "fpfn.thresholds: must be a non-empty list of numbers")
    check(all(b > a for a, b in zip(th, th[1:])), "fpfn.thresholds: must be strictly increasing")
    check(isinstance(ff.n_scenes, int) and ff.n_scenes >= 1, "fpfn.n_scenes: must be >= 1")
    check(ff.iteration is None or (isinstance(ff.iteration, int) and ff.iteration >= 0), "fpfn.iteration: must be >= 0 or null")

    check(_is_num(cfg.loss.lambda_u) and cfg.loss.lambda_u >= 0, "loss.lambda_u: must be >= 0")

    to = cfg.toy
    for name in ("n_labeled", "n_test", "labeled_batch", "unlabeled_batch", "eval_every", "feature_dim",
                 "anchors_per_object", "momentum_warmup"):
        v = getattr(to, name)
        check(isinstance(v, int) and v >= 1, f"toy.{name}: must be an integer >= 1")
    for name in ("n_unlabeled", "pretrain_iters", "ssl_iters", "background_anchors", "nuisance_dim"):
        v = getattr(to, name)
        check(isinstance(v, int) and v >= 0, f"toy.{name}: must be an integer >= 0")
    check(_is_num(to.lr) and to.lr > 0, "toy.lr: must be > 0")
    check(_is_num(to.momentum_start) and _is_num(to.momentum_end) and 0 <= to.momentum_start <= to.momentum_end < 1,
          "toy.momentum_start/momentum_end: need 0 <= start <= end < 1")
    try:
        cfg.strong_ranges()
    except (ValueError, TypeError) as exc:
        errs.append(f"toy augmentation: {exc}")
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))


def parse_override(text: str) -> tuple:
    """Split ``a.b.c=value`` into (["a", "b", "c"], parsed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected dotted.key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(f"override {text!r}: empty key component")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: cannot parse value ({exc})") from None
    if isinstance(value, str):
        # YAML 1.1 reads forms like 1e-3 as strings
        for conv in (int, float):
            try:
                value = conv(value)
                break
            except ValueError:
                pass
    return key.split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    """Return a copy of ``data`` with every ``dotted.key=value`` applied."""
    data = copy.deepcopy(data)
    for text in overrides or ():
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"override {text!r}: {k!r} is not a section")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"override {text!r}: unknown key {'.'.join(keys)!r}")
        node[keys[-1]] = value
    return data


def _deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "counts":
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_dict(name: str) -> dict:
    """Full configuration dictionary for a named preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    base = ExperimentConfig().to_dict()
    if name == "default":
        return base
    text = resources.files("pseudolabel3d").joinpath("presets", f"{name}.yaml").read_text()
    return _deep_merge(base, yaml.safe_load(text) or {})


def load_config(path: str | None = None, overrides=(), preset: str = "default", kind: str | None = None) -> ExperimentConfig:
    """Preset, then file (merged section-wise), then ``kind``, then overrides."""
    data = preset_dict(preset)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from None
        if file_data is not None and not isinstance(file_data, dict):
            raise ConfigError(f"config {path!r}: top level must be a mapping")
        unknown = set(file_data or {}) - set(data)
        if unknown:
            raise ConfigError(f"config {path!r}: unknown keys {sorted(unknown)}")
        data = _deep_merge(data, file_data or {})
    if kind is not None:
        data["kind"] = kind
    data = apply_overrides(data, overrides)
    return from_dict(data)
