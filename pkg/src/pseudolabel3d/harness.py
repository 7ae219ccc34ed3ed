"""Experiment drivers producing deterministic CSV reports.

Label-quality experiments (strategy ablation, threshold sweep, schedule
ablation) share one engine: for every seed and iteration the simulated
teacher scores the same unlabeled scenes for all arms, each arm turns the
proposals into pseudo-labels, and label quality is pooled over logging
windows and over the final window of the run.  Arms therefore differ only in
how they generate labels.

The headline metric is the supervision F1: harmonic mean of the fraction of
pseudo-labels that land on an object and the fraction of objects covered by
at least one pseudo-label.  One-to-one precision/recall/F1 is reported next
to it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augmentation import WEAK_RANGES
from .config import ExperimentConfig, StrategyConfig, validate
from .evaluation import EvalConfig, fp_fn_sweep
from .kitti_io import box_array_to_label, write_label_file, write_split_file
from .pseudo_labels import LabelQuality, generate_dense, generate_sparse, label_quality, per_class_nms
from .schedule import ThresholdSchedule
from .simulation import PROPOSAL_STREAM, derive_rng, gen_scene, simulate_teacher
from .ssl_loop import SSLConfig, run_ssl
from .structures import CLASS_NAMES
from .toy_detector import ToyDetectorConfig

PICK_STREAM = 31
FPFN_STREAM = 32


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        self.rows.append(tuple(values))

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines.extend(",".join(_cell(v) for v in row) for row in self.rows)
        return "\n".join(lines) + "\n"

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    text = str(v)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


@dataclass
class RunReport:
    kind: str
    tables: dict
    summary: list
    config: ExperimentConfig

    def summary_text(self) -> str:
        return "\n".join(self.summary) + "\n"

    def write(self, out_dir: str) -> list:
        """Write ``<table>.csv``, ``summary.txt`` and ``config.yaml``; return the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name, table in self.tables.items():
            path = os.path.join(out_dir, f"{name}.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(table.to_csv())
            paths.append(path)
        for name, text in (("summary.txt", self.summary_text()), ("config.yaml", self.config.to_yaml())):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def _map_seeds(fn: Callable, cfg: ExperimentConfig, *args) -> list:
    """Run ``fn(cfg, seed, *args)`` for every seed; results in seed-list order."""
    seeds = list(cfg.seeds)
    if cfg.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(seeds))) as pool:
            futures = [pool.submit(fn, cfg, s, *args) for s in seeds]
            return [f.result() for f in futures]
    return [fn(cfg, s, *args) for s in seeds]


# ------------------------------------------------------- label-quality engine


@dataclass(frozen=True)
class Arm:
    """One way of turning teacher proposals into pseudo-labels."""

    name: str
    dense: bool
    schedule: ThresholdSchedule

    def labels(self, proposals, t: int, nms_iou: float):
        if self.dense:
            return generate_dense(proposals, self.schedule, t)
        return generate_sparse(proposals, self.schedule.value_at(t), nms_iou, source_iteration=t)


def strategy_arm(s: StrategyConfig, cfg: ExperimentConfig) -> Arm:
    sched = cfg.schedule.to_schedule() if s.dynamic else ThresholdSchedule.constant(s.threshold)
    return Arm(s.name, s.dense, sched)


@dataclass
class ArmResult:
    final: LabelQuality
    overall_mean_f1: float
    trajectory: list  # (iteration, threshold, LabelQuality) per logging window


def final_window_start(iterations: int, fraction: float) -> int:
    return iterations - max(1, math.ceil(iterations * fraction - 1e-9))


def simulate_arms(cfg: ExperimentConfig, seed: int, arms: Sequence[Arm]) -> dict:
    """Run every arm on one seed; returns ``{arm name: ArmResult}``."""
    sim = cfg.simulation
    spec = cfg.scene.to_spec(seed)
    teacher = cfg.teacher.to_model(seed, sim.iterations)
    scenes = {}
    start_final = final_window_start(sim.iterations, sim.final_window)
    window = {a.name: [] for a in arms}
    final = {a.name: [] for a in arms}
    f1_sum = {a.name: 0.0 for a in arms}
    traj = {a.name: [] for a in arms}
    for t in range(sim.iterations):
        pick = derive_rng(seed, PICK_STREAM, t)
        batch = pick.integers(0, sim.n_scenes, sim.unlabeled_batch)
        step = {a.name: [] for a in arms}
        for b, idx in enumerate(batch):
            idx = int(idx)
            if idx not in scenes:
                scenes[idx] = gen_scene(spec, idx)
            scene = scenes[idx]
            sample = simulate_teacher(scene, teacher, t, rng=derive_rng(seed, PROPOSAL_STREAM, idx, t, b), spec=spec)
            for arm in arms:
                step[arm.name].append(label_quality(arm.labels(sample.proposals, t, sim.nms_iou), scene))
        for arm in arms:
            q = LabelQuality.pooled(step[arm.name])
            f1_sum[arm.name] += q.supervision_f1
            window[arm.name].extend(step[arm.name])
            if t >= start_final:
                final[arm.name].extend(step[arm.name])
            if (t + 1) % sim.log_every == 0 or t + 1 == sim.iterations:
                traj[arm.name].append((t, arm.schedule.value_at(t), LabelQuality.pooled(window[arm.name])))
                window[arm.name] = []
    return {
        a.name: ArmResult(LabelQuality.pooled(final[a.name]), f1_sum[a.name] / sim.iterations, traj[a.name])
        for a in arms
    }


PER_SEED_COLUMNS = ("seed", "arm", "final_f1", "final_label_precision", "final_coverage",
                    "final_precision", "final_recall", "final_f1_one_to_one", "final_mean_iou",
                    "mean_labels_per_scene", "overall_mean_f1")
AGGREGATE_COLUMNS = ("arm", "n_seeds", "mean_final_f1", "std_final_f1", "min_final_f1", "max_final_f1",
                     "mean_label_precision", "mean_coverage", "mean_f1_one_to_one", "mean_overall_f1")
TRAJECTORY_COLUMNS = ("seed", "arm", "iteration", "threshold", "precision", "recall", "coverage",
                      "label_precision", "f1", "n_labels", "n_gt")


def _quality_tables(cfg: ExperimentConfig, arms: Sequence[Arm], per_seed_results: list) -> dict:
    per_seed = Table(PER_SEED_COLUMNS)
    trajectory = Table(TRAJECTORY_COLUMNS)
    n_window = cfg.simulation.iterations - final_window_start(cfg.simulation.iterations, cfg.simulation.final_window)
    for seed, results in zip(cfg.seeds, per_seed_results):
        for arm in arms:
            r = results[arm.name]
            q = r.final
            per_seed.add(seed, arm.name, q.supervision_f1, q.label_precision, q.gt_coverage, q.precision,
                         q.recall, q.f1, q.mean_matched_iou,
                         q.n_labels / (n_window * cfg.simulation.unlabeled_batch), r.overall_mean_f1)
            for t, thr, wq in r.trajectory:
                trajectory.add(seed, arm.name, t, thr, wq.precision, wq.recall, wq.gt_coverage,
                               wq.label_precision, wq.supervision_f1, wq.n_labels, wq.n_gt)
    return {"per_seed": per_seed, "aggregate": aggregate_table(per_seed, [a.name for a in arms]),
            "trajectory": trajectory}


def aggregate_table(per_seed: Table, arm_names: Sequence[str]) -> Table:
    """Aggregate rows; a pure function of the per-seed table."""
    agg = Table(AGGREGATE_COLUMNS)
    cols = {c: per_seed.column(c) for c in per_seed.columns}
    for name in arm_names:
        idx = [i for i, a in enumerate(cols["arm"]) if a == name]
        f1 = np.array([cols["final_f1"][i] for i in idx])
        pick = lambda c: float(np.mean([cols[c][i] for i in idx]))  # noqa: E731
        agg.add(name, len(idx), float(np.mean(f1)), float(np.std(f1)), float(np.min(f1)), float(np.max(f1)),
                pick("final_label_precision"), pick("final_coverage"), pick("final_f1_one_to_one"),
                pick("overall_mean_f1"))
    return agg


def _final_f1(tables: dict) -> dict:
    """``{arm: [final F1 per seed]}`` from the per-seed table."""
    out = {}
    for arm, f1 in zip(tables["per_seed"].column("arm"), tables["per_seed"].column("final_f1")):
        out.setdefault(arm, []).append(f1)
    return out


def _header(cfg: ExperimentConfig, title: str) -> list:
    return [
        title,
        f"seeds: {len(cfg.seeds)} ({', '.join(str(s) for s in cfg.seeds)})",
        f"iterations: {cfg.simulation.iterations}, scenes: {cfg.simulation.n_scenes}, "
        f"final window: last {cfg.simulation.iterations - final_window_start(cfg.simulation.iterations, cfg.simulation.final_window)} iterations",
        f"teacher: rho_cls={cfg.teacher.rho_cls}, rho_iou={cfg.teacher.rho_iou}, clutter_rate={cfg.teacher.clutter_rate}, "
        f"sigma={cfg.teacher.sigma0}+{cfg.teacher.sigma_inf}",
        "",
    ]


def _arm_lines(agg: Table) -> list:
    lines = ["arm                      mean F1    std     coverage  label prec."]
    for row in agg.rows:
        r = dict(zip(agg.columns, row))
        lines.append(f"{r['arm']:<24} {r['mean_final_f1']:.4f}   {r['std_final_f1']:.4f}  "
                     f"{r['mean_coverage']:.4f}    {r['mean_label_precision']:.4f}")
    return lines


def _run_arms(cfg, arms):
    names = [a.name for a in arms]
    if len(set(names)) != len(names):
        raise ValueError("arm names must be unique")
    return _quality_tables(cfg, arms, _map_seeds(simulate_arms, cfg, tuple(arms)))


# ------------------------------------------------------------- experiments


def run_strategy_ablation(cfg: ExperimentConfig) -> RunReport:
    """Sparse/dense x fixed/dynamic pseudo-label strategies under identical teacher outputs."""
    validate(cfg)
    arms = [strategy_arm(s, cfg) for s in cfg.strategies]
    tables = _run_arms(cfg, arms)
    summary = _header(cfg, "strategy ablation") + _arm_lines(tables["aggregate"])
    f1 = _final_f1(tables)
    if "dense-dynamic" in f1 and "sparse-fixed" in f1:
        wins = sum(a >= b for a, b in zip(f1["dense-dynamic"], f1["sparse-fixed"]))
        summary += ["", f"dense-dynamic >= sparse-fixed in {wins}/{len(cfg.seeds)} seeds"]
    return RunReport("strategy-ablation", tables, summary, cfg)


def run_threshold_sweep(cfg: ExperimentConfig) -> RunReport:
    """Every fixed threshold plus the dynamic schedule, same seeds and teacher outputs."""
    validate(cfg)
    dense = cfg.simulation.dense_sweep
    arms = [Arm(f"fixed-{t:g}", dense, ThresholdSchedule.constant(t)) for t in cfg.thresholds]
    s = cfg.schedule
    arms.append(Arm(f"dynamic-{s.sigma_start:g}-{s.sigma_end:g}", dense, s.to_schedule()))
    tables = _run_arms(cfg, arms)
    agg = dict(zip(tables["aggregate"].column("arm"), tables["aggregate"].column("mean_final_f1")))
    fixed = {a.name: agg[a.name] for a in arms[:-1]}
    best = max(fixed, key=lambda k: fixed[k])
    dyn = agg[arms[-1].name]
    summary = _header(cfg, f"threshold sweep ({'dense' if dense else 'sparse'} labels)") + _arm_lines(tables["aggregate"])
    summary += ["", f"best fixed: {best} ({fixed[best]:.4f}); dynamic: {dyn:.4f}; "
                f"dynamic - best fixed = {dyn - fixed[best]:+.4f}"]
    return RunReport("threshold-sweep", tables, summary, cfg)


def schedule_name(start: float, end: float) -> str:
    return f"{start:g}->{end:g}"


def run_schedule_ablation(cfg: ExperimentConfig) -> RunReport:
    """High-to-low versus low-to-high threshold schedules."""
    validate(cfg)
    dense = cfg.simulation.dense_sweep
    arms = [Arm(schedule_name(a, b), dense, cfg.schedule_for(a, b)) for a, b in cfg.schedules]
    tables = _run_arms(cfg, arms)
    summary = _header(cfg, "schedule ablation") + _arm_lines(tables["aggregate"])
    agg = dict(zip(tables["aggregate"].column("arm"), tables["aggregate"].column("mean_final_f1")))
    down = [schedule_name(a, b) for a, b in cfg.schedules if a > b]
    up = [schedule_name(a, b) for a, b in cfg.schedules if a < b]
    if down and up:
        summary += ["", f"best high-to-low: {max(agg[k] for k in down):.4f}; "
                    f"best low-to-high: {max(agg[k] for k in up):.4f}"]
    return RunReport("schedule-ablation", tables, summary, cfg)


def fpfn_seed(cfg: ExperimentConfig, seed: int) -> list:
    """Teacher predictions (after per-class NMS) on one seed's scenes, with ground truth."""
    spec = cfg.scene.to_spec(seed)
    teacher = cfg.teacher.to_model(seed, cfg.simulation.iterations)
    t = cfg.fpfn.iteration if cfg.fpfn.iteration is not None else cfg.simulation.iterations
    ecfg = EvalConfig(iou_kind=cfg.teacher.iou_kind)
    preds, gts = [], []
    for idx in range(cfg.fpfn.n_scenes):
        scene = gen_scene(spec, idx)
        props = simulate_teacher(scene, teacher, t, rng=derive_rng(seed, FPFN_STREAM, idx), spec=spec).proposals
        preds.append(props.subset(per_class_nms(props, cfg.simulation.nms_iou)))
        gts.append(scene)
    return fp_fn_sweep(preds, gts, cfg.fpfn.thresholds, ecfg)


FPFN_COLUMNS = ("seed", "threshold", "TP", "FP", "FN", "precision", "recall")


def run_fpfn_sweep(cfg: ExperimentConfig) -> RunReport:
    """FP and FN counts of the simulated teacher across confidence thresholds."""
    validate(cfg)
    per_seed = Table(FPFN_COLUMNS)
    violations = 0
    for seed, rows in zip(cfg.seeds, _map_seeds(fpfn_seed, cfg)):
        for prev, row in zip([None] + rows[:-1], rows):
            per_seed.add(seed, row.threshold, row.tp, row.fp, row.fn, row.precision, row.recall)
            if prev is not None and (row.fp > prev.fp or row.fn < prev.fn):
                violations += 1
    agg = Table(("threshold", "n_seeds", "TP", "FP", "FN", "precision", "recall"))
    for thr in cfg.fpfn.thresholds:
        rows = [r for r in per_seed.rows if r[1] == float(thr)]
        tp, fp, fn = (sum(r[i] for r in rows) for i in (2, 3, 4))
        agg.add(float(thr), len(rows), tp, fp, fn, tp / (tp + fp) if tp + fp else 0.0, tp / (tp + fn) if tp + fn else 0.0)
    summary = _header(cfg, "FP/FN threshold sweep")
    summary += ["threshold  FP      FN"] + [f"{r[0]:<10g} {r[3]:<7d} {r[4]}" for r in agg.rows]
    summary += ["", f"monotonicity violations (FP rising or FN falling with threshold): {violations}"]
    return RunReport("fpfn-sweep", {"per_seed": per_seed, "aggregate": agg}, summary, cfg)


def ssl_config(cfg: ExperimentConfig, lambda_u: float | None = None) -> SSLConfig:
    t = cfg.toy
    det = ToyDetectorConfig(
        feature_dim=t.feature_dim, anchors_per_object=t.anchors_per_object, anchor_noise=t.anchor_noise,
        background_anchors=t.background_anchors, feature_noise=t.feature_noise, nuisance_dim=t.nuisance_dim,
        nuisance_scale=t.nuisance_scale,
    )
    return SSLConfig(
        detector=det, n_labeled=t.n_labeled, n_unlabeled=t.n_unlabeled, n_test=t.n_test,
        pretrain_iters=t.pretrain_iters, ssl_iters=t.ssl_iters, lr=t.lr,
        lambda_u=cfg.loss.lambda_u if lambda_u is None else lambda_u,
        labeled_batch=t.labeled_batch, unlabeled_batch=t.unlabeled_batch,
        schedule=t.schedule.to_schedule(), warmup=cfg.warmup(), strong=cfg.strong_ranges(), weak=WEAK_RANGES,
        nms_iou=t.nms_iou, eval_every=t.eval_every,
    )


def toy_seed(cfg: ExperimentConfig, seed: int) -> tuple:
    ssl = run_ssl(seed, ssl_config(cfg))
    base = run_ssl(seed, ssl_config(cfg, lambda_u=0.0))
    return ssl, base


def diff_variance(values) -> float:
    d = np.diff(np.asarray(values, dtype=np.float64))
    return float(np.var(d)) if len(d) else 0.0


TOY_COLUMNS = ("seed", "baseline_f1", "ssl_f1", "delta_f1", "baseline_ap", "ssl_ap", "ssl_student_f1",
               "teacher_diff_var", "student_diff_var", "mean_pseudo_labels")


def run_toy_ssl_loop(cfg: ExperimentConfig) -> RunReport:
    """Teacher-student self-training of the toy detector versus labeled-only training."""
    validate(cfg)
    per_seed = Table(TOY_COLUMNS)
    traj = Table(("seed", "run", "iteration", "teacher_f1", "student_f1"))
    for seed, (ssl, base) in zip(cfg.seeds, _map_seeds(toy_seed, cfg)):
        per_seed.add(seed, base.final.f1, ssl.final.f1, ssl.final.f1 - base.final.f1, base.final.ap, ssl.final.ap,
                     ssl.final_student.f1, diff_variance(ssl.teacher_f1), diff_variance(ssl.student_f1),
                     float(np.mean(ssl.pseudo_per_iter)) if ssl.pseudo_per_iter else 0.0)
        for name, r in (("ssl", ssl), ("baseline", base)):
            for it, tf, sf in zip(r.eval_iters, r.teacher_f1, r.student_f1):
                traj.add(seed, name, it, tf, sf)
    agg = Table(("metric", "mean", "std", "min", "max"))
    for col in ("baseline_f1", "ssl_f1", "delta_f1", "baseline_ap", "ssl_ap"):
        v = np.array(per_seed.column(col))
        agg.add(col, float(np.mean(v)), float(np.std(v)), float(np.min(v)), float(np.max(v)))
    wins = sum(d > 0 for d in per_seed.column("delta_f1"))
    smoother = sum(a < b for a, b in zip(per_seed.column("teacher_diff_var"), per_seed.column("student_diff_var")))
    t = cfg.toy
    summary = [
        "toy teacher-student loop",
        f"seeds: {len(cfg.seeds)} ({', '.join(str(s) for s in cfg.seeds)})",
        f"labeled scenes: {t.n_labeled}, unlabeled: {t.n_unlabeled}, test: {t.n_test}, "
        f"pre-training: {t.pretrain_iters}, self-training: {t.ssl_iters}, lambda_u: {cfg.loss.lambda_u}",
        "",
        f"labeled-only F1: {agg.rows[0][1]:.4f} +- {agg.rows[0][2]:.4f}",
        f"self-trained F1: {agg.rows[1][1]:.4f} +- {agg.rows[1][2]:.4f}",
        f"self-training better in {wins}/{len(cfg.seeds)} seeds",
        f"teacher trajectory smoother than student in {smoother}/{len(cfg.seeds)} seeds",
    ]
    return RunReport("toy-ssl-loop", {"per_seed": per_seed, "aggregate": agg, "trajectory": traj}, summary, cfg)


RUNNERS = {
    "strategy-ablation": run_strategy_ablation,
    "threshold-sweep": run_threshold_sweep,
    "schedule-ablation": run_schedule_ablation,
    "fpfn-sweep": run_fpfn_sweep,
    "toy-ssl-loop": run_toy_ssl_loop,
}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    validate(cfg)
    return RUNNERS[cfg.kind](cfg)


def export_scenes(cfg: ExperimentConfig, out_dir: str, n_scenes: int, iteration: int = 0) -> list:
    """Write ground truth and teacher proposals of the first seed as KITTI label files.

    Layout: ``label_2/NNNNNN.txt`` (ground truth), ``pred/NNNNNN.txt``
    (proposals with scores) and ``split.txt`` listing the ids.
    """
    seed = cfg.seeds[0]
    spec = cfg.scene.to_spec(seed)
    teacher = cfg.teacher.to_model(seed, cfg.simulation.iterations)
    os.makedirs(os.path.join(out_dir, "label_2"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "pred"), exist_ok=True)
    ids = []
    for idx in range(n_scenes):
        scene = gen_scene(spec, idx)
        props = simulate_teacher(scene, teacher, iteration, spec=spec).proposals
        sid = f"{idx:06d}"
        ids.append(sid)
        gt_labels = [box_array_to_label(b, CLASS_NAMES[c]) for b, c in zip(scene.boxes, scene.class_ids)]
        pr_labels = [box_array_to_label(b, CLASS_NAMES[c], score=float(s))
                     for b, c, s in zip(props.boxes, props.class_ids, props.cls_scores)]
        for sub, labels in (("label_2", gt_labels), ("pred", pr_labels)):
            with open(os.path.join(out_dir, sub, sid + ".txt"), "w", encoding="utf-8") as fh:
                fh.write(write_label_file(labels))
    with open(os.path.join(out_dir, "split.txt"), "w", encoding="utf-8") as fh:
        fh.write(write_split_file(ids))
    return ids
