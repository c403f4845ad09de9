"""Experiment orchestration: teacher training, distillation runs, ablation
grids, baseline comparison and artifact emission."""

import csv
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_student, save_teacher
from .config import config_hash, dump_config
from .diffusion import sample_reverse, train_teacher
from .errors import ValidationError
from .metrics import SampleEvaluator, overopt_monitor
from .nets import Denoiser
from .rewards import Rewarder
from .rl import distill
from .student import init_from_teacher, rollout_batch

METRIC_COLUMNS = ("epoch", "reward_mean", "reward_std", "fid", "precision", "recall", "density", "coverage",
                  "kl_k3", "div_penalty", "clip_frac", "ratio_mean")
CURVE_METRICS = ("reward_mean", "reward_std", "fid")

# Reward ablation rows: two embedding encoders (seeds 0 and 1), the
# condition-alignment reward and the mixture-density reward.
REWARD_GRID = {
    "enc0": [("teacher_cosine", 0)],
    "enc1": [("teacher_cosine", 1)],
    "enc0+enc1": [("teacher_cosine", 0), ("teacher_cosine", 1)],
    "enc0+align": [("teacher_cosine", 0), ("align", 0)],
    "enc0+enc1+align": [("teacher_cosine", 0), ("teacher_cosine", 1), ("align", 0)],
    "enc0+enc1+align+energy": [("teacher_cosine", 0), ("teacher_cosine", 1), ("align", 0), ("energy", 0)],
    "enc0+align+energy": [("teacher_cosine", 0), ("align", 0), ("energy", 0)],
}
ALGORITHM_GRID = {
    "ppo": {"rl.algorithm": "ppo"},
    "grpo": {"rl.algorithm": "grpo"},
    "dr_grpo": {"rl.algorithm": "dr_grpo"},
    "dr_grpo_noclip": {"rl.algorithm": "dr_grpo", "rl.clip_enabled": False},
}
DIVERGENCE_GRID = ("kl", "js", "chi2", "power", "renyi")


def _teacher_key(cfg):
    d = cfg.to_dict()
    t = dict(d["teacher"])
    t.pop("checkpoint")
    return config_hash({"data": d["data"], "schedule": d["schedule"], "teacher": t})[:12]


def build_teacher_net(cfg):
    t = cfg.teacher
    cond_dim = cfg.data.mode_count if t.conditional else 0
    return Denoiser(cfg.data_spec().dim, tuple(t.hidden), t.time_dim, cond_dim, cfg.schedule.T, t.activation, seed=t.seed)


def fit_teacher(cfg, log_every=0):
    t = cfg.teacher
    return train_teacher(cfg.data_spec(), cfg.noise_schedule(), build_teacher_net(cfg), steps=t.steps, lr=t.lr,
                         seed=t.seed, batch_size=t.batch_size, cond_drop=t.cond_drop, log_every=log_every)


def get_teacher(cfg, cache_dir=None):
    """Load ``teacher.checkpoint`` if set, else reuse or fill a cache keyed by
    the data, schedule and teacher settings."""
    if cfg.teacher.checkpoint:
        net, sched = load_checkpoint(cfg.teacher.checkpoint)
        if not isinstance(net, Denoiser) or sched.descriptor() != cfg.noise_schedule().descriptor():
            raise ValidationError("teacher checkpoint does not match the configured schedule")
        return net
    cache = Path(cache_dir or Path(cfg.output_dir) / "teachers") / f"teacher-{_teacher_key(cfg)}.ckpt"
    if cache.exists():
        return load_checkpoint(cache)[0]
    net = fit_teacher(cfg)
    save_teacher(cache, net, cfg.noise_schedule())
    return net


def make_evaluator(cfg):
    e = cfg.eval
    return SampleEvaluator(cfg.data_spec(), n_samples=e.n_samples, seed=e.seed, k=e.k)


def make_rewarder(cfg, teacher):
    return Rewarder(cfg.reward_spec(), teacher, cfg.noise_schedule(), cfg.data_spec(),
                    mmd_bandwidth=cfg.reward.mmd_bandwidth)


def teacher_metrics(teacher, schedule, evaluator):
    ro = sample_reverse(teacher, schedule, evaluator.n, record=False, seed=evaluator.seed + 1,
                        cond=evaluator.conditions())
    return evaluator.evaluate_samples(ro.finals)


def run_baseline(teacher, schedule, coarse, n=None, evaluator=None, seed=0):
    """Truncated teacher: one teacher evaluation per coarse step, with the
    interval's posterior composed under a fixed x0 estimate, and no training.

    Returns (samples, metrics); metrics is None without an evaluator.
    """
    policy = init_from_teacher(teacher, schedule, coarse)
    if evaluator is not None:
        conds, seed = evaluator.conditions(), evaluator.seed + 1
    else:
        if not n or n <= 0:
            raise ValidationError("run_baseline needs n > 0 or an evaluator")
        conds = np.arange(n) % max(teacher.cond_dim, 1) if teacher.cond_dim else np.full(n, -1)
    samples = rollout_batch(policy, conds, seed=seed).finals
    return samples, (evaluator.evaluate_samples(samples) if evaluator is not None else None)


@dataclasses.dataclass
class RunRecord:
    run_id: str
    run_dir: Path
    rows: list
    final: dict
    student: object = None
    checkpoints: dict = dataclasses.field(default_factory=dict)


def run_id_for(cfg, label):
    return f"{label}-{cfg.config_hash()[:12]}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, float("nan"))) for c in METRIC_COLUMNS])


def write_curves_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "metric", "value"))
        for r in rows:
            for m in CURVE_METRICS:
                if m in r:
                    w.writerow((r["epoch"], m, _fmt(r[m])))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def emit_outputs(run_dir, cfg, rows, final, checkpoints=None, started=None):
    """Write config snapshot, metrics CSV, curve CSV, final metrics and manifest.

    Everything except ``manifest.json`` (which records wall-clock times) is a
    pure function of the config and seed.
    """
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.yaml").write_text(dump_config(cfg))
        write_metrics_csv(run_dir / "metrics.csv", rows)
        write_curves_csv(run_dir / "curves.csv", rows)
        (run_dir / "final_metrics.json").write_text(json.dumps(_jsonable(final), indent=2, sort_keys=True) + "\n")
        manifest = {
            "config_hash": cfg.config_hash(),
            "code_version": __version__,
            "started": started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "rows": rows,
            "final": final,
            "checkpoints": checkpoints or {},
        }
        (run_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write run outputs under {run_dir}: {exc}") from exc
    return run_dir


def run_train_teacher(cfg, log_every=0):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    net = fit_teacher(cfg, log_every=log_every)
    run_dir = Path(cfg.output_dir) / run_id_for(cfg, "teacher")
    sched = cfg.noise_schedule()
    ckpt = save_teacher(run_dir / "teacher.ckpt", net, sched)
    save_teacher(Path(cfg.output_dir) / "teachers" / f"teacher-{_teacher_key(cfg)}.ckpt", net, sched)
    h = net.loss_history
    tenth = max(1, len(h) // 10)
    final = {"loss_first_10pct": float(h[:tenth].mean()) if len(h) else None,
             "loss_last_10pct": float(h[-tenth:].mean()) if len(h) else None,
             "teacher": teacher_metrics(net, sched, make_evaluator(cfg))}
    emit_outputs(run_dir, cfg, [], final, {"teacher": ckpt}, started)
    return RunRecord(run_dir.name, run_dir, [], final, checkpoints={"teacher": ckpt})


def run_distill(cfg, teacher=None, label="distill", log=None):
    """One distillation run with full artifact emission under output_dir/{run-id}/."""
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    teacher = teacher if teacher is not None else get_teacher(cfg)
    sched, coarse = cfg.noise_schedule(), cfg.coarse_schedule()
    evaluator = make_evaluator(cfg)
    student = init_from_teacher(teacher, sched, coarse, freeze_log_std=cfg.rl.freeze_log_std)
    res = distill(teacher, student, make_rewarder(cfg, teacher), cfg.rl_config(), cfg.epochs,
                  evaluator=evaluator, seed=cfg.seed, log=log)
    final = {"student": evaluator(res.student), "best_fid": res.best_fid, "best_epoch": res.best_epoch}
    if cfg.baseline == "truncated_teacher":
        final["baseline"] = run_baseline(teacher, sched, coarse, evaluator=evaluator)[1]
    if len(res.rows) >= 10:
        flag, epoch = overopt_monitor([r["reward_mean"] for r in res.rows], [r["fid"] for r in res.rows])
        final["overoptimization"] = {"flagged": flag, "epoch": epoch}
    run_dir = Path(cfg.output_dir) / run_id_for(cfg, label)
    ckpts = {"student": save_student(run_dir / "student.ckpt", res.student),
             "best_student": save_student(run_dir / "best_student.ckpt", res.best_student)}
    emit_outputs(run_dir, cfg, res.rows, final, ckpts, started)
    return RunRecord(run_dir.name, run_dir, res.rows, final, res.student, ckpts)


def ablation_configs(cfg, axis):
    """Named configs for one ablation axis; each differs from ``cfg`` only on that axis."""
    if axis == "reward":
        out = {}
        for name, comps in REWARD_GRID.items():
            lst = [{"kind": k, "weight": 1.0, "encoder": e} for k, e in comps]
            out[name] = cfg.replace(**{"reward.components": lst})
        return out
    if axis == "algorithm":
        return {name: cfg.replace(**ch) for name, ch in ALGORITHM_GRID.items()}
    if axis == "divergence":
        base = cfg.rl.divergence
        alpha, lam = (base.alpha, base.lam) if base is not None else (0.5, 1.0)
        return {k: cfg.replace(**{"rl.divergence": {"kind": k, "alpha": alpha, "lambda": lam}})
                for k in DIVERGENCE_GRID}
    raise ValidationError(f"unknown ablation axis {axis!r}; expected reward, algorithm or divergence")


def run_ablation(cfg, axis, teacher=None, log=None):
    teacher = teacher if teacher is not None else get_teacher(cfg)
    records = {}
    for name, sub in ablation_configs(cfg, axis).items():
        records[name] = run_distill(sub, teacher, label=f"ablate-{axis}-{name}")
        if log:
            log(name, records[name])
    return records


def run_compare(cfg, teacher=None, log=None):
    """Distilled student vs the truncated-teacher baseline vs the full teacher."""
    teacher = teacher if teacher is not None else get_teacher(cfg)
    rec = run_distill(cfg, teacher, label="compare", log=log)
    sched, coarse = cfg.noise_schedule(), cfg.coarse_schedule()
    evaluator = make_evaluator(cfg)
    base = rec.final.get("baseline") or run_baseline(teacher, sched, coarse, evaluator=evaluator)[1]
    return {"student": rec.final["student"], "baseline": base,
            "teacher": teacher_metrics(teacher, sched, evaluator), "run_dir": str(rec.run_dir)}


def run_evaluate(cfg, checkpoint):
    obj = load_checkpoint(checkpoint)
    evaluator = make_evaluator(cfg)
    if isinstance(obj, tuple):
        net, sched = obj
        return {"kind": "teacher", **teacher_metrics(net, sched, evaluator)}
    return {"kind": "student", **evaluator(obj)}
