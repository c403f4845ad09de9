"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

import argparse
import json
import sys

from .config import load_config
from .errors import ValidationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="stepdistill", description="Distil a multi-step diffusion teacher into a few-step student.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("train-teacher", help="train the teacher and write its checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--log-every", type=int, default=0)
    d = sub.add_parser("distill", help="run one distillation and write metrics and checkpoints")
    d.add_argument("--config", required=True)
    d.add_argument("--quiet", action="store_true")
    e = sub.add_parser("evaluate", help="score a teacher or student checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    a = sub.add_parser("ablate", help="run one ablation grid")
    a.add_argument("--axis", required=True, choices=("reward", "algorithm", "divergence"))
    a.add_argument("--config", required=True)
    v = sub.add_parser("verify", help="run the numerical oracle checks")
    v.add_argument("--config", help="also probe the configured teacher's reverse kernels")
    c = sub.add_parser("compare", help="distilled student vs truncated-teacher baseline")
    c.add_argument("--config", required=True)
    return p


def _fmt_metrics(m):
    keys = ("fid", "precision", "recall", "density", "coverage", "covered_modes")
    return "  ".join(f"{k}={m[k]:.4g}" if isinstance(m[k], float) else f"{k}={m[k]}" for k in keys if k in m)


def _epoch_line(row):
    return (f"epoch {row['epoch']:3d}  reward {row['reward_mean']:.4f}  fid {row.get('fid', float('nan')):.3e}  "
            f"recall {row.get('recall', float('nan')):.3f}  modes {row.get('covered_modes', '-')}")


def _run(args):
    from . import harness

    if args.command == "verify":
        from .verify import run_suite

        kw = {}
        if args.config:
            cfg = load_config(args.config)
            kw = {"teacher": harness.get_teacher(cfg), "schedule": cfg.noise_schedule(), "data": cfg.data_spec()}
        results = run_suite(**kw)
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<40s} {r.detail}  ({r.seconds:.2f}s)")
        return 0 if all(r.passed for r in results) else 2

    cfg = load_config(args.config)
    if args.command == "train-teacher":
        rec = harness.run_train_teacher(cfg, log_every=args.log_every)
        print(f"teacher written to {rec.checkpoints['teacher']}")
        print(_fmt_metrics(rec.final["teacher"]))
    elif args.command == "distill":
        rec = harness.run_distill(cfg, log=None if args.quiet else lambda r: print(_epoch_line(r), flush=True))
        print(f"run directory: {rec.run_dir}")
        print("student  " + _fmt_metrics(rec.final["student"]))
        if "baseline" in rec.final:
            print("baseline " + _fmt_metrics(rec.final["baseline"]))
    elif args.command == "evaluate":
        print(json.dumps(harness.run_evaluate(cfg, args.checkpoint), indent=2, sort_keys=True))
    elif args.command == "ablate":
        recs = harness.run_ablation(cfg, args.axis,
                                    log=lambda name, rec: print(f"{name:<24s} {_fmt_metrics(rec.final['student'])}",
                                                                flush=True))
        print(f"{len(recs)} runs under {cfg.output_dir}")
    elif args.command == "compare":
        out = harness.run_compare(cfg)
        for name in ("teacher", "baseline", "student"):
            print(f"{name:<9s}{_fmt_metrics(out[name])}")
        verdict = "beats" if out["student"]["fid"] <= out["baseline"]["fid"] else "does not beat"
        print(f"student {verdict} the truncated baseline on toy-FID; run directory: {out['run_dir']}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _run(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
