"""Command-line pipeline: datagen -> train -> eval -> report, plus verify.

Exit codes: 0 success, 1 domain failure (solver, validation, missing files),
2 usage error. Set FRACGRAPH_THREADS to pin the BLAS/OpenMP pool size before
numpy loads (the package __init__ applies it); reruns are bit-reproducible
only at a fixed thread count.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

from .config import resolve_config, save_config, train_to_dict
from .dataset import (generate_dataset, load_split, production_curves,
                      training_samples)
from .evaluate import TASKS, EvalModel, evaluate_task, emit_report
from .jsonio import read_json, write_json
from .models import count_params, load_model, save_model
from .simulator import SimulationError
from .training import (TrainingError, build_train_data, train_stage1,
                       train_stage2)
from .validation import require


def _scale_splits(sizes, n: int) -> tuple:
    """Rescale split sizes to a new total, preserving the ratio; leftovers
    go to train, then val, then test."""
    total = sum(sizes)
    scaled = [s * n // total for s in sizes]
    k = 0
    while sum(scaled) < n:
        scaled[k % 3] += 1
        k += 1
    return tuple(scaled)


def cmd_datagen(args) -> int:
    cfg = resolve_config(args.config, seed=args.seed)
    if args.n_realizations is not None \
            and args.n_realizations != cfg.n_realizations:
        cfg.split_sizes = _scale_splits(cfg.split_sizes, args.n_realizations)
        cfg.n_realizations = args.n_realizations
    cfg.validate()
    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, "config.json"), cfg)
    manifest = generate_dataset(args.out, cfg.sim, cfg.n_realizations,
                                cfg.split_sizes, seed=cfg.seed,
                                workers=args.workers, log=print)
    n_ok = sum(1 for r in manifest["realizations"].values()
               if r["status"] == "ok")
    n_bad = cfg.n_realizations - n_ok
    sizes = {s: len(ids) for s, ids in manifest["splits"].items()}
    print(f"dataset at {args.out}: {n_ok} ok, {n_bad} quarantined; "
          f"splits train={sizes['train']} val={sizes['val']} "
          f"test={sizes['test']}")
    return 0


def cmd_train(args) -> int:
    cfg_path = args.config or os.path.join(args.dataset, "config.json")
    cfg = resolve_config(cfg_path)
    key = f"{args.model}_{args.target}"
    require(key in cfg.models, f"config defines no model spec for {key!r} "
            f"(have {sorted(cfg.models)})")
    spec = cfg.models[key]
    tc = cfg.stage1 if args.stage == 1 else cfg.stage2
    overrides = {k: v for k, v in (("seed", args.seed),
                                   ("epochs", args.epochs)) if v is not None}
    tc = replace(tc, **overrides)

    raw_tr = training_samples(args.dataset, "train", args.target)
    raw_va = training_samples(args.dataset, "val", args.target)
    print(f"training {key} stage {args.stage}: {len(raw_tr)} train / "
          f"{len(raw_va)} val trajectories, {tc.epochs} epochs, "
          f"{count_params(spec)} parameters")

    if args.stage == 1:
        data = build_train_data(raw_tr, raw_va, tc.n_steps)
        params, report = train_stage1(data, spec, tc)
        norm = data.norm
    else:
        params_init, _, norm, _ = load_model(args.ckpt_in, expect_spec=spec)
        data = build_train_data(raw_tr, raw_va, tc.n_steps, norm=norm)
        params, report = train_stage2(data, spec, params_init, tc)

    out_dir = os.path.dirname(os.path.abspath(args.ckpt_out))
    os.makedirs(out_dir, exist_ok=True)
    save_model(args.ckpt_out, params, spec, norm,
               extra_meta={"model": args.model, "target": args.target,
                           "stage": args.stage})

    # resolved-config snapshot: rerunning train from it reproduces the run
    if args.stage == 1:
        cfg.stage1 = tc
    else:
        cfg.stage2 = tc
    save_config(args.ckpt_out + ".config.json", cfg)

    report_doc = {
        "schema": "fracgraph.train_report.v1",
        "model": args.model,
        "target": args.target,
        "stage": args.stage,
        "dataset": args.dataset,
        "checkpoint": os.path.basename(args.ckpt_out),
        "spec": spec.to_dict(),
        "param_count": count_params(spec),
        "train_config": train_to_dict(tc),
        "n_train": len(raw_tr),
        "n_val": len(raw_va),
        "report": report.to_dict(),
    }
    write_json(args.ckpt_out + ".train_report.json", report_doc)

    print(f"stage {args.stage} done in {report.wall_clock_s:.1f} s: "
          f"train loss {report.train_losses[0]:.4g} -> "
          f"{report.train_losses[-1]:.4g}, best val {report.best_val:.4g} "
          f"at epoch {report.best_epoch}")
    print(f"checkpoint written to {args.ckpt_out}")
    return 0


def cmd_eval(args) -> int:
    ds_cfg = os.path.join(args.dataset, "config.json")
    cfg = resolve_config(ds_cfg) if os.path.exists(ds_cfg) else None
    n_steps = cfg.eval_steps if cfg else 10
    keep_n = cfg.keep_field_trajectories if cfg else 1

    models = []
    for path in args.checkpoints:
        params, spec, norm, meta = load_model(path)
        name = meta.get("model", "rgnn" if spec.recurrent else "gnn")
        stage = int(meta.get("stage", 1))
        actual = sum(v.size for v in params.values())
        expected = count_params(spec)
        print(f"audit {name}/{spec.target} stage {stage}: {actual} "
              f"parameters, count_params expects {expected}: "
              f"{'OK' if actual == expected else 'MISMATCH'}")
        require(actual == expected, f"parameter-count audit failed for {path}")
        models.append(EvalModel(name=name, stage=stage, params=params,
                                spec=spec, norm=norm))
    require(len(models) > 0, "no checkpoints given")

    cases = load_split(args.dataset, "test")
    require(len(cases) > 0, "dataset has an empty test split")
    keep = [rid for rid, _, _ in cases[:keep_n]]
    tasks = TASKS if args.task == "both" else (args.task,)

    results = []
    for task in tasks:
        results.extend(evaluate_task(task, models, cases, n_steps=n_steps,
                                     keep_fields=keep))
    written = emit_report(results, args.out,
                          production=production_curves(args.dataset, "test"))
    if cfg is not None:
        save_config(os.path.join(args.out, "eval_config.json"), cfg)

    for r in results:
        print(f"{r.task:15s} {r.model}_stage{r.stage:d} {r.field_name:10s} "
              f"mean MRAE {r.mean_error():.6f}")
    print(f"{len(written)} report files under {args.out}")
    return 0


def cmd_report(args) -> int:
    summary = read_json(os.path.join(args.eval_dir, "summary.json"))
    require(summary.get("schema") == "fracgraph.eval_summary.v1",
            f"unsupported summary schema {summary.get('schema')!r}")

    # recompute the means from the per-step CSV and cross-check
    sums: dict = {}
    with open(os.path.join(args.eval_dir, "mrae_per_step.csv"),
              encoding="utf-8") as f:
        for row in csv.DictReader(f):
            key = (row["task"], row["field"],
                   f"{row['model']}_stage{row['stage']}")
            s, n = sums.get(key, (0.0, 0))
            sums[key] = (s + float(row["value"]), n + 1)

    print(f"{'task':<15s} {'field':<11s} {'model':<24s} "
          f"{'mean MRAE':>10s} {'steps':>6s}")
    for task in sorted(summary["mean_mrae"]):
        for fname in sorted(summary["mean_mrae"][task]):
            for mkey, mean in summary["mean_mrae"][task][fname].items():
                s, n = sums.get((task, fname, mkey), (float("nan"), 0))
                require(n > 0 and abs(s / n - mean) <= 1e-12 * max(1.0, mean),
                        f"summary.json disagrees with mrae_per_step.csv for "
                        f"{task}/{fname}/{mkey}")
                print(f"{task:<15s} {fname:<11s} {mkey:<24s} "
                      f"{mean:>10.6f} {n:>6d}")
    print("summary.json and mrae_per_step.csv are consistent")
    return 0


def cmd_verify(args) -> int:
    from .verify import ALL_CHECKS, run_battery
    ok = run_battery(ALL_CHECKS, log=print)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fracgraph",
        description="Two-phase flow on stochastically fractured reservoirs: "
                     "simulate trajectory datasets, train graph-network "
                     "surrogates, and evaluate their rollouts.")
    sub = p.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("datagen", help="simulate a dataset of realizations")
    d.add_argument("--config", default="desk",
                   help="preset (paper, desk, tiny) or a config JSON path")
    d.add_argument("--out", required=True, help="dataset directory")
    d.add_argument("--n-realizations", type=int, default=None,
                   help="override the preset count (splits keep their ratio)")
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--workers", type=int, default=1,
                   help="simulation worker processes")
    d.set_defaults(func=cmd_datagen)

    t = sub.add_parser("train", help="train one surrogate stage")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", choices=("gnn", "rgnn"), required=True)
    t.add_argument("--target", choices=("pressure", "saturation"),
                   required=True)
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--config", default=None,
                   help="preset or config JSON; defaults to the dataset's "
                        "config.json")
    t.add_argument("--ckpt-in", default=None,
                   help="stage-1 checkpoint (required for --stage 2)")
    t.add_argument("--ckpt-out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--task", choices=("generalization", "extrapolation",
                                      "both"), default="both")
    e.add_argument("--out", required=True, help="report directory")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report",
                       help="print an evaluation summary table, cross-"
                            "checked against the per-step CSV")
    r.add_argument("--eval-dir", required=True)
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="run the built-in verification battery")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd == "train" and args.stage == 2 and not args.ckpt_in:
        parser.error("train --stage 2 requires --ckpt-in "
                     "(a stage-1 checkpoint)")
    try:
        return int(args.func(args) or 0)
    except (ValueError, SimulationError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
