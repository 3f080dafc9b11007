"""Surrogate evaluation: rollout protocols, MRAE metrics, report files.

Two tasks are supported. ``generalization`` rolls a model out from the
initial state for the first ``n_steps`` report steps of each held-out
trajectory. ``extrapolation`` hands the model the ground truth up to step
``n_steps`` (the plain GNN is simply re-seeded with the true field; the
recurrent GNN additionally consumes the earlier states to warm its memory)
and rolls out the following ``n_steps`` steps, which lie beyond the
training horizon.

A persistence baseline (prediction = initial field, frozen) is evaluated
alongside every task as the error floor reference.

``emit_report`` writes plot-ready artifacts:

* ``mrae_per_step.csv``   - task, model, stage, trajectory, step, field, value
* ``summary.json``        - means per (task, model, stage, field) plus
                            per-step box-plot statistics (schema
                            ``fracgraph.eval_summary.v1``)
* ``fields_<real>_<step>.csv`` - per-cell truth/prediction/error, grouped in
                            one subdirectory per model, for error-map figures
* ``production.csv``      - producer rate curves from the simulation

All floats are written with 17 significant digits so reports round-trip
bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .graphs import NormStats, build_graph
from .jsonio import write_json
from .models import ModelSpec, RealizationGraph, rollout_ar, rollout_rgnn
from .validation import as_float_array, require

GENERALIZATION = "generalization"
EXTRAPOLATION = "extrapolation"
TASKS = (GENERALIZATION, EXTRAPOLATION)
PERSISTENCE = "persistence"


def mrae(pred, truth) -> float:
    """Mean relative absolute error (1/n_c) sum_i |pred_i - truth_i| / truth_i.

    Computed on raw physical fields. The truth must be strictly positive
    (reservoir pressures are, and ground-truth saturations never drop below
    the connate value); otherwise the metric is undefined and this raises.
    """
    p = as_float_array(pred, "pred")
    t = as_float_array(truth, "truth")
    require(p.shape == t.shape, "mrae needs fields of equal shape")
    require(bool(np.all(t > 0.0)),
            "mrae is undefined when the truth has non-positive entries")
    return float(np.mean(np.abs(p - t) / t))


@dataclass
class EvalModel:
    """A trained surrogate handed to the evaluation driver."""
    name: str              # "gnn" | "rgnn"
    stage: int             # training stage of the checkpoint, 1 or 2
    params: dict
    spec: ModelSpec
    norm: NormStats

    def __post_init__(self):
        require(self.name in ("gnn", "rgnn"), f"unknown model name {self.name!r}")
        require(self.stage in (1, 2), "stage must be 1 or 2")
        require(self.spec.recurrent == (self.name == "rgnn"),
                "model name does not match the spec's recurrent flag")

    @property
    def key(self) -> str:
        return f"{self.name}_stage{self.stage}_{self.spec.target}"


@dataclass
class EvalResult:
    """Per-trajectory, per-step MRAE for one (task, model, stage, field)."""
    task: str
    model: str             # "gnn" | "rgnn" | "persistence"
    stage: int             # 0 for the persistence baseline
    field_name: str        # "pressure" | "saturation"
    trajectories: list     # trajectory ids, row order of `errors`
    steps: list            # predicted report-step indices, column order
    errors: np.ndarray     # (n_trajectories, n_steps)
    # optional raw fields for error-map figures: (traj_id, step) -> (truth, pred)
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        require(self.errors.shape == (len(self.trajectories), len(self.steps)),
                "error matrix shape does not match trajectory/step labels")
        require(bool(np.all(self.errors >= 0.0)), "MRAE values must be >= 0")

    @property
    def key(self) -> str:
        return f"{self.model}_stage{self.stage}_{self.field_name}"

    def mean_error(self) -> float:
        """Grand mean over all trajectories and steps (the Table-4/5 number)."""
        return float(np.mean(self.errors))

    def step_means(self) -> np.ndarray:
        """Mean error per step over trajectories."""
        return self.errors.mean(axis=0)

    def step_quantiles(self) -> dict:
        """Box-plot statistics per step: min, Q1, median, Q3, max."""
        e = self.errors
        return {
            "min": e.min(axis=0),
            "q1": np.quantile(e, 0.25, axis=0),
            "median": np.median(e, axis=0),
            "q3": np.quantile(e, 0.75, axis=0),
            "max": e.max(axis=0),
        }


def _truth_fields(states, target: str) -> list:
    return [as_float_array(getattr(st, target), target) for st in states]


def _predict(model: EvalModel, grid, states, task: str, n_steps: int):
    """Run one model over one trajectory; returns (steps, predictions, truths).

    For generalization: roll from y^0, predicting steps 1..n.
    For extrapolation: re-seed with the true y^n and predict steps n+1..2n;
    the recurrent model first consumes y^0..y^{n-1} to warm its memory.
    """
    target = model.spec.target
    ys = _truth_fields(states, target)
    graph0 = build_graph(grid, states[0], target)
    rg = RealizationGraph.from_graph(graph0, model.norm)
    if task == GENERALIZATION:
        require(len(ys) >= n_steps + 1,
                f"generalization needs {n_steps + 1} states, got {len(ys)}")
        steps = list(range(1, n_steps + 1))
        if model.spec.recurrent:
            preds, _ = rollout_rgnn(model.params, model.spec, rg, ys[0],
                                    n_steps, model.norm)
        else:
            preds, _ = rollout_ar(model.params, model.spec, rg, ys[0],
                                  n_steps, model.norm)
    else:
        require(task == EXTRAPOLATION, f"unknown task {task!r}")
        require(len(ys) >= 2 * n_steps + 1,
                f"extrapolation needs {2 * n_steps + 1} states, got {len(ys)}")
        steps = list(range(n_steps + 1, 2 * n_steps + 1))
        if model.spec.recurrent:
            preds, _ = rollout_rgnn(model.params, model.spec, rg, ys[n_steps],
                                    n_steps, model.norm,
                                    warm_inputs=ys[:n_steps])
        else:
            preds, _ = rollout_ar(model.params, model.spec, rg, ys[n_steps],
                                  n_steps, model.norm)
    truths = [ys[s] for s in steps]
    return steps, preds, truths


def evaluate_task(task: str, models, cases, n_steps: int = 10,
                  keep_fields=()) -> list:
    """Evaluate models plus persistence baselines on held-out trajectories.

    cases: iterable of (trajectory_id, grid, states) with states a list of
    report states starting at step 0. keep_fields: trajectory ids whose raw
    truth/prediction fields are retained on the results for map figures.
    Returns one EvalResult per model, then one persistence EvalResult per
    distinct target field.
    """
    require(task in TASKS, f"unknown task {task!r}")
    cases = list(cases)
    require(len(cases) > 0, "no trajectories to evaluate")
    keep = set(keep_fields)
    results = []
    for model in models:
        ids, rows = [], []
        kept = {}
        for traj_id, grid, states in cases:
            steps, preds, truths = _predict(model, grid, states, task, n_steps)
            rows.append([mrae(p, t) for p, t in zip(preds, truths)])
            ids.append(traj_id)
            if traj_id in keep:
                for s, p, t in zip(steps, preds, truths):
                    kept[(traj_id, s)] = (t, p)
        results.append(EvalResult(
            task=task, model=model.name, stage=model.stage,
            field_name=model.spec.target, trajectories=ids, steps=steps,
            errors=np.array(rows), fields=kept))

    # persistence floor, one per distinct target, in first-seen model order
    seen = []
    for model in models:
        if model.spec.target not in seen:
            seen.append(model.spec.target)
    first = n_steps + 1 if task == EXTRAPOLATION else 1
    steps = list(range(first, first + n_steps))
    for target in seen:
        ids, rows = [], []
        for traj_id, grid, states in cases:
            ys = _truth_fields(states, target)
            require(len(ys) > steps[-1],
                    f"persistence needs states through step {steps[-1]}")
            rows.append([mrae(ys[0], ys[s]) for s in steps])
            ids.append(traj_id)
        results.append(EvalResult(
            task=task, model=PERSISTENCE, stage=0, field_name=target,
            trajectories=ids, steps=steps, errors=np.array(rows)))
    return results


# -------------------------------------------------------------- report files

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def emit_report(results, out_dir, production=None) -> list:
    """Write evaluation artifacts under out_dir; returns the paths written.

    production: optional list of (trajectory_id, times_days, water_rate_m3d,
    oil_rate_m3d) tuples for producer-curve figures.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    rows = []
    for r in results:
        for i, traj in enumerate(r.trajectories):
            for k, step in enumerate(r.steps):
                rows.append((r.task, r.model, str(r.stage), str(traj),
                             str(step), r.field_name, _fmt(r.errors[i, k])))
    per_step = os.path.join(out_dir, "mrae_per_step.csv")
    _write_csv(per_step, ("task", "model", "stage", "trajectory", "step",
                          "field", "value"), rows)
    written.append(per_step)

    tables, box_stats = {}, []
    for r in results:
        tables.setdefault(r.task, {}).setdefault(r.field_name, {})[
            f"{r.model}_stage{r.stage}"] = r.mean_error()
        q = r.step_quantiles()
        for k, step in enumerate(r.steps):
            box_stats.append({
                "task": r.task, "model": r.model, "stage": r.stage,
                "field": r.field_name, "step": int(step),
                "min": float(q["min"][k]), "q1": float(q["q1"][k]),
                "median": float(q["median"][k]), "q3": float(q["q3"][k]),
                "max": float(q["max"][k]),
            })
    summary = {
        "schema": "fracgraph.eval_summary.v1",
        "n_results": len(results),
        "mean_mrae": tables,
        "box_stats": box_stats,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    write_json(summary_path, summary)
    written.append(summary_path)

    for r in results:
        if not r.fields:
            continue
        sub = os.path.join(out_dir, "fields", r.key)
        os.makedirs(sub, exist_ok=True)
        for (traj, step), (truth, pred) in r.fields.items():
            err = np.abs(pred - truth) / truth
            path = os.path.join(sub, f"fields_{traj}_{step}.csv")
            _write_csv(path, ("cell", "truth", "prediction", "error"),
                       [(str(c), _fmt(truth[c]), _fmt(pred[c]), _fmt(err[c]))
                        for c in range(truth.size)])
            written.append(path)

    if production is not None:
        rows = []
        for traj, times, qw, qo in production:
            for k in range(len(times)):
                rows.append((str(traj), str(k + 1), _fmt(times[k]),
                             _fmt(qw[k]), _fmt(qo[k])))
        prod_path = os.path.join(out_dir, "production.csv")
        _write_csv(prod_path, ("trajectory", "step", "time_days",
                               "water_rate_m3_per_day", "oil_rate_m3_per_day"),
                   rows)
        written.append(prod_path)
    return written
