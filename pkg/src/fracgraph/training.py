"""Two-stage surrogate training.

Stage 1 is teacher forced: the plain GNN trains on shuffled one-step pairs
across realizations, the recurrent GNN on whole sequences in step order with
ground-truth inputs so its memory states evolve on the true trajectory.
Stage 2 fine-tunes on full autoregressive rollouts with gradients propagated
through the entire feedback chain. Losses are computed on normalized fields;
validation drives best-checkpoint selection.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, NormStats, Y_CHANNEL, fit_norm_stats
from .models import (ModelSpec, RealizationGraph, RecurrentRollout, ar_step,
                     ar_step_backward, init_params, rollout_ar,
                     rollout_ar_backward)
from .nn import Adam
from .validation import require


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int | None = None        # stage defaults: 200 / 100
    lr: float | None = None          # stage defaults: 1e-3 / 1e-4
    weight_decay: float = 5e-3
    gamma: float = 0.995             # per-epoch exponential lr decay
    batch_size: int = 4
    validate_every: int = 5
    n_steps: int = 10                # sequence length n_T
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        require(self.stage in (1, 2), "stage must be 1 or 2")
        if self.epochs is None:
            self.epochs = 200 if self.stage == 1 else 100
        if self.lr is None:
            self.lr = 1e-3 if self.stage == 1 else 1e-4
        require(self.epochs >= 0 and self.lr > 0, "bad epochs/lr")
        require(self.batch_size >= 1 and self.n_steps >= 1, "bad batch/n_steps")


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)   # [0] = initial eval
    val_losses: list = field(default_factory=list)     # (epoch, loss) pairs
    best_epoch: int = 0
    best_val: float = np.inf
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {"train_losses": self.train_losses,
                "val_losses": [[e, v] for e, v in self.val_losses],
                "best_epoch": self.best_epoch, "best_val": self.best_val,
                "wall_clock_s": self.wall_clock_s}


@dataclass
class SequenceSample:
    """One realization's static graph plus its raw target-field sequence."""
    rg: RealizationGraph
    ys: list
    realization: int = 0


@dataclass
class TrainData:
    train: list
    val: list
    norm: NormStats


def build_train_data(raw_train, raw_val, n_steps: int,
                     norm: NormStats | None = None) -> TrainData:
    """Assemble normalized training bundles from raw (Graph, [y fields])
    pairs. Normalization statistics are fit on the training split over states
    0..n_steps unless a fitted NormStats is supplied (stage 2 reuses the
    stage-1 statistics from the checkpoint)."""
    require(len(raw_train) > 0, "training split is empty")
    for _, ys in list(raw_train) + list(raw_val):
        require(len(ys) >= n_steps + 1, "trajectory shorter than n_steps + 1")
    if norm is None:
        def node_mats():
            for graph, ys in raw_train:
                for j in range(n_steps + 1):
                    m = graph.nodes.copy()
                    m[:, Y_CHANNEL] = ys[j]
                    yield m

        def edge_mats():
            for graph, _ in raw_train:
                yield graph.edges

        def dy_fields():
            for _, ys in raw_train:
                for j in range(n_steps):
                    yield ys[j + 1] - ys[j]

        norm = fit_norm_stats(node_mats(), edge_mats(), dy_fields())

    def bundle(raw):
        out = []
        for idx, (graph, ys) in enumerate(raw):
            rg = RealizationGraph.from_graph(graph, norm)
            out.append(SequenceSample(rg=rg, ys=[np.asarray(y, dtype=float)
                                                 for y in ys], realization=idx))
        return out

    return TrainData(train=bundle(raw_train), val=bundle(raw_val), norm=norm)


def loss_term(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error plus mean absolute error over the cells."""
    require(y_hat.shape == y.shape, "loss operands must have equal shape")
    d = y_hat - y
    return float(np.mean(d * d) + np.mean(np.abs(d)))


def _field_loss_grad(pred_raw, truth_raw, norm: NormStats):
    """loss_term on normalized fields plus its gradient w.r.t. the raw
    prediction."""
    pn = norm.normalize_y(pred_raw)
    tn = norm.normalize_y(truth_raw)
    d = pn - tn
    n_c = d.shape[0]
    loss = float(np.mean(d * d) + np.mean(np.abs(d)))
    grad = (2.0 * d + np.sign(d)) / n_c * norm.y_scale
    return loss, grad


def _clip(grads: dict, clip_norm):
    if clip_norm is None:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > clip_norm:
        factor = clip_norm / total
        for g in grads.values():
            g *= factor


def _sequence_loss_tf(params, spec, sample, norm, n_steps, grads=None):
    """Teacher-forced sequence loss for the recurrent model (stage 1)."""
    roll = RecurrentRollout(params, spec, sample.rg, norm)
    for j in range(n_steps):
        roll.step(sample.ys[j], fed_back=False, emit=True)
    losses, dls = [], []
    for j, pred in enumerate(roll.preds):
        l, dl = _field_loss_grad(pred, sample.ys[j + 1], norm)
        losses.append(l)
        dls.append(dl / n_steps)
    if grads is not None:
        roll.backward(dls, grads)
    return float(np.mean(losses))


def _sequence_loss_ar(params, spec, sample, norm, n_steps, grads=None):
    """Autoregressive rollout loss from y0 (stage 2 and validation)."""
    if spec.recurrent:
        roll = RecurrentRollout(params, spec, sample.rg, norm)
        y = sample.ys[0]
        for k in range(n_steps):
            y = roll.step(y, fed_back=k > 0, emit=True)
        preds = roll.preds
    else:
        preds, caches = rollout_ar(params, spec, sample.rg, sample.ys[0],
                                   n_steps, norm, keep_caches=grads is not None)
    losses, dls = [], []
    for j, pred in enumerate(preds):
        l, dl = _field_loss_grad(pred, sample.ys[j + 1], norm)
        losses.append(l)
        dls.append(dl / n_steps)
    if grads is not None:
        if spec.recurrent:
            roll.backward(dls, grads)
        else:
            rollout_ar_backward(params, spec, sample.rg, dls, caches, norm, grads)
    return float(np.mean(losses))


def _pair_loss(params, spec, sample, j, norm, grads=None):
    """One-step teacher-forced loss on the pair (y^j -> y^{j+1})."""
    pred, cache = ar_step(params, spec, sample.rg, sample.ys[j], norm)
    loss, dl = _field_loss_grad(pred, sample.ys[j + 1], norm)
    if grads is not None:
        ar_step_backward(params, spec, sample.rg, dl, cache, norm, grads)
    return loss


def _scale_grads(grads: dict, factor: float):
    for g in grads.values():
        g *= factor


def _run_training(data: TrainData, spec: ModelSpec, config: TrainConfig,
                  params: dict, samples: list, eval_sample, train_sample):
    """Shared epoch loop: shuffled mini-batches with fixed-order gradient
    accumulation, per-epoch lr decay, periodic validation, best-checkpoint
    tracking. eval_sample/train_sample map (params, sample_key, grads) to a
    loss; sample keys index `samples`."""
    start = time.monotonic()
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay,
               gamma=config.gamma)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([config.seed, config.stage, 0x7247])))
    report = TrainReport()

    def dataset_loss(fn, keys):
        return float(np.mean([fn(params, k, None) for k in keys]))

    def validate(epoch):
        val = float(np.mean([eval_sample(params, s, None) for s in data.val])) \
            if data.val else float("nan")
        report.val_losses.append((epoch, val))
        if data.val and val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            return {k: v.copy() for k, v in params.items()}
        return None

    report.train_losses.append(dataset_loss(train_sample, samples))
    best = validate(0) or {k: v.copy() for k, v in params.items()}
    if not data.val:
        report.best_val = report.train_losses[0]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        total, count = 0.0, 0
        for b0 in range(0, len(order), config.batch_size):
            batch = [samples[int(i)] for i in order[b0:b0 + config.batch_size]]
            grads: dict = {}
            batch_loss = 0.0
            for key in batch:
                loss = train_sample(params, key, grads)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"stage {config.stage}: non-finite loss at epoch "
                        f"{epoch}, batch {b0 // config.batch_size}")
                batch_loss += loss
            _scale_grads(grads, 1.0 / len(batch))
            _clip(grads, config.clip_norm)
            opt.step(params, grads)
            total += batch_loss
            count += len(batch)
        opt.end_epoch()
        report.train_losses.append(total / count)
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            snap = validate(epoch)
            if snap is not None:
                best = snap
    for name in params:
        params[name][...] = best[name]
    report.wall_clock_s = time.monotonic() - start
    return report


def train_stage1(data: TrainData, spec: ModelSpec, config: TrainConfig):
    """Teacher-forced training from fresh initialization; returns
    (params at the best validation epoch, TrainReport)."""
    require(config.stage == 1, "config.stage must be 1")
    spec.validate()
    params = init_params(spec, seed=config.seed)
    n_T = config.n_steps
    if spec.recurrent:
        samples = list(range(len(data.train)))

        def train_sample(p, key, grads):
            return _sequence_loss_tf(p, spec, data.train[key], data.norm,
                                     n_T, grads)

        def eval_sample(p, sample, grads):
            return _sequence_loss_tf(p, spec, sample, data.norm, n_T, grads)
    else:
        samples = [(i, j) for i in range(len(data.train)) for j in range(n_T)]

        def train_sample(p, key, grads):
            i, j = key
            return _pair_loss(p, spec, data.train[i], j, data.norm, grads)

        def eval_sample(p, sample, grads):
            return float(np.mean([_pair_loss(p, spec, sample, j, data.norm)
                                  for j in range(n_T)]))

    report = _run_training(data, spec, config, params, samples,
                           eval_sample, train_sample)
    return params, report


def train_stage2(data: TrainData, spec: ModelSpec, params_init: dict,
                 config: TrainConfig):
    """Autoregressive fine-tuning from a stage-1 checkpoint with full
    backpropagation through time; returns (params, TrainReport)."""
    require(config.stage == 2, "config.stage must be 2")
    spec.validate()
    params = {k: v.copy() for k, v in params_init.items()}
    n_T = config.n_steps
    samples = list(range(len(data.train)))

    def train_sample(p, key, grads):
        return _sequence_loss_ar(p, spec, data.train[key], data.norm, n_T, grads)

    def eval_sample(p, sample, grads):
        return _sequence_loss_ar(p, spec, sample, data.norm, n_T, grads)

    report = _run_training(data, spec, config, params, samples,
                           eval_sample, train_sample)
    return params, report
