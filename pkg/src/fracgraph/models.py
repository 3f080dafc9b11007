"""Encoder-processor-decoder GNN surrogate and its recurrent (LSTM) variant.

The plain model maps a normalized graph state to a per-node increment of the
target field and is applied autoregressively. The recurrent model inserts a
2-layer per-node LSTM (shared weights, width = hidden size) between the last
processor output and the decoder; the decoder reads the top-layer H. All
forward passes record caches for the explicit backward passes used in
training, including backpropagation through rollout feedback and through the
LSTM state across steps.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .graphs import Graph, NormStats, Y_CHANNEL
from .nn import (load_checkpoint, lstm_backward, lstm_forward, lstm_init,
                 lstm_param_count, mlp_backward, mlp_forward, mlp_init,
                 mlp_param_count, save_checkpoint)
from .validation import require


@dataclass(frozen=True)
class ModelSpec:
    target: str                  # "pressure" | "saturation"
    hidden: int
    layers: int                  # processor block count L
    recurrent: bool = False
    node_in: int = 7
    edge_in: int = 5
    lstm_layers: int = 2

    def validate(self):
        require(self.target in ("pressure", "saturation"), "unknown target field")
        require(self.hidden >= 1 and self.layers >= 1, "hidden and layers must be >= 1")

    def to_dict(self) -> dict:
        return {"target": self.target, "hidden": self.hidden, "layers": self.layers,
                "recurrent": self.recurrent, "node_in": self.node_in,
                "edge_in": self.edge_in, "lstm_layers": self.lstm_layers}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return cls(**doc)


def default_spec(target: str, recurrent: bool = False) -> ModelSpec:
    """Published sizes: hidden 40 with 12 processors for pressure, hidden 48
    with 8 processors for saturation."""
    if target == "pressure":
        return ModelSpec(target, hidden=40, layers=12, recurrent=recurrent)
    if target == "saturation":
        return ModelSpec(target, hidden=48, layers=8, recurrent=recurrent)
    raise ValueError(f"unknown target {target!r}")


def count_params(spec: ModelSpec, with_lstm: bool | None = None) -> int:
    """Closed-form parameter count; must equal store enumeration exactly."""
    h = spec.hidden
    total = mlp_param_count(spec.node_in, h, h, layer_norm=True)
    total += mlp_param_count(spec.edge_in, h, h, layer_norm=True)
    total += spec.layers * (mlp_param_count(3 * h, h, h, layer_norm=True)
                            + mlp_param_count(2 * h, h, h, layer_norm=True))
    total += mlp_param_count(h, h, 1, layer_norm=False)
    if spec.recurrent if with_lstm is None else with_lstm:
        total += spec.lstm_layers * lstm_param_count(h, h)
    return total


def init_params(spec: ModelSpec, seed: int = 0) -> dict:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6E7])))
    params: dict = {}
    h = spec.hidden
    mlp_init(params, rng, "enc_v", spec.node_in, h, h, layer_norm=True)
    mlp_init(params, rng, "enc_e", spec.edge_in, h, h, layer_norm=True)
    for l in range(spec.layers):
        mlp_init(params, rng, f"blk{l:02d}.edge", 3 * h, h, h, layer_norm=True)
        mlp_init(params, rng, f"blk{l:02d}.node", 2 * h, h, h, layer_norm=True)
    mlp_init(params, rng, "dec", h, h, 1, layer_norm=False)
    if spec.recurrent:
        for l in range(spec.lstm_layers):
            lstm_init(params, rng, f"lstm{l}", h, h)
    count = sum(v.size for v in params.values())
    require(count == count_params(spec), "parameter enumeration/count mismatch")
    return params


class GraphTopology:
    """Static connectivity of one realization's graph with sparse scatter
    operators for deterministic message aggregation."""

    def __init__(self, node_i: np.ndarray, node_j: np.ndarray, n_nodes: int):
        m = node_i.shape[0]
        self.n = int(n_nodes)
        self.m = int(m)
        self.node_i = np.asarray(node_i, dtype=np.int64)
        self.node_j = np.asarray(node_j, dtype=np.int64)
        ones = np.ones(m)
        cols = np.arange(m)
        self.scatter_i = csr_matrix((ones, (self.node_i, cols)), shape=(self.n, m))
        self.scatter_j = csr_matrix((ones, (self.node_j, cols)), shape=(self.n, m))
        self.scatter_i_t = self.scatter_i.T.tocsr()


def gnn_forward(params: dict, spec: ModelSpec, topo: GraphTopology,
                nodes: np.ndarray, edges: np.ndarray):
    """Encode, run L processor blocks with residual connections, and return
    the final node embeddings. Edge update l: MLP([e, v_i, v_j]) + e; node
    update: MLP([v, sum of incoming e]) + v."""
    h = spec.hidden
    v, c_enc_v = mlp_forward(params, "enc_v", nodes)
    e, c_enc_e = mlp_forward(params, "enc_e", edges)
    blocks = []
    for l in range(spec.layers):
        inp_e = np.concatenate([e, v[topo.node_i], v[topo.node_j]], axis=1)
        out_e, c_e = mlp_forward(params, f"blk{l:02d}.edge", inp_e)
        e_new = out_e + e
        agg = topo.scatter_i @ e_new
        inp_v = np.concatenate([v, agg], axis=1)
        out_v, c_v = mlp_forward(params, f"blk{l:02d}.node", inp_v)
        v_new = out_v + v
        blocks.append((c_e, c_v))
        v, e = v_new, e_new
    return v, (c_enc_v, c_enc_e, blocks, h)


def gnn_backward(params: dict, spec: ModelSpec, topo: GraphTopology,
                 dv: np.ndarray, cache, grads: dict):
    """Backward of gnn_forward; returns (d nodes, d edges)."""
    c_enc_v, c_enc_e, blocks, h = cache
    de = np.zeros((topo.m, h))
    for l in range(spec.layers - 1, -1, -1):
        c_e, c_v = blocks[l]
        dinp_v = mlp_backward(params, f"blk{l:02d}.node", dv, c_v, grads)
        dv_prev = dinp_v[:, :h] + dv
        dagg = dinp_v[:, h:]
        de_l = de + topo.scatter_i_t @ dagg
        dinp_e = mlp_backward(params, f"blk{l:02d}.edge", de_l, c_e, grads)
        de = dinp_e[:, :h] + de_l
        dv_prev = dv_prev + topo.scatter_i @ dinp_e[:, h:2 * h]
        dv_prev = dv_prev + topo.scatter_j @ dinp_e[:, 2 * h:]
        dv = dv_prev
    dnodes = mlp_backward(params, "enc_v", dv, c_enc_v, grads)
    dedges = mlp_backward(params, "enc_e", de, c_enc_e, grads)
    return dnodes, dedges


@dataclass
class RealizationGraph:
    """Static per-realization model input: topology plus normalized features.
    The node y channel is overwritten each step."""
    topo: GraphTopology
    nodes: np.ndarray    # (n, 7) normalized, y channel slot
    edges: np.ndarray    # (m, 5) normalized

    @classmethod
    def from_graph(cls, graph: Graph, norm: NormStats) -> "RealizationGraph":
        topo = GraphTopology(graph.node_i, graph.node_j, graph.n_nodes)
        return cls(topo=topo, nodes=norm.node.transform(graph.nodes),
                   edges=norm.edge.transform(graph.edges))

    def node_input(self, y_raw: np.ndarray, norm: NormStats) -> np.ndarray:
        x = self.nodes.copy()
        x[:, Y_CHANNEL] = norm.normalize_y(y_raw)
        return x


def ar_step(params: dict, spec: ModelSpec, rg: RealizationGraph,
            y_raw: np.ndarray, norm: NormStats):
    """One autoregressive update: y_next = y + denormalized decoder delta."""
    x = rg.node_input(y_raw, norm)
    v, c_gnn = gnn_forward(params, spec, rg.topo, x, rg.edges)
    d, c_dec = mlp_forward(params, "dec", v)
    y_next = y_raw + norm.denormalize_dy(d[:, 0])
    return y_next, (c_gnn, c_dec)


def ar_step_backward(params: dict, spec: ModelSpec, rg: RealizationGraph,
                     dpred: np.ndarray, cache, norm: NormStats, grads: dict):
    """Backward of ar_step given dL/d y_next (raw field). Returns dL/d y_in
    carried through both the feedback channel and the identity path."""
    c_gnn, c_dec = cache
    dy_std = 1.0 / norm.dy.scale_[0]
    dd = (dy_std * dpred)[:, None]
    dv = mlp_backward(params, "dec", dd, c_dec, grads)
    dnodes, _ = gnn_backward(params, spec, rg.topo, dv, c_gnn, grads)
    return dpred + dnodes[:, Y_CHANNEL] * norm.y_scale


def rollout_ar(params: dict, spec: ModelSpec, rg: RealizationGraph,
               y0_raw: np.ndarray, n_steps: int, norm: NormStats,
               inputs=None, keep_caches: bool = False):
    """n_steps autoregressive applications of ar_step starting from y0.

    With inputs given (list of raw fields, one per step) the model is teacher
    forced instead of fed back. Returns (list of raw predictions, caches)."""
    require(n_steps >= 1, "rollout needs n_steps >= 1")
    preds, caches = [], []
    y = y0_raw
    for k in range(n_steps):
        y_in = inputs[k] if inputs is not None else y
        y, cache = ar_step(params, spec, rg, y_in, norm)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite prediction at rollout step {k + 1}")
        preds.append(y)
        if keep_caches:
            caches.append(cache)
    return preds, caches


def rollout_ar_backward(params: dict, spec: ModelSpec, rg: RealizationGraph,
                        dpreds, caches, norm: NormStats, grads: dict,
                        teacher_forced: bool = False):
    """Backpropagation through a full rollout; dpreds[k] = dL/d prediction of
    step k+1 (raw). With teacher forcing there is no feedback chain."""
    carry = np.zeros(rg.topo.n)
    for k in range(len(caches) - 1, -1, -1):
        g = dpreds[k] + carry
        dy_in = ar_step_backward(params, spec, rg, g, caches[k], norm, grads)
        carry = np.zeros(rg.topo.n) if teacher_forced else dy_in
    return carry


class RecurrentRollout:
    """Stateful stepper for the recurrent model over one sequence.

    Tracks (C, H) per LSTM layer, starting from zeros, and records per-step
    caches plus whether each step's input came from the previous prediction
    (which determines feedback chains in backward)."""

    def __init__(self, params: dict, spec: ModelSpec, rg: RealizationGraph,
                 norm: NormStats):
        require(spec.recurrent, "RecurrentRollout needs a recurrent spec")
        self.params = params
        self.spec = spec
        self.rg = rg
        self.norm = norm
        n, h = rg.topo.n, spec.hidden
        self.h_state = [np.zeros((n, h)) for _ in range(spec.lstm_layers)]
        self.c_state = [np.zeros((n, h)) for _ in range(spec.lstm_layers)]
        self.trace = []   # (caches, fed_back: bool, emitted: bool)
        self.preds = []   # raw predictions for emitted steps, in step order

    def step(self, y_in_raw: np.ndarray, fed_back: bool, emit: bool = True):
        p, spec, rg, norm = self.params, self.spec, self.rg, self.norm
        x = rg.node_input(y_in_raw, norm)
        v, c_gnn = gnn_forward(p, spec, rg.topo, x, rg.edges)
        lstm_caches = []
        inp = v
        for l in range(spec.lstm_layers):
            h_new, c_new, c_l = lstm_forward(p, f"lstm{l}", inp,
                                             self.h_state[l], self.c_state[l])
            self.h_state[l] = h_new
            self.c_state[l] = c_new
            lstm_caches.append(c_l)
            inp = h_new
        d, c_dec = mlp_forward(p, "dec", inp)
        y_next = y_in_raw + norm.denormalize_dy(d[:, 0])
        if not np.all(np.isfinite(y_next)):
            raise FloatingPointError(
                f"non-finite prediction at sequence step {len(self.trace) + 1}")
        self.trace.append(((c_gnn, lstm_caches, c_dec), fed_back, emit))
        if emit:
            self.preds.append(y_next)
        return y_next

    def backward(self, dpreds, grads: dict):
        """dpreds: list of dL/d prediction for emitted steps, in emit order."""
        p, spec, rg, norm = self.params, self.spec, self.rg, self.norm
        n, h = rg.topo.n, spec.hidden
        dy_std = 1.0 / norm.dy.scale_[0]
        dh_carry = [np.zeros((n, h)) for _ in range(spec.lstm_layers)]
        dc_carry = [np.zeros((n, h)) for _ in range(spec.lstm_layers)]
        carry_y = np.zeros(n)
        emit_idx = len(dpreds)
        for k in range(len(self.trace) - 1, -1, -1):
            (c_gnn, lstm_caches, c_dec), fed_back, emitted = self.trace[k]
            g = carry_y.copy()
            if emitted:
                emit_idx -= 1
                g += dpreds[emit_idx]
            dtop = mlp_backward(p, "dec", (dy_std * g)[:, None], c_dec, grads)
            dinp = dtop
            for l in range(spec.lstm_layers - 1, -1, -1):
                dh = dinp + dh_carry[l]
                dx, dh_prev, dc_prev = lstm_backward(p, f"lstm{l}", dh,
                                                     dc_carry[l], lstm_caches[l],
                                                     grads)
                dh_carry[l] = dh_prev
                dc_carry[l] = dc_prev
                dinp = dx
            dnodes, _ = gnn_backward(p, spec, rg.topo, dinp, c_gnn, grads)
            dy_in = g + dnodes[:, Y_CHANNEL] * norm.y_scale
            carry_y = dy_in if fed_back else np.zeros(n)
        require(emit_idx == 0, "emitted-step gradient count mismatch")


def rollout_rgnn(params: dict, spec: ModelSpec, rg: RealizationGraph,
                 y0_raw: np.ndarray, n_steps: int, norm: NormStats,
                 warm_inputs=None):
    """Recurrent rollout per the evaluation protocols.

    Without warm_inputs: start from y0 with zero (C, H) and feed predictions
    back for n_steps. With warm_inputs (raw ground-truth fields): run them
    teacher-forced first, updating the memory states and emitting nothing,
    then roll out autoregressively starting from y0."""
    roll = RecurrentRollout(params, spec, rg, norm)
    if warm_inputs is not None:
        for y_in in warm_inputs:
            roll.step(y_in, fed_back=False, emit=False)
    y = y0_raw
    for k in range(n_steps):
        y = roll.step(y, fed_back=k > 0, emit=True)
    return roll.preds, roll


# ------------------------------------------------------ checkpoint plumbing

def save_model(path, params: dict, spec: ModelSpec, norm: NormStats,
               extra_meta: dict | None = None):
    meta = {"spec": spec.to_dict(), "norm_stats": norm.to_dict(),
            "param_count": int(sum(v.size for v in params.values()))}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, params, meta)


def load_model(path, expect_spec: ModelSpec | None = None):
    params, meta = load_checkpoint(path)
    spec = ModelSpec.from_dict(meta["spec"])
    require(sum(v.size for v in params.values()) == count_params(spec),
            "checkpoint parameter count does not match its spec")
    if expect_spec is not None:
        require(spec == expect_spec,
                f"checkpoint spec {spec} does not match expected {expect_spec}")
    norm = NormStats.from_dict(meta["norm_stats"])
    return params, spec, norm, meta


# --------------------------------------------------- estimator-style facade

class GnnSurrogate:
    """Autoregressive GNN surrogate with a fit/predict interface.

    fit delegates to the two-stage training routines; predict rolls the
    fitted model out from an initial field.
    """

    def __init__(self, target: str = "saturation", hidden: int = 16,
                 layers: int = 4, seed: int = 0):
        self.target = target
        self.hidden = hidden
        self.layers = layers
        self.seed = seed

    recurrent = False

    def get_params(self, deep: bool = True):
        return {"target": self.target, "hidden": self.hidden,
                "layers": self.layers, "seed": self.seed}

    def set_params(self, **kv):
        for key, value in kv.items():
            require(hasattr(self, key), f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def spec(self) -> ModelSpec:
        return ModelSpec(self.target, self.hidden, self.layers,
                         recurrent=self.recurrent)

    def fit(self, data, stage1=None, stage2=None):
        """Train on prepared TrainData (see the training module); stage
        configs default to the published schedule."""
        from .training import TrainConfig, train_stage1, train_stage2
        spec = self.spec()
        stage1 = stage1 or TrainConfig(stage=1, seed=self.seed)
        self.norm_ = data.norm
        self.params_, self.report1_ = train_stage1(data, spec, stage1)
        if stage2 is not None:
            self.params_, self.report2_ = train_stage2(
                data, spec, self.params_, stage2)
        return self

    def predict(self, grid, state0, n_steps: int):
        from .graphs import build_graph
        require(hasattr(self, "params_"), "fit the model first")
        graph = build_graph(grid, state0, self.target)
        rg = RealizationGraph.from_graph(graph, self.norm_)
        y0 = graph.nodes[:, Y_CHANNEL].copy()
        preds, _ = self._roll(rg, y0, n_steps)
        return np.stack(preds)

    def _roll(self, rg, y0, n_steps):
        return rollout_ar(self.params_, self.spec(), rg, y0, n_steps, self.norm_)


class RecurrentGnnSurrogate(GnnSurrogate):
    """Recurrent variant; the LSTM memory starts from zeros at each predict."""

    recurrent = True

    def _roll(self, rg, y0, n_steps):
        preds, _ = rollout_rgnn(self.params_, self.spec(), rg, y0,
                                n_steps, self.norm_)
        return preds, None
