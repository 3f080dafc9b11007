"""Graph construction from (grid, state) pairs and feature normalization.

Node features (width 7): [cell volume, porosity, log10(k_md), one-hot(3), y]
with one-hot order (source, sink, neither) and y the target field value.
Edge features (width 5): [log10(T_md_m), displacement (3,), distance], static
in time. Every grid connection (i, j) yields the two directed edges (i, j)
and (j, i); edge (i, j) carries displacement centroid_j - centroid_i and is
aggregated at node i during message passing.
"""

from dataclasses import dataclass

import numpy as np

from .edfm import EdfmGrid, WELL_SINK, WELL_SOURCE
from .simulator import ReservoirState
from .validation import require

NODE_WIDTH = 7
EDGE_WIDTH = 5
Y_CHANNEL = 6
NODE_ONEHOT_CHANNELS = (3, 4, 5)

MODE_ZSCORE = 0
MODE_CENTER = 1
MODE_IDENTITY = 2


@dataclass
class Graph:
    nodes: np.ndarray    # (n, 7)
    edges: np.ndarray    # (m, 5)
    node_i: np.ndarray   # (m,) aggregation target of each directed edge
    node_j: np.ndarray   # (m,) neighbor the edge points away from
    step: int = 0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def validate(self):
        require(self.nodes.shape[1] == NODE_WIDTH, "node feature width must be 7")
        require(self.edges.shape[1] == EDGE_WIDTH, "edge feature width must be 5")
        require(np.all(np.isfinite(self.nodes)) and np.all(np.isfinite(self.edges)),
                "non-finite graph features")
        onehot = self.nodes[:, list(NODE_ONEHOT_CHANNELS)]
        require(np.allclose(onehot.sum(axis=1), 1.0), "one-hot rows must sum to 1")


def node_features(grid: EdfmGrid, y: np.ndarray) -> np.ndarray:
    require(np.all(grid.perm_md > 0), "log10 permeability undefined for k <= 0")
    n = grid.n_cells
    feats = np.zeros((n, NODE_WIDTH))
    feats[:, 0] = grid.volume
    feats[:, 1] = grid.porosity
    feats[:, 2] = np.log10(grid.perm_md)
    feats[:, 3] = grid.well == WELL_SOURCE
    feats[:, 4] = grid.well == WELL_SINK
    feats[:, 5] = grid.well == 0
    feats[:, 6] = y
    return feats


def edge_features(grid: EdfmGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed edge features and endpoint index arrays (node_i, node_j)."""
    require(np.all(grid.conn_trans > 0), "log10 transmissibility undefined for T <= 0")
    ii = np.concatenate([grid.conn_i, grid.conn_j])
    jj = np.concatenate([grid.conn_j, grid.conn_i])
    disp = grid.centroid[jj] - grid.centroid[ii]
    feats = np.zeros((ii.shape[0], EDGE_WIDTH))
    feats[:, 0] = np.log10(np.concatenate([grid.conn_trans, grid.conn_trans]))
    feats[:, 1:4] = disp
    feats[:, 4] = np.linalg.norm(disp, axis=1)
    return feats, ii, jj


def build_graph(grid: EdfmGrid, state: ReservoirState, target: str) -> Graph:
    """Graph for one report state; y is the chosen field, raw units."""
    if target == "pressure":
        y = state.pressure
    elif target == "saturation":
        y = state.saturation
    else:
        raise ValueError(f"unknown target {target!r}")
    require(y.shape[0] == grid.n_cells, "state dimension mismatch with grid")
    edges, ii, jj = edge_features(grid)
    g = Graph(nodes=node_features(grid, y), edges=edges,
              node_i=ii, node_j=jj, step=state.step)
    g.validate()
    return g


class ChannelScaler:
    """Per-channel z-score normalizer in the fit/transform idiom.

    Channel handling precedence: a constant channel is centered only (its
    transform is exactly zero, no division); a non-constant channel flagged
    one-hot passes through untouched; anything else is z-scored. All three
    modes invert exactly.
    """

    def __init__(self, onehot_channels=()):
        self.onehot_channels = tuple(onehot_channels)

    def get_params(self):
        return {"onehot_channels": self.onehot_channels}

    def fit_moments(self, count: int, total: np.ndarray, total_sq: np.ndarray):
        """Fit from accumulated first/second moments (fixed-order sums)."""
        require(count > 0, "cannot fit on an empty corpus")
        mean = total / count
        var = np.maximum(total_sq / count - mean ** 2, 0.0)
        std = np.sqrt(var)
        width = mean.shape[0]
        mode = np.full(width, MODE_ZSCORE, dtype=np.int8)
        const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        mode[const] = MODE_CENTER
        for c in self.onehot_channels:
            if not const[c]:
                mode[c] = MODE_IDENTITY
        self.mean_ = mean
        self.std_ = std
        self.mode_ = mode
        # multiplicative factor of the transform, used by chain rules
        self.scale_ = np.where(mode == MODE_ZSCORE, 1.0 / np.where(std > 0, std, 1.0), 1.0)
        return self

    def fit(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        require(x.ndim == 2, "fit expects a 2-D corpus")
        return self.fit_moments(x.shape[0], x.sum(axis=0), (x ** 2).sum(axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shift = np.where(self.mode_ == MODE_IDENTITY, 0.0, self.mean_)
        return (x - shift) * self.scale_

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        shift = np.where(self.mode_ == MODE_IDENTITY, 0.0, self.mean_)
        return z / self.scale_ + shift

    def to_dict(self) -> dict:
        return {
            "onehot_channels": list(self.onehot_channels),
            "mean": [float(v) for v in self.mean_],
            "std": [float(v) for v in self.std_],
            "mode": [int(v) for v in self.mode_],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelScaler":
        out = cls(tuple(doc["onehot_channels"]))
        out.mean_ = np.asarray(doc["mean"], dtype=float)
        out.std_ = np.asarray(doc["std"], dtype=float)
        out.mode_ = np.asarray(doc["mode"], dtype=np.int8)
        out.scale_ = np.where(out.mode_ == MODE_ZSCORE,
                              1.0 / np.where(out.std_ > 0, out.std_, 1.0), 1.0)
        return out


@dataclass
class NormStats:
    """Training-split normalization statistics for node features, edge
    features and per-step target increments, stored with each checkpoint."""
    node: ChannelScaler
    edge: ChannelScaler
    dy: ChannelScaler

    @property
    def y_scale(self) -> float:
        """Transform factor of the node y channel (1/std or 1)."""
        return float(self.node.scale_[Y_CHANNEL])

    @property
    def y_mean(self) -> float:
        return float(self.node.mean_[Y_CHANNEL])

    def normalize_y(self, y):
        shift = 0.0 if self.node.mode_[Y_CHANNEL] == MODE_IDENTITY else self.y_mean
        return (y - shift) * self.y_scale

    def denormalize_dy(self, d):
        return self.dy.inverse_transform(np.asarray(d, dtype=float).reshape(-1, 1))[:, 0]

    def to_dict(self) -> dict:
        return {"node": self.node.to_dict(), "edge": self.edge.to_dict(),
                "dy": self.dy.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        return cls(node=ChannelScaler.from_dict(doc["node"]),
                   edge=ChannelScaler.from_dict(doc["edge"]),
                   dy=ChannelScaler.from_dict(doc["dy"]))


def fit_norm_stats(node_mats, edge_mats, dy_fields) -> NormStats:
    """Fit NormStats from iterables of node matrices (one per state), edge
    matrices (one per realization) and raw y-increment fields (one per step
    pair). Accumulation order follows the iterables, so a fixed input order
    gives bit-identical statistics."""
    node = ChannelScaler(NODE_ONEHOT_CHANNELS)
    edge = ChannelScaler()
    dy = ChannelScaler()

    def accumulate(mats, width):
        count = 0
        total = np.zeros(width)
        total_sq = np.zeros(width)
        for m in mats:
            m = np.asarray(m, dtype=float).reshape(-1, width)
            count += m.shape[0]
            total += m.sum(axis=0)
            total_sq += (m ** 2).sum(axis=0)
        return count, total, total_sq

    node.fit_moments(*accumulate(node_mats, NODE_WIDTH))
    edge.fit_moments(*accumulate(edge_mats, EDGE_WIDTH))
    dy.fit_moments(*accumulate(dy_fields, 1))
    return NormStats(node=node, edge=edge, dy=dy)
