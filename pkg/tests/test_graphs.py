"""Graph encoding of EDFM grids and channel normalization."""

import numpy as np
import pytest

from fracgraph.edfm import WELL_SINK, WELL_SOURCE
from fracgraph.graphs import (EDGE_WIDTH, NODE_WIDTH, Y_CHANNEL,
                              ChannelScaler, NormStats, build_graph,
                              fit_norm_stats)
from fracgraph.simulator import ReservoirState, SimConfig, make_wells


@pytest.fixture
def graph_and_state(fractured_grid):
    g = fractured_grid
    make_wells(g, SimConfig())  # sets the well markers on the grid
    n = g.n_cells
    rng = np.random.default_rng(0)
    state = ReservoirState(pressure=10e6 + 1e5 * rng.standard_normal(n),
                           saturation=rng.uniform(0.2, 0.8, n), step=3)
    return build_graph(g, state, "pressure"), g, state


def test_feature_widths(graph_and_state):
    graph, g, _ = graph_and_state
    assert graph.nodes.shape == (g.n_cells, NODE_WIDTH)
    assert graph.edges.shape == (graph.n_edges, EDGE_WIDTH)
    assert NODE_WIDTH == 7 and EDGE_WIDTH == 5


def test_two_directed_edges_per_connection(graph_and_state):
    graph, g, _ = graph_and_state
    assert graph.n_edges == 2 * g.n_connections
    # second half mirrors the first
    m = g.n_connections
    np.testing.assert_array_equal(graph.node_i[:m], graph.node_j[m:])
    np.testing.assert_array_equal(graph.node_j[:m], graph.node_i[m:])


def test_edge_antisymmetry(graph_and_state):
    graph, g, _ = graph_and_state
    m = g.n_connections
    # log T and distance match across the pair; displacement flips sign
    np.testing.assert_array_equal(graph.edges[:m, 0], graph.edges[m:, 0])
    np.testing.assert_allclose(graph.edges[:m, 1:4], -graph.edges[m:, 1:4])
    np.testing.assert_array_equal(graph.edges[:m, 4], graph.edges[m:, 4])
    lengths = np.linalg.norm(graph.edges[:, 1:4], axis=1)
    np.testing.assert_allclose(graph.edges[:, 4], lengths)


def test_node_feature_content(graph_and_state):
    graph, g, state = graph_and_state
    np.testing.assert_array_equal(graph.nodes[:, 0], g.volume)
    np.testing.assert_array_equal(graph.nodes[:, 1], g.porosity)
    np.testing.assert_allclose(graph.nodes[:, 2], np.log10(g.perm_md))
    np.testing.assert_array_equal(graph.nodes[:, Y_CHANNEL], state.pressure)


def test_well_one_hot_partition(graph_and_state):
    graph, g, _ = graph_and_state
    onehot = graph.nodes[:, 3:6]
    np.testing.assert_array_equal(onehot.sum(axis=1), np.ones(g.n_cells))
    assert graph.nodes[g.well == WELL_SOURCE, 3].all()
    assert graph.nodes[g.well == WELL_SINK, 4].all()


def test_saturation_target_channel(fractured_grid):
    g = fractured_grid
    n = g.n_cells
    state = ReservoirState(pressure=np.full(n, 10e6),
                           saturation=np.linspace(0.2, 0.8, n))
    graph = build_graph(g, state, "saturation")
    np.testing.assert_array_equal(graph.nodes[:, Y_CHANNEL], state.saturation)
    with pytest.raises(ValueError):
        build_graph(g, state, "temperature")


def test_channel_scaler_zscore_roundtrip():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.5, size=(500, 4))
    sc = ChannelScaler()
    sc.fit(x)
    z = sc.transform(x)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(sc.inverse_transform(z), x, atol=1e-9)


def test_channel_scaler_passes_one_hot_through():
    rng = np.random.default_rng(2)
    x = np.zeros((100, 3))
    x[:, 0] = rng.normal(5.0, 2.0, 100)
    x[:, 1] = rng.integers(0, 2, 100)
    x[:, 2] = 1.0 - x[:, 1]
    sc = ChannelScaler(onehot_channels=(1, 2))
    sc.fit(x)
    z = sc.transform(x)
    np.testing.assert_array_equal(z[:, 1:], x[:, 1:])
    assert abs(z[:, 0].mean()) < 1e-12


def test_channel_scaler_constant_channel_safe():
    x = np.full((50, 2), 7.0)
    x[:, 1] = np.arange(50)
    sc = ChannelScaler()
    sc.fit(x)
    z = sc.transform(x)
    # a zero-variance channel must not divide by zero
    assert np.all(np.isfinite(z))
    np.testing.assert_allclose(sc.inverse_transform(z), x, atol=1e-9)


def test_fit_norm_stats_matches_direct_moments(graph_and_state):
    graph, g, state = graph_and_state
    rng = np.random.default_rng(3)
    mats = [graph.nodes.copy() for _ in range(3)]
    for m in mats:
        m[:, Y_CHANNEL] += rng.normal(0, 1e4, g.n_cells)
    dys = [rng.normal(0, 1e4, g.n_cells) for _ in range(2)]
    norm = fit_norm_stats(mats, [graph.edges], dys)
    stacked = np.concatenate(mats, axis=0)
    z = norm.node.transform(stacked)
    assert abs(z[:, Y_CHANNEL].mean()) < 1e-9
    assert z[:, Y_CHANNEL].std() == pytest.approx(1.0, abs=1e-9)
    d = np.concatenate(dys)
    zd = (d - np.mean(d)) / np.std(d)
    np.testing.assert_allclose(norm.dy.transform(d.reshape(-1, 1))[:, 0], zd,
                               atol=1e-9)


def test_norm_stats_y_helpers_consistent(graph_and_state):
    graph, _, _ = graph_and_state
    norm = fit_norm_stats([graph.nodes], [graph.edges],
                          [np.array([0.5, 1.5, 2.0])])
    y = graph.nodes[:, Y_CHANNEL]
    zn = norm.normalize_y(y)
    expect = norm.node.transform(graph.nodes)[:, Y_CHANNEL]
    np.testing.assert_allclose(zn, expect, atol=1e-12)
    # denormalize_dy undoes the dy scaler up to its shift
    d = np.array([0.3, -0.2])
    back = norm.denormalize_dy(norm.dy.transform(d.reshape(-1, 1))[:, 0])
    np.testing.assert_allclose(back, d, atol=1e-12)


def test_norm_stats_dict_roundtrip(graph_and_state):
    graph, _, _ = graph_and_state
    norm = fit_norm_stats([graph.nodes], [graph.edges],
                          [np.array([0.1, 0.2])])
    back = NormStats.from_dict(norm.to_dict())
    np.testing.assert_array_equal(back.node.scale_, norm.node.scale_)
    np.testing.assert_array_equal(back.edge.mean_, norm.edge.mean_)
    np.testing.assert_array_equal(back.dy.mode_, norm.dy.mode_)
    assert back.y_scale == norm.y_scale
