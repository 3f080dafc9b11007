"""Stochastic fracture network generation and segment clipping."""

import numpy as np
import pytest

from fracgraph.dfn import (DfnConfig, clip_segment_to_box,
                           generate_fracture_network)


def test_clip_segment_crossing_box():
    # enters the 10 x 10 box at x=0 and leaves at x=10
    got = clip_segment_to_box(-5.0, 5.0, 15.0, 5.0, 10.0, 10.0)
    assert got == pytest.approx((0.0, 5.0, 10.0, 5.0))


def test_clip_segment_inside_box_untouched():
    got = clip_segment_to_box(1.0, 2.0, 3.0, 4.0, 10.0, 10.0)
    assert got == pytest.approx((1.0, 2.0, 3.0, 4.0))


def test_clip_segment_outside_box_dropped():
    assert clip_segment_to_box(11.0, 1.0, 15.0, 9.0, 10.0, 10.0) is None
    assert clip_segment_to_box(-3.0, 12.0, 4.0, 19.0, 10.0, 10.0) is None


def test_network_counts_and_lengths_within_config():
    cfg = DfnConfig(domain=(200.0, 200.0, 5.0), count_range=(4, 8),
                    length_range=(20.0, 80.0))
    for seed in range(5):
        net = generate_fracture_network(seed, cfg)
        # each of the two sets draws between 4 and 8 planes; clipping can
        # only shorten, never lengthen
        assert 2 * 4 <= len(net) <= 2 * 8
        for pl in net.planes:
            assert pl.trace_length <= 80.0 + 1e-9
            assert pl.trace_length > 0.0


def test_planes_clipped_to_domain():
    cfg = DfnConfig(domain=(100.0, 100.0, 5.0), count_range=(10, 10),
                    length_range=(80.0, 120.0))
    net = generate_fracture_network(3, cfg)
    for pl in net.planes:
        for x, y in ((pl.x1, pl.y1), (pl.x2, pl.y2)):
            assert -1e-9 <= x <= 100.0 + 1e-9
            assert -1e-9 <= y <= 100.0 + 1e-9
        assert pl.z0 == 0.0 and pl.z1 == 5.0


def test_orthogonal_sets_without_jitter():
    cfg = DfnConfig(domain=(100.0, 100.0, 5.0), count_range=(5, 5),
                    length_range=(10.0, 20.0), strike_deg=0.0)
    net = generate_fracture_network(1, cfg)
    for pl in net.planes:
        dx, dy = pl.x2 - pl.x1, pl.y2 - pl.y1
        if pl.set_label == 0:
            assert abs(dy) < 1e-9 * max(1.0, abs(dx))
        else:
            assert abs(dx) < 1e-9 * max(1.0, abs(dy))


def test_strike_jitter_bounds():
    cfg = DfnConfig(domain=(500.0, 500.0, 5.0), count_range=(20, 20),
                    length_range=(50.0, 100.0), strike_deg=30.0,
                    strike_jitter_deg=10.0)
    net = generate_fracture_network(9, cfg)
    for pl in net.planes:
        ang = np.rad2deg(np.arctan2(pl.y2 - pl.y1, pl.x2 - pl.x1)) % 180.0
        base = (30.0 + 90.0 * pl.set_label) % 180.0
        delta = min(abs(ang - base), 180.0 - abs(ang - base))
        assert delta <= 10.0 + 1e-9


def test_generation_is_deterministic():
    cfg = DfnConfig(count_range=(5, 10), length_range=(50.0, 150.0),
                    strike_jitter_deg=15.0)
    a = generate_fracture_network(42, cfg)
    b = generate_fracture_network(42, cfg)
    assert len(a) == len(b)
    for pa, pb in zip(a.planes, b.planes):
        assert pa == pb
    c = generate_fracture_network(43, cfg)
    assert any(pa != pc for pa, pc in zip(a.planes, c.planes)) or len(a) != len(c)


def test_zero_count_gives_empty_network():
    cfg = DfnConfig(count_range=(0, 0))
    assert len(generate_fracture_network(0, cfg)) == 0


@pytest.mark.parametrize("field,value", [
    ("count_range", (5, 2)),
    ("length_range", (0.0, 10.0)),
    ("aperture", -1.0),
    ("porosity", 0.0),
    ("perm_md", 0.0),
])
def test_config_validation_rejects(field, value):
    cfg = DfnConfig(**{field: value})
    with pytest.raises(ValueError):
        cfg.validate()
