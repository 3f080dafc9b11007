"""Stochastic discrete fracture network generation.

Fracture planes are vertical rectangles spanning the full domain height; a
plane is described by its horizontal trace segment. Two orthogonal sets are
generated with uniform center positions and trace lengths, and each trace is
clipped to the domain box.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import require


@dataclass(frozen=True)
class DfnConfig:
    domain: tuple[float, float, float] = (500.0, 500.0, 5.0)  # (Lx, Ly, Lz) in m
    count_range: tuple[int, int] = (10, 20)   # fractures per set, inclusive
    length_range: tuple[float, float] = (50.0, 200.0)  # trace length in m
    strike_deg: float = 0.0        # strike of the first set; second set at +90
    strike_jitter_deg: float = 0.0
    aperture: float = 1.0e-3       # m
    porosity: float = 0.8
    perm_md: float = 1.0e7

    def validate(self):
        require(self.count_range[0] >= 0 and self.count_range[1] >= self.count_range[0],
                "count_range must be a nondecreasing pair of nonnegative ints")
        require(self.length_range[0] > 0 and self.length_range[1] >= self.length_range[0],
                "length_range must be positive and nondecreasing")
        require(self.aperture > 0, "aperture must be positive")
        require(0 < self.porosity <= 1, "fracture porosity must be in (0, 1]")
        require(self.perm_md > 0, "fracture permeability must be positive")


@dataclass(frozen=True)
class FracturePlane:
    """Vertical rectangular fracture: horizontal trace + z extent."""
    x1: float
    y1: float
    x2: float
    y2: float
    z0: float
    z1: float
    aperture: float
    porosity: float
    perm_md: float
    set_label: int  # 0 or 1 (orthogonal sets)

    @property
    def trace_length(self) -> float:
        return float(np.hypot(self.x2 - self.x1, self.y2 - self.y1))

    @property
    def height(self) -> float:
        return self.z1 - self.z0


@dataclass
class FractureNetwork:
    planes: list[FracturePlane] = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return len(self.planes)


def clip_segment_to_box(x1, y1, x2, y2, lx, ly):
    """Liang-Barsky clip of a segment to [0,lx]x[0,ly].

    Returns clipped endpoints or None when the segment lies fully outside.
    """
    dx, dy = x2 - x1, y2 - y1
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x1), (dx, lx - x1), (-dy, y1), (dy, ly - y1)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return None
            if r < t1:
                t1 = r
    if t1 - t0 <= 0.0:
        return None
    return (x1 + t0 * dx, y1 + t0 * dy, x1 + t1 * dx, y1 + t1 * dy)


def generate_fracture_network(seed: int, config: DfnConfig) -> FractureNetwork:
    """Draw two orthogonal sets of vertical fracture planes, clipped to the domain.

    Deterministic for a fixed (seed, config). Zero counts yield an empty
    network (an unfractured reservoir).
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x0DF])))
    lx, ly, lz = config.domain
    lo, hi = config.count_range
    planes = []
    for set_label in (0, 1):
        count = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        base = np.deg2rad(config.strike_deg + 90.0 * set_label)
        for _ in range(count):
            cx = rng.uniform(0.0, lx)
            cy = rng.uniform(0.0, ly)
            length = rng.uniform(*config.length_range)
            theta = base
            if config.strike_jitter_deg > 0.0:
                theta = theta + np.deg2rad(rng.uniform(-config.strike_jitter_deg,
                                                       config.strike_jitter_deg))
            ux, uy = np.cos(theta), np.sin(theta)
            seg = clip_segment_to_box(cx - 0.5 * length * ux, cy - 0.5 * length * uy,
                                      cx + 0.5 * length * ux, cy + 0.5 * length * uy,
                                      lx, ly)
            if seg is None:
                continue
            x1, y1, x2, y2 = seg
            if np.hypot(x2 - x1, y2 - y1) <= 0.0:
                continue
            planes.append(FracturePlane(x1, y1, x2, y2, 0.0, lz,
                                        config.aperture, config.porosity,
                                        config.perm_md, set_label))
    return FractureNetwork(planes=planes, seed=int(seed))
