"""EDFM grid construction: Cartesian matrix grid, embedded fracture cells,
and typed connections (matrix-matrix, matrix-fracture, fracture-fracture).

Transmissibilities are stored in md*m; conversion to SI happens in the flow
solver. Fracture-fracture coupling uses the star-delta half-transmissibility
rule; matrix-fracture coupling uses the volume-averaged normal distance from
the host cell to the fracture plane.
"""

from dataclasses import dataclass, field

import numpy as np

from .dfn import FractureNetwork
from .jsonio import read_json, write_json
from .validation import require

KIND_MATRIX = 0
KIND_FRACTURE = 1
CONN_MM = 0
CONN_MF = 1
CONN_FF = 2
WELL_NONE = 0
WELL_SOURCE = 1
WELL_SINK = 2

_KIND_NAMES = {KIND_MATRIX: "matrix", KIND_FRACTURE: "fracture"}
_CONN_NAMES = {CONN_MM: "MM", CONN_MF: "MF", CONN_FF: "FF"}
_WELL_NAMES = {WELL_NONE: "none", WELL_SOURCE: "source", WELL_SINK: "sink"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}
_CONN_CODES = {v: k for k, v in _CONN_NAMES.items()}
_WELL_CODES = {v: k for k, v in _WELL_NAMES.items()}

# 3-point Gauss-Legendre rule on [-1, 1]
_GL3_NODES = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GL3_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@dataclass
class EdfmGrid:
    """Matrix + fracture cells with typed transmissibility connections.

    Cells are stored struct-of-arrays; matrix cells come first in index order
    (x fastest, then y, then z), fracture cells follow in plane/segment order.
    """
    domain: tuple[float, float, float]
    resolution: tuple[int, int, int]
    kind: np.ndarray          # (n,) int8
    volume: np.ndarray        # (n,) m^3
    porosity: np.ndarray      # (n,)
    perm_md: np.ndarray       # (n,) isotropic, md
    centroid: np.ndarray      # (n, 3) m
    well: np.ndarray          # (n,) int8
    conn_i: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    conn_j: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    conn_kind: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    conn_trans: np.ndarray = field(default_factory=lambda: np.zeros(0))  # md*m

    @property
    def n_cells(self) -> int:
        return self.volume.shape[0]

    @property
    def n_matrix(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def n_fracture(self) -> int:
        return self.n_cells - self.n_matrix

    @property
    def n_connections(self) -> int:
        return self.conn_i.shape[0]

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.domain[0] / self.resolution[0],
                self.domain[1] / self.resolution[1],
                self.domain[2] / self.resolution[2])

    def cell_index(self, i: int, j: int, k: int = 0) -> int:
        nx, ny, nz = self.resolution
        require(0 <= i < nx and 0 <= j < ny and 0 <= k < nz, "cell index out of range")
        return (k * ny + j) * nx + i

    def pore_volume(self) -> float:
        """Total pore volume, matrix and fracture cells together (m^3)."""
        return float(np.sum(self.porosity * self.volume))

    def set_wells(self, injector_cell: int, producer_cell: int):
        require(injector_cell != producer_cell, "injector and producer must differ")
        self.well[:] = WELL_NONE
        self.well[injector_cell] = WELL_SOURCE
        self.well[producer_cell] = WELL_SINK

    def validate(self):
        require(np.all(self.volume > 0), "cell volumes must be positive")
        require(np.all((self.porosity > 0) & (self.porosity <= 1)),
                "porosities must be in (0, 1]")
        require(np.all(self.perm_md > 0), "permeabilities must be positive")
        require(np.all(self.conn_trans > 0), "transmissibilities must be positive")
        require(np.all(self.conn_i != self.conn_j), "self-connections are not allowed")
        # each undirected pair appears exactly once
        lo = np.minimum(self.conn_i, self.conn_j)
        hi = np.maximum(self.conn_i, self.conn_j)
        pairs = lo * self.n_cells + hi
        require(np.unique(pairs).size == pairs.size, "duplicate connection pair")
        # every fracture cell needs at least one MF connection
        if self.n_fracture:
            mf = self.conn_kind == CONN_MF
            touched = np.zeros(self.n_cells, dtype=bool)
            touched[self.conn_i[mf]] = True
            touched[self.conn_j[mf]] = True
            require(bool(np.all(touched[self.n_matrix:])),
                    "fracture cell without matrix-fracture connection")


def mm_transmissibility(k1: float, k2: float, area: float, d1: float, d2: float) -> float:
    """TPFA transmissibility between two cells sharing a face (md*m).

    Harmonic combination of half-transmissibilities k*A/d. Returns 0 for a
    degenerate face or an impermeable side; callers drop zero connections.
    """
    if area <= 0.0 or k1 <= 0.0 or k2 <= 0.0:
        return 0.0
    return 1.0 / (d1 / (k1 * area) + d2 / (k2 * area))


def build_cartesian_grid(domain=(500.0, 500.0, 5.0), resolution=(50, 50, 1),
                         porosity=0.25, perm_md=50.0) -> EdfmGrid:
    """Uniform Cartesian matrix grid with TPFA matrix-matrix connections."""
    nx, ny, nz = (int(v) for v in resolution)
    require(nx >= 1 and ny >= 1 and nz >= 1, "resolution must be >= 1 per axis")
    lx, ly, lz = (float(v) for v in domain)
    dx, dy, dz = lx / nx, ly / ny, lz / nz
    n = nx * ny * nz

    kk, jj, ii = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    centroid = np.stack([(ii.ravel() + 0.5) * dx,
                         (jj.ravel() + 0.5) * dy,
                         (kk.ravel() + 0.5) * dz], axis=1)

    grid = EdfmGrid(
        domain=(lx, ly, lz), resolution=(nx, ny, nz),
        kind=np.full(n, KIND_MATRIX, dtype=np.int8),
        volume=np.full(n, dx * dy * dz),
        porosity=np.full(n, float(porosity)),
        perm_md=np.full(n, float(perm_md)),
        centroid=centroid,
        well=np.full(n, WELL_NONE, dtype=np.int8),
    )

    ci, cj, ct = [], [], []

    def add_faces(shift, area, half_d):
        idx = np.arange(n).reshape(nz, ny, nx)
        if shift == "x":
            a, b = idx[:, :, :-1].ravel(), idx[:, :, 1:].ravel()
        elif shift == "y":
            a, b = idx[:, :-1, :].ravel(), idx[:, 1:, :].ravel()
        else:
            a, b = idx[:-1, :, :].ravel(), idx[1:, :, :].ravel()
        k = float(perm_md)
        t = mm_transmissibility(k, k, area, half_d, half_d)
        if t > 0.0 and a.size:
            ci.append(a)
            cj.append(b)
            ct.append(np.full(a.size, t))

    add_faces("x", dy * dz, dx / 2.0)
    add_faces("y", dx * dz, dy / 2.0)
    add_faces("z", dx * dy, dz / 2.0)

    if ci:
        grid.conn_i = np.concatenate(ci)
        grid.conn_j = np.concatenate(cj)
        grid.conn_trans = np.concatenate(ct)
        grid.conn_kind = np.full(grid.conn_i.size, CONN_MM, dtype=np.int8)
    return grid


def mean_normal_distance(bounds, p1, p2) -> float:
    """Volume-averaged distance from a cell box to the vertical plane through
    the trace (p1, p2).

    Analytic for axis-aligned planes, 3x3x3 Gauss quadrature otherwise.
    bounds = ((xa, xb), (ya, yb), (za, zb)).
    """
    (xa, xb), (ya, yb), (za, zb) = bounds
    ux, uy = p2[0] - p1[0], p2[1] - p1[1]
    norm = np.hypot(ux, uy)
    require(norm > 0, "degenerate trace")
    nxv, nyv = -uy / norm, ux / norm  # horizontal unit normal

    def mean_abs_1d(a, b, x0):
        if x0 <= a:
            return 0.5 * (a + b) - x0
        if x0 >= b:
            return x0 - 0.5 * (a + b)
        return ((x0 - a) ** 2 + (b - x0) ** 2) / (2.0 * (b - a))

    if abs(nyv) < 1e-12:   # plane x = const
        x0 = p1[0]
        return mean_abs_1d(xa, xb, x0)
    if abs(nxv) < 1e-12:   # plane y = const
        y0 = p1[1]
        return mean_abs_1d(ya, yb, y0)

    # general orientation: product Gauss rule on the box
    c = nxv * p1[0] + nyv * p1[1]
    xs = 0.5 * (xa + xb) + 0.5 * (xb - xa) * _GL3_NODES
    ys = 0.5 * (ya + yb) + 0.5 * (yb - ya) * _GL3_NODES
    total = 0.0
    for wx, x in zip(_GL3_WEIGHTS, xs):
        for wy, y in zip(_GL3_WEIGHTS, ys):
            d = abs(nxv * x + nyv * y - c)
            for wz in _GL3_WEIGHTS:   # z plays no role for vertical planes
                total += wx * wy * wz * d
    return total / 8.0   # weights sum to 2 per axis


def _split_trace(x1, y1, x2, y2, nx, ny, dx, dy, snap_rel=1e-9):
    """Partition a trace into per-matrix-cell segments.

    Returns a list of (t0, t1, ci, cj) with the t's partitioning [0, 1].
    Crossing parameters closer than snap_rel (relative to trace length) are
    merged so no sliver segments are produced; the partition stays exact.
    """
    ts = [0.0, 1.0]
    vx, vy = x2 - x1, y2 - y1
    if abs(vx) > 0:
        for gi in range(1, nx):
            t = (gi * dx - x1) / vx
            if 0.0 < t < 1.0:
                ts.append(t)
    if abs(vy) > 0:
        for gj in range(1, ny):
            t = (gj * dy - y1) / vy
            if 0.0 < t < 1.0:
                ts.append(t)
    ts = sorted(ts)
    merged = [0.0]
    for t in ts[1:]:
        if t - merged[-1] <= snap_rel:
            continue
        merged.append(t)
    merged[-1] = 1.0
    if len(merged) >= 2 and merged[-1] - merged[-2] <= snap_rel:
        del merged[-2]

    segs = []
    for t0, t1 in zip(merged[:-1], merged[1:]):
        tm = 0.5 * (t0 + t1)
        px, py = x1 + tm * vx, y1 + tm * vy
        ci = min(max(int(px / dx), 0), nx - 1)
        cj = min(max(int(py / dy), 0), ny - 1)
        segs.append((t0, t1, ci, cj))
    return segs


def _segment_intersection(a1, a2, b1, b2):
    """Intersection point of two 2-D segments, or None."""
    r = (a2[0] - a1[0], a2[1] - a1[1])
    s = (b2[0] - b1[0], b2[1] - b1[1])
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-300:
        return None
    qp = (b1[0] - a1[0], b1[1] - a1[1])
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return (a1[0] + t * r[0], a1[1] + t * r[1])
    return None


def embed_fractures(grid: EdfmGrid, network: FractureNetwork) -> EdfmGrid:
    """Embed fracture planes into a matrix grid.

    Each plane is split by matrix-cell boundaries into one fracture cell per
    intersected matrix cell (and per z layer). Adds MF connections for every
    fracture cell and FF connections both along each plane and at plane
    crossings. Returns a new grid; the input grid is not modified.
    """
    nx, ny, nz = grid.resolution
    dx, dy, dz = grid.spacing
    require(grid.n_fracture == 0, "grid already contains fracture cells")

    f_volume, f_porosity, f_perm, f_centroid = [], [], [], []
    conn_i = list(grid.conn_i)
    conn_j = list(grid.conn_j)
    conn_kind = list(grid.conn_kind)
    conn_trans = list(grid.conn_trans)

    n_matrix = grid.n_cells
    cell_of = {}        # (plane_idx, ci, cj, k) -> fracture cell index
    seg_info = {}       # fracture cell index -> (mid_x, mid_y, half_len, length)
    plane_segments = [] # per plane: list of per-layer cell index lists

    def add_conn(a, b, kind, t):
        if t > 0.0:
            conn_i.append(a)
            conn_j.append(b)
            conn_kind.append(kind)
            conn_trans.append(t)

    next_idx = n_matrix
    for p_idx, plane in enumerate(network.planes):
        segs = _split_trace(plane.x1, plane.y1, plane.x2, plane.y2, nx, ny, dx, dy)
        layer_cells = [[] for _ in range(nz)]
        p1 = (plane.x1, plane.y1)
        p2 = (plane.x2, plane.y2)
        trace_len = plane.trace_length
        for (t0, t1, ci, cj) in segs:
            seg_len = (t1 - t0) * trace_len
            if seg_len <= 0.0:
                continue
            tm = 0.5 * (t0 + t1)
            mx = plane.x1 + tm * (plane.x2 - plane.x1)
            my = plane.y1 + tm * (plane.y2 - plane.y1)
            bounds_xy = ((ci * dx, (ci + 1) * dx), (cj * dy, (cj + 1) * dy))
            for k in range(nz):
                za, zb = k * dz, (k + 1) * dz
                area = seg_len * dz
                cell = next_idx
                next_idx += 1
                f_volume.append(area * plane.aperture)
                f_porosity.append(plane.porosity)
                f_perm.append(plane.perm_md)
                f_centroid.append((mx, my, 0.5 * (za + zb)))
                cell_of[(p_idx, ci, cj, k)] = cell
                seg_info[cell] = (mx, my, 0.5 * seg_len, seg_len)
                layer_cells[k].append(cell)

                # matrix-fracture coupling via average normal distance
                m_cell = (k * ny + cj) * nx + ci
                d_avg = mean_normal_distance((bounds_xy[0], bounds_xy[1], (za, zb)), p1, p2)
                km = grid.perm_md[m_cell]
                denom = d_avg / km + (plane.aperture / 2.0) / plane.perm_md
                add_conn(m_cell, cell, CONN_MF, area / denom)

        # fracture-fracture along the plane (consecutive segments, same layer)
        for k in range(nz):
            cells = layer_cells[k]
            for a, b in zip(cells[:-1], cells[1:]):
                ha = seg_info[a][2]
                hb = seg_info[b][2]
                t_a = plane.perm_md * plane.aperture * dz / max(ha, 1e-12)
                t_b = plane.perm_md * plane.aperture * dz / max(hb, 1e-12)
                add_conn(a, b, CONN_FF, t_a * t_b / (t_a + t_b))
        # vertical neighbors between layers of the same segment
        for k in range(nz - 1):
            for a, b in zip(layer_cells[k], layer_cells[k + 1]):
                seg_len = seg_info[a][3]
                t_half = plane.perm_md * plane.aperture * seg_len / (dz / 2.0)
                add_conn(a, b, CONN_FF, t_half / 2.0)
        plane_segments.append(layer_cells)

    # fracture-fracture at plane crossings (star-delta rule)
    for p in range(len(network.planes)):
        for q in range(p + 1, len(network.planes)):
            pa, pb = network.planes[p], network.planes[q]
            pt = _segment_intersection((pa.x1, pa.y1), (pa.x2, pa.y2),
                                       (pb.x1, pb.y1), (pb.x2, pb.y2))
            if pt is None:
                continue
            ci = min(max(int(pt[0] / dx), 0), nx - 1)
            cj = min(max(int(pt[1] / dy), 0), ny - 1)
            for k in range(nz):
                ca = cell_of.get((p, ci, cj, k))
                cb = cell_of.get((q, ci, cj, k))
                if ca is None or cb is None:
                    continue
                halves = []
                for cell, plane in ((ca, pa), (cb, pb)):
                    mx, my, _, seg_len = seg_info[cell]
                    d = np.hypot(mx - pt[0], my - pt[1])
                    d = max(d, 1e-9)
                    halves.append(plane.perm_md * plane.aperture * dz / d)
                t1, t2 = halves
                add_conn(ca, cb, CONN_FF, t1 * t2 / (t1 + t2))

    n_frac = len(f_volume)
    out = EdfmGrid(
        domain=grid.domain, resolution=grid.resolution,
        kind=np.concatenate([grid.kind, np.full(n_frac, KIND_FRACTURE, dtype=np.int8)]),
        volume=np.concatenate([grid.volume, np.asarray(f_volume)]),
        porosity=np.concatenate([grid.porosity, np.asarray(f_porosity)]),
        perm_md=np.concatenate([grid.perm_md, np.asarray(f_perm)]),
        centroid=np.concatenate([grid.centroid,
                                 np.asarray(f_centroid).reshape(n_frac, 3)]),
        well=np.concatenate([grid.well, np.full(n_frac, WELL_NONE, dtype=np.int8)]),
        conn_i=np.asarray(conn_i, dtype=np.int64),
        conn_j=np.asarray(conn_j, dtype=np.int64),
        conn_kind=np.asarray(conn_kind, dtype=np.int8),
        conn_trans=np.asarray(conn_trans),
    )
    out.validate()
    return out


def grid_to_dict(grid: EdfmGrid) -> dict:
    cells = []
    for c in range(grid.n_cells):
        cells.append({
            "kind": _KIND_NAMES[int(grid.kind[c])],
            "volume": float(grid.volume[c]),
            "porosity": float(grid.porosity[c]),
            "perm_md": float(grid.perm_md[c]),
            "centroid": [float(v) for v in grid.centroid[c]],
            "well": _WELL_NAMES[int(grid.well[c])],
        })
    conns = []
    for c in range(grid.n_connections):
        conns.append({
            "i": int(grid.conn_i[c]),
            "j": int(grid.conn_j[c]),
            "kind": _CONN_NAMES[int(grid.conn_kind[c])],
            "trans_md_m": float(grid.conn_trans[c]),
        })
    return {
        "schema": "fracgraph.grid.v1",
        "domain": [float(v) for v in grid.domain],
        "resolution": [int(v) for v in grid.resolution],
        "cells": cells,
        "connections": conns,
    }


def grid_from_dict(doc: dict) -> EdfmGrid:
    require(doc.get("schema") == "fracgraph.grid.v1", "unknown grid schema")
    cells = doc["cells"]
    conns = doc["connections"]
    n = len(cells)
    grid = EdfmGrid(
        domain=tuple(float(v) for v in doc["domain"]),
        resolution=tuple(int(v) for v in doc["resolution"]),
        kind=np.array([_KIND_CODES[c["kind"]] for c in cells], dtype=np.int8),
        volume=np.array([c["volume"] for c in cells]),
        porosity=np.array([c["porosity"] for c in cells]),
        perm_md=np.array([c["perm_md"] for c in cells]),
        centroid=np.array([c["centroid"] for c in cells]).reshape(n, 3),
        well=np.array([_WELL_CODES[c["well"]] for c in cells], dtype=np.int8),
        conn_i=np.array([c["i"] for c in conns], dtype=np.int64),
        conn_j=np.array([c["j"] for c in conns], dtype=np.int64),
        conn_kind=np.array([_CONN_CODES[c["kind"]] for c in conns], dtype=np.int8),
        conn_trans=np.array([c["trans_md_m"] for c in conns]),
    )
    return grid


def write_grid(path, grid: EdfmGrid):
    write_json(path, grid_to_dict(grid))


def read_grid(path) -> EdfmGrid:
    return grid_from_dict(read_json(path))
