"""Dataset directory: generation, manifest, binary state I/O, loading.

Layout (one directory per dataset, inspectable and resumable):

    <root>/manifest.json            splits, units, seeds, checksums
    <root>/realizations/r0007/
        grid.json                   embedded grid (matrix + fracture cells)
        states.bin                  report states, see below
        wells.json                  well controls and indices
        meta.json                   seed, checksums, rates, balance audit

``states.bin`` holds little-endian 64-bit floats with layout
``[n_reports][2][n_cells]`` - for each exported report step, the full
pressure block then the full saturation block, cells in grid index order.
The simulation marches 30 report steps but only states 0..20 are exported
for learning; producer rates for all steps live in ``meta.json``.

Generation is idempotent: a realization whose files exist, whose states
checksum matches its meta record, and whose config hash matches the request
is skipped, so an interrupted run resumes where it stopped. A realization
whose solve fails is quarantined: the failure is recorded in its meta and
in the manifest, and it is excluded from the splits.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import sim_from_dict, sim_to_dict
from .edfm import read_grid, write_grid
from .graphs import build_graph
from .jsonio import dumps_canonical, read_json, write_json
from .simulator import (ReservoirState, SimConfig, SimulationError, WellSpec,
                        make_wells, run_realization)
from .units import DAY_S, YEAR_S
from .validation import require

DATASET_SCHEMA = "fracgraph.dataset.v1"
REALIZATION_SCHEMA = "fracgraph.realization.v1"
WELLS_SCHEMA = "fracgraph.wells.v1"
N_REPORT_STATES = 21          # states 0..20 exported for learning
SPLIT_NAMES = ("train", "val", "test")

UNITS = {
    "pressure": "Pa",
    "saturation": "1",
    "permeability": "mD",
    "transmissibility": "mD*m",
    "length": "m",
    "time": "s",
    "rate": "m3/s",
}


def realization_name(rid: int) -> str:
    return f"r{rid:04d}"


def realization_dir(root, rid: int) -> str:
    return os.path.join(root, "realizations", realization_name(rid))


# ------------------------------------------------------------- binary states

def write_states_bin(path, states) -> None:
    """Report states as '<f8' [n_reports][2][n_cells], pressure then
    saturation per report, cells in grid index order."""
    arr = np.stack([np.stack([st.pressure, st.saturation]) for st in states])
    arr.astype("<f8").tofile(path)


def read_states_bin(path, n_cells: int):
    raw = np.fromfile(path, dtype="<f8")
    require(raw.size % (2 * n_cells) == 0,
            f"{path}: size {raw.size} is not a multiple of 2 x {n_cells}")
    arr = raw.reshape(-1, 2, n_cells)
    return [ReservoirState(pressure=arr[k, 0].copy(),
                           saturation=arr[k, 1].copy(), step=k)
            for k in range(arr.shape[0])]


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_sha256(cfg: SimConfig) -> str:
    return hashlib.sha256(
        dumps_canonical(sim_to_dict(cfg)).encode()).hexdigest()


# ---------------------------------------------------------------- generation

def _wells_dict(wells: WellSpec) -> dict:
    return {
        "schema": WELLS_SCHEMA,
        "injector_cell": int(wells.injector_cell),
        "injector_rate_m3s": wells.injector_rate_m3s,
        "producer_cell": int(wells.producer_cell),
        "producer_bhp_pa": wells.producer_bhp_pa,
        "injector_wi_md_m": wells.injector_wi_md_m,
        "producer_wi_md_m": wells.producer_wi_md_m,
    }


def wells_from_dict(d: dict) -> WellSpec:
    require(d.get("schema") == WELLS_SCHEMA,
            f"unsupported wells schema {d.get('schema')!r}")
    return WellSpec(
        injector_cell=int(d["injector_cell"]),
        injector_rate_m3s=float(d["injector_rate_m3s"]),
        producer_cell=int(d["producer_cell"]),
        producer_bhp_pa=float(d["producer_bhp_pa"]),
        injector_wi_md_m=float(d["injector_wi_md_m"]),
        producer_wi_md_m=float(d["producer_wi_md_m"]),
    )


def generate_realization(root, rid: int, seed: int, cfg: SimConfig) -> dict:
    """Simulate one realization and write its directory; returns the
    manifest record. Solver failures quarantine the realization instead of
    aborting the dataset."""
    rdir = realization_dir(root, rid)
    os.makedirs(rdir, exist_ok=True)
    cfg_sha = config_sha256(cfg)
    try:
        grid, traj = run_realization(seed, cfg)
    except SimulationError as err:
        meta = {"schema": REALIZATION_SCHEMA, "realization": rid,
                "seed": seed, "status": "failed", "error": str(err),
                "config_sha256": cfg_sha}
        write_json(os.path.join(rdir, "meta.json"), meta)
        return {"name": realization_name(rid), "seed": seed,
                "status": "failed", "error": str(err)}

    write_grid(os.path.join(rdir, "grid.json"), grid)
    states_path = os.path.join(rdir, "states.bin")
    write_states_bin(states_path, traj.states[:N_REPORT_STATES])
    wells = make_wells(grid, cfg)
    write_json(os.path.join(rdir, "wells.json"), _wells_dict(wells))

    dt = cfg.total_years * YEAR_S / cfg.n_steps
    meta = {
        "schema": REALIZATION_SCHEMA,
        "realization": rid,
        "seed": seed,
        "status": "ok",
        "config_sha256": cfg_sha,
        "n_cells": grid.n_cells,
        "n_matrix_cells": grid.n_matrix,
        "n_fracture_cells": grid.n_fracture,
        "n_report_states": N_REPORT_STATES,
        "states_sha256": sha256_file(states_path),
        "report_dt_days": dt / DAY_S,
        "injector_rate_m3s": traj.injector_rate_m3s,
        "producer_rates_m3s": traj.producer_rates.tolist(),
        "balance": traj.balance,
    }
    write_json(os.path.join(rdir, "meta.json"), meta)
    return {"name": realization_name(rid), "seed": seed, "status": "ok",
            "n_cells": grid.n_cells, "n_fracture_cells": grid.n_fracture,
            "states_sha256": meta["states_sha256"]}


def _existing_record(root, rid: int, seed: int, cfg_sha: str):
    """Manifest record for an already-complete realization, else None."""
    rdir = realization_dir(root, rid)
    meta_path = os.path.join(rdir, "meta.json")
    states_path = os.path.join(rdir, "states.bin")
    if not os.path.exists(meta_path):
        return None
    try:
        meta = read_json(meta_path)
    except ValueError:
        return None
    if meta.get("config_sha256") != cfg_sha or meta.get("seed") != seed:
        return None
    if meta.get("status") == "failed":
        return {"name": realization_name(rid), "seed": seed,
                "status": "failed", "error": meta.get("error", "")}
    needed = ("grid.json", "states.bin", "wells.json")
    if not all(os.path.exists(os.path.join(rdir, f)) for f in needed):
        return None
    if sha256_file(states_path) != meta.get("states_sha256"):
        return None
    return {"name": realization_name(rid), "seed": seed, "status": "ok",
            "n_cells": meta["n_cells"],
            "n_fracture_cells": meta["n_fracture_cells"],
            "states_sha256": meta["states_sha256"]}


def _worker(args):
    root, rid, seed, cfg_dict = args
    return rid, generate_realization(root, rid, seed, sim_from_dict(cfg_dict))


def generate_dataset(root, cfg: SimConfig, n_realizations: int,
                     split_sizes, seed: int = 0, workers: int = 1,
                     log=None) -> dict:
    """Generate (or resume) a dataset of n_realizations trajectories.

    Realization rid uses simulation seed ``seed + rid``. Splits are assigned
    over the successful realizations in id order: the first block trains,
    the next validates, the last tests. Returns the manifest, which is also
    written to <root>/manifest.json.
    """
    require(n_realizations >= 1, "need at least one realization")
    require(len(split_sizes) == 3 and sum(split_sizes) == n_realizations,
            "split sizes must partition the realizations")
    os.makedirs(os.path.join(root, "realizations"), exist_ok=True)
    cfg_sha = config_sha256(cfg)

    records = {}
    todo = []
    for rid in range(n_realizations):
        rec = _existing_record(root, rid, seed + rid, cfg_sha)
        if rec is not None:
            records[rid] = rec
            if log:
                log(f"{rec['name']}: already complete, skipped")
        else:
            todo.append(rid)

    if workers > 1 and len(todo) > 1:
        jobs = [(root, rid, seed + rid, sim_to_dict(cfg)) for rid in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rid, rec in pool.map(_worker, jobs):
                records[rid] = rec
                if log:
                    log(f"{rec['name']}: {rec['status']}")
    else:
        for rid in todo:
            records[rid] = generate_realization(root, rid, seed + rid, cfg)
            if log:
                log(f"{records[rid]['name']}: {records[rid]['status']}")

    # failures shrink the splits from the test end
    ok_ids = [rid for rid in range(n_realizations)
              if records[rid]["status"] == "ok"]
    n_train, n_val, n_test = split_sizes
    splits = {
        "train": ok_ids[:n_train],
        "val": ok_ids[n_train:n_train + n_val],
        "test": ok_ids[n_train + n_val:n_train + n_val + n_test],
    }
    manifest = {
        "schema": DATASET_SCHEMA,
        "seed": seed,
        "n_realizations": n_realizations,
        "n_report_states": N_REPORT_STATES,
        "units": UNITS,
        "config_sha256": cfg_sha,
        "sim_config": sim_to_dict(cfg),
        "splits": splits,
        "realizations": {records[rid]["name"]: records[rid]
                         for rid in range(n_realizations)},
    }
    write_json(os.path.join(root, "manifest.json"), manifest)
    return manifest


# ------------------------------------------------------------------- loading

def load_manifest(root) -> dict:
    path = os.path.join(root, "manifest.json")
    require(os.path.exists(path), f"no manifest at {path}")
    manifest = read_json(path)
    require(manifest.get("schema") == DATASET_SCHEMA,
            f"unsupported dataset schema {manifest.get('schema')!r}")
    return manifest


def load_realization(root, rid: int):
    """-> (grid, states, meta) for one successful realization."""
    rdir = realization_dir(root, rid)
    meta = read_json(os.path.join(rdir, "meta.json"))
    require(meta.get("status") == "ok",
            f"realization {rid} is quarantined: {meta.get('error', 'failed')}")
    grid = read_grid(os.path.join(rdir, "grid.json"))
    states = read_states_bin(os.path.join(rdir, "states.bin"), grid.n_cells)
    require(len(states) == meta["n_report_states"],
            f"realization {rid}: state count mismatch")
    return grid, states, meta


def split_ids(manifest: dict, split: str):
    require(split in SPLIT_NAMES, f"unknown split {split!r}")
    return list(manifest["splits"][split])


def load_split(root, split: str, limit: int | None = None):
    """-> list of (rid, grid, states) evaluation cases for a split."""
    manifest = load_manifest(root)
    ids = split_ids(manifest, split)
    if limit is not None:
        ids = ids[:limit]
    out = []
    for rid in ids:
        grid, states, _ = load_realization(root, rid)
        out.append((rid, grid, states))
    return out


def training_samples(root, split: str, target: str,
                     limit: int | None = None):
    """-> list of (Graph, ys) pairs for build_train_data; ys is the target
    field per exported report state."""
    out = []
    for rid, grid, states in load_split(root, split, limit=limit):
        graph = build_graph(grid, states[0], target)
        ys = [np.asarray(getattr(st, target), dtype=float) for st in states]
        out.append((graph, ys))
    return out


def production_curves(root, split: str):
    """-> list of (rid, times_days, water_rate_m3_per_day, oil_rate_m3_per_day)
    over the full simulated schedule, for rate-curve figures."""
    manifest = load_manifest(root)
    out = []
    for rid in split_ids(manifest, split):
        meta = read_json(os.path.join(realization_dir(root, rid), "meta.json"))
        rates = np.asarray(meta["producer_rates_m3s"], dtype=float)
        dt_days = float(meta["report_dt_days"])
        times = dt_days * np.arange(1, rates.shape[0] + 1)
        out.append((rid, times, rates[:, 0] * DAY_S, rates[:, 1] * DAY_S))
    return out
