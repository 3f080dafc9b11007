"""Pipeline configuration: one serializable tree plus named presets.

A PipelineConfig bundles everything a full run needs: simulation setup,
dataset sizing and splits, the four surrogate architectures, and the
two-stage training schedules. Configs round-trip through versioned JSON
(schema ``fracgraph.config.v1``) so every run can write a resolved snapshot
that reproduces it bitwise.

Presets:

* ``paper`` - the published setup: 500 x 500 x 5 m domain on a 50 x 50 x 1
  grid, 500 realizations split 400/50/50, pressure GNN h=40/L=12 and
  saturation GNN h=48/L=8, stage 1 at lr 1e-3 for 200 epochs and stage 2 at
  lr 1e-4 for 100 epochs (weight decay 5e-3, batch 4, validate every 5).
* ``desk`` - workstation-sized: 20 x 20 grid with the same 10 m cells,
  80 realizations split 60/10/10, h=16/L=4 for every model, 60/30 epochs.
* ``tiny`` - smoke-test sized; runs the full pipeline in well under a
  minute.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

from .dfn import DfnConfig
from .fluids import FluidModel
from .jsonio import read_json, write_json
from .models import ModelSpec
from .simulator import SimConfig
from .training import TrainConfig
from .validation import require

CONFIG_SCHEMA = "fracgraph.config.v1"
MODEL_KEYS = ("gnn_pressure", "gnn_saturation", "rgnn_pressure",
              "rgnn_saturation")


def fluid_to_dict(fl: FluidModel) -> dict:
    d = asdict(fl)
    require(d.pop("p_cow", None) is None,
            "a capillary-pressure hook cannot be serialized")
    return d


def fluid_from_dict(d: dict) -> FluidModel:
    return FluidModel(**d)


def dfn_to_dict(cfg: DfnConfig) -> dict:
    return asdict(cfg)


def dfn_from_dict(d: dict) -> DfnConfig:
    d = dict(d)
    for key in ("domain", "count_range", "length_range"):
        d[key] = tuple(d[key])
    return DfnConfig(**d)


def sim_to_dict(cfg: SimConfig) -> dict:
    d = asdict(cfg)
    d["dfn"] = dfn_to_dict(cfg.dfn)
    d["fluid"] = fluid_to_dict(cfg.fluid)
    return d


def sim_from_dict(d: dict) -> SimConfig:
    d = dict(d)
    d["domain"] = tuple(d["domain"])
    d["resolution"] = tuple(int(r) for r in d["resolution"])
    d["dfn"] = dfn_from_dict(d["dfn"])
    d["fluid"] = fluid_from_dict(d["fluid"])
    return SimConfig(**d)


def train_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)


@dataclass
class PipelineConfig:
    preset: str
    sim: SimConfig
    n_realizations: int
    split_sizes: tuple            # (train, val, test)
    seed: int = 0
    models: dict = field(default_factory=dict)   # key -> ModelSpec
    stage1: TrainConfig = field(default_factory=lambda: TrainConfig(stage=1))
    stage2: TrainConfig = field(default_factory=lambda: TrainConfig(stage=2))
    eval_steps: int = 10
    keep_field_trajectories: int = 1   # test trajectories with per-cell CSVs

    def validate(self):
        require(self.n_realizations >= 1, "need at least one realization")
        require(len(self.split_sizes) == 3 and all(s >= 0 for s in self.split_sizes),
                "split_sizes must be three nonnegative counts")
        require(sum(self.split_sizes) == self.n_realizations,
                "splits must partition the realizations exactly")
        require(self.stage1.stage == 1 and self.stage2.stage == 2,
                "stage configs wired to the wrong stages")
        for key in self.models:
            require(key in MODEL_KEYS, f"unknown model key {key!r}")
        self.sim.dfn.validate()

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "preset": self.preset,
            "seed": self.seed,
            "sim": sim_to_dict(self.sim),
            "n_realizations": self.n_realizations,
            "split_sizes": list(self.split_sizes),
            "models": {k: self.models[k].to_dict() for k in MODEL_KEYS
                       if k in self.models},
            "stage1": train_to_dict(self.stage1),
            "stage2": train_to_dict(self.stage2),
            "eval_steps": self.eval_steps,
            "keep_field_trajectories": self.keep_field_trajectories,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        require(d.get("schema") == CONFIG_SCHEMA,
                f"unsupported config schema {d.get('schema')!r}")
        cfg = cls(
            preset=d["preset"],
            sim=sim_from_dict(d["sim"]),
            n_realizations=int(d["n_realizations"]),
            split_sizes=tuple(int(s) for s in d["split_sizes"]),
            seed=int(d["seed"]),
            models={k: ModelSpec.from_dict(v) for k, v in d["models"].items()},
            stage1=train_from_dict(d["stage1"]),
            stage2=train_from_dict(d["stage2"]),
            eval_steps=int(d["eval_steps"]),
            keep_field_trajectories=int(d["keep_field_trajectories"]),
        )
        cfg.validate()
        return cfg


def _model_set(hidden_p, layers_p, hidden_s, layers_s) -> dict:
    return {
        "gnn_pressure": ModelSpec("pressure", hidden_p, layers_p),
        "gnn_saturation": ModelSpec("saturation", hidden_s, layers_s),
        "rgnn_pressure": ModelSpec("pressure", hidden_p, layers_p, recurrent=True),
        "rgnn_saturation": ModelSpec("saturation", hidden_s, layers_s,
                                     recurrent=True),
    }


def paper_preset(seed: int = 0) -> PipelineConfig:
    cfg = PipelineConfig(
        preset="paper",
        sim=SimConfig(),
        n_realizations=500,
        split_sizes=(400, 50, 50),
        seed=seed,
        models=_model_set(40, 12, 48, 8),
        stage1=TrainConfig(stage=1, epochs=200, lr=1e-3, seed=seed),
        stage2=TrainConfig(stage=2, epochs=100, lr=1e-4, seed=seed),
    )
    cfg.validate()
    return cfg


def desk_preset(seed: int = 0) -> PipelineConfig:
    domain = (200.0, 200.0, 5.0)   # same 10 m cells as the paper grid
    sim = SimConfig(
        domain=domain,
        resolution=(20, 20, 1),
        # Fracture traces are capped at 4 cells so that single-step transport
        # along a conduit stays inside the 4-hop receptive field of the
        # desk-sized processor; longer traces make the rollout unlearnable at
        # this width regardless of training budget.
        dfn=DfnConfig(domain=domain, count_range=(4, 8),
                      length_range=(20.0, 40.0)),
    )
    cfg = PipelineConfig(
        preset="desk",
        sim=sim,
        n_realizations=80,
        split_sizes=(60, 10, 10),
        seed=seed,
        models=_model_set(16, 4, 16, 4),
        stage1=TrainConfig(stage=1, epochs=60, lr=1e-3, seed=seed),
        stage2=TrainConfig(stage=2, epochs=30, lr=1e-4, seed=seed),
    )
    cfg.validate()
    return cfg


def tiny_preset(seed: int = 0) -> PipelineConfig:
    domain = (60.0, 60.0, 5.0)
    sim = SimConfig(
        domain=domain,
        resolution=(6, 6, 1),
        dfn=DfnConfig(domain=domain, count_range=(1, 2),
                      length_range=(15.0, 30.0)),
    )
    cfg = PipelineConfig(
        preset="tiny",
        sim=sim,
        n_realizations=6,
        split_sizes=(4, 1, 1),
        seed=seed,
        models=_model_set(8, 2, 8, 2),
        stage1=TrainConfig(stage=1, epochs=4, lr=1e-3, validate_every=2,
                           seed=seed),
        stage2=TrainConfig(stage=2, epochs=2, lr=1e-4, validate_every=2,
                           seed=seed),
    )
    cfg.validate()
    return cfg


PRESETS = {"paper": paper_preset, "desk": desk_preset, "tiny": tiny_preset}


def resolve_config(name_or_path: str, seed: int | None = None) -> PipelineConfig:
    """A preset name, or a path to a config JSON written by save_config."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path](seed=seed if seed is not None else 0)
    require(os.path.exists(name_or_path),
            f"{name_or_path!r} is neither a preset ({', '.join(PRESETS)}) "
            "nor a config file")
    cfg = PipelineConfig.from_dict(read_json(name_or_path))
    if seed is not None:
        cfg.seed = seed
        cfg.stage1.seed = seed
        cfg.stage2.seed = seed
    return cfg


def save_config(path, cfg: PipelineConfig):
    write_json(path, cfg.to_dict())
