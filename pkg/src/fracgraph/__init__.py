"""Fractured-reservoir waterflood data generation and graph-network
surrogates for pressure/saturation forecasting."""

import os as _os

__version__ = "0.1.0"


def _pin_threads():
    """Apply FRACGRAPH_THREADS to the BLAS/OpenMP pools.

    Must run before numpy is first imported, which is why it sits at the
    top of the package init ahead of the submodule imports. Explicitly set
    pool variables are left alone.
    """
    n = _os.environ.get("FRACGRAPH_THREADS")
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(var, n)


_pin_threads()

from .config import (PipelineConfig, desk_preset, paper_preset,        # noqa: E402
                     resolve_config, save_config, tiny_preset)
from .dataset import (generate_dataset, load_manifest, load_realization,  # noqa: E402
                      load_split, read_states_bin, training_samples,
                      write_states_bin)
from .dfn import (DfnConfig, FractureNetwork, FracturePlane,           # noqa: E402
                  generate_fracture_network)
from .edfm import (EdfmGrid, build_cartesian_grid, embed_fractures,    # noqa: E402
                   read_grid, write_grid)
from .evaluate import (EvalModel, EvalResult, emit_report,             # noqa: E402
                       evaluate_task, mrae)
from .fluids import FluidModel                                         # noqa: E402
from .graphs import Graph, NormStats, build_graph, fit_norm_stats      # noqa: E402
from .models import (GnnSurrogate, ModelSpec, RealizationGraph,        # noqa: E402
                     RecurrentGnnSurrogate, count_params, default_spec,
                     gnn_forward, init_params, load_model, rollout_ar,
                     rollout_rgnn, save_model)
from .nn import Adam, grad_check, load_checkpoint, save_checkpoint     # noqa: E402
from .simulator import (ReservoirState, SimConfig, SimTrajectory,      # noqa: E402
                        SimulationError, WellSpec, make_wells,
                        run_realization, run_schedule)
from .training import (TrainConfig, TrainData, build_train_data,       # noqa: E402
                       loss_term, train_stage1, train_stage2)

__all__ = [
    "Adam", "DfnConfig", "EdfmGrid", "EvalModel", "EvalResult",
    "FluidModel", "FractureNetwork", "FracturePlane", "GnnSurrogate",
    "Graph", "ModelSpec", "NormStats", "PipelineConfig",
    "RealizationGraph", "RecurrentGnnSurrogate", "ReservoirState",
    "SimConfig", "SimTrajectory", "SimulationError", "TrainConfig",
    "TrainData", "WellSpec", "__version__", "build_cartesian_grid",
    "build_graph", "build_train_data", "count_params", "default_spec",
    "desk_preset", "embed_fractures", "emit_report", "evaluate_task",
    "fit_norm_stats", "generate_dataset", "generate_fracture_network",
    "gnn_forward", "grad_check", "init_params", "load_checkpoint",
    "load_manifest", "load_model", "load_realization", "load_split",
    "loss_term", "make_wells", "mrae", "paper_preset", "read_grid",
    "read_states_bin", "resolve_config", "rollout_ar", "rollout_rgnn",
    "run_realization", "run_schedule", "save_checkpoint", "save_config",
    "save_model", "tiny_preset", "train_stage1", "train_stage2",
    "training_samples", "write_grid", "write_states_bin",
]
