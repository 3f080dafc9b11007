"""Fully-implicit finite-volume solver for immiscible oil/water flow on an
EdfmGrid.

Primary unknowns per cell are oil pressure p_o and water saturation S_w.
Mass residuals are assembled in kg with phase-potential upwinding, then scaled
per row by (cell pore volume * surface density) so the Newton tolerance is a
dimensionless mass error. Gravity is neglected (thin quasi-2D domains) and
rock is incompressible. Capillary pressure enters through the FluidModel hook
and is zero by default.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .dfn import DfnConfig, generate_fracture_network
from .edfm import (EdfmGrid, KIND_MATRIX, WELL_SINK, WELL_SOURCE,
                   build_cartesian_grid, embed_fractures)
from .fluids import FluidModel
from .units import MD_TO_M2, YEAR_S
from .validation import require


class NewtonError(RuntimeError):
    """Newton failed to converge within the time-step cut budget."""


class SimulationError(RuntimeError):
    """Solver failure with realization/step provenance attached."""


@dataclass(frozen=True)
class WellSpec:
    injector_cell: int
    injector_rate_m3s: float      # water, surface conditions
    producer_cell: int
    producer_bhp_pa: float
    injector_wi_md_m: float
    producer_wi_md_m: float

    def validate(self):
        require(self.injector_rate_m3s > 0, "injection rate must be positive")
        require(self.producer_bhp_pa > 0, "BHP must be positive")
        require(self.injector_cell != self.producer_cell,
                "injector and producer must differ")
        require(self.injector_wi_md_m > 0 and self.producer_wi_md_m > 0,
                "well indices must be positive")


@dataclass
class ReservoirState:
    pressure: np.ndarray    # (n,) Pa
    saturation: np.ndarray  # (n,) water saturation
    step: int = 0

    def copy(self) -> "ReservoirState":
        return ReservoirState(self.pressure.copy(), self.saturation.copy(), self.step)

    def validate(self):
        require(np.all(np.isfinite(self.pressure)) and np.all(self.pressure > 0),
                "pressure must be finite and positive")
        require(np.all((self.saturation >= 0) & (self.saturation <= 1)),
                "saturation outside [0, 1]")


@dataclass
class SimTrajectory:
    realization: int
    states: list                       # ReservoirState, length n_steps + 1
    producer_rates: np.ndarray         # (n_steps, 2) surface m^3/s, (water, oil)
    injector_rate_m3s: float
    balance: list = field(default_factory=list)   # per-step audit dicts

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


def peaceman_wi(grid: EdfmGrid, cell: int, r_w: float = 0.1) -> float:
    """Peaceman well index (md*m) for a vertical well in a matrix cell,
    isotropic permeability, zero skin, r_eq = 0.14*sqrt(dx^2+dy^2)."""
    require(grid.kind[cell] == KIND_MATRIX, "wells must sit in matrix cells")
    dx, dy, dz = grid.spacing
    r_eq = 0.14 * np.hypot(dx, dy)
    require(r_eq > r_w, "equivalent radius must exceed well radius")
    return 2.0 * np.pi * float(grid.perm_md[cell]) * dz / np.log(r_eq / r_w)


def cell_masses(grid: EdfmGrid, fluid: FluidModel, state: ReservoirState):
    """Per-cell phase masses (kg): (water, oil)."""
    vphi = grid.volume * grid.porosity
    rho_w, _ = fluid.density("water", state.pressure)
    rho_o, _ = fluid.density("oil", state.pressure)
    return vphi * rho_w * state.saturation, vphi * rho_o * (1.0 - state.saturation)


def well_mass_rates(grid: EdfmGrid, fluid: FluidModel, wells: WellSpec,
                    state: ReservoirState):
    """Instantaneous well mass rates (kg/s) at a given state.

    Returns (injected water, produced water, produced oil); production uses
    cell mobilities against the fixed BHP with a no-crossflow guard.
    """
    inj = fluid.rho_w_ref * wells.injector_rate_m3s
    c = wells.producer_cell
    p = float(state.pressure[c])
    s = float(state.saturation[c])
    krw, kro, _, _ = fluid.relperm(s)
    pc, _ = fluid.capillary(s)
    rho_w, _ = fluid.density("water", p)
    rho_o, _ = fluid.density("oil", p)
    wi_si = wells.producer_wi_md_m * MD_TO_M2
    draw_w = max(p - float(pc) - wells.producer_bhp_pa, 0.0)
    draw_o = max(p - wells.producer_bhp_pa, 0.0)
    q_w = wi_si * float(krw) / fluid.viscosity_pas("water") * float(rho_w) * draw_w
    q_o = wi_si * float(kro) / fluid.viscosity_pas("oil") * float(rho_o) * draw_o
    return inj, q_w, q_o


def assemble_residual(grid: EdfmGrid, fluid: FluidModel, wells,
                      state_new: ReservoirState, state_old: ReservoirState,
                      dt: float):
    """Scaled mass residual and its analytic sparse Jacobian.

    Unknown ordering: [p_0..p_{n-1}, S_0..S_{n-1}]; equation ordering:
    [water_0..water_{n-1}, oil_0..oil_{n-1}]. Row i of each phase is the cell
    mass balance divided by (V_i phi_i rho_surf) so entries are dimensionless.
    """
    n = grid.n_cells
    p = state_new.pressure
    s = state_new.saturation
    require(np.all(np.isfinite(p)) and np.all(np.isfinite(s)),
            "corrupted state: non-finite unknowns")
    vphi = grid.volume * grid.porosity

    rho_w, drho_w = fluid.density("water", p)
    rho_o, drho_o = fluid.density("oil", p)
    rho_w_old, _ = fluid.density("water", state_old.pressure)
    rho_o_old, _ = fluid.density("oil", state_old.pressure)
    krw, kro, dkrw, dkro = fluid.relperm(s)
    pc, dpc = fluid.capillary(s)
    mu_w = fluid.viscosity_pas("water")
    mu_o = fluid.viscosity_pas("oil")

    # accumulation (kg)
    r_w = vphi * (rho_w * s - rho_w_old * state_old.saturation)
    r_o = vphi * (rho_o * (1.0 - s) - rho_o_old * (1.0 - state_old.saturation))

    rows, cols, vals = [], [], []

    def add(rr, cc, vv):
        rows.append(np.asarray(rr, dtype=np.int64))
        cols.append(np.asarray(cc, dtype=np.int64))
        vals.append(np.asarray(vv, dtype=float))

    idx = np.arange(n)
    add(idx, idx, vphi * drho_w * s)                    # d r_w / d p
    add(idx, n + idx, vphi * rho_w)                     # d r_w / d S
    add(n + idx, idx, vphi * drho_o * (1.0 - s))        # d r_o / d p
    add(n + idx, n + idx, -vphi * rho_o)                # d r_o / d S

    if grid.n_connections:
        ci = grid.conn_i
        cj = grid.conn_j
        t_si = grid.conn_trans * MD_TO_M2
        p_w = p - pc
        dphi_w = p_w[ci] - p_w[cj]
        dphi_o = p[ci] - p[cj]
        up_w = np.where(dphi_w >= 0.0, ci, cj)
        up_o = np.where(dphi_o >= 0.0, ci, cj)
        lam_w = krw[up_w] / mu_w
        lam_o = kro[up_o] / mu_o
        rw_up = rho_w[up_w]
        ro_up = rho_o[up_o]
        f_w = t_si * lam_w * rw_up * dphi_w    # kg/s, positive = i -> j
        f_o = t_si * lam_o * ro_up * dphi_o

        r_w += dt * (np.bincount(ci, weights=f_w, minlength=n)
                     - np.bincount(cj, weights=f_w, minlength=n))
        r_o += dt * (np.bincount(ci, weights=f_o, minlength=n)
                     - np.bincount(cj, weights=f_o, minlength=n))

        at_i_w = up_w == ci
        at_i_o = up_o == ci
        dfw_dpi = t_si * lam_w * (np.where(at_i_w, drho_w[ci], 0.0) * dphi_w + rw_up)
        dfw_dpj = t_si * lam_w * (np.where(at_i_w, 0.0, drho_w[cj]) * dphi_w - rw_up)
        dfo_dpi = t_si * lam_o * (np.where(at_i_o, drho_o[ci], 0.0) * dphi_o + ro_up)
        dfo_dpj = t_si * lam_o * (np.where(at_i_o, 0.0, drho_o[cj]) * dphi_o - ro_up)
        dfw_dsup = t_si * (dkrw[up_w] / mu_w) * rw_up * dphi_w
        dfo_dsup = t_si * (dkro[up_o] / mu_o) * ro_up * dphi_o
        # capillary contribution to the water potential difference
        dfw_dsi_pc = t_si * lam_w * rw_up * (-dpc[ci])
        dfw_dsj_pc = t_si * lam_w * rw_up * dpc[cj]

        for eq_row, sign in ((ci, 1.0), (cj, -1.0)):
            add(eq_row, ci, sign * dt * dfw_dpi)
            add(eq_row, cj, sign * dt * dfw_dpj)
            add(eq_row, n + up_w, sign * dt * dfw_dsup)
            add(eq_row, n + ci, sign * dt * dfw_dsi_pc)
            add(eq_row, n + cj, sign * dt * dfw_dsj_pc)
            add(n + eq_row, ci, sign * dt * dfo_dpi)
            add(n + eq_row, cj, sign * dt * dfo_dpj)
            add(n + eq_row, n + up_o, sign * dt * dfo_dsup)

    if wells is not None:
        # injector: fixed surface-rate water source, state independent
        r_w[wells.injector_cell] -= dt * fluid.rho_w_ref * wells.injector_rate_m3s
        # producer: fixed BHP, upwinded (cell) mobilities, no crossflow
        c = wells.producer_cell
        wi_si = wells.producer_wi_md_m * MD_TO_M2
        draw_w = p[c] - pc[c] - wells.producer_bhp_pa
        draw_o = p[c] - wells.producer_bhp_pa
        act_w = 1.0 if draw_w > 0.0 else 0.0
        act_o = 1.0 if draw_o > 0.0 else 0.0
        lam_w_c = krw[c] / mu_w
        lam_o_c = kro[c] / mu_o
        q_w = wi_si * lam_w_c * rho_w[c] * max(draw_w, 0.0)
        q_o = wi_si * lam_o_c * rho_o[c] * max(draw_o, 0.0)
        r_w[c] += dt * q_w
        r_o[c] += dt * q_o
        add([c], [c], [dt * wi_si * lam_w_c
                       * (drho_w[c] * max(draw_w, 0.0) + rho_w[c] * act_w)])
        add([c], [n + c], [dt * wi_si * rho_w[c]
                           * ((dkrw[c] / mu_w) * max(draw_w, 0.0)
                              - lam_w_c * dpc[c] * act_w)])
        add([n + c], [c], [dt * wi_si * lam_o_c
                           * (drho_o[c] * max(draw_o, 0.0) + rho_o[c] * act_o)])
        add([n + c], [n + c], [dt * wi_si * (dkro[c] / mu_o)
                               * rho_o[c] * max(draw_o, 0.0)])

    scale = np.concatenate([1.0 / (vphi * fluid.rho_w_ref),
                            1.0 / (vphi * fluid.rho_o_ref)])
    resid = np.concatenate([r_w, r_o]) * scale
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals) * scale[rows]
    jac = coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n)).tocsr()
    return resid, jac


def _newton_step(grid, fluid, wells, state_old, dt, tol, max_iter, ds_max):
    """One implicit step of length dt; raises NewtonError on divergence."""
    n = grid.n_cells
    state = state_old.copy()
    for it in range(max_iter + 1):
        resid, jac = assemble_residual(grid, fluid, wells, state, state_old, dt)
        if not np.all(np.isfinite(resid)):
            raise NewtonError("non-finite residual")
        if float(np.max(np.abs(resid))) < tol:
            return state
        if it == max_iter:
            raise NewtonError(f"no convergence in {max_iter} iterations")
        delta = spsolve(jac.tocsc(), -resid)
        if not np.all(np.isfinite(delta)):
            raise NewtonError("linear solve produced non-finite update")
        state.pressure = state.pressure + delta[:n]
        ds = np.clip(delta[n:], -ds_max, ds_max)
        state.saturation = np.clip(state.saturation + ds, 0.0, 1.0)
    raise NewtonError("unreachable")


def newton_solve(grid: EdfmGrid, fluid: FluidModel, wells, state_old: ReservoirState,
                 dt: float, tol: float = 1e-6, max_iter: int = 25,
                 max_cuts: int = 6, ds_max: float = 0.2,
                 diag: dict | None = None) -> ReservoirState:
    """Advance the state by dt, halving the sub-step on Newton failure.

    The cut level only deepens within a call; exceeding max_cuts raises
    NewtonError. If diag is given, integrated well masses (kg) and sub-step
    counts are accumulated into it.
    """
    require(dt >= 0.0, "dt must be non-negative")
    if dt == 0.0:
        return state_old.copy()
    state = state_old
    done, level = 0.0, 0
    while done < dt * (1.0 - 1e-12):
        sub = min(dt / 2 ** level, dt - done)
        try:
            new = _newton_step(grid, fluid, wells, state, sub, tol, max_iter, ds_max)
        except NewtonError as err:
            level += 1
            if level > max_cuts:
                raise NewtonError(
                    f"time-step cut limit ({max_cuts}) exceeded: {err}") from err
            continue
        done += sub
        state = new
        if diag is not None and wells is not None:
            inj, q_w, q_o = well_mass_rates(grid, fluid, wells, state)
            diag["injected_kg"] = diag.get("injected_kg", 0.0) + sub * inj
            diag["produced_kg_w"] = diag.get("produced_kg_w", 0.0) + sub * q_w
            diag["produced_kg_o"] = diag.get("produced_kg_o", 0.0) + sub * q_o
            diag["substeps"] = diag.get("substeps", 0) + 1
            diag["cut_level"] = max(diag.get("cut_level", 0), level)
    return state


def run_schedule(grid: EdfmGrid, fluid: FluidModel, wells: WellSpec,
                 state0: ReservoirState, total_time: float, n_steps: int,
                 tol: float = 1e-6, max_iter: int = 25, max_cuts: int = 6,
                 realization: int = 0) -> SimTrajectory:
    """March n_steps equal report steps and collect states plus per-step
    production diagnostics and a mass-balance audit."""
    wells.validate()
    state0.validate()
    dt = total_time / n_steps
    states = [state0.copy()]
    rates = np.zeros((n_steps, 2))
    balance = []
    state = states[0]
    for step in range(1, n_steps + 1):
        m_w0, m_o0 = cell_masses(grid, fluid, state)
        diag: dict = {}
        try:
            state = newton_solve(grid, fluid, wells, state, dt, tol=tol,
                                 max_iter=max_iter, max_cuts=max_cuts, diag=diag)
        except NewtonError as err:
            raise SimulationError(
                f"realization {realization}, report step {step}: {err}") from err
        state.step = step
        state.validate()
        states.append(state.copy())
        m_w1, m_o1 = cell_masses(grid, fluid, state)
        inj = diag.get("injected_kg", 0.0)
        pw = diag.get("produced_kg_w", 0.0)
        po = diag.get("produced_kg_o", 0.0)
        err_w = abs(float(np.sum(m_w1 - m_w0)) - inj + pw)
        err_o = abs(float(np.sum(m_o1 - m_o0)) + po)
        floor = tol * float(np.sum(grid.volume * grid.porosity))
        balance.append({
            "step": step,
            "injected_kg": inj,
            "produced_kg_w": pw,
            "produced_kg_o": po,
            "rel_err_w": err_w / max(inj, pw, floor),
            "rel_err_o": err_o / max(po, floor),
            "substeps": diag.get("substeps", 0),
            "cut_level": diag.get("cut_level", 0),
        })
        rates[step - 1, 0] = pw / fluid.rho_w_ref / dt
        rates[step - 1, 1] = po / fluid.rho_o_ref / dt
    return SimTrajectory(realization=realization, states=states,
                         producer_rates=rates,
                         injector_rate_m3s=wells.injector_rate_m3s,
                         balance=balance)


@dataclass(frozen=True)
class SimConfig:
    domain: tuple = (500.0, 500.0, 5.0)
    resolution: tuple = (50, 50, 1)
    matrix_porosity: float = 0.25
    matrix_perm_md: float = 50.0
    dfn: DfnConfig = field(default_factory=DfnConfig)
    fluid: FluidModel = field(default_factory=FluidModel)
    p_init_pa: float = 10e6
    s_init: float = 0.2
    bhp_pa: float = 8e6
    injected_pv_fraction: float = 0.5
    total_years: float = 5.0
    n_steps: int = 30
    well_radius_m: float = 0.1
    newton_tol: float = 1e-6
    newton_max_iter: int = 25
    max_cuts: int = 6


def make_wells(grid: EdfmGrid, cfg: SimConfig) -> WellSpec:
    """Rate injector in the lower-left corner cell, BHP producer in the
    upper-right, both in the bottom layer; rate sized so the cumulative
    injected surface volume is a fixed fraction of total pore volume."""
    nx, ny, _ = grid.resolution
    inj = grid.cell_index(0, 0, 0)
    prod = grid.cell_index(nx - 1, ny - 1, 0)
    total_time = cfg.total_years * YEAR_S
    q = cfg.injected_pv_fraction * grid.pore_volume() / total_time
    wells = WellSpec(
        injector_cell=inj, injector_rate_m3s=q,
        producer_cell=prod, producer_bhp_pa=cfg.bhp_pa,
        injector_wi_md_m=peaceman_wi(grid, inj, cfg.well_radius_m),
        producer_wi_md_m=peaceman_wi(grid, prod, cfg.well_radius_m))
    grid.set_wells(inj, prod)
    return wells


def build_realization_grid(seed: int, cfg: SimConfig) -> EdfmGrid:
    network = generate_fracture_network(seed, cfg.dfn)
    grid = build_cartesian_grid(cfg.domain, cfg.resolution,
                                cfg.matrix_porosity, cfg.matrix_perm_md)
    return embed_fractures(grid, network)


def run_realization(seed: int, cfg: SimConfig) -> tuple[EdfmGrid, SimTrajectory]:
    """Full pipeline for one stochastic realization: sample a fracture
    network, embed it, and simulate the waterflood schedule."""
    cfg.fluid.validate()
    grid = build_realization_grid(seed, cfg)
    wells = make_wells(grid, cfg)
    n = grid.n_cells
    state0 = ReservoirState(np.full(n, cfg.p_init_pa), np.full(n, cfg.s_init), 0)
    traj = run_schedule(grid, cfg.fluid, wells, state0,
                        cfg.total_years * YEAR_S, cfg.n_steps,
                        tol=cfg.newton_tol, max_iter=cfg.newton_max_iter,
                        max_cuts=cfg.max_cuts, realization=seed)
    return grid, traj
