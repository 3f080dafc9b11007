"""Two-phase fluid model: Corey relative permeabilities and slightly
compressible phase densities.

Defaults match a water/oil pair at reservoir conditions (viscosities in cp,
densities in kg/m^3 at the reference pressure, compressibilities per psi).
"""

from dataclasses import dataclass

import numpy as np

from .units import ATM_PA, PSI_TO_PA
from .validation import require


@dataclass(frozen=True)
class FluidModel:
    mu_w_cp: float = 1.0
    mu_o_cp: float = 5.0
    rho_w_ref: float = 1000.0
    rho_o_ref: float = 850.0
    c_w_per_psi: float = 3e-6
    c_o_per_psi: float = 1e-5
    corey_n: float = 2.0
    s_wc: float = 0.2
    s_or: float = 0.2
    krw_end: float = 1.0
    kro_end: float = 1.0
    p_ref_pa: float = ATM_PA
    # optional capillary hook: callable S_w -> (p_cow in Pa, dp_cow/dS_w).
    # None means identically zero, which is what data generation uses.
    p_cow: object = None

    def validate(self):
        require(self.mu_w_cp > 0 and self.mu_o_cp > 0, "viscosities must be positive")
        require(self.rho_w_ref > 0 and self.rho_o_ref > 0, "densities must be positive")
        require(0 <= self.s_wc < 1 and 0 <= self.s_or < 1, "end saturations in [0, 1)")
        require(self.s_wc + self.s_or < 1, "mobile saturation window is empty")
        require(self.corey_n >= 1, "Corey exponent must be >= 1")

    @property
    def mobile_window(self) -> float:
        return 1.0 - self.s_wc - self.s_or

    def effective_saturation(self, s_w):
        s_w = np.asarray(s_w, dtype=float)
        return np.clip((s_w - self.s_wc) / self.mobile_window, 0.0, 1.0)

    def relperm(self, s_w):
        """(krw, kro) and their s_w derivatives, clamped outside the
        mobile window. Returns (krw, kro, dkrw, dkro)."""
        s_w = np.asarray(s_w, dtype=float)
        se = (s_w - self.s_wc) / self.mobile_window
        inside = (se > 0.0) & (se < 1.0)
        se_c = np.clip(se, 0.0, 1.0)
        n = self.corey_n
        krw = self.krw_end * se_c ** n
        kro = self.kro_end * (1.0 - se_c) ** n
        dse = 1.0 / self.mobile_window
        dkrw = np.where(inside, self.krw_end * n * se_c ** (n - 1.0) * dse, 0.0)
        dkro = np.where(inside, -self.kro_end * n * (1.0 - se_c) ** (n - 1.0) * dse, 0.0)
        return krw, kro, dkrw, dkro

    def density(self, phase: str, p_pa):
        """Phase density rho_ref * exp(c (p - p_ref)) and its pressure
        derivative. Returns (rho, drho_dp) in kg/m^3 and kg/m^3/Pa."""
        p_pa = np.asarray(p_pa, dtype=float)
        if phase == "water":
            rho_ref, c = self.rho_w_ref, self.c_w_per_psi / PSI_TO_PA
        elif phase == "oil":
            rho_ref, c = self.rho_o_ref, self.c_o_per_psi / PSI_TO_PA
        else:
            raise ValueError(f"unknown phase {phase!r}")
        rho = rho_ref * np.exp(c * (p_pa - self.p_ref_pa))
        return rho, c * rho

    def capillary(self, s_w):
        """Oil-water capillary pressure p_cow and its S_w derivative."""
        s_w = np.asarray(s_w, dtype=float)
        if self.p_cow is None:
            return np.zeros_like(s_w), np.zeros_like(s_w)
        pc, dpc = self.p_cow(s_w)
        return np.asarray(pc, dtype=float), np.asarray(dpc, dtype=float)

    def viscosity_pas(self, phase: str) -> float:
        if phase == "water":
            return self.mu_w_cp * 1e-3
        if phase == "oil":
            return self.mu_o_cp * 1e-3
        raise ValueError(f"unknown phase {phase!r}")

    def fractional_flow(self, s_w):
        """Water fractional flow ignoring gravity, f_w = lam_w/(lam_w+lam_o)."""
        krw, kro, dkrw, dkro = self.relperm(s_w)
        lw = krw / self.mu_w_cp
        lo = kro / self.mu_o_cp
        f = lw / (lw + lo)
        dlw = dkrw / self.mu_w_cp
        dlo = dkro / self.mu_o_cp
        df = (dlw * lo - lw * dlo) / (lw + lo) ** 2
        return f, df
