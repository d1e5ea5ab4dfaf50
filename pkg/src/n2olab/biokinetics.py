"""Process rates, stoichiometry and pathway accounting of the biology.

The nitrogen turnover follows the two-pathway autotrophic N2O structure
(three sequential ammonia-oxidation steps NH4->NH2OH->NO->NO2 plus N2O
production from NH2OH/NO and from nitrite reduction) coupled to four-step
heterotrophic denitrification NO3->NO2->NO->N2O->N2.  Stoichiometric
coefficients are derived from electron balances, so every process row
conserves nitrogen and COD exactly.

Rate conventions: growth processes are expressed per gCOD of biomass
formed, uncoupled oxidation/production steps per gN turned over, decay
and hydrolysis per gCOD.  The stoichiometry matrix carries the unit
bookkeeping; ``derivative`` is a plain matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import (
    COD_WEIGHTS,
    E_NH2OH,
    E_NO,
    E_NO2,
    E_NO3,
    IDX,
    N_COMP,
    nitrogen_weights,
)
from .errors import ConfigError, StructuralError
from .parameters import KineticParameterSet

PROCESSES = (
    "aob_amo",      # NH4 -> NH2OH                      [gN/m3/d]
    "aob_hao",      # NH2OH -> NO with AOB growth       [gCOD/m3/d]
    "aob_haostar",  # NO -> NO2                         [gN/m3/d]
    "aob_nn",       # N2O production from NH2OH + NO    [gN/m3/d]
    "aob_nd",       # N2O production from NH2OH + NO2   [gN/m3/d]
    "nob_growth",   # NO2 -> NO3 with NOB growth        [gCOD/m3/d]
    "oho_aerobic",  # aerobic heterotrophic growth      [gCOD/m3/d]
    "oho_nar",      # anoxic growth, NO3 -> NO2         [gCOD/m3/d]
    "oho_nir",      # anoxic growth, NO2 -> NO          [gCOD/m3/d]
    "oho_nor",      # anoxic growth, NO  -> N2O         [gCOD/m3/d]
    "oho_nos",      # anoxic growth, N2O -> N2          [gCOD/m3/d]
    "aob_decay",    # biomass -> X_S/X_I                [gCOD/m3/d]
    "nob_decay",    #                                   [gCOD/m3/d]
    "oho_decay",    #                                   [gCOD/m3/d]
    "hydrolysis",   # X_S -> S_S                        [gCOD/m3/d]
)
N_PROC = len(PROCESSES)
PROC = {name: i for i, name in enumerate(PROCESSES)}

VARIANTS = ("baseline_two_pathway", "alternative_aob")

# Monod factor protecting biomass N uptake in the AOB growth step; fixed
# plumbing, not a calibration handle.
_K_NUTRIENT = 0.01

# gN of N-oxide turned over per gCOD electron-equivalent, by step.
_DN_NAR = E_NO3 - E_NO2   # 16/14
_DN_STEP = E_NO2 - E_NO   # 8/14, identical for NO2->NO, NO->N2O, N2O->N2


def monod(S: float, K: float):
    """Saturation factor S/(K+S) in [0, 1]."""
    if not np.all(np.isfinite(K)) or np.any(np.asarray(K) <= 0):
        raise ConfigError(f"Monod half-saturation must be finite and > 0, got {K}")
    if np.any(np.asarray(S) < 0):
        raise ValueError(f"negative concentration in monod(): {S}")
    return S / (K + S)


def haldane(S: float, K_S: float, K_I: float):
    """Substrate-inhibited saturation S/(K_S + S + S^2/K_I).

    Maximised at S = sqrt(K_S*K_I); recovers monod(S, K_S) as K_I -> inf.
    """
    if not np.all(np.isfinite(K_S)) or np.any(np.asarray(K_S) <= 0):
        raise ConfigError(f"Haldane K_S must be finite and > 0, got {K_S}")
    if np.any(np.asarray(K_I) <= 0):
        raise ConfigError(f"Haldane K_I must be > 0, got {K_I}")
    if np.any(np.asarray(S) < 0):
        raise ValueError(f"negative concentration in haldane(): {S}")
    return S / (K_S + S + S * S / K_I)


@dataclass(frozen=True)
class StoichiometryMatrix:
    """Process x component coefficients plus conservation weights."""

    matrix: np.ndarray            # (N_PROC, N_COMP)
    nitrogen_weights: np.ndarray  # (N_COMP,) gN per unit component
    cod_weights: np.ndarray       # (N_COMP,) gCOD per unit, O2 negative

    def conservation_residuals(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-process nitrogen and COD balance residuals (should be ~0)."""
        return self.matrix @ self.nitrogen_weights, self.matrix @ self.cod_weights

    def n2o_column(self) -> np.ndarray:
        return self.matrix[:, IDX["S_N2O"]]

    def no_column(self) -> np.ndarray:
        return self.matrix[:, IDX["S_NO"]]


def build_stoichiometry(params: KineticParameterSet) -> StoichiometryMatrix:
    p = params
    M = np.zeros((N_PROC, N_COMP))

    def put(proc, **coeffs):
        for comp, v in coeffs.items():
            M[PROC[proc], IDX[comp]] = v

    Y_A, Y_N, Y_H, Y_HD = p["Y_AOB"], p["Y_NOB"], p["Y_OHO"], p["Y_OHO_anox"]
    i_NBM, i_NSS = p["i_NBM"], p["i_NSS"]

    # Ammonia oxidisers.  The growth step carries the yield; the two
    # uncoupled oxidations and the N2O productions are per gN.
    put("aob_amo", S_NH4=-1.0, S_NH2OH=1.0, S_O2=-E_NH2OH)
    # Growth-step O2 from the COD balance: 1 - (E_NO - E_NH2OH)/Y_A.
    put("aob_hao", S_NH2OH=-1.0 / Y_A, S_NO=1.0 / Y_A, S_NH4=-i_NBM,
        S_O2=1.0 - (E_NO - E_NH2OH) / Y_A, X_AOB=1.0)
    put("aob_haostar", S_NO=-1.0, S_NO2=1.0, S_O2=-(E_NO2 - E_NO))
    # N2O from NH2OH oxidation coupled to NO reduction: per gN N2O,
    # 1 gN NO and 1/4 gN NH2OH consumed, 1/4 gN NO2 produced.
    put("aob_nn", S_N2O=1.0, S_NO=-1.0, S_NH2OH=-0.25, S_NO2=0.25)
    # N2O from NO2 reduction with NH2OH as electron donor: per gN N2O,
    # 1/2 gN from each.
    put("aob_nd", S_N2O=1.0, S_NH2OH=-0.5, S_NO2=-0.5)

    put("nob_growth", S_NO2=-1.0 / Y_N, S_NO3=1.0 / Y_N, S_NH4=-i_NBM,
        S_O2=1.0 - (E_NO3 - E_NO2) / Y_N, X_NOB=1.0)

    put("oho_aerobic", S_S=-1.0 / Y_H, S_O2=-(1.0 - Y_H) / Y_H,
        S_NH4=i_NSS / Y_H - i_NBM, X_OHO=1.0)
    dn = (1.0 - Y_HD) / Y_HD
    put("oho_nar", S_S=-1.0 / Y_HD, S_NO3=-dn / _DN_NAR, S_NO2=dn / _DN_NAR,
        S_NH4=i_NSS / Y_HD - i_NBM, X_OHO=1.0)
    put("oho_nir", S_S=-1.0 / Y_HD, S_NO2=-dn / _DN_STEP, S_NO=dn / _DN_STEP,
        S_NH4=i_NSS / Y_HD - i_NBM, X_OHO=1.0)
    put("oho_nor", S_S=-1.0 / Y_HD, S_NO=-dn / _DN_STEP, S_N2O=dn / _DN_STEP,
        S_NH4=i_NSS / Y_HD - i_NBM, X_OHO=1.0)
    put("oho_nos", S_S=-1.0 / Y_HD, S_N2O=-dn / _DN_STEP, S_N2=dn / _DN_STEP,
        S_NH4=i_NSS / Y_HD - i_NBM, X_OHO=1.0)

    f_XI = p["f_XI"]
    nh4_release = p["i_NBM"] - f_XI * p["i_NXI"] - (1.0 - f_XI) * p["i_NXS"]
    for proc, bio in (("aob_decay", "X_AOB"), ("nob_decay", "X_NOB"), ("oho_decay", "X_OHO")):
        put(proc, X_S=1.0 - f_XI, X_I=f_XI, S_NH4=nh4_release)
        M[PROC[proc], IDX[bio]] = -1.0

    put("hydrolysis", X_S=-1.0, S_S=1.0, S_NH4=p["i_NXS"] - p["i_NSS"])

    return StoichiometryMatrix(
        matrix=M,
        nitrogen_weights=nitrogen_weights(p),
        cod_weights=COD_WEIGHTS.copy(),
    )


@dataclass
class ProcessRateSet:
    """Rates of the 15 model processes for one or many states."""

    values: np.ndarray  # (..., N_PROC)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[..., PROC[name]]

    def as_array(self) -> np.ndarray:
        return self.values


def _rate_array(C: np.ndarray, T: np.ndarray, params: KineticParameterSet,
                variant: str) -> np.ndarray:
    """Vectorised rate kernel over (..., N_COMP) state arrays.

    Concentrations are floored at zero inside the saturation factors so
    that solver round-off below zero cannot flip a rate negative; the
    state itself is never modified.
    """
    p = params
    C = np.maximum(np.asarray(C, dtype=float), 0.0)
    T = np.asarray(T, dtype=float)

    def c(name):
        return C[..., IDX[name]]

    def mon(name, K):
        s = c(name)
        return s / (K + s)

    def inh(name, K):
        return K / (K + c(name))

    fA = p["theta_AOB"] ** (T - 20.0)
    fN = p["theta_NOB"] ** (T - 20.0)
    fH = p["theta_OHO"] ** (T - 20.0)

    x_aob, x_nob, x_oho = c("X_AOB"), c("X_NOB"), c("X_OHO")

    r = np.zeros(C.shape[:-1] + (N_PROC,))
    r[..., PROC["aob_amo"]] = (p["q_AOB_AMO"] * fA * mon("S_O2", p["K_AOB_O2_AMO"])
                               * mon("S_NH4", p["K_AOB_NH4"]) * x_aob)
    r[..., PROC["aob_hao"]] = (p["mu_AOB_HAO"] * fA * mon("S_O2", p["K_AOB_O2_HAO"])
                               * mon("S_NH2OH", p["K_AOB_NH2OH"])
                               * mon("S_NH4", _K_NUTRIENT) * x_aob)
    r[..., PROC["aob_haostar"]] = (p["q_AOB_HAOstar"] * fA * mon("S_O2", p["K_AOB_O2_HAO"])
                                   * mon("S_NO", p["K_AOB_HAO_NO"]) * x_aob)
    r[..., PROC["aob_nn"]] = (p["q_AOB_NN"] * fA * mon("S_NH2OH", p["K_AOB_NH2OH_N2O"])
                              * mon("S_NO", p["K_AOB_NN_NO"]) * x_aob)
    if variant == "baseline_two_pathway":
        o2 = c("S_O2")
        f_o2_nd = o2 / (p["K_AOB_ND_O2"] + o2 + o2 * o2 / p["K_AOB_I_O2"])
    elif variant == "alternative_aob":
        f_o2_nd = inh("S_O2", p["K_AOB_I_O2_alt"])
    else:
        raise ConfigError(f"unknown model variant: {variant!r}")
    r[..., PROC["aob_nd"]] = (p["q_AOB_ND"] * fA * mon("S_NH2OH", p["K_AOB_NH2OH_N2O"])
                              * mon("S_NO2", p["K_AOB_ND_NO2"]) * f_o2_nd * x_aob)

    r[..., PROC["nob_growth"]] = (p["mu_NOB"] * fN * mon("S_O2", p["K_NOB_O2"])
                                  * mon("S_NO2", p["K_NOB_NO2"])
                                  * mon("S_NH4", p["K_NOB_NH4"]) * x_nob)

    r[..., PROC["oho_aerobic"]] = (p["mu_OHO"] * fH * mon("S_S", p["K_OHO_SS"])
                                   * mon("S_O2", p["K_OHO_O2"])
                                   * mon("S_NH4", p["K_OHO_NH4"]) * x_oho)
    anox = (p["mu_OHO"] * fH * mon("S_S", p["K_OHO_SS_anox"])
            * inh("S_O2", p["K_OHO_O2_inh"]) * mon("S_NH4", p["K_OHO_NH4"]) * x_oho)
    r[..., PROC["oho_nar"]] = p["eta_NAR"] * anox * mon("S_NO3", p["K_OHO_NO3"])
    r[..., PROC["oho_nir"]] = (p["eta_NIR"] * anox * mon("S_NO2", p["K_OHO_NO2"])
                               * inh("S_NO", p["K_OHO_I_NO_NIR"]))
    r[..., PROC["oho_nor"]] = (p["eta_NOR"] * anox * mon("S_NO", p["K_OHO_NO"])
                               * inh("S_NO", p["K_OHO_I_NO_NOR"]))
    r[..., PROC["oho_nos"]] = (p["eta_NOS"] * anox * mon("S_N2O", p["K_OHO_N2O"])
                               * inh("S_NO", p["K_OHO_I_NO_NOS"]))

    r[..., PROC["aob_decay"]] = p["b_AOB"] * fA * x_aob
    r[..., PROC["nob_decay"]] = p["b_NOB"] * fN * x_nob
    r[..., PROC["oho_decay"]] = p["b_OHO"] * fH * x_oho
    ratio = c("X_S") / (x_oho + 1e-12)
    r[..., PROC["hydrolysis"]] = (p["k_hyd"] * fH * ratio / (p["K_X"] + ratio)
                                  * (mon("S_O2", p["K_OHO_O2"])
                                     + p["eta_hyd"] * inh("S_O2", p["K_OHO_O2_inh"]))
                                  * x_oho)
    return r


def process_rates(state, params: KineticParameterSet,
                  variant: str = "baseline_two_pathway") -> ProcessRateSet:
    """All process rates for a tank state (ComponentState or array)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant: {variant!r}")
    if hasattr(state, "as_array"):
        C = state.as_array()
        T = state.temperature
    else:
        C = np.asarray(state, dtype=float)
        T = 20.0
    return ProcessRateSet(_rate_array(C, np.asarray(T), params, variant))


def derivative(rates: ProcessRateSet, stoich: StoichiometryMatrix) -> np.ndarray:
    """Biological component derivatives, dC/dt = rates . matrix."""
    r = rates.as_array()
    if r.shape[-1] != stoich.matrix.shape[0]:
        raise StructuralError(
            f"rate vector has {r.shape[-1]} processes, stoichiometry {stoich.matrix.shape[0]}")
    if stoich.matrix.shape[1] != N_COMP:
        raise StructuralError(
            f"stoichiometry has {stoich.matrix.shape[1]} components, expected {N_COMP}")
    return r @ stoich.matrix


@dataclass
class PathwayAttribution:
    """Instantaneous N2O production split between the three pathways.

    ``hd_consumption`` is the heterotrophic N2O reduction (a sink); the
    three production terms minus it equal the net biological dS_N2O/dt.
    """

    nn: np.ndarray
    nd: np.ndarray
    hd_production: np.ndarray
    hd_consumption: np.ndarray

    def net(self) -> np.ndarray:
        return self.nn + self.nd + self.hd_production - self.hd_consumption

    def production_shares(self) -> np.ndarray:
        """Fractions of gross production (nn, nd, hd), summing to 1."""
        tot = self.nn + self.nd + self.hd_production
        tot = np.where(tot > 0, tot, np.nan)
        return np.stack([self.nn / tot, self.nd / tot, self.hd_production / tot], axis=-1)


def pathway_attribution(rates: ProcessRateSet,
                        stoich: StoichiometryMatrix) -> PathwayAttribution:
    """Split the biological N2O source terms by producing pathway.

    Uses the same stoichiometric coefficients as ``derivative``, so the
    attribution sums to the net biological N2O term exactly.
    """
    col = stoich.n2o_column()
    r = rates.as_array()
    return PathwayAttribution(
        nn=r[..., PROC["aob_nn"]] * col[PROC["aob_nn"]],
        nd=r[..., PROC["aob_nd"]] * col[PROC["aob_nd"]],
        hd_production=r[..., PROC["oho_nor"]] * col[PROC["oho_nor"]],
        hd_consumption=-r[..., PROC["oho_nos"]] * col[PROC["oho_nos"]],
    )


@dataclass
class NOLoopDiagnostics:
    """Per-tank averages of the NO-coupled process rates.

    Ratios are percentages with the NH2OH->NO step as the 100 % reference
    (NaN where that average rate is zero).  ``nor_nir_fraction`` is the
    share of heterotrophically produced NO consumed again
    heterotrophically; the remainder is available to the autotrophic
    NO->NO2 oxidation, which is what inflates it above its in-series
    supply.
    """

    tank_names: list[str]
    amo_over_hao: np.ndarray        # %
    haostar_over_hao: np.ndarray    # %
    nor_nir_fraction: np.ndarray    # % of NIR-produced NO consumed by NOR
    nn_share: np.ndarray            # % of gross N2O production
    nd_share: np.ndarray
    hd_share: np.ndarray
    amo_rate: np.ndarray            # gN/m3/d averages
    hao_rate: np.ndarray
    haostar_rate: np.ndarray
    nir_no_production: np.ndarray
    nor_no_consumption: np.ndarray


def no_loop_diagnostics(mean_rates: np.ndarray, stoich: StoichiometryMatrix,
                        params: KineticParameterSet,
                        tank_names: list[str] | None = None) -> NOLoopDiagnostics:
    """Structural diagnostics from trajectory-averaged rates per tank.

    ``mean_rates`` has shape (n_tanks, N_PROC) in the process units used
    throughout (growth steps per gCOD).  All comparisons are made on gN
    fluxes via the stoichiometry, so they are consistent with the state
    derivatives by construction.
    """
    mean_rates = np.atleast_2d(np.asarray(mean_rates, dtype=float))
    if mean_rates.shape[1] != N_PROC:
        raise StructuralError(f"expected {N_PROC} process columns, got {mean_rates.shape[1]}")
    if tank_names is None:
        tank_names = [f"tank{i + 1}" for i in range(mean_rates.shape[0])]

    no_col = stoich.no_column()
    amo = mean_rates[:, PROC["aob_amo"]]
    hao = mean_rates[:, PROC["aob_hao"]] * no_col[PROC["aob_hao"]]      # gN NO produced
    haostar = mean_rates[:, PROC["aob_haostar"]]                        # gN NO consumed
    nir = mean_rates[:, PROC["oho_nir"]] * no_col[PROC["oho_nir"]]      # gN NO produced
    nor = mean_rates[:, PROC["oho_nor"]] * (-no_col[PROC["oho_nor"]])   # gN NO consumed

    with np.errstate(divide="ignore", invalid="ignore"):
        amo_over_hao = np.where(hao > 0, 100.0 * amo / hao, np.nan)
        haostar_over_hao = np.where(hao > 0, 100.0 * haostar / hao, np.nan)
        nor_nir = np.where(nir > 0, 100.0 * nor / nir, np.nan)

    attr = pathway_attribution(ProcessRateSet(mean_rates), stoich)
    shares = 100.0 * attr.production_shares()

    return NOLoopDiagnostics(
        tank_names=list(tank_names),
        amo_over_hao=amo_over_hao,
        haostar_over_hao=haostar_over_hao,
        nor_nir_fraction=nor_nir,
        nn_share=shares[:, 0],
        nd_share=shares[:, 1],
        hd_share=shares[:, 2],
        amo_rate=amo,
        hao_rate=hao,
        haostar_rate=haostar,
        nir_no_production=nir,
        nor_no_consumption=nor,
    )
