"""State-vector components of the activated-sludge N2O model.

All concentrations in g/m3 of the measurement base noted per component
(gN for nitrogen species, gO2 for dissolved oxygen, gCOD for organics and
biomass).  Temperature (degC) is carried alongside the state but is an
exogenous input, never integrated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

# Canonical component order.  Everything downstream (stoichiometry rows,
# trajectory arrays, CSV exports) uses this order.
COMPONENTS = (
    "S_O2",     # dissolved oxygen                 [gO2/m3]
    "S_NH4",    # ammonium/ammonia nitrogen        [gN/m3]
    "S_NH2OH",  # hydroxylamine nitrogen           [gN/m3]
    "S_NO2",    # nitrite nitrogen                 [gN/m3]
    "S_NO3",    # nitrate nitrogen                 [gN/m3]
    "S_NO",     # nitric oxide nitrogen            [gN/m3]
    "S_N2O",    # dissolved nitrous oxide nitrogen [gN/m3]
    "S_N2",     # dissolved dinitrogen             [gN/m3]
    "S_S",      # readily biodegradable COD        [gCOD/m3]
    "S_I",      # inert soluble COD                [gCOD/m3]
    "X_S",      # slowly biodegradable COD         [gCOD/m3]
    "X_I",      # inert particulate COD            [gCOD/m3]
    "X_AOB",    # ammonia-oxidiser biomass         [gCOD/m3]
    "X_NOB",    # nitrite-oxidiser biomass         [gCOD/m3]
    "X_OHO",    # ordinary heterotroph biomass     [gCOD/m3]
)

N_COMP = len(COMPONENTS)
IDX = {name: i for i, name in enumerate(COMPONENTS)}

# Electron content of the nitrogen species expressed as oxygen demand
# relative to ammonium (gCOD per gN, exact rationals so conservation
# checks close to 1e-9).  Oxidising NH4 (-III) to state z transfers
# (z + 3) electrons per N, i.e. 8*(z+3)/14 gO2 per gN.
E_NH2OH = 16.0 / 14.0   # N(-I)
E_N2 = 24.0 / 14.0      # N(0)
E_N2O = 32.0 / 14.0     # N(+I)
E_NO = 40.0 / 14.0      # N(+II)
E_NO2 = 48.0 / 14.0     # N(+III)
E_NO3 = 64.0 / 14.0     # N(+V)

# COD conservation weights: organics count as their COD, O2 as negative
# COD, oxidised N species as the negative of the oxygen already invested
# in them (NH4 is the zero reference).
COD_WEIGHTS = np.zeros(N_COMP)
COD_WEIGHTS[IDX["S_O2"]] = -1.0
COD_WEIGHTS[IDX["S_NH2OH"]] = -E_NH2OH
COD_WEIGHTS[IDX["S_NO2"]] = -E_NO2
COD_WEIGHTS[IDX["S_NO3"]] = -E_NO3
COD_WEIGHTS[IDX["S_NO"]] = -E_NO
COD_WEIGHTS[IDX["S_N2O"]] = -E_N2O
COD_WEIGHTS[IDX["S_N2"]] = -E_N2
for _c in ("S_S", "S_I", "X_S", "X_I", "X_AOB", "X_NOB", "X_OHO"):
    COD_WEIGHTS[IDX[_c]] = 1.0

GAS_SPECIES = ("O2", "N2O", "NO", "N2")
GAS_TO_COMPONENT = {"O2": "S_O2", "N2O": "S_N2O", "NO": "S_NO", "N2": "S_N2"}

# Components whose mass a clarifier splits like suspended solids.
PARTICULATES = ("X_S", "X_I", "X_AOB", "X_NOB", "X_OHO")
PARTICULATE_IDX = np.array([IDX[c] for c in PARTICULATES])


def nitrogen_weights(params) -> np.ndarray:
    """Per-component nitrogen content (gN per unit of component).

    Organic fractions carry the N contents defined in the parameter set;
    dissolved N species are measured as gN, so their weight is one.
    """
    w = np.zeros(N_COMP)
    for c in ("S_NH4", "S_NH2OH", "S_NO2", "S_NO3", "S_NO", "S_N2O", "S_N2"):
        w[IDX[c]] = 1.0
    w[IDX["S_S"]] = params["i_NSS"]
    w[IDX["S_I"]] = params["i_NSI"]
    w[IDX["X_S"]] = params["i_NXS"]
    w[IDX["X_I"]] = params["i_NXI"]
    for c in ("X_AOB", "X_NOB", "X_OHO"):
        w[IDX[c]] = params["i_NBM"]
    return w


def tss(conc: np.ndarray, params) -> np.ndarray:
    """Total suspended solids, derived from the particulate CODs."""
    conc = np.asarray(conc)
    return params["i_TSS"] * conc[..., PARTICULATE_IDX].sum(axis=-1)


def total_cod(conc: np.ndarray) -> np.ndarray:
    """Total COD of a stream (soluble + particulate organics)."""
    conc = np.asarray(conc)
    cols = [IDX[c] for c in ("S_S", "S_I", "X_S", "X_I", "X_AOB", "X_NOB", "X_OHO")]
    return conc[..., cols].sum(axis=-1)


def total_nitrogen(conc: np.ndarray, params) -> np.ndarray:
    """Total nitrogen of a stream (TKN + oxidised + dissolved gas N)."""
    return np.asarray(conc) @ nitrogen_weights(params)


def tkn(conc: np.ndarray, params) -> np.ndarray:
    """Kjeldahl nitrogen: ammonium plus organically bound N."""
    conc = np.asarray(conc)
    p = params
    return (
        conc[..., IDX["S_NH4"]]
        + conc[..., IDX["S_NH2OH"]]
        + p["i_NSS"] * conc[..., IDX["S_S"]]
        + p["i_NSI"] * conc[..., IDX["S_I"]]
        + p["i_NXS"] * conc[..., IDX["X_S"]]
        + p["i_NXI"] * conc[..., IDX["X_I"]]
        + p["i_NBM"] * (conc[..., IDX["X_AOB"]] + conc[..., IDX["X_NOB"]] + conc[..., IDX["X_OHO"]])
    )


@dataclass
class ComponentState:
    """Concentrations in one completely mixed tank plus its temperature."""

    S_O2: float = 0.0
    S_NH4: float = 0.0
    S_NH2OH: float = 0.0
    S_NO2: float = 0.0
    S_NO3: float = 0.0
    S_NO: float = 0.0
    S_N2O: float = 0.0
    S_N2: float = 0.0
    S_S: float = 0.0
    S_I: float = 0.0
    X_S: float = 0.0
    X_I: float = 0.0
    X_AOB: float = 0.0
    X_NOB: float = 0.0
    X_OHO: float = 0.0
    temperature: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"non-finite value for {f.name}: {v}")
            if f.name != "temperature" and v < 0.0:
                raise ValueError(f"negative concentration for {f.name}: {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in COMPONENTS], dtype=float)

    @classmethod
    def from_array(cls, conc: np.ndarray, temperature: float = 20.0) -> "ComponentState":
        conc = np.asarray(conc, dtype=float)
        if conc.shape != (N_COMP,):
            raise ValueError(f"expected {N_COMP} components, got shape {conc.shape}")
        return cls(**dict(zip(COMPONENTS, conc.tolist())), temperature=temperature)

    def tss(self, params) -> float:
        return float(tss(self.as_array(), params))
