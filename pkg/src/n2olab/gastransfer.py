"""Gas-liquid transfer for O2, N2O, NO and N2.

Flux convention: positive = liquid to gas, g/(m3 liquid)/d.  Species
transfer coefficients scale from the tank's oxygen kLa with the square
root of the diffusivity ratio.  Two saturation modes:

* zero headspace: the atmosphere above the tank is fixed at ambient
  composition (ambient N2O/NO effectively zero),
* dynamic headspace: a well-mixed gas compartment per aerated tank,
  flushed by the aeration air flow, sets the saturation concentrations.

Dissolved N2 is treated as stripping against zero ambient backpressure;
the plant never resolves absolute N2 saturation, only the produced
excess, which is what the nitrogen balance needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GAS_SPECIES = ("O2", "N2O", "NO", "N2")

# kLa_species = kLa_O2 * sqrt(D_species / D_O2); literature ratios.
DIFFUSIVITY_RATIO = {"O2": 1.0, "N2O": 0.90, "NO": 0.95, "N2": 0.93}

# Dimensionless liquid/gas partition (C_liq/C_gas at equilibrium, 20 degC).
HENRY_CC = {"N2O": 0.66, "NO": 0.047}

# Ambient gas-phase concentrations; N species in gN/m3 of gas.
AMBIENT_GAS = {"O2": 278.0, "N2O": 4.0e-4, "NO": 0.0, "N2": 0.0}


def o2_saturation(temperature) -> np.ndarray:
    """Dissolved O2 saturation against ambient air, gO2/m3."""
    T = np.asarray(temperature, dtype=float)
    return 14.652 - 0.41022 * T + 7.991e-3 * T**2 - 7.7774e-5 * T**3


def kla_for_species(kla_o2, species: str, diffusivity_ratio: dict | None = None):
    ratios = diffusivity_ratio or DIFFUSIVITY_RATIO
    if species not in ratios:
        raise ConfigError(f"unknown gas species: {species!r}")
    kla_o2 = np.asarray(kla_o2, dtype=float)
    if np.any(kla_o2 < 0):
        raise ConfigError("negative kLa")
    return kla_o2 * np.sqrt(ratios[species])


def saturation_ambient(species: str, temperature):
    """Liquid-phase saturation concentration against ambient air."""
    if species == "O2":
        return o2_saturation(temperature)
    if species in ("N2O", "NO"):
        return HENRY_CC[species] * AMBIENT_GAS[species] * np.ones_like(np.asarray(temperature, float))
    if species == "N2":
        return np.zeros_like(np.asarray(temperature, float))
    raise ConfigError(f"unknown gas species: {species!r}")


def saturation_from_headspace(species: str, temperature, gas_conc):
    """Saturation concentration for a headspace gas-phase concentration."""
    if species == "O2":
        # scale the ambient-air saturation with the headspace O2 level
        return o2_saturation(temperature) * np.asarray(gas_conc) / AMBIENT_GAS["O2"]
    if species in ("N2O", "NO"):
        return HENRY_CC[species] * np.asarray(gas_conc)
    if species == "N2":
        return np.zeros_like(np.asarray(gas_conc, float))
    raise ConfigError(f"unknown gas species: {species!r}")


@dataclass
class HeadspaceState:
    """Gas-phase concentrations above one tank (gN/m3 gas; O2 as gO2/m3)."""

    O2: float = AMBIENT_GAS["O2"]
    N2O: float = AMBIENT_GAS["N2O"]
    NO: float = AMBIENT_GAS["NO"]


def gas_flux(c_liq: float, species: str, kla_o2: float, temperature: float,
             mode: str = "zero_headspace", headspace: HeadspaceState | None = None,
             diffusivity_ratio: dict | None = None) -> float:
    """Transfer flux for one species in one tank, positive to the gas."""
    kla = kla_for_species(kla_o2, species, diffusivity_ratio)
    if mode == "zero_headspace" or species == "N2":
        c_sat = saturation_ambient(species, temperature)
    elif mode == "dynamic_headspace":
        if headspace is None:
            raise ConfigError("dynamic_headspace mode requires a headspace state")
        c_sat = saturation_from_headspace(species, temperature, getattr(headspace, species))
    else:
        raise ConfigError(f"unknown gas-transfer mode: {mode!r}")
    return kla * (np.asarray(c_liq, dtype=float) - c_sat)
