"""Kinetic and composition parameters of the biological model.

Values ship in a versioned YAML file (``data/default_params.yaml``) so a
changed default is always a visible diff.  Each parameter carries a tag:

* ``n2o``         -- rate/affinity/inhibition constants of the NO/N2O
                     turnover processes (17 parameters),
* ``kinetic``     -- all other rate-law constants (26 parameters),
* ``composition`` -- yields, element contents, partition fractions,
* ``temperature`` -- Arrhenius-type base factors per guild.

Scenario perturbations act on one tag class at a time and never touch the
others, so the ``n2o``/``kinetic`` partition must stay exhaustive and
disjoint over the rate-law constants.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError

N2O_TAG = "n2o"
KINETIC_TAG = "kinetic"
COMPOSITION_TAG = "composition"
TEMPERATURE_TAG = "temperature"


@dataclass(frozen=True)
class ParamSpec:
    unit: str
    tag: str
    description: str


# Schema: name -> (unit, tag, description).  Order is the file order.
PARAM_SPECS: dict[str, ParamSpec] = {
    # --- ammonia oxidisers -------------------------------------------------
    "q_AOB_AMO": ParamSpec("gN/gCOD/d", KINETIC_TAG, "max specific NH4->NH2OH oxidation rate"),
    "K_AOB_NH4": ParamSpec("gN/m3", KINETIC_TAG, "NH4 affinity of the NH4->NH2OH step"),
    "K_AOB_O2_AMO": ParamSpec("gO2/m3", KINETIC_TAG, "O2 affinity of the NH4->NH2OH step"),
    "mu_AOB_HAO": ParamSpec("1/d", KINETIC_TAG, "max AOB growth rate on NH2OH oxidation"),
    "K_AOB_NH2OH": ParamSpec("gN/m3", KINETIC_TAG, "NH2OH affinity of the NH2OH->NO step"),
    "K_AOB_O2_HAO": ParamSpec("gO2/m3", KINETIC_TAG, "O2 affinity of the NH2OH->NO and NO->NO2 steps"),
    "q_AOB_HAOstar": ParamSpec("gN/gCOD/d", KINETIC_TAG, "max specific NO->NO2 oxidation rate"),
    "K_AOB_HAO_NO": ParamSpec("gN/m3", KINETIC_TAG, "NO affinity of the autotrophic NO->NO2 step"),
    "b_AOB": ParamSpec("1/d", KINETIC_TAG, "AOB decay rate"),
    # --- nitrite oxidisers -------------------------------------------------
    "mu_NOB": ParamSpec("1/d", KINETIC_TAG, "max NOB growth rate"),
    "K_NOB_NO2": ParamSpec("gN/m3", KINETIC_TAG, "NO2 affinity of NOB growth"),
    "K_NOB_O2": ParamSpec("gO2/m3", KINETIC_TAG, "O2 affinity of NOB growth"),
    "K_NOB_NH4": ParamSpec("gN/m3", KINETIC_TAG, "NH4 (biomass N source) affinity of NOB growth"),
    "b_NOB": ParamSpec("1/d", KINETIC_TAG, "NOB decay rate"),
    # --- heterotrophs, aerobic + hydrolysis ---------------------------------
    "mu_OHO": ParamSpec("1/d", KINETIC_TAG, "max heterotrophic growth rate"),
    "K_OHO_SS": ParamSpec("gCOD/m3", KINETIC_TAG, "substrate affinity of aerobic growth"),
    "K_OHO_O2": ParamSpec("gO2/m3", KINETIC_TAG, "O2 affinity of aerobic growth"),
    "K_OHO_NH4": ParamSpec("gN/m3", KINETIC_TAG, "NH4 (biomass N source) affinity of growth"),
    "b_OHO": ParamSpec("1/d", KINETIC_TAG, "heterotroph decay rate"),
    "k_hyd": ParamSpec("gCOD/gCOD/d", KINETIC_TAG, "max specific hydrolysis rate"),
    "K_X": ParamSpec("gCOD/gCOD", KINETIC_TAG, "half-saturation of the X_S/X_OHO hydrolysis ratio"),
    "eta_hyd": ParamSpec("-", KINETIC_TAG, "anoxic hydrolysis reduction factor"),
    # --- heterotrophs, anoxic respiration ------------------------------------
    "K_OHO_O2_inh": ParamSpec("gO2/m3", KINETIC_TAG, "O2 inhibition constant of the anoxic steps"),
    "eta_NAR": ParamSpec("-", KINETIC_TAG, "anoxic reduction factor, NO3->NO2"),
    "K_OHO_NO3": ParamSpec("gN/m3", KINETIC_TAG, "NO3 affinity of the NO3->NO2 step"),
    "K_OHO_SS_anox": ParamSpec("gCOD/m3", KINETIC_TAG, "substrate affinity of the anoxic steps"),
    # --- N2O-associated: autotrophic pathways --------------------------------
    "q_AOB_NN": ParamSpec("gN/gCOD/d", N2O_TAG, "max specific N2O production, NH2OH/NO pathway"),
    "K_AOB_NN_NO": ParamSpec("gN/m3", N2O_TAG, "NO affinity of the NH2OH/NO N2O pathway"),
    "K_AOB_NH2OH_N2O": ParamSpec("gN/m3", N2O_TAG, "NH2OH affinity of both autotrophic N2O pathways"),
    "q_AOB_ND": ParamSpec("gN/gCOD/d", N2O_TAG, "max specific N2O production, nitrite-reduction pathway"),
    "K_AOB_ND_NO2": ParamSpec("gN/m3", N2O_TAG, "NO2 affinity of the nitrite-reduction N2O pathway"),
    "K_AOB_ND_O2": ParamSpec("gO2/m3", N2O_TAG, "O2 half-saturation of the substrate-inhibited O2 term"),
    "K_AOB_I_O2": ParamSpec("gO2/m3", N2O_TAG, "O2 inhibition constant of the substrate-inhibited O2 term"),
    "K_AOB_I_O2_alt": ParamSpec("gO2/m3", N2O_TAG, "O2 inhibition constant of the alternative AOB variant"),
    # --- N2O-associated: heterotrophic NO/N2O turnover -----------------------
    "eta_NIR": ParamSpec("-", N2O_TAG, "anoxic reduction factor, NO2->NO"),
    "K_OHO_NO2": ParamSpec("gN/m3", N2O_TAG, "NO2 affinity of the NO2->NO step"),
    "K_OHO_NO": ParamSpec("gN/m3", N2O_TAG, "NO affinity of the NO->N2O step"),
    "eta_NOR": ParamSpec("-", N2O_TAG, "anoxic reduction factor, NO->N2O"),
    "K_OHO_I_NO_NIR": ParamSpec("gN/m3", N2O_TAG, "noncompetitive NO inhibition of the NO2->NO step"),
    "K_OHO_I_NO_NOR": ParamSpec("gN/m3", N2O_TAG, "noncompetitive NO inhibition of the NO->N2O step"),
    "K_OHO_I_NO_NOS": ParamSpec("gN/m3", N2O_TAG, "noncompetitive NO inhibition of the N2O->N2 step"),
    "eta_NOS": ParamSpec("-", N2O_TAG, "anoxic reduction factor, N2O->N2"),
    "K_OHO_N2O": ParamSpec("gN/m3", N2O_TAG, "N2O affinity of the N2O->N2 step"),
    # --- temperature correction ----------------------------------------------
    "theta_AOB": ParamSpec("-", TEMPERATURE_TAG, "Arrhenius base, all AOB processes"),
    "theta_NOB": ParamSpec("-", TEMPERATURE_TAG, "Arrhenius base, all NOB processes"),
    "theta_OHO": ParamSpec("-", TEMPERATURE_TAG, "Arrhenius base, heterotroph processes and hydrolysis"),
    # --- composition ----------------------------------------------------------
    "Y_AOB": ParamSpec("gCOD/gN", COMPOSITION_TAG, "AOB yield on NH2OH oxidised"),
    "Y_NOB": ParamSpec("gCOD/gN", COMPOSITION_TAG, "NOB yield on NO2 oxidised"),
    "Y_OHO": ParamSpec("gCOD/gCOD", COMPOSITION_TAG, "heterotroph aerobic yield"),
    "Y_OHO_anox": ParamSpec("gCOD/gCOD", COMPOSITION_TAG, "heterotroph anoxic yield"),
    "f_XI": ParamSpec("-", COMPOSITION_TAG, "inert fraction of decayed biomass"),
    "i_NBM": ParamSpec("gN/gCOD", COMPOSITION_TAG, "N content of biomass"),
    "i_NXS": ParamSpec("gN/gCOD", COMPOSITION_TAG, "N content of slowly biodegradable COD"),
    "i_NXI": ParamSpec("gN/gCOD", COMPOSITION_TAG, "N content of inert particulate COD"),
    "i_NSS": ParamSpec("gN/gCOD", COMPOSITION_TAG, "N content of readily biodegradable COD"),
    "i_NSI": ParamSpec("gN/gCOD", COMPOSITION_TAG, "N content of inert soluble COD"),
    "i_TSS": ParamSpec("gTSS/gCOD", COMPOSITION_TAG, "TSS per particulate COD"),
}

PARAM_NAMES = tuple(PARAM_SPECS)


class KineticParameterSet:
    """Named, validated parameter map with tag-aware perturbation."""

    def __init__(self, values: dict[str, float]):
        unknown = set(values) - set(PARAM_SPECS)
        if unknown:
            raise ConfigError(f"unknown parameters: {sorted(unknown)}")
        missing = set(PARAM_SPECS) - set(values)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)}")
        self._values = {name: float(values[name]) for name in PARAM_NAMES}
        self.validate()

    def validate(self) -> None:
        for name, v in self._values.items():
            if not np.isfinite(v) or v <= 0.0:
                raise ConfigError(f"parameter {name} must be finite and > 0, got {v}")

    def __getitem__(self, name: str) -> float:
        return self._values[name]

    def __eq__(self, other) -> bool:
        return isinstance(other, KineticParameterSet) and self._values == other._values

    def as_dict(self) -> dict[str, float]:
        return dict(self._values)

    def names_with_tag(self, tag: str) -> list[str]:
        return [n for n, s in PARAM_SPECS.items() if s.tag == tag]

    def replace(self, **updates: float) -> "KineticParameterSet":
        vals = dict(self._values)
        for name, v in updates.items():
            if name not in PARAM_SPECS:
                raise ConfigError(f"unknown parameter: {name}")
            vals[name] = float(v)
        return KineticParameterSet(vals)

    def perturbed(self, tag: str, relative: float, signs: dict[str, int]) -> "KineticParameterSet":
        """Scale every parameter of ``tag`` by (1 + sign*relative).

        ``signs`` must cover exactly the tagged names with values in
        {-1, +1}; parameters of other tags are untouched.
        """
        names = self.names_with_tag(tag)
        if set(signs) != set(names):
            raise ConfigError(f"perturbation signs must cover exactly the {tag!r} parameters")
        vals = dict(self._values)
        for name in names:
            s = signs[name]
            if s not in (-1, 1):
                raise ConfigError(f"perturbation sign for {name} must be -1 or +1")
            vals[name] = vals[name] * (1.0 + s * relative)
        return KineticParameterSet(vals)

    # --- file round trip ----------------------------------------------------

    def to_yaml(self) -> str:
        lines = [
            "# n2olab biological parameter set",
            "# Each entry: name: {value: ..., tag: ...}   # unit | description",
            "# tags: n2o (NO/N2O turnover), kinetic (other rate laws),",
            "#       temperature (Arrhenius bases), composition (yields, contents)",
            "version: 1",
            "parameters:",
        ]
        for name in PARAM_NAMES:
            spec = PARAM_SPECS[name]
            v = self._values[name]
            lines.append(
                f"  {name}: {{value: {v:.10g}, tag: {spec.tag}}}"
                f"  # {spec.unit} | {spec.description}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_yaml())

    @classmethod
    def from_yaml(cls, text: str) -> "KineticParameterSet":
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict) or "parameters" not in doc:
            raise ConfigError("parameter file must contain a 'parameters' mapping")
        values = {}
        for name, entry in doc["parameters"].items():
            if name not in PARAM_SPECS:
                raise ConfigError(f"unknown parameter in file: {name}")
            values[name] = float(entry["value"])
            tag = entry.get("tag")
            if tag != PARAM_SPECS[name].tag:
                raise ConfigError(f"parameter {name}: tag {tag!r} does not match schema "
                                  f"{PARAM_SPECS[name].tag!r}")
        return cls(values)

    @classmethod
    def load(cls, path) -> "KineticParameterSet":
        with open(path) as fh:
            return cls.from_yaml(fh.read())


def default_parameters() -> KineticParameterSet:
    """The shipped defaults from ``data/default_params.yaml``."""
    text = importlib.resources.files("n2olab").joinpath("data/default_params.yaml").read_text()
    return KineticParameterSet.from_yaml(text)


def draw_perturbation_signs(tag: str, seed: int) -> dict[str, int]:
    """Deterministic +/-1 pattern over the parameters of ``tag``."""
    names = [n for n, s in PARAM_SPECS.items() if s.tag == tag]
    rng = np.random.default_rng(seed)
    return {n: int(s) for n, s in zip(names, rng.choice((-1, 1), size=len(names)))}
