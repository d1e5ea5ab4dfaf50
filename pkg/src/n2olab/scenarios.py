"""Monitoring-campaign scenarios: simulations, disturbances, datasets.

Sixteen scenarios are generated from eight plant simulations.  A scenario
selects a feature set (12/14/21 signals), a target (one-reactor gas,
one-reactor liquid, or site-total gas N2O), a sampling interval, and
optionally a composition rule that combines several simulations (biased
target, multi-year concatenation).  Scenario and simulation definitions
ship as a declarative YAML registry.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .components import IDX, tkn, total_cod, tss
from .errors import ConfigError, SchemaError
from .influent import InfluentModel
from .parameters import draw_perturbation_signs
from .plant import PlantConfig, ReactorSpec, Trajectory

DISTURBANCES = (
    "none",
    "mass_transfer_eq",    # dynamic-headspace gas transfer
    "aerobic_volume",      # aerated volumes x 0.8
    "microbio_non_n2o",    # +-10 % on the 26 non-N2O kinetic parameters
    "microbio_n2o",        # +-20 % on the 17 N2O-associated parameters
    "influent",            # higher N load, warmer, more rain
    "bio_structure",       # alternative AOB N2O structure
)

TARGETS = {
    "gas_ra1": ("n2o_gas", "rA1", "gN/d"),
    "liq_ra1": ("n2o_liq", "rA1", "gN/m3"),
    "gas_tot": ("n2o_gas", "site", "gN/d"),
}

FEATURE_SET_NAMES = ("F12", "F14", "F21")


@dataclass(frozen=True)
class Signal:
    name: str
    location: str
    unit: str

    def token(self) -> str:
        return f"{self.name}@{self.location}[{self.unit}]"


# Sensor placements for the 12-signal base set (config-driven default):
# influent flow/TKN, NH4+NO3 at the end of the anoxic train, NH4+DO in the
# first aerated tank, DO in the second, NO2/NO3/DO/TSS in the last, plus
# the global temperature.
F12_SIGNALS = (
    Signal("flow", "influent", "m3/d"),
    Signal("tkn", "influent", "gN/m3"),
    Signal("nh4", "anx4", "gN/m3"),
    Signal("no3", "anx4", "gN/m3"),
    Signal("nh4", "rA1", "gN/m3"),
    Signal("do", "rA1", "gO2/m3"),
    Signal("do", "rA2", "gO2/m3"),
    Signal("no2", "rA3", "gN/m3"),
    Signal("no3", "rA3", "gN/m3"),
    Signal("do", "rA3", "gO2/m3"),
    Signal("tss", "rA3", "gTSS/m3"),
    Signal("temperature", "site", "degC"),
)

F14_SIGNALS = F12_SIGNALS + (
    Signal("kla_o2", "rA1", "1/d"),
    Signal("cod", "influent", "gCOD/m3"),
)

F21_SIGNALS = F14_SIGNALS + (
    Signal("nh2oh", "rA1", "gN/m3"),
    Signal("no_liq", "rA1", "gN/m3"),
    Signal("ss", "rA1", "gCOD/m3"),
    Signal("si", "rA1", "gCOD/m3"),
    Signal("x_oho", "rA1", "gCOD/m3"),
    Signal("x_aob", "rA1", "gCOD/m3"),
    Signal("x_nob", "rA1", "gCOD/m3"),
)

FEATURE_SETS = {"F12": F12_SIGNALS, "F14": F14_SIGNALS, "F21": F21_SIGNALS}

_STATE_SIGNALS = {
    "nh4": "S_NH4", "no2": "S_NO2", "no3": "S_NO3", "do": "S_O2",
    "nh2oh": "S_NH2OH", "no_liq": "S_NO", "ss": "S_S", "si": "S_I",
    "x_oho": "X_OHO", "x_aob": "X_AOB", "x_nob": "X_NOB",
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One monitoring campaign: simulation source, view, sampling."""

    id: str
    simulation: str            # "1".."8" or "1:6"
    features: str              # F12 | F14 | F21
    target: str                # gas_ra1 | liq_ra1 | gas_tot
    interval_minutes: int = 15
    composition: str = "none"  # none | biased_target | six_year_concat
    description: str = ""

    def __post_init__(self):
        if self.features not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set: {self.features}")
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target: {self.target}")
        if self.interval_minutes not in (15, 60, 180):
            raise ConfigError(f"unsupported sampling interval: {self.interval_minutes}")
        if self.composition not in ("none", "biased_target", "six_year_concat"):
            raise ConfigError(f"unknown composition rule: {self.composition}")

    def required_simulations(self) -> list[str]:
        if self.composition == "biased_target":
            return ["1", "2", "3", "4", "5", "6"]
        if self.composition == "six_year_concat":
            return ["1", "2", "3", "4", "5", "6"]
        return [self.simulation]

    def to_dict(self) -> dict:
        return {
            "id": self.id, "simulation": self.simulation, "features": self.features,
            "target": self.target, "interval_minutes": self.interval_minutes,
            "composition": self.composition, "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**d)


@dataclass(frozen=True)
class SimulationSpec:
    """One plant run: a disturbance applied to the shared base setup."""

    id: str
    disturbance: str
    seed: int = 42             # influent seed
    perturbation_seed: int = 0
    composite_of: tuple = ()   # simulation ids this one is derived from

    def to_dict(self) -> dict:
        return {"id": self.id, "disturbance": self.disturbance, "seed": self.seed,
                "perturbation_seed": self.perturbation_seed,
                "composite_of": list(self.composite_of)}


SIMULATIONS = {
    "1": SimulationSpec("1", "none"),
    "2": SimulationSpec("2", "mass_transfer_eq"),
    "3": SimulationSpec("3", "aerobic_volume"),
    "4": SimulationSpec("4", "microbio_non_n2o", perturbation_seed=104),
    "5": SimulationSpec("5", "microbio_n2o", perturbation_seed=105),
    "6": SimulationSpec("6", "influent"),
    # the biased-measurement campaign reuses runs 1-6, no own plant run
    "7": SimulationSpec("7", "none", composite_of=("1", "2", "3", "4", "5", "6")),
    "8": SimulationSpec("8", "bio_structure"),
}


def registry() -> list[ScenarioSpec]:
    """The sixteen shipped scenario definitions."""
    text = importlib.resources.files("n2olab").joinpath("data/scenarios.yaml").read_text()
    import yaml

    doc = yaml.safe_load(text)
    specs = [ScenarioSpec.from_dict(row) for row in doc["scenarios"]]
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate scenario ids in registry")
    return specs


def scenario_by_id(scenario_id: str) -> ScenarioSpec:
    for spec in registry():
        if spec.id == scenario_id:
            return spec
    raise ConfigError(f"unknown scenario id: {scenario_id!r}")


def apply_disturbance(config: PlantConfig, influent: InfluentModel,
                      disturbance: str, seed: int = 0):
    """Return (config, influent, manifest-info) for one disturbance."""
    info: dict = {"disturbance": disturbance, "seed": seed}
    if disturbance == "none":
        return config, influent, info
    if disturbance == "mass_transfer_eq":
        return config.with_updates(gas_mode="dynamic_headspace"), influent, info
    if disturbance == "aerobic_volume":
        tanks = tuple(
            t if not t.aerated else ReactorSpec(t.name, 0.8 * t.volume, t.aerated, t.do_setpoint)
            for t in config.tanks)
        return config.with_updates(tanks=tanks), influent, info
    if disturbance == "microbio_non_n2o":
        signs = draw_perturbation_signs("kinetic", seed)
        info["signs"] = signs
        info["relative"] = 0.10
        return (config.with_updates(params=config.params.perturbed("kinetic", 0.10, signs)),
                influent, info)
    if disturbance == "microbio_n2o":
        signs = draw_perturbation_signs("n2o", seed)
        info["signs"] = signs
        info["relative"] = 0.20
        return (config.with_updates(params=config.params.perturbed("n2o", 0.20, signs)),
                influent, info)
    if disturbance == "influent":
        conc = dict(influent.base_concentrations)
        conc["S_NH4"] = 1.15 * conc["S_NH4"]
        shifted = influent.with_updates(
            base_concentrations=conc,
            temperature_mean=influent.temperature_mean + 2.0,
            rain_events_per_year=2.0 * influent.rain_events_per_year,
        )
        info["n_load_factor"] = 1.15
        info["temperature_shift"] = 2.0
        info["rain_factor"] = 2.0
        return config, shifted, info
    if disturbance == "bio_structure":
        return config.with_updates(variant="alternative_aob"), influent, info
    raise ConfigError(f"unknown disturbance: {disturbance!r}")


def simulation_setup(sim: SimulationSpec, base_config: PlantConfig | None = None,
                     base_influent: InfluentModel | None = None):
    """Config and influent for one registry simulation."""
    config = base_config if base_config is not None else PlantConfig(name=f"sim{sim.id}")
    influent = base_influent if base_influent is not None else InfluentModel(seed=sim.seed)
    if sim.composite_of:
        return config, influent, {"composite_of": list(sim.composite_of)}
    return apply_disturbance(config, influent, sim.disturbance, sim.perturbation_seed)


# ---------------------------------------------------------------------------
# Dataset extraction


@dataclass
class TabularDataset:
    """Timestamped feature matrix + target vector, ready for regression."""

    time: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_tokens: list
    target_token: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape != (len(self.time), len(self.feature_tokens)):
            raise SchemaError("feature matrix shape does not match tokens/time")
        if len(self.y) != len(self.time):
            raise SchemaError("target length does not match time")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise SchemaError("dataset contains missing or non-finite values")
        if np.any(np.diff(self.time) <= 0):
            raise SchemaError("time column must be strictly increasing")

    @property
    def n_rows(self) -> int:
        return len(self.time)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.feature_tokens)
        df.insert(0, "time[d]", self.time)
        df[self.target_token] = self.y
        return df

    def save_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, meta: dict | None = None) -> "TabularDataset":
        cols = list(df.columns)
        if not cols or cols[0] != "time[d]":
            raise SchemaError("first column must be 'time[d]'")
        if len(cols) < 3:
            raise SchemaError("expected at least one feature column and a target column")
        values = df.to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            raise SchemaError("dataset contains missing or non-finite values")
        return cls(time=values[:, 0], X=values[:, 1:-1], y=values[:, -1],
                   feature_tokens=cols[1:-1], target_token=cols[-1], meta=meta or {})

    @classmethod
    def load_csv(cls, path) -> "TabularDataset":
        return cls.from_frame(pd.read_csv(path))


def _composition_params(traj: Trajectory) -> dict:
    params = traj.meta.get("params")
    if params is None:
        raise SchemaError("trajectory lacks parameter metadata")
    return params


def extract_channel(traj: Trajectory, signal: Signal) -> np.ndarray:
    p = _composition_params(traj)
    name, loc = signal.name, signal.location
    if name == "flow" and loc == "influent":
        return traj.influent_flow
    if name == "tkn" and loc == "influent":
        return tkn(traj.influent_conc, p)
    if name == "cod" and loc == "influent":
        return total_cod(traj.influent_conc)
    if name == "temperature":
        return traj.temperature
    if name == "kla_o2":
        return traj.kla[:, traj.tank_index(loc)]
    if name == "tss":
        return tss(traj.states[:, traj.tank_index(loc), :], p)
    if name in _STATE_SIGNALS:
        return traj.state_channel(_STATE_SIGNALS[name], loc)
    raise SchemaError(f"no channel for signal {signal.token()}")


def extract_target(traj: Trajectory, target: str) -> np.ndarray:
    if target == "gas_ra1":
        return traj.gas_n2o[:, traj.tank_index("rA1")]
    if target == "liq_ra1":
        return traj.state_channel("S_N2O", "rA1")
    if target == "gas_tot":
        return traj.gas_total()
    raise SchemaError(f"unknown target: {target!r}")


def target_token(target: str) -> str:
    name, loc, unit = TARGETS[target]
    return f"{name}@{loc}[{unit}]"


def extract_dataset(trajectories: dict, spec: ScenarioSpec) -> TabularDataset:
    """Build the scenario's dataset from the simulations it references.

    ``trajectories`` maps simulation id -> Trajectory.  Downsampling
    decimates at phase 0; composition rules follow the registry.
    """
    signals = FEATURE_SETS[spec.features]
    step = spec.interval_minutes // 15

    def table_for(sim_id: str):
        traj = trajectories.get(sim_id)
        if traj is None:
            raise ConfigError(f"scenario {spec.id} needs simulation {sim_id}")
        X = np.column_stack([extract_channel(traj, s) for s in signals])
        return traj.t, X, extract_target(traj, spec.target)

    if spec.composition == "none":
        t, X, y = table_for(spec.simulation)
        sl = slice(None, None, step)
        dataset_time, X, y = t[sl], X[sl], y[sl]
    elif spec.composition == "biased_target":
        t, X, _ = table_for("1")
        targets = [table_for(s)[2] for s in ("2", "3", "4", "5", "6")]
        y = np.mean(targets, axis=0)
        sl = slice(None, None, step)
        dataset_time, X, y = t[sl], X[sl], y[sl]
    elif spec.composition == "six_year_concat":
        year = None
        parts = []
        for k, sim_id in enumerate(("1", "2", "3", "4", "5", "6")):
            t, X, y = table_for(sim_id)
            year = 365.0 if year is None else year
            parts.append((t + k * year, X, y))
        t = np.concatenate([p[0] for p in parts])
        X = np.vstack([p[1] for p in parts])
        y = np.concatenate([p[2] for p in parts])
        keep = slice(None, None, 6 * step)
        dataset_time, X, y = t[keep], X[keep], y[keep]
    else:  # pragma: no cover - guarded in ScenarioSpec
        raise ConfigError(spec.composition)

    sims = spec.required_simulations()
    meta = {
        "scenario": spec.to_dict(),
        "simulations": sims,
        "config_hashes": {s: trajectories[s].config_hash for s in sims},
    }
    return TabularDataset(
        time=dataset_time, X=X, y=y,
        feature_tokens=[s.token() for s in signals],
        target_token=target_token(spec.target),
        meta=meta,
    )
