"""Dataset statistics and emission accounting.

Signal-dynamics measures: SAD (sum of absolute first differences) and SSD
(sum of squared second differences), both normalised by the aerated
volume of the measured scope and by the monitoring duration.  This keeps
the units physically anchored; the same convention is applied to every
dataset so comparisons stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .components import tkn
from .errors import ConfigError, SchemaError


def _series(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigError("expected a one-dimensional series")
    return x


def sad(x) -> float:
    """Sum of absolute consecutive differences."""
    x = _series(x)
    if len(x) < 2:
        raise ConfigError("SAD needs at least two samples")
    return float(np.abs(np.diff(x)).sum())


def ssd(x) -> float:
    """Sum of squared second differences (discrete curvature energy)."""
    x = _series(x)
    if len(x) < 3:
        raise ConfigError("SSD needs at least three samples")
    d2 = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return float((d2 * d2).sum())


def normalize_dynamics(sad_value: float, ssd_value: float, volume: float,
                       duration: float) -> tuple[float, float]:
    """(SADn, SSDn): dynamics per aerated volume and monitoring duration."""
    if volume <= 0 or duration <= 0:
        raise ConfigError("volume and duration must be > 0")
    return sad_value / (volume * duration), ssd_value / (volume * duration)


def pearson(x, y) -> float:
    x, y = _series(x), _series(y)
    if len(x) != len(y):
        raise ConfigError("series lengths differ")
    if len(x) < 3:
        raise ConfigError("need at least three samples")
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def autocorr(x, lag: int) -> float:
    x = _series(x)
    if lag < 0 or lag >= len(x) - 2:
        raise ConfigError(f"lag {lag} out of range for n={len(x)}")
    if lag == 0:
        return 1.0
    return pearson(x[:-lag], x[lag:])


def skewness(x) -> float:
    """Standardised third moment (population form)."""
    x = _series(x)
    if len(x) < 3:
        raise ConfigError("need at least three samples")
    s = x.std()
    if s == 0.0:
        return float("nan")
    return float(((x - x.mean()) ** 3).mean() / s**3)


def coefficient_of_variation(x) -> float:
    x = _series(x)
    m = x.mean()
    if m <= 0:
        return float("nan")
    return float(100.0 * x.std() / m)


@dataclass
class SignalSummary:
    mean: float
    stdev: float
    cv_pct: float
    skewness: float
    sad: float
    ssd: float
    sadn: float
    ssdn: float
    autocorrelation: dict
    volume: float
    duration: float


def summarize_signal(x, volume: float, duration: float,
                     autocorr_lags=(1, 4, 12)) -> SignalSummary:
    x = _series(x)
    s, s2 = sad(x), ssd(x)
    sadn, ssdn = normalize_dynamics(s, s2, volume, duration)
    return SignalSummary(
        mean=float(x.mean()), stdev=float(x.std()),
        cv_pct=coefficient_of_variation(x), skewness=skewness(x),
        sad=s, ssd=s2, sadn=sadn, ssdn=ssdn,
        autocorrelation={int(l): autocorr(x, int(l)) for l in autocorr_lags},
        volume=volume, duration=duration,
    )


# ---------------------------------------------------------------------------
# Emission accounting on trajectories


def emission_factor(traj) -> float:
    """Site emission factor: N2O-N emitted / influent Kjeldahl-N load, %."""
    params = traj.meta.get("params")
    if params is None:
        raise SchemaError("trajectory lacks parameter metadata")
    load = traj.influent_flow * tkn(traj.influent_conc, params)
    total_load = np.trapezoid(load, traj.t)
    if total_load <= 0:
        raise ConfigError("influent nitrogen load is zero")
    emitted = np.trapezoid(traj.gas_total(), traj.t)
    return float(100.0 * emitted / total_load)


def location_emission_factors(traj) -> dict:
    params = traj.meta["params"]
    load = np.trapezoid(traj.influent_flow * tkn(traj.influent_conc, params), traj.t)
    out = {}
    for i, name in enumerate(traj.tank_names):
        out[name] = float(100.0 * np.trapezoid(traj.gas_n2o[:, i], traj.t) / load)
    out["settler"] = float(100.0 * np.trapezoid(traj.settler_n2o, traj.t) / load)
    return out


@dataclass
class EmissionReport:
    mean_emissions_kg: dict       # per location, kgN/d
    contribution_pct: dict        # shares of the site total
    emission_factor_pct: float
    no_to_n2o_pct: float          # gaseous NO versus N2O emission
    pathway_shares_pct: dict      # NN / ND / HD of gross production
    per_tank_pathway_pct: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = [{"location": k, "mean_kgN_per_d": v,
                 "contribution_pct": self.contribution_pct[k]}
                for k, v in self.mean_emissions_kg.items()]
        return pd.DataFrame(rows)


def emission_report(traj, stoich) -> EmissionReport:
    tot = traj.gas_total()
    mean_tot = float(tot.mean())
    means = {}
    for i, name in enumerate(traj.tank_names):
        means[name] = float(traj.gas_n2o[:, i].mean()) / 1e3
    means["settler"] = float(traj.settler_n2o.mean()) / 1e3
    means["site"] = mean_tot / 1e3
    contrib = {k: 100.0 * v / (mean_tot / 1e3) for k, v in means.items() if k != "site"}

    attr = traj.attribution(stoich)
    vols = traj.volumes
    nn = float((attr.nn.mean(axis=0) * vols).sum())
    nd = float((attr.nd.mean(axis=0) * vols).sum())
    hd = float((attr.hd_production.mean(axis=0) * vols).sum())
    gross = nn + nd + hd
    shares = {"NN": 100.0 * nn / gross, "ND": 100.0 * nd / gross, "HD": 100.0 * hd / gross}

    per_tank = {}
    shares_t = 100.0 * np.nan_to_num(
        np.stack([attr.nn.mean(axis=0), attr.nd.mean(axis=0),
                  attr.hd_production.mean(axis=0)]), nan=0.0)
    tot_t = shares_t.sum(axis=0)
    for i, name in enumerate(traj.tank_names):
        if tot_t[i] > 0:
            per_tank[name] = {"NN": shares_t[0, i] / tot_t[i] * 100.0,
                              "ND": shares_t[1, i] / tot_t[i] * 100.0,
                              "HD": shares_t[2, i] / tot_t[i] * 100.0}

    no_ratio = 100.0 * float(traj.gas_no_total().mean()) / mean_tot
    return EmissionReport(
        mean_emissions_kg=means,
        contribution_pct=contrib,
        emission_factor_pct=emission_factor(traj),
        no_to_n2o_pct=no_ratio,
        pathway_shares_pct=shares,
        per_tank_pathway_pct=per_tank,
    )


def dynamics_table(traj, aerated_volume: float | None = None) -> pd.DataFrame:
    """Distribution/dynamics rows for the site total and each aerated tank.

    Normalising volume: the whole aerated volume for the site signal, the
    single tank volume for per-reactor signals.
    """
    duration = float(traj.t[-1] - traj.t[0])
    if aerated_volume is None:
        aerated_volume = float(traj.volumes[traj.aerated].sum())
    tot = traj.gas_total()
    rows = []

    def add_row(name, x, volume):
        s = summarize_signal(x, volume, duration)
        rows.append({
            "signal": name,
            "mean_kgN_per_d": s.mean / 1e3,
            "stdev_kgN_per_d": s.stdev / 1e3,
            "cv_pct": s.cv_pct,
            "sadn": s.sadn,
            "ssdn": s.ssdn,
            "skewness": s.skewness,
            "corr_to_site": pearson(x, tot),
            "mean_per_volume": s.mean / volume,
        })

    add_row("TOT", tot, aerated_volume)
    for i, name in enumerate(traj.tank_names):
        if traj.aerated[i]:
            add_row(name, traj.gas_n2o[:, i], float(traj.volumes[i]))
    return pd.DataFrame(rows)


def dynamics_table_text(df: pd.DataFrame) -> str:
    return df.to_string(index=False, float_format=lambda v: f"{v:.4g}")
