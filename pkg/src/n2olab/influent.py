"""Dynamic influent surrogate: harmonics + seeded rain events + noise.

Domestic pollutant *loads* (not concentrations) carry the diurnal/weekly
harmonics and the stochastic terms, so yearly mean loads stay at their
configured base values and rain dilutes concentrations automatically.
A constant clean infiltration flow is added on top.  Everything is
precomputed on a uniform grid from a single seed, so the same
(config, seed) pair always yields the bit-identical series.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .components import IDX, N_COMP
from .errors import ConfigError

DEFAULT_BASE_CONCENTRATIONS = {
    # g/m3 at base domestic flow
    "S_NH4": 28.0,
    "S_S": 105.0,
    "S_I": 30.0,
    "X_S": 205.0,
    "X_I": 45.0,
    "X_OHO": 25.0,
    "S_NO3": 0.3,
}

_SOLUBLE_GROUP = ("S_S", "S_I", "S_NH4", "S_NO3")
_PARTICULATE_GROUP = ("X_S", "X_I", "X_OHO")


@dataclass(frozen=True)
class Harmonic:
    amplitude: float
    period_d: float
    phase_d: float

    def factor(self, t):
        return self.amplitude * np.cos(2.0 * np.pi * (t - self.phase_d) / self.period_d)


@dataclass(frozen=True)
class InfluentModel:
    """Configuration of the influent generator (frozen, hashable-ish)."""

    q_base: float = 20648.0                 # m3/d domestic dry-weather flow
    infiltration_fraction: float = 0.12     # clean flow, fraction of q_base
    base_concentrations: dict = field(default_factory=lambda: dict(DEFAULT_BASE_CONCENTRATIONS))
    flow_harmonics: tuple = (Harmonic(0.25, 1.0, 0.58), Harmonic(0.08, 0.5, 0.90),
                             Harmonic(0.05, 7.0, 2.2))
    nh4_harmonics: tuple = (Harmonic(0.32, 1.0, 0.54), Harmonic(0.10, 0.5, 0.86),
                            Harmonic(0.05, 7.0, 2.2))
    organic_harmonics: tuple = (Harmonic(0.22, 1.0, 0.60), Harmonic(0.07, 0.5, 0.92),
                                Harmonic(0.06, 7.0, 2.2))
    temperature_mean: float = 15.0          # degC
    temperature_amplitude: float = 5.0
    temperature_phase_d: float = 210.0      # warmest day of year
    rain_events_per_year: float = 22.0
    rain_duration_range: tuple = (0.15, 1.5)      # d
    rain_peak_range: tuple = (1.4, 3.2)           # flow multiplier at event peak
    rain_flush_soluble: float = 0.15              # load gain exponent during rain
    rain_flush_particulate: float = 0.45
    noise_sigma_flow: float = 0.06
    noise_sigma_load: float = 0.15
    noise_tau_d: float = 0.04               # OU correlation time
    noise_sigma_fast: float = 0.10          # pumping-scale surges
    noise_tau_fast_d: float = 0.01
    aeration_sigma: float = 0.24            # blower/valve delivery variability
    aeration_tau_d: float = 0.02
    aeration_channels: int = 8              # independent per-tank factors
    seed: int = 42
    horizon_days: float = 1020.0
    grid_per_day: int = 96

    def validate(self) -> None:
        if self.q_base <= 0:
            raise ConfigError("q_base must be > 0")
        for hs in (self.flow_harmonics, self.nh4_harmonics, self.organic_harmonics):
            if sum(abs(h.amplitude) for h in hs) > 0.9:
                raise ConfigError("harmonic amplitudes sum above 0.9; flow could go negative")
        if self.temperature_mean - self.temperature_amplitude < 2.0:
            raise ConfigError("temperature sinusoid dips below 2 degC")
        if min(self.base_concentrations.values()) < 0:
            raise ConfigError("negative base concentration")

    def with_updates(self, **kw) -> "InfluentModel":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "q_base": self.q_base,
            "infiltration_fraction": self.infiltration_fraction,
            "base_concentrations": dict(self.base_concentrations),
            "flow_harmonics": [[h.amplitude, h.period_d, h.phase_d] for h in self.flow_harmonics],
            "nh4_harmonics": [[h.amplitude, h.period_d, h.phase_d] for h in self.nh4_harmonics],
            "organic_harmonics": [[h.amplitude, h.period_d, h.phase_d] for h in self.organic_harmonics],
            "temperature_mean": self.temperature_mean,
            "temperature_amplitude": self.temperature_amplitude,
            "temperature_phase_d": self.temperature_phase_d,
            "rain_events_per_year": self.rain_events_per_year,
            "rain_duration_range": list(self.rain_duration_range),
            "rain_peak_range": list(self.rain_peak_range),
            "rain_flush_soluble": self.rain_flush_soluble,
            "rain_flush_particulate": self.rain_flush_particulate,
            "noise_sigma_flow": self.noise_sigma_flow,
            "noise_sigma_load": self.noise_sigma_load,
            "noise_tau_d": self.noise_tau_d,
            "noise_sigma_fast": self.noise_sigma_fast,
            "noise_tau_fast_d": self.noise_tau_fast_d,
            "aeration_sigma": self.aeration_sigma,
            "aeration_tau_d": self.aeration_tau_d,
            "aeration_channels": self.aeration_channels,
            "seed": self.seed,
            "horizon_days": self.horizon_days,
            "grid_per_day": self.grid_per_day,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InfluentModel":
        d = dict(d)
        for key in ("flow_harmonics", "nh4_harmonics", "organic_harmonics"):
            if key in d:
                d[key] = tuple(Harmonic(*h) for h in d[key])
        for key in ("rain_duration_range", "rain_peak_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _ou_series(rng: np.random.Generator, n: int, sigma: float, rho: float) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples on the grid."""
    x = np.empty(n)
    x[0] = sigma * rng.standard_normal()
    innov = sigma * np.sqrt(1.0 - rho * rho) * rng.standard_normal(n - 1)
    for k in range(1, n):
        x[k] = rho * x[k - 1] + innov[k - 1]
    return x


class InfluentSeries:
    """Precomputed influent grids for one InfluentModel."""

    def __init__(self, model: InfluentModel):
        model.validate()
        self.model = model
        m = model
        dt = 1.0 / m.grid_per_day
        n = int(round(m.horizon_days * m.grid_per_day)) + 1
        t = np.arange(n) * dt
        self.t0, self.dt, self.n = 0.0, dt, n

        rng = np.random.default_rng(m.seed)

        # Rain multiplier: superposition of raised-cosine bumps.
        n_events = rng.poisson(m.rain_events_per_year * m.horizon_days / 365.0)
        starts = np.sort(rng.uniform(0.0, m.horizon_days, size=n_events))
        durations = rng.uniform(*m.rain_duration_range, size=n_events)
        peaks = rng.uniform(*m.rain_peak_range, size=n_events)
        rain = np.ones(n)
        for s, d, pk in zip(starts, durations, peaks):
            lo = max(int(np.ceil(s / dt)), 0)
            hi = min(int(np.floor((s + d) / dt)), n - 1)
            if hi <= lo:
                continue
            tt = t[lo:hi + 1]
            rain[lo:hi + 1] += (pk - 1.0) * np.sin(np.pi * (tt - s) / d) ** 2
        self.rain = rain
        self.rain_events = [(float(s), float(d), float(pk))
                            for s, d, pk in zip(starts, durations, peaks)]

        rho = np.exp(-dt / m.noise_tau_d)
        rho_f = np.exp(-dt / m.noise_tau_fast_d)
        sig_f = m.noise_sigma_fast
        ou_flow = _ou_series(rng, n, m.noise_sigma_flow, rho) + _ou_series(rng, n, sig_f, rho_f)
        ou_nh4 = _ou_series(rng, n, m.noise_sigma_load, rho) + _ou_series(rng, n, sig_f, rho_f)
        ou_org = _ou_series(rng, n, m.noise_sigma_load, rho) + _ou_series(rng, n, sig_f, rho_f)

        def harm(hs):
            return 1.0 + sum(h.factor(t) for h in hs)

        v_flow = (m.noise_sigma_flow ** 2 + sig_f ** 2) / 2.0
        v_load = (m.noise_sigma_load ** 2 + sig_f ** 2) / 2.0
        fac_flow = harm(m.flow_harmonics) * np.exp(ou_flow - v_flow)
        fac_nh4 = harm(m.nh4_harmonics) * np.exp(ou_nh4 - v_load)
        fac_org = harm(m.organic_harmonics) * np.exp(ou_org - v_load)

        q_inf = m.infiltration_fraction * m.q_base
        self.q = m.q_base * fac_flow * rain + q_inf

        conc = np.zeros((n, N_COMP))
        for name, c0 in m.base_concentrations.items():
            if name not in IDX:
                raise ConfigError(f"unknown influent component: {name}")
            if name == "S_NH4":
                fac, flush = fac_nh4, m.rain_flush_soluble
            elif name in _SOLUBLE_GROUP:
                fac, flush = fac_org, m.rain_flush_soluble
            elif name in _PARTICULATE_GROUP:
                fac, flush = fac_org, m.rain_flush_particulate
            else:
                fac, flush = 1.0, 0.0
            load = m.q_base * c0 * fac * rain ** flush   # g/d
            conc[:, IDX[name]] = load / self.q
        self.conc = conc

        self.temperature = (m.temperature_mean + m.temperature_amplitude
                            * np.cos(2.0 * np.pi * (t - m.temperature_phase_d) / 365.0))

        if np.any(self.q <= 0) or np.any(conc < 0):
            raise ConfigError("influent generator produced non-positive flow or concentration")

        # multiplicative aeration-delivery factors, one channel per
        # (potential) aerated tank
        rho_a = np.exp(-dt / m.aeration_tau_d)
        sig_a = m.aeration_sigma
        self.aeration = np.exp(np.column_stack(
            [_ou_series(rng, n, sig_a, rho_a) for _ in range(m.aeration_channels)]
        ) - sig_a ** 2 / 2.0)

        # Catmull-Rom slopes for C1-continuous sampling; kinked forcing
        # would force the stiff solver onto the grid step.
        self._grid = np.column_stack([self.q, self.temperature, self.conc, self.aeration])
        g = self._grid
        slopes = np.empty_like(g)
        slopes[1:-1] = (g[2:] - g[:-2]) / 2.0
        slopes[0] = g[1] - g[0]
        slopes[-1] = g[-1] - g[-2]
        self._slopes = slopes

    # --- uniform-grid sampling (O(1), used inside the ODE right-hand side) ---

    def _hermite(self, x):
        k = int(x)
        if k < 0:
            k = 0
            x = 0.0
        elif k >= self.n - 1:
            k = self.n - 2
            x = float(self.n - 1)
        s = x - k
        g, m = self._grid, self._slopes
        s2 = s * s
        s3 = s2 * s
        vals = ((2 * s3 - 3 * s2 + 1) * g[k] + (s3 - 2 * s2 + s) * m[k]
                + (-2 * s3 + 3 * s2) * g[k + 1] + (s3 - s2) * m[k + 1])
        return vals

    def sample(self, t: float):
        """(flow m3/d, concentration vector, temperature) at time t."""
        vals = self._hermite((t - self.t0) / self.dt)
        return vals[0], vals[2: 2 + N_COMP], vals[1]

    def sample_aeration(self, t: float) -> np.ndarray:
        vals = self._hermite((t - self.t0) / self.dt)
        return vals[2 + N_COMP:]

    def sample_many(self, t: np.ndarray):
        t = np.asarray(t, dtype=float)
        x = np.clip((t - self.t0) / self.dt, 0.0, self.n - 1 - 1e-9)
        k = x.astype(int)
        s = (x - k)[:, None]
        g, m = self._grid, self._slopes
        s2 = s * s
        s3 = s2 * s
        vals = ((2 * s3 - 3 * s2 + 1) * g[k] + (s3 - 2 * s2 + s) * m[k]
                + (-2 * s3 + 3 * s2) * g[k + 1] + (s3 - s2) * m[k + 1])
        return vals[:, 0], vals[:, 2: 2 + N_COMP], vals[:, 1]

    def sample_aeration_many(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.clip((t - self.t0) / self.dt, 0.0, self.n - 1 - 1e-9)
        k = x.astype(int)
        s = (x - k)[:, None]
        g, m = self._grid, self._slopes
        s2 = s * s
        s3 = s2 * s
        vals = ((2 * s3 - 3 * s2 + 1) * g[k] + (s3 - 2 * s2 + s) * m[k]
                + (-2 * s3 + 3 * s2) * g[k + 1] + (s3 - s2) * m[k + 1])
        return vals[:, 2 + N_COMP:]

    def flow_weighted_mean(self, t_start: float, t_end: float):
        """Constant composite for the steady phase."""
        lo = int(np.ceil((t_start - self.t0) / self.dt))
        hi = int(np.floor((t_end - self.t0) / self.dt))
        q = self.q[lo:hi + 1]
        conc = self.conc[lo:hi + 1]
        qm = float(q.mean())
        cm = (q[:, None] * conc).sum(axis=0) / q.sum()
        tm = float(self.temperature[lo:hi + 1].mean())
        return qm, cm, tm


def influent_at(t, model: InfluentModel):
    """Public sampling entry point; deterministic given the model seed."""
    series = build_series(model)
    if np.ndim(t) == 0:
        return series.sample(float(t))
    return series.sample_many(np.asarray(t))


_SERIES_CACHE: dict[int, InfluentSeries] = {}


def build_series(model: InfluentModel) -> InfluentSeries:
    """Memoised series construction (keyed by the frozen model's id-ish repr)."""
    key = hash((repr(sorted(model.base_concentrations.items())), repr(model)))
    found = _SERIES_CACHE.get(key)
    if found is None or found.model != model:
        found = InfluentSeries(model)
        if len(_SERIES_CACHE) > 32:
            _SERIES_CACHE.clear()
        _SERIES_CACHE[key] = found
    return found
