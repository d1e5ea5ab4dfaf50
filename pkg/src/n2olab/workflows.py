"""End-to-end runs behind the CLI: cached simulations, dataset generation,
benchmarking, transfer matrices and the NO-affinity sweep.

Simulations are cached by configuration hash, so the eight plant runs
back all sixteen datasets and any re-run with a warm cache performs no
new integration.  All fan-out is per-task seeded, which keeps results
identical at any parallelism level.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .biokinetics import PROCESSES, build_stoichiometry
from .components import COMPONENTS, IDX
from .errors import ConfigError
from .influent import InfluentModel
from .metrics import dynamics_table, emission_factor, emission_report
from .plant import PlantConfig, RunProtocol, Trajectory, config_hash, simulate
from .scenarios import (
    SIMULATIONS,
    ScenarioSpec,
    TabularDataset,
    extract_dataset,
    registry,
    simulation_setup,
)
from .softsensor import (
    ModelSpec,
    TrainedModel,
    cross_scenario_evaluate,
    evaluate_cv,
    fit_bundle,
    kfold_split,
    permutation_importance,
    preprocess,
    train,
)

BENCHMARK_FAMILIES = ("knn", "random_forest", "gradient_boosting", "second_order")


def simulation_parts(sim_id: str, protocol: RunProtocol = RunProtocol(),
                     base_config: PlantConfig | None = None,
                     base_influent: InfluentModel | None = None,
                     seed: int | None = None):
    """(config, influent, info) for a registry simulation id."""
    sim_id = str(sim_id)
    if sim_id not in SIMULATIONS:
        raise ConfigError(f"unknown simulation id: {sim_id!r} (known: 1..8)")
    sim = SIMULATIONS[sim_id]
    if seed is not None:
        base_influent = (base_influent or InfluentModel()).with_updates(seed=seed)
    config, influent, info = simulation_setup(sim, base_config, base_influent)
    config = config.with_updates(name=f"sim{sim_id}")
    return config, influent, info


def run_simulation(sim_id: str, cache_dir, protocol: RunProtocol = RunProtocol(),
                   base_config: PlantConfig | None = None,
                   base_influent: InfluentModel | None = None,
                   seed: int | None = None) -> tuple[Trajectory, bool]:
    """Simulate (or load from cache) one registry simulation.

    Returns (trajectory, was_cached).  Composite ids (7) have no dynamics
    of their own and reuse run 1's trajectory.
    """
    sim = SIMULATIONS[str(sim_id)]
    if sim.composite_of:
        raise ConfigError(
            f"simulation {sim.id} is a composite of runs {list(sim.composite_of)}; "
            "it has no plant run of its own")
    config, influent, info = simulation_parts(sim_id, protocol, base_config,
                                              base_influent, seed)
    os.makedirs(cache_dir, exist_ok=True)
    h = config_hash(config, influent, protocol)
    path = os.path.join(cache_dir, f"trajectory_{h}.npz")
    if os.path.exists(path):
        return Trajectory.load_npz(path), True
    traj = simulate(config, influent, protocol)
    traj.meta["simulation"] = str(sim_id)
    traj.meta["disturbance"] = info
    traj.save_npz(path)
    return traj, False


def trajectories_for(sim_ids, cache_dir, protocol: RunProtocol = RunProtocol(),
                     base_influent: InfluentModel | None = None,
                     jobs: int = 1, seed: int | None = None):
    """Map simulation id -> Trajectory, fanning out uncached runs."""
    ids = sorted(set(str(s) for s in sim_ids))
    out: dict = {}
    missing = []
    for sid in ids:
        config, influent, _ = simulation_parts(sid, protocol, None, base_influent, seed)
        h = config_hash(config, influent, protocol)
        path = os.path.join(cache_dir, f"trajectory_{h}.npz")
        if os.path.exists(path):
            out[sid] = Trajectory.load_npz(path)
        else:
            missing.append(sid)
    if missing:
        if jobs > 1 and len(missing) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {sid: pool.submit(_run_simulation_worker, sid, cache_dir,
                                            protocol, base_influent, seed)
                           for sid in missing}
                for sid, fut in futures.items():
                    fut.result()
            for sid in missing:
                out[sid] = trajectories_for([sid], cache_dir, protocol,
                                            base_influent, 1, seed)[sid]
        else:
            for sid in missing:
                out[sid], _ = run_simulation(sid, cache_dir, protocol,
                                             base_influent=base_influent, seed=seed)
    return out


def _run_simulation_worker(sim_id, cache_dir, protocol, base_influent, seed):
    run_simulation(sim_id, cache_dir, protocol, base_influent=base_influent, seed=seed)
    return sim_id


def required_simulations(specs) -> list:
    needed = set()
    for spec in specs:
        for sid in spec.required_simulations():
            if not SIMULATIONS[sid].composite_of:
                needed.add(sid)
    return sorted(needed)


def generate_datasets(specs, cache_dir, protocol: RunProtocol = RunProtocol(),
                      base_influent: InfluentModel | None = None,
                      jobs: int = 1, seed: int | None = None):
    """Simulate what is missing and extract every requested dataset."""
    sims = required_simulations(specs)
    trajs = trajectories_for(sims, cache_dir, protocol, base_influent, jobs, seed)
    if any(s.composition != "none" or s.simulation == "7" for s in specs):
        trajs.setdefault("7", trajs.get("1"))
    datasets = {}
    for spec in specs:
        mapping = dict(trajs)
        if spec.simulation == "7":
            mapping["7"] = trajs["1"]
        datasets[spec.id] = extract_dataset(mapping, spec)
    return datasets


def generate_all(out_dir, cache_dir=None, protocol: RunProtocol = RunProtocol(),
                 base_influent: InfluentModel | None = None, jobs: int = 1,
                 seed: int | None = None, specs=None):
    """Write every registry dataset as CSV + manifest sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = cache_dir or os.path.join(out_dir, "cache")
    specs = specs if specs is not None else registry()
    sims_needed = required_simulations(specs)
    cached_before = _cached_sims(sims_needed, cache_dir, protocol, base_influent, seed)
    datasets = generate_datasets(specs, cache_dir, protocol, base_influent, jobs, seed)
    paths = {}
    for spec in specs:
        ds = datasets[spec.id]
        path = os.path.join(out_dir, f"{spec.id}.csv")
        ds.save_csv(path)
        with open(path + ".manifest.json", "w") as fh:
            json.dump(ds.meta, fh, indent=1, sort_keys=True)
        paths[spec.id] = path
    return paths, {"simulations_needed": sims_needed,
                   "simulations_run": sorted(set(sims_needed) - set(cached_before))}


def _cached_sims(sim_ids, cache_dir, protocol, base_influent, seed):
    done = []
    for sid in sim_ids:
        config, influent, _ = simulation_parts(sid, protocol, None, base_influent, seed)
        h = config_hash(config, influent, protocol)
        if os.path.exists(os.path.join(cache_dir, f"trajectory_{h}.npz")):
            done.append(sid)
    return done


# ---------------------------------------------------------------------------
# Benchmark


def benchmark_one(dataset: TabularDataset, family: str, seed: int = 0, k: int = 5,
                  mode: str = "blocked", importance_repeats: int = 20,
                  hyperparameters: dict | None = None):
    """CV evaluation + held-out permutation importance for one pair."""
    spec = ModelSpec(family, hyperparameters or {}, seed=seed)
    report = evaluate_cv(spec, dataset, k=k, mode=mode)

    folds = kfold_split(dataset.n_rows, k=k, mode=mode, seed=seed)
    heldout = folds[-1]
    train_idx = np.setdiff1d(np.arange(dataset.n_rows), heldout)
    Z_train, record = preprocess(dataset.X[train_idx])
    model = train(spec, Z_train, dataset.y[train_idx])
    importance = permutation_importance(
        model, record.apply(dataset.X[heldout]), dataset.y[heldout],
        feature_tokens=dataset.feature_tokens, repeats=importance_repeats, seed=seed)
    return report, importance


def run_benchmark(datasets: dict, families=BENCHMARK_FAMILIES, seed: int = 0,
                  mode: str = "blocked", jobs: int = 1, importance_repeats: int = 20):
    """Evaluation + importance for every dataset x family pair."""
    tasks = [(sid, fam) for sid in sorted(datasets) for fam in families]
    results = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {t: pool.submit(benchmark_one, datasets[t[0]], t[1], seed,
                                      5, mode, importance_repeats) for t in tasks}
            for t, fut in futures.items():
                results[t] = fut.result()
    else:
        for sid, fam in tasks:
            results[(sid, fam)] = benchmark_one(datasets[sid], fam, seed,
                                                5, mode, importance_repeats)
    return results


def benchmark_tables(results: dict):
    """(evaluation DataFrame, importance DataFrame) from run_benchmark output."""
    eval_rows, imp_rows = [], []
    for (sid, fam), (report, importance) in sorted(results.items()):
        eval_rows.append({
            "scenario": sid, "family": fam,
            "mean_train_r2": report.mean_train_r2,
            "mean_val_r2": report.mean_val_r2,
            "val_mse": float(np.mean(report.val_mse)),
            "val_mae": float(np.mean(report.val_mae)),
            "adjusted_r2": report.adjusted_r2,
            "fold_mode": report.fold_mode,
            "residual_lag1_autocorr": report.residual_lag1_autocorr,
        })
        for tok, imp, rank, norm in zip(importance.feature_tokens,
                                        importance.importances,
                                        importance.ranks,
                                        importance.normalized_ranking):
            imp_rows.append({"scenario": sid, "family": fam, "feature": tok,
                             "importance": imp, "rank": int(rank),
                             "normalized_ranking": norm,
                             "count_for_90pct": importance.count_for_90pct})
    return pd.DataFrame(eval_rows), pd.DataFrame(imp_rows)


def run_transfer(datasets: dict, source_id: str = "baseline",
                 families=BENCHMARK_FAMILIES, seed: int = 0, mode: str = "blocked"):
    """Train on the source scenario, evaluate on every compatible dataset."""
    source = datasets[source_id]
    rows = []
    for fam in families:
        bundle, _report = fit_bundle(ModelSpec(fam, seed=seed), source, mode=mode)
        for sid, ds in sorted(datasets.items()):
            if list(ds.feature_tokens) != list(source.feature_tokens) \
                    or ds.target_token != source.target_token:
                continue
            rep = cross_scenario_evaluate(bundle, ds, source_id, sid)
            rows.append(rep.to_dict())
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# NO-affinity sweep


def noloop_sweep(k_values, cache_dir, protocol: RunProtocol = RunProtocol(),
                 base_influent: InfluentModel | None = None, jobs: int = 1):
    """Baseline re-runs over the heterotrophic NO affinity constant.

    Reports, per K and per aerated tank: oxidation-step rate ratios, the
    share of heterotrophically produced NO consumed heterotrophically,
    pathway shares, the emission factor, the gaseous NO/N2O ratio and the
    first-tank dissolved NO level.
    """
    rows = []
    base = PlantConfig()
    influent = base_influent or InfluentModel()
    for kv in k_values:
        if kv <= 0:
            raise ConfigError("K values must be > 0")
        config = base.with_updates(name=f"sweep_K{kv:g}",
                                   params=base.params.replace(K_OHO_NO=kv))
        os.makedirs(cache_dir, exist_ok=True)
        h = config_hash(config, influent, protocol)
        path = os.path.join(cache_dir, f"trajectory_{h}.npz")
        if os.path.exists(path):
            traj = Trajectory.load_npz(path)
        else:
            traj = simulate(config, influent, protocol)
            traj.save_npz(path)
        stoich = build_stoichiometry(config.params)
        diag = traj.diagnostics(stoich, config.params)
        rep = emission_report(traj, stoich)
        i_ra1 = traj.tank_index("rA1")
        for i, name in enumerate(traj.tank_names):
            if not traj.aerated[i]:
                continue
            rows.append({
                "K_OHO_NO": kv, "tank": name,
                "amo_over_hao_pct": diag.amo_over_hao[i],
                "haostar_over_hao_pct": diag.haostar_over_hao[i],
                "nor_nir_pct": diag.nor_nir_fraction[i],
                "nn_share_pct": diag.nn_share[i],
                "nd_share_pct": diag.nd_share[i],
                "hd_share_pct": diag.hd_share[i],
                "autotrophic_share_pct": rep.pathway_shares_pct["NN"] + rep.pathway_shares_pct["ND"],
                "hd_site_share_pct": rep.pathway_shares_pct["HD"],
                "emission_factor_pct": rep.emission_factor_pct,
                "no_to_n2o_pct": rep.no_to_n2o_pct,
                "no_liq_ra1": float(traj.states[:, i_ra1, IDX["S_NO"]].mean()),
            })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Trajectory export


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """Columnar view of a trajectory for CSV export."""
    cols = {"time[d]": traj.t}
    for i, tank in enumerate(traj.tank_names):
        for j, comp in enumerate(COMPONENTS):
            cols[f"{comp}@{tank}"] = traj.states[:, i, j]
    for i, tank in enumerate(traj.tank_names):
        cols[f"kla_o2@{tank}[1/d]"] = traj.kla[:, i]
        cols[f"n2o_gas@{tank}[gN/d]"] = traj.gas_n2o[:, i]
        cols[f"no_gas@{tank}[gN/d]"] = traj.gas_no[:, i]
    for i, tank in enumerate(traj.tank_names):
        for kproc, proc in enumerate(PROCESSES):
            cols[f"rate_{proc}@{tank}"] = traj.rates[:, i, kproc]
    cols["n2o_settler[gN/d]"] = traj.settler_n2o
    cols["no_settler[gN/d]"] = traj.settler_no
    cols["n2o_gas@site[gN/d]"] = traj.gas_total()
    cols["flow@influent[m3/d]"] = traj.influent_flow
    cols["temperature@site[degC]"] = traj.temperature
    for j, comp in enumerate(COMPONENTS):
        cols[f"{comp}@influent"] = traj.influent_conc[:, j]
        cols[f"{comp}@effluent"] = traj.effluent_conc[:, j]
    cols["flow@effluent[m3/d]"] = traj.effluent_flow
    return pd.DataFrame(cols)


def summarize_trajectory(traj: Trajectory) -> dict:
    stoich = build_stoichiometry_from_meta(traj)
    rep = emission_report(traj, stoich)
    return {
        "emission_factor_pct": rep.emission_factor_pct,
        "mean_site_emission_kgN_per_d": rep.mean_emissions_kg["site"],
        "pathway_shares_pct": rep.pathway_shares_pct,
        "mass_balance": traj.mass_balance,
        "warnings": traj.warnings,
    }


def build_stoichiometry_from_meta(traj: Trajectory):
    from .parameters import KineticParameterSet

    return build_stoichiometry(KineticParameterSet(traj.meta["params"]))
