"""Batch command-line front end.

Verbs: simulate, generate-all, metrics, benchmark, transfer, noloop-sweep.
Every command is deterministic given its configuration and seeds, never
mutates inputs, and writes a run manifest listing each output file with
its content hash.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 dataset/schema error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, SchemaError, SolverError
from .influent import InfluentModel
from .metrics import (
    dynamics_table,
    dynamics_table_text,
    emission_report,
    pearson,
    summarize_signal,
)
from .plant import PlantConfig, RunProtocol, Trajectory, config_hash
from .scenarios import SIMULATIONS, TabularDataset, registry, scenario_by_id
from .softsensor import ModelSpec, fit_bundle, load_bundle, save_bundle
from .workflows import (
    BENCHMARK_FAMILIES,
    benchmark_tables,
    build_stoichiometry_from_meta,
    generate_all,
    noloop_sweep,
    run_benchmark,
    run_simulation,
    run_transfer,
    summarize_trajectory,
    trajectory_frame,
    trajectories_for,
)

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SCHEMA = 4
EXIT_IO = 5


@dataclass
class RunManifest:
    command: str
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    version: str = __version__
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)
    summaries: dict = field(default_factory=dict)

    def add_output(self, path) -> None:
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.outputs.append({"path": os.path.basename(str(path)),
                             "sha256": digest,
                             "bytes": os.path.getsize(path)})

    def write(self, path) -> None:
        doc = {
            "command": self.command, "config_hash": self.config_hash,
            "seeds": self.seeds, "version": self.version,
            "wall_time_s": round(self.wall_time_s, 3),
            "outputs": self.outputs, "summaries": self.summaries,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)


def _load_run_config(path):
    """YAML run configuration: optional plant/influent/protocol sections."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    plant = PlantConfig.from_dict(doc["plant"]) if "plant" in doc else None
    influent = InfluentModel.from_dict(doc["influent"]) if "influent" in doc else None
    protocol = RunProtocol(**doc["protocol"]) if "protocol" in doc else RunProtocol()
    return plant, influent, protocol


def _sim_listing() -> str:
    lines = ["available simulations (id: disturbance):"]
    for sid, sim in sorted(SIMULATIONS.items()):
        note = f"composite of {','.join(sim.composite_of)}" if sim.composite_of \
            else sim.disturbance
        lines.append(f"  {sid}: {note}")
    lines.append("scenario datasets (id: simulation/features/target/interval):")
    for spec in registry():
        lines.append(f"  {spec.id}: sim {spec.simulation} / {spec.features} / "
                     f"{spec.target} / {spec.interval_minutes} min")
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    if args.list:
        print(_sim_listing())
        return 0
    t0 = time.time()
    plant, influent, protocol = (None, None, RunProtocol())
    if args.config:
        plant, influent, protocol = _load_run_config(args.config)
    sim_id = str(args.scenario or "1")
    if sim_id.startswith("sim"):
        sim_id = sim_id[3:]
    if sim_id not in SIMULATIONS:
        # allow scenario ids as a convenience; they map to their simulation
        sim_id = scenario_by_id(sim_id).simulation
    os.makedirs(args.out, exist_ok=True)
    cache = args.cache or os.path.join(args.out, "cache")
    traj, cached = run_simulation(sim_id, cache, protocol, base_config=plant,
                                  base_influent=influent, seed=args.seed)
    frame = trajectory_frame(traj)
    out_csv = os.path.join(args.out, f"trajectory_sim{sim_id}.csv")
    frame.to_csv(out_csv, index=False, float_format="%.10g")

    manifest = RunManifest(command="simulate", config_hash=traj.config_hash,
                           seeds={"influent": traj.meta.get("influent_seed")})
    manifest.summaries = summarize_trajectory(traj)
    manifest.summaries["cached"] = cached
    manifest.add_output(out_csv)
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, f"trajectory_sim{sim_id}.manifest.json"))
    print(f"simulation {sim_id}: EF {manifest.summaries['emission_factor_pct']:.3f} %, "
          f"balance closure {traj.mass_balance['relative_closure']:.2e}"
          + (" (cached)" if cached else ""))
    return 0


def cmd_generate_all(args) -> int:
    t0 = time.time()
    protocol = RunProtocol()
    influent = None
    if args.config:
        _plant, influent, protocol = _load_run_config(args.config)
    paths, info = generate_all(args.out, cache_dir=args.cache, protocol=protocol,
                               base_influent=influent, jobs=args.jobs, seed=args.seed)
    manifest = RunManifest(command="generate-all",
                           seeds={"influent": args.seed})
    manifest.summaries = {"datasets": len(paths), **info}
    for p in paths.values():
        manifest.add_output(p)
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, "generate_all.manifest.json"))
    print(f"wrote {len(paths)} datasets to {args.out} "
          f"(new simulations: {info['simulations_run'] or 'none'})")
    return 0


def _load_datasets(data_dir, ids=None) -> dict:
    datasets = {}
    wanted = ids or [s.id for s in registry()]
    for sid in wanted:
        path = os.path.join(data_dir, f"{sid}.csv")
        if not os.path.exists(path):
            raise SchemaError(f"dataset not found: {path} (run generate-all first)")
        datasets[sid] = TabularDataset.load_csv(path)
    return datasets


def cmd_metrics(args) -> int:
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(command="metrics")
    if args.trajectory:
        traj = Trajectory.load_npz(args.trajectory)
        table = dynamics_table(traj)
        out_csv = os.path.join(args.out, "dynamics_table.csv")
        table.to_csv(out_csv, index=False, float_format="%.6g")
        out_txt = os.path.join(args.out, "dynamics_table.txt")
        with open(out_txt, "w") as fh:
            fh.write(dynamics_table_text(table) + "\n")
        rep = emission_report(traj, build_stoichiometry_from_meta(traj))
        out_json = os.path.join(args.out, "emission_report.json")
        with open(out_json, "w") as fh:
            json.dump({
                "mean_emissions_kgN_per_d": rep.mean_emissions_kg,
                "contribution_pct": rep.contribution_pct,
                "emission_factor_pct": rep.emission_factor_pct,
                "no_to_n2o_pct": rep.no_to_n2o_pct,
                "pathway_shares_pct": rep.pathway_shares_pct,
                "per_tank_pathway_pct": rep.per_tank_pathway_pct,
            }, fh, indent=1, sort_keys=True)
        for p in (out_csv, out_txt, out_json):
            manifest.add_output(p)
        print(dynamics_table_text(table))
    elif args.dataset:
        ds = TabularDataset.load_csv(args.dataset)
        duration = float(ds.time[-1] - ds.time[0])
        summary = summarize_signal(ds.y, volume=args.volume, duration=duration)
        rows = [{"feature": tok, "pearson_to_target": pearson(ds.X[:, j], ds.y)}
                for j, tok in enumerate(ds.feature_tokens)]
        out_csv = os.path.join(args.out, "dataset_metrics.csv")
        import pandas as pd

        pd.DataFrame(rows).to_csv(out_csv, index=False, float_format="%.6g")
        out_json = os.path.join(args.out, "target_summary.json")
        with open(out_json, "w") as fh:
            json.dump({
                "mean": summary.mean, "stdev": summary.stdev,
                "cv_pct": summary.cv_pct, "skewness": summary.skewness,
                "sadn": summary.sadn, "ssdn": summary.ssdn,
                "autocorrelation": summary.autocorrelation,
                "volume": summary.volume, "duration": summary.duration,
            }, fh, indent=1, sort_keys=True)
        manifest.add_output(out_csv)
        manifest.add_output(out_json)
        print(f"target mean {summary.mean:.4g}, CV {summary.cv_pct:.1f} %, "
              f"SADn {summary.sadn:.4g}")
    else:
        raise ConfigError("metrics needs --trajectory or --dataset")
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, "metrics.manifest.json"))
    return 0


def cmd_benchmark(args) -> int:
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    families = args.families.split(",") if args.families else list(BENCHMARK_FAMILIES)
    if args.csv:
        datasets = {os.path.splitext(os.path.basename(args.csv))[0]:
                    TabularDataset.load_csv(args.csv)}
    else:
        ids = args.scenarios.split(",") if args.scenarios else None
        datasets = _load_datasets(args.data, ids)

    results = run_benchmark(datasets, families=families, seed=args.seed,
                            mode=args.fold_mode, jobs=args.jobs,
                            importance_repeats=args.repeats)
    eval_df, imp_df = benchmark_tables(results)
    eval_csv = os.path.join(args.out, "evaluation_report.csv")
    imp_csv = os.path.join(args.out, "importance_report.csv")
    eval_df.to_csv(eval_csv, index=False, float_format="%.6g")
    imp_df.to_csv(imp_csv, index=False, float_format="%.6g")

    manifest = RunManifest(command="benchmark", seeds={"benchmark": args.seed})
    manifest.add_output(eval_csv)
    manifest.add_output(imp_csv)
    if args.save_models:
        for (sid, fam) in sorted(results):
            bundle, _ = fit_bundle(ModelSpec(fam, seed=args.seed), datasets[sid],
                                   mode=args.fold_mode)
            path = os.path.join(args.out, f"model_{sid}_{fam}.json")
            save_bundle(bundle, path)
            manifest.add_output(path)
    manifest.summaries = {
        "rows": len(eval_df),
        "mean_val_r2": float(eval_df["mean_val_r2"].mean()),
        "fold_mode": args.fold_mode,
    }
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, "benchmark.manifest.json"))
    print(eval_df.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return 0


def cmd_transfer(args) -> int:
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    families = args.families.split(",") if args.families else list(BENCHMARK_FAMILIES)
    datasets = _load_datasets(args.data)
    table = run_transfer(datasets, source_id=args.source, families=families,
                         seed=args.seed, mode=args.fold_mode)
    out_csv = os.path.join(args.out, "transfer_matrix.csv")
    table.to_csv(out_csv, index=False, float_format="%.6g")
    manifest = RunManifest(command="transfer", seeds={"benchmark": args.seed})
    manifest.add_output(out_csv)
    manifest.summaries = {"rows": len(table), "source": args.source}
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, "transfer.manifest.json"))
    print(table.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return 0


def cmd_noloop_sweep(args) -> int:
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    try:
        k_values = [float(v) for v in args.k_values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --k-values: {args.k_values!r}") from exc
    cache = args.cache or os.path.join(args.out, "cache")
    influent = None
    protocol = RunProtocol()
    if args.config:
        _plant, influent, protocol = _load_run_config(args.config)
    table = noloop_sweep(k_values, cache, protocol, base_influent=influent,
                         jobs=args.jobs)
    out_csv = os.path.join(args.out, "noloop_sweep.csv")
    table.to_csv(out_csv, index=False, float_format="%.6g")
    manifest = RunManifest(command="noloop-sweep")
    manifest.add_output(out_csv)
    manifest.summaries = {"k_values": k_values}
    manifest.wall_time_s = time.time() - t0
    manifest.write(os.path.join(args.out, "noloop_sweep.manifest.json"))
    ra1 = table[table["tank"] == "rA1"]
    print(ra1.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="n2olab",
        description="Plant-wide N2O emission simulator and soft-sensor benchmark")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="run one plant simulation")
    p.add_argument("--scenario", default="1", help="simulation id (1-8) or scenario id")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="influent seed override")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--cache", default=None)
    p.add_argument("--list", action="store_true", help="list simulations and scenarios")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate-all", help="emit all sixteen scenario datasets")
    p.add_argument("--out", default="datasets")
    p.add_argument("--cache", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_generate_all)

    p = sub.add_parser("metrics", help="dataset statistics / emission accounting")
    p.add_argument("--trajectory", help="trajectory .npz from a cached simulation")
    p.add_argument("--dataset", help="dataset CSV in the documented schema")
    p.add_argument("--volume", type=float, default=9000.0,
                   help="normalising aerated volume for dataset metrics")
    p.add_argument("--out", default="metrics_out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("benchmark", help="cross-validated model benchmark")
    p.add_argument("--data", default="datasets", help="directory with dataset CSVs")
    p.add_argument("--scenarios", default=None, help="comma-separated scenario ids")
    p.add_argument("--families", default=None, help="comma-separated model families")
    p.add_argument("--csv", default=None, help="benchmark one external dataset CSV")
    p.add_argument("--fold-mode", default="blocked", choices=("blocked", "shuffled"))
    p.add_argument("--repeats", type=int, default=20, help="importance repeats")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--save-models", action="store_true")
    p.add_argument("--out", default="benchmark_out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("transfer", help="cross-scenario evaluation matrix")
    p.add_argument("--data", default="datasets")
    p.add_argument("--source", default="baseline")
    p.add_argument("--families", default=None)
    p.add_argument("--fold-mode", default="blocked", choices=("blocked", "shuffled"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="transfer_out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("noloop-sweep", help="NO-affinity sweep diagnostics")
    p.add_argument("--k-values", default="0.05,0.01,0.003,0.001")
    p.add_argument("--out", default="sweep_out")
    p.add_argument("--cache", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_noloop_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        extra = f" (t = {exc.time_of_failure:g} d)" if exc.time_of_failure else ""
        print(f"solver error: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
