"""Command-line pipeline: synth -> simulate -> evaluate, plus the variance calculator."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .config import ConfigError, config_hash, load_config
from .epidemic import DiseaseParams, PhaseParams, read_frame_csv, run_epidemic, write_daily_csv, write_frame_csv
from .estimation import (CovarianceModel, WorkingModel, anticipated_variance, empirical_joint_probs,
                         toy_frame)
from .harness import (ExperimentConfig, ScreeningScenario, run_experiment, screening_experiment,
                      write_results, write_table3, write_table4, write_table5, write_table6)
from .population import GridSpec, PopulationGrid, build_weight_matrix, generate_population
from .sampling import make_design
from .seeding import derive_seed

log = logging.getLogger("spatialsurvey")


def _tag(rho: float) -> str:
    return f"rho{rho:g}"


def _spec(cfg) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(g["rows"], g["cols"], float(g["cell_side"]))


def _grid(cfg, out: Path, rho: float, seeds: dict, write: bool) -> PopulationGrid:
    path = out / "grids" / f"grid_{_tag(rho)}.csv"
    seed = derive_seed(cfg["seed"], "population", float(rho))
    seeds[f"population|{rho:g}"] = seed
    if not write and path.is_file():
        return PopulationGrid.from_csv(path, cfg["grid"]["cell_side"], rho)
    grid = generate_population(_spec(cfg), float(rho), cfg["population"]["total"], seed)
    if write:
        path.parent.mkdir(parents=True, exist_ok=True)
        grid.to_csv(path)
    return grid


def cmd_synth(cfg, out: Path) -> dict:
    seeds = {}
    for rho in cfg["population"]["rho_levels"]:
        _grid(cfg, out, rho, seeds, write=True)
        log.info("grid written for rho=%g", rho)
    return seeds


def _epidemic_inputs(cfg):
    e = cfg["epidemic"]
    phases = [PhaseParams(**p) for p in e["phases"]]
    return phases, DiseaseParams(**e["disease"])


def cmd_simulate(cfg, out: Path) -> dict:
    seeds = {}
    phases, disease = _epidemic_inputs(cfg)
    e = cfg["epidemic"]
    weights = build_weight_matrix(_spec(cfg), e["moran_scheme"], row_standardized=True)
    (out / "epidemic").mkdir(parents=True, exist_ok=True)
    for rho in cfg["population"]["rho_levels"]:
        grid = _grid(cfg, out, rho, seeds, write=False)
        seed = derive_seed(cfg["seed"], "epidemic", float(rho))
        seeds[f"epidemic|{rho:g}"] = seed
        snaps = run_epidemic(grid, phases, disease, e["seed_cases"], seed, e["count_exposed"])
        write_daily_csv(snaps, out / "epidemic" / f"daily_{_tag(rho)}.csv", weights)
        write_frame_csv(snaps, out / "epidemic" / f"frames_{_tag(rho)}.csv")
        log.info("epidemic simulated for rho=%g (%d days)", rho, len(snaps))
    return seeds


def _load_frames(cfg, out: Path, rho: float):
    path = out / "epidemic" / f"frames_{_tag(rho)}.csv"
    if not path.is_file():
        raise FileNotFoundError(f"missing frames {path}; run the simulate command first")
    return read_frame_csv(path, _spec(cfg))


def cmd_evaluate(cfg, out: Path) -> dict:
    x = cfg["experiment"]
    rhos = cfg["population"]["rho_levels"]
    frames = {rho: {f.day: f for f in _load_frames(cfg, out, rho)} for rho in rhos}
    exp = ExperimentConfig(
        rho_levels=tuple(rhos), survey_days=tuple(x["survey_days"]), designs=tuple(x["designs"]),
        m_levels=tuple(x["m_levels"]), n_bar_levels=tuple(x["n_bar_levels"]),
        replicates=x["replicates"], master_seed=cfg["seed"], lpm_variant=x["lpm_variant"],
        geo_quadratic=x["geo_quadratic"], threads=x["threads"], smoke=x["smoke"],
    )
    report = run_experiment(exp, frames, progress=lambda c: log.info(
        "%s day=%d rho=%g m=%d n_bar=%d se=%.4f", c.design.value, c.day, c.rho, c.m, c.n_bar, c.rel_se))
    tables = out / "tables"
    tm, tn = x["table_m"], x["table_n_bar"]
    write_results(report, tables / "results.csv")
    have_tables = tm in exp.m_levels and tn in exp.n_bar_levels and "FPPS" in x["designs"]
    if have_tables:
        write_table3(report, tables / "table3.csv", tm, tn)
        write_table4(report, tables / "table4.csv", x["table4_day"], tm, tn)
        write_table5(report, tables / "table5.csv", tm, tn)
    else:
        log.warning("table_m/table_n_bar not among the evaluated levels or FPPS missing; tables 3-5 skipped")
    s = cfg["screening"]
    match = [r for r in rhos if abs(r - s["rho"]) < 1e-12]
    screen_frames = frames[match[0]] if match else {f.day: f for f in _load_frames(cfg, out, s["rho"])}
    scenario = ScreeningScenario(tuple(tuple(r) for r in s["rules"]))
    cells = screening_experiment(screen_frames[s["day"]], scenario, s["designs"], tm, tn,
                                 x["replicates"], cfg["seed"], x["threads"], x["lpm_variant"],
                                 smoke=x["smoke"])
    write_table6(cells, tables / "table6.csv")
    seeds = report.seeds()
    seeds.update({f"table6|{label}|{c.design.value}": c.seed for label, c in cells})
    return seeds


def cmd_variance(cfg, out: Path) -> dict:
    v = cfg["variance"]
    seeds = {}
    if v["instance"] == "toy":
        t = v["toy"]
        seeds["variance|toy"] = derive_seed(cfg["seed"], "variance", "toy")
        frame = toy_frame(t["rows"], t["cols"], t["sizes"], t["jitter"], seeds["variance|toy"])
    else:
        frames = {f.day: f for f in _load_frames(cfg, out, v["rho"])}
        if v["day"] not in frames:
            raise ValueError(f"day {v['day']} not in simulated frames")
        frame = frames[v["day"]]
    plan = make_design(v["design"], frame, v["m"], v["n_bar"])
    seeds["variance|joint"] = derive_seed(cfg["seed"], "variance", "joint")
    joint = empirical_joint_probs(plan, v["joint_draws"], seeds["variance|joint"])
    joint = (joint + joint.T) / 2
    joint[np.diag_indices_from(joint)] = plan.pi
    c = v["model"]["cov"]
    cov = CovarianceModel(c["kind"], float(c["sigma_u2"]), float(c["rho_base"]), float(c["alpha"]),
                          float(c["tau2"]))
    model = WorkingModel(v["model"]["beta"], cov, mean=v["model"]["mean"])
    report = anticipated_variance(frame, plan, joint, model, v["n_bar"], exact=v["exact"])
    (out / "variance").mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "variance" / "av_report.csv")
    report.clusters_to_csv(out / "variance" / "av_clusters.csv")
    log.info("anticipated variance %.6g", report.av_total)
    return seeds


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate, "evaluate": cmd_evaluate, "variance": cmd_variance}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, seeds: dict, started: str, t0: float) -> Path:
    files = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*.csv"))
             if p.stat().st_mtime >= t0}
    manifest = {
        "manifest_version": 1,
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "master_seed": cfg["seed"],
        "seeds": seeds,
        "versions": {"spatialsurvey": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": files,
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialsurvey", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML config or a previous run manifest")
        p.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--replicates", type=int, help="Monte Carlo replicates per cell")
        p.add_argument("--threads", type=int, help="worker threads for Monte Carlo draws")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicates is not None:
        overrides.setdefault("experiment", {})["replicates"] = args.replicates
    if args.threads is not None:
        overrides.setdefault("experiment", {})["threads"] = args.threads
    try:
        cfg = load_config(args.config, overrides)
        started = datetime.now(timezone.utc).isoformat()
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time() - 1.0
        seeds = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, seeds, started, t0)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
