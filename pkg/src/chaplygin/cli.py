"""Command-line driver.

Subcommands:

* ``simulate`` - run every configured scenario, write one trajectory CSV per
  scenario plus a JSON summary with per-run checks and regulation metrics;
* ``verify``   - run the trajectory-free verification sweeps (integral
  inequality, interior-equilibrium search, closed-loop matching for each
  damping model) and write their reports;
* ``sweep``    - grid one dotted config key over a list of values and emit a
  metrics table.

Exit codes: 0 all checks pass, 1 verification failure, 2 configuration
error, 3 simulation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import analysis
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    load_raw_config,
    parse_run_config,
)
from .integrator import SimulationError, Trajectory, batch_simulate
from .io import write_json, write_trajectory_csv
from .model import ConstantDamping, ModelParams, ZeroDamping

__all__ = ["main"]

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SIMULATION_ERROR = 3


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML run configuration (packaged default if omitted)")
    common.add_argument("--override", metavar="KEY=VALUE", action="append",
                        default=[], help="override a config entry (repeatable)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: outputs.directory)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for randomized verification sweeps")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel scenario runs")

    parser = argparse.ArgumentParser(
        prog="chaplygin",
        description="Energy-shaping regulation of the Chaplygin sleigh: "
                    "simulation and numerical verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="run all configured scenarios")
    sub.add_parser("verify", parents=[common],
                   help="run trajectory-free verification sweeps")
    sweep = sub.add_parser("sweep", parents=[common],
                           help="grid one config key over several values")
    sweep.add_argument("--param", required=True, metavar="KEY",
                       help="dotted config key, e.g. controller.k")
    sweep.add_argument("--values", required=True, metavar="V1,V2,...",
                       help="comma-separated values for KEY")
    return parser


def _load(args) -> RunConfig:
    raw = load_raw_config(args.config)
    raw = apply_overrides(raw, args.override)
    return parse_run_config(raw)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_entry(name: str, result, cfg: RunConfig, out: Path,
                    write_csv: bool) -> tuple[dict, bool, bool]:
    """Returns (summary entry, simulated ok, checks ok)."""
    if isinstance(result, SimulationError):
        print(f"[{name}] ERROR {type(result).__name__}: {result}")
        return ({"name": name, "status": "error",
                 "error": {"type": type(result).__name__,
                           "message": str(result)}},
                False, True)

    traj: Trajectory = result
    checks = [
        analysis.check_invariance_of_U(traj),
        analysis.check_dissipation(traj),
        analysis.check_rate_agreement(traj),
    ]
    metrics = analysis.convergence_metrics(traj)
    entry = {
        "name": name,
        "status": traj.stats.status,
        "error": None,
        "metrics": metrics.as_dict(),
        "checks": [c.as_dict() for c in checks],
        "steps": {"accepted": traj.stats.n_accepted,
                  "rejected": traj.stats.n_rejected,
                  "rhs_evaluations": traj.stats.n_rhs},
    }
    if write_csv:
        csv_path = out / f"{name}.csv"
        write_trajectory_csv(traj, csv_path)
        entry["csv"] = csv_path.name
    ok = all(c.passed for c in checks)
    flags = " ".join(("PASS" if c.passed else "FAIL") + ":" + c.name
                     for c in checks)
    print(f"[{name}] {traj.stats.status}  |q(T)|={metrics.final_q_norm:.3e}  "
          f"H_d(T)={metrics.final_H_d:.3e}  min|w1|={metrics.min_abs_w1:.3e}")
    print(f"[{name}] {flags}")
    return entry, True, ok


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    results = batch_simulate([s.initial for s in cfg.scenarios], cfg.model,
                             cfg.controller, cfg.integrator, jobs=args.jobs)
    entries = []
    all_sim_ok = True
    all_checks_ok = True
    for scenario, result in zip(cfg.scenarios, results):
        entry, sim_ok, checks_ok = _scenario_entry(
            scenario.name, result, cfg, out, "csv" in cfg.outputs.formats)
        entries.append(entry)
        all_sim_ok &= sim_ok
        all_checks_ok &= checks_ok

    summary = {
        "command": "simulate",
        "seed": args.seed,
        "scenarios": entries,
        "all_checks_passed": bool(all_checks_ok),
        "n_simulation_errors": sum(1 for e in entries if e["status"] == "error"),
    }
    if "json" in cfg.outputs.formats:
        write_json(summary, out / "summary.json")
        print(f"summary written to {out / 'summary.json'}")
    if not all_sim_ok:
        return EXIT_SIMULATION_ERROR
    return EXIT_OK if all_checks_ok else EXIT_VERIFICATION_FAILED


def _verification_reports(cfg: RunConfig, seed: int):
    damping_variants = [cfg.model.damping, ZeroDamping(), ConstantDamping(1.0, 1.0)]
    seen = set()
    reports = [
        analysis.schwarz_sweep(n_functions=1000, seed=seed),
        analysis.equilibrium_residual_search(cfg.controller.gains,
                                             n_samples=100_000, seed=seed),
    ]
    for damping in damping_variants:
        key = repr(damping)
        if key in seen:
            continue
        seen.add(key)
        model = ModelParams(m=cfg.model.m, J=cfg.model.J, l=cfg.model.l,
                            damping=damping)
        rep = analysis.check_matching(model, cfg.controller,
                                      n_samples=1000, seed=seed)
        rep.name = f"closed_loop_matching[{type(damping).__name__}]"
        reports.append(rep)
    return reports


def _cmd_verify(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    reports = _verification_reports(cfg, args.seed)
    for rep in reports:
        state = "PASS" if rep.passed else "FAIL"
        print(f"{state} {rep.name} (margin={rep.margin:.3e})")
    payload = {
        "command": "verify",
        "seed": args.seed,
        "reports": [r.as_dict() for r in reports],
        "passed": all(r.passed for r in reports),
    }
    if "json" in cfg.outputs.formats:
        write_json(payload, out / "verification.json")
        print(f"reports written to {out / 'verification.json'}")
    return EXIT_OK if payload["passed"] else EXIT_VERIFICATION_FAILED


_SWEEP_FIELDS = ("final_q_norm", "decay_ratio", "final_H_d", "energy_ratio",
                 "H_d_monotone", "min_abs_w1", "sup_wp_norm")


def _cmd_sweep(args) -> int:
    values = []
    for chunk in args.values.split(","):
        chunk = chunk.strip()
        try:
            values.append(tomllib.loads(f"v = {chunk}")["v"])
        except tomllib.TOMLDecodeError:
            values.append(chunk)
    if not values:
        raise ConfigError(["sweep: --values is empty"])

    base_raw = apply_overrides(load_raw_config(args.config), args.override)
    rows = []
    any_sim_error = False
    any_check_failed = False
    out = None
    for value in values:
        raw = apply_overrides(base_raw, [f"{args.param}={value}"])
        cfg = parse_run_config(raw)
        if out is None:
            out = _out_dir(args, cfg)
        results = batch_simulate([s.initial for s in cfg.scenarios], cfg.model,
                                 cfg.controller, cfg.integrator, jobs=args.jobs)
        for scenario, result in zip(cfg.scenarios, results):
            if isinstance(result, SimulationError):
                any_sim_error = True
                rows.append({"param": args.param, "value": value,
                             "scenario": scenario.name, "status": "error",
                             **{f: "" for f in _SWEEP_FIELDS}})
                continue
            metrics = analysis.convergence_metrics(result)
            ok = (metrics.H_d_monotone and metrics.min_abs_w1 > 0.0)
            any_check_failed |= not ok
            rows.append({"param": args.param, "value": value,
                         "scenario": scenario.name,
                         "status": result.stats.status,
                         **{f: getattr(metrics, f) for f in _SWEEP_FIELDS}})

    assert out is not None
    header = ["param", "value", "scenario", "status", *_SWEEP_FIELDS]
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row[h]) for h in header) + "\n")
    for row in rows:
        print("  ".join(f"{h}={_fmt_cell(row[h])}" for h in header))
    print(f"table written to {path}")
    if any_sim_error:
        return EXIT_SIMULATION_ERROR
    return EXIT_VERIFICATION_FAILED if any_check_failed else EXIT_OK


def _fmt_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_sweep(args)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
