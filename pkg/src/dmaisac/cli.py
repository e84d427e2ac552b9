"""Command-line runner: ``dmaisac <experiment> [--scenario F] [--method M] [--tier T] [--seed S] [--out DIR]``.

Artifacts go to --out, else $DMAISAC_OUT, else ./results. Every run writes
``<experiment>_manifest.json`` next to its CSV/JSON outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import design as design_mod
from . import sensing
from .channel import build_propagation_matrix
from .config import ConfigError, scenario_to_dict, validate_config
from .scenario import default_scenario, reduced_scenario

OUT_ENV = "DMAISAC_OUT"
EXPERIMENTS = ("design", "rmse-sweep", "snr-sweep", "beampattern", "peb-map", "solver-selftest",
               "complexity-report")
DEFAULT_METHODS = {
    "design": ["P1", "P2", "CFS"],
    "rmse-sweep": ["P1", "P2", "CFS"],
    "snr-sweep": ["P1", "P2", "CFS"],
    "beampattern": ["CFS"],
    "peb-map": ["P1", "P2", "CFS"],
}
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DESIGN = 0, 1, 2, 3


class UsageError(Exception):
    def __init__(self, msg, details=None):
        super().__init__(msg)
        self.details = details or []


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _methods(arg, experiment):
    if not arg:
        return list(DEFAULT_METHODS.get(experiment, []))
    out = []
    for chunk in arg:
        out.extend(m.strip().upper() for m in chunk.split(",") if m.strip())
    bad = [m for m in out if m not in design_mod.METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}", [f"--method: expected one of {list(design_mod.METHODS)}"])
    if not out:
        raise UsageError("empty method list")
    return out


def _scenario(args):
    if args.scenario:
        sc, errors = validate_config(args.scenario)
        if errors:
            raise ConfigError(errors)
        return sc
    return reduced_scenario() if args.tier == "reduced" else default_scenario()


def _grid(args):
    if getattr(args, "grid", None):
        return sensing.GridSpec(n_r=args.grid[0], n_phi=args.grid[1])
    return sensing.GridSpec()


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _design_all(sc, methods, args, report):
    P = build_propagation_matrix(sc.panel)
    lifted = None
    out = {}
    for m in methods:
        if m != "CFS" and lifted is None:
            from .fisher import build_lifted
            lifted = build_lifted(sc, P)
        res = design_mod.run_design(m, sc, P, lifted, strict=args.strict)
        report["methods"][m] = {"status": res.status, "peb_aoi": res.peb_aoi, "flags": res.flags}
        out[m] = res
    return out


def run(args) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or "results")
    exp = args.experiment
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise UsageError(f"output directory {out_dir} is not writable")
    report = {"experiment": exp, "seed": args.seed, "tier": args.tier, "methods": {}, "artifacts": []}
    status = EXIT_OK

    def emit(name):
        report["artifacts"].append(name)
        return out_dir / name

    sc = None
    if exp == "solver-selftest":
        from .selftest import run_selftest
        results = run_selftest()
        report["checks"] = results
        for r in results:
            print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}: {r['detail']}")
        if not all(r["passed"] for r in results):
            status = EXIT_FAIL
        with open(emit("solver-selftest.json"), "w") as fh:
            json.dump(results, fh, indent=2)
    else:
        sc = _scenario(args)
        if exp == "complexity-report":
            rep = design_mod.complexity_report(sc).as_dict()
            print(json.dumps(rep))
            with open(emit("complexity-report.json"), "w") as fh:
                json.dump(rep, fh, indent=2)
        else:
            methods = _methods(args.method, exp)
            if exp == "snr-sweep":
                gammas = _float_list(args.gammas)
                tables = sensing.snr_tradeoff_sweep(sc, methods, gammas, strict=args.strict)
                for m, rows in tables.items():
                    sensing.write_table(emit(f"snr-sweep_{m}.csv"), rows, sensing.SNR_SWEEP_COLUMNS)
                    report["methods"][m] = {"statuses": [r["status"] for r in rows]}
                    print(f"{m}: " + ", ".join(f"{r['gamma_db']:g} dB -> PEB {r['peb']:.4g} ({r['status']})"
                                               for r in rows))
            else:
                designs = _design_all(sc, methods, args, report)
                grid = _grid(args)
                for m, res in designs.items():
                    if res.status != "ok":
                        print(f"{m}: {res.status} ({res.solver_diag.get('error', '')})")
                        status = EXIT_DESIGN
                        continue
                    if exp == "design":
                        res.write_json(emit(f"design_{m}.json"))
                        res.write_phases_csv(emit(f"design_{m}.csv"))
                        snrs = ", ".join(f"{v:.2f}" for v in res.achieved_snrs)
                        print(f"{m}: PEB {res.peb_aoi:.6g}, SNR [{snrs}] dB, flags {res.flags or 'none'}")
                    elif exp == "rmse-sweep":
                        trials = args.trials or (50 if args.tier == "reduced" else 500)
                        rows = sensing.monte_carlo_rmse(sc, res, _float_list(args.powers), trials, args.seed, grid)
                        sensing.write_table(emit(f"rmse-sweep_{m}.csv"), rows, sensing.RMSE_COLUMNS)
                        print(f"{m}: " + ", ".join(f"{r['power_dbm']:g} dBm -> {r['rmse_m']:.3g} m" for r in rows))
                    elif exp == "beampattern":
                        sensing.write_map(emit(f"beampattern_{m}.csv"), sensing.beampattern_map(sc, res, grid), grid)
                        report["artifacts"].append(f"beampattern_{m}.csv.axes.csv")
                        print(f"{m}: beampattern written")
                    elif exp == "peb-map":
                        sensing.write_map(emit(f"peb-map_{m}.csv"), sensing.peb_map(sc, res, grid), grid)
                        report["artifacts"].append(f"peb-map_{m}.csv.axes.csv")
                        print(f"{m}: PEB map written")

    manifest = {
        "experiment": exp,
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        "scenario": scenario_to_dict(sc) if sc is not None else None,
        "seed": args.seed,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - started,
        "report": report,
    }
    with open(out_dir / f"{exp}_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
    return status


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmaisac", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", help="scenario JSON file (default: built-in instance for --tier)")
        p.add_argument("--method", action="append", help="P1, P2, CFS; repeat or comma-separate")
        p.add_argument("--tier", choices=("reduced", "full"), default="reduced")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        p.add_argument("--strict", action="store_true", help="clamp phases to [-pi/2, pi/2]")
        if name == "rmse-sweep":
            p.add_argument("--powers", default="-30,-25,-20,-15,-10,-5,0", help="comma list in dBm; use --powers=-30,0 for negative values")
            p.add_argument("--trials", type=int, help="Monte-Carlo trials (default 50 reduced, 500 full)")
        if name == "snr-sweep":
            p.add_argument("--gammas", default="10,20,30", help="comma list in dB")
        if name in ("rmse-sweep", "beampattern", "peb-map"):
            p.add_argument("--grid", type=int, nargs=2, metavar=("N_R", "N_PHI"))
    return ap


def _fail(kind, message, details=(), code=EXIT_FAIL) -> int:
    print(json.dumps({"error": kind, "message": message, "details": list(details)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        return _fail("config", "invalid scenario file", exc.errors, EXIT_CONFIG)
    except UsageError as exc:
        return _fail("usage", str(exc), exc.details, EXIT_CONFIG)
    except Exception as exc:  # surfaced as structured JSON for callers
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
