"""Command line front end: validate, run, sweep, resonances, plots.

Exit status: 0 on success, 1 when a run does not converge or an invariant
check fails, 2 on configuration or assumption errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import BUNDLED, ConfigError, RunConfig, bundled_config_path
from .dynamics import save_snapshot, simulate
from .model_spec import AssumptionError, validate_assumptions
from .resonances import fgr_width, resonance_table, spectral_gap
from .thermo_cycle import (NotConverged, _plain, build_ledger, detect_periodic_convergence,
                           efficiency, entropy_per_cycle, excess_entropy_diagnostic)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# invariant limits checked on every run
BALANCE_TOL = 1e-6
ENTROPY_FLOOR = -1e-10
IDENTITY_TOL = 1e-12
UNITARITY_TOL = 1e-10
SPECTRUM_TOL = 1e-10

MANIFEST_COLUMNS = [
    "index", "g", "period", "beta1", "beta2", "modes", "config_hash", "discretization_hash",
    "seed", "status", "converged", "n_star", "regime", "eta", "eta_carnot", "bound_slack",
    "second_law", "heat_1", "heat_2", "work", "entropy_per_cycle", "noise_floor",
    "balance_residual", "min_entropy", "width", "error",
]


def _dump_json(obj, path):
    text = json.dumps(_plain_tree(obj), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def _plain_tree(v):
    if isinstance(v, dict):
        return {str(k): _plain_tree(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain_tree(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    return _plain(v)


def _fmt(v):
    """CSV cell: repr for floats (round-trips exactly), empty for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _load(path, cycles=None) -> RunConfig:
    # bare names resolve to the bundled configurations
    if not Path(path).exists() and str(path) in BUNDLED:
        path = bundled_config_path(str(path))
    cfg = RunConfig.load(path)
    if cycles is not None:
        cfg.data["run"]["cycles"] = int(cycles)
    return cfg


def _invariants(traj, ledger) -> dict:
    scale = max(1.0, float(np.max(np.abs(ledger.heat_eff))) if ledger.heat_eff.size else 1.0)
    checks = {
        "balance_identity": (traj.balance_residual(), BALANCE_TOL, "le"),
        "entropy_nonnegative": (float(np.min(traj.entropy)), ENTROPY_FLOOR, "ge"),
        "cycle_identity": (float(np.max(np.abs(ledger.identity_residual))) / scale, IDENTITY_TOL, "le"),
        "unitarity": (float(traj.meta["max_unitarity_defect"]), UNITARITY_TOL, "le"),
        "spectrum_lower": (float(traj.meta["spectrum_min"]), -SPECTRUM_TOL, "ge"),
        "spectrum_upper": (float(traj.meta["spectrum_max"]), 1.0 + SPECTRUM_TOL, "le"),
    }
    out = {}
    for name, (val, lim, op) in checks.items():
        ok = val <= lim if op == "le" else val >= lim
        out[name] = {"value": val, "limit": lim, "ok": bool(ok)}
    return out


def execute(cfg: RunConfig, out_dir=None) -> dict:
    """Run one configuration and return the report; writes the bundle if ``out_dir`` is set."""
    model = cfg.model()
    validation = validate_assumptions(model)
    validation.raise_for_failure()
    dm = cfg.discretized(model)
    integ, run = cfg.data["integrator"], cfg.data["run"]
    traj = simulate(dm, run["cycles"], integ["steps_per_cycle"], integ["samples_per_cycle"],
                    detail=run["detail"], step_doubling=integ["step_doubling"])
    ledger = build_ledger(traj)
    conv_cfg = cfg.data["convergence"]
    conv = detect_periodic_convergence(ledger, conv_cfg["tol"], conv_cfg["window"])
    est = entropy_per_cycle(ledger, conv, strict=False)
    engine = None
    if dm.n_reservoirs == 2 and conv.converged and ledger.betas[0] <= ledger.betas[1]:
        engine = efficiency(ledger, conv).to_dict()
    table = resonance_table(model, ks=(0,))
    invariants = _invariants(traj, ledger)
    report = {
        "name": cfg.name,
        "config_hash": cfg.content_hash(),
        "discretization_hash": dm.content_hash(),
        "seed": None,
        "validation": validation.to_dict(),
        "meta": traj.meta,
        "convergence": {"converged": conv.converged, "status": conv.status, "n_star": conv.n_star,
                        "window": conv.window, "usable_cycles": conv.usable_cycles,
                        "gamma_fit": conv.gamma_fit, "rates": conv.rates, "limits": conv.limits,
                        "gamma_predicted": spectral_gap(table, modes=(1,))},
        "entropy_per_cycle": {"value": est.value, "spread": est.spread,
                              "noise_floor": est.noise_floor, "drift": est.drift,
                              "significant": est.significant, "cycles": est.cycles},
        "engine": engine,
        "excess_entropy": None,
        "width": fgr_width(model, 0),
        "invariants": invariants,
    }
    exc = excess_entropy_diagnostic(traj, ledger, conv)
    report["excess_entropy"] = {"sup": exc.sup, "plateau": exc.plateau,
                        "monotone_growth": exc.monotone_growth, "final_growth": exc.final_growth}
    report["ok"] = bool(conv.converged and all(v["ok"] for v in invariants.values()))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj.to_csv(out / "trajectory.csv")
        ledger.to_json(out / "ledger.json")
        _dump_json(report, out / "report.json")
        if cfg.data["output"].get("snapshot", True):
            save_snapshot(out / "snapshot.bin", traj.final_state,
                          {"config_hash": report["config_hash"],
                           "discretization_hash": report["discretization_hash"]})
    return report


def _manifest_row(index, point, cfg, report=None, error=None):
    d = cfg.data
    row = {"index": index, "g": d["model"]["g"], "period": d["model"]["period"],
           "beta1": d["reservoirs"][0]["beta"],
           "beta2": d["reservoirs"][1]["beta"] if len(d["reservoirs"]) > 1 else None,
           "modes": d["discretization"]["modes"], "config_hash": cfg.content_hash(),
           "seed": "none"}
    if report is None:
        row.update(status="failed", error=error)
        return row
    eng = report["engine"] or {}
    est = report["entropy_per_cycle"]
    row.update(
        discretization_hash=report["discretization_hash"],
        status="ok" if report["ok"] else "flagged",
        converged=report["convergence"]["converged"],
        n_star=report["convergence"]["n_star"],
        regime=eng.get("regime", "unconverged" if not report["convergence"]["converged"] else "n/a"),
        eta=eng.get("eta"), eta_carnot=eng.get("eta_carnot"), bound_slack=eng.get("bound_slack"),
        second_law=eng.get("second_law"), heat_1=eng.get("heat_hot"), heat_2=eng.get("heat_cold"),
        work=eng.get("work"), entropy_per_cycle=est["value"], noise_floor=est["noise_floor"],
        balance_residual=report["invariants"]["balance_identity"]["value"],
        min_entropy=report["invariants"]["entropy_nonnegative"]["value"],
        width=report["width"])
    return row


def _sweep_point(args):
    index, point, cfg, out_dir = args
    sub = cfg.with_point(point)
    target = None if out_dir is None else Path(out_dir) / f"point_{index:03d}"
    try:
        report = execute(sub, target)
    except (ConfigError, AssumptionError, NotConverged, ValueError, RuntimeError) as exc:
        return _manifest_row(index, point, sub, error=f"{type(exc).__name__}: {exc}")
    return _manifest_row(index, point, sub, report)


def write_manifest(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in MANIFEST_COLUMNS])


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("g", "eta", "width", "regime") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest {path} lacks columns {missing}")
        return list(reader)


def sweep(cfg: RunConfig, out_dir, workers: int = 1):
    """Run every sweep point (in parallel when workers > 1); rows come back in point order."""
    points = cfg.sweep_points()
    jobs = [(i, p, cfg, out_dir) for i, p in enumerate(points)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(rows, out / "manifest.csv")
    return rows


# ---------------------------------------------------------------------------
# plot data

def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _trajectory_plots(run_dir: Path, out: Path):
    with open(run_dir / "trajectory.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        flux_cols = [c for c in reader.fieldnames if c.startswith("flux_") and "eff" not in c]
        if not flux_cols or "time" not in reader.fieldnames:
            raise ValueError(f"{run_dir / 'trajectory.csv'} lacks time/flux columns")
        rows = [[float(r["time"])] + [float(r[c]) for c in flux_cols] for r in reader]
    _write_table(out / "flux_vs_t.csv", ["time"] + flux_cols, rows)
    ledger = json.loads((run_dir / "ledger.json").read_text())
    if "entropy_change" not in ledger:
        raise ValueError("ledger.json lacks entropy_change")
    _write_table(out / "dent_vs_n.csv", ["cycle", "entropy_change"],
                 list(enumerate(ledger["entropy_change"])))
    return ["flux_vs_t.csv", "dent_vs_n.csv"]


def _manifest_plots(manifest: Path, out: Path):
    rows = read_manifest(manifest)
    num = lambda s: float(s) if s not in ("", None) else None  # noqa: E731
    _write_table(out / "eta_vs_g.csv", ["index", "g", "beta1", "beta2", "regime", "eta", "eta_carnot"],
                 [[int(r["index"]), num(r["g"]), num(r["beta1"]), num(r["beta2"]), r["regime"],
                   num(r["eta"]), num(r["eta_carnot"])] for r in rows])
    _write_table(out / "widths_vs_g.csv", ["index", "g", "width", "decay_rate"],
                 [[int(r["index"]), num(r["g"]), num(r["width"]),
                   (num(r["g"]) ** 2 * 2 * num(r["width"])) if r["width"] else None] for r in rows])
    _write_table(out / "dent_vs_g.csv", ["index", "g", "entropy_per_cycle", "noise_floor"],
                 [[int(r["index"]), num(r["g"]), num(r["entropy_per_cycle"]), num(r["noise_floor"])]
                  for r in rows])
    written = ["eta_vs_g.csv", "widths_vs_g.csv", "dent_vs_g.csv"]
    for r in rows:
        point = manifest.parent / f"point_{int(r['index']):03d}"
        if (point / "trajectory.csv").exists():
            sub = out / point.name
            sub.mkdir(parents=True, exist_ok=True)
            written += [f"{point.name}/{f}" for f in _trajectory_plots(point, sub)]
    return written


def emit_plots(source, out_dir):
    """Plot-ready CSV files from a run directory, a sweep directory or a manifest file."""
    src = Path(source)
    out = Path(out_dir)
    if not src.exists():
        raise FileNotFoundError(src)
    out.mkdir(parents=True, exist_ok=True)
    if src.is_file():
        return _manifest_plots(src, out)
    if (src / "manifest.csv").exists():
        return _manifest_plots(src / "manifest.csv", out)
    if (src / "trajectory.csv").exists():
        return _trajectory_plots(src, out)
    raise FileNotFoundError(f"{src} holds neither a manifest nor a trajectory")


# ---------------------------------------------------------------------------

def _cmd_validate(args):
    cfg = _load(args.config, args.cycles)
    model = cfg.model()
    report = validate_assumptions(model)
    dm = cfg.discretized(model)
    horizon = cfg.data["run"]["cycles"] * model.period
    print(json.dumps(_plain_tree({"config_hash": cfg.content_hash(), "points": len(cfg.sweep_points()),
                                  "horizon": horizon, "recurrence_time": dm.recurrence_time(),
                                  "checks": report.to_dict()}), sort_keys=True, indent=1))
    report.raise_for_failure()
    return EXIT_OK


def _cmd_run(args):
    cfg = _load(args.config, args.cycles)
    out = Path(args.out or cfg.data["output"].get("dir") or cfg.name)
    if cfg.data.get("sweep"):
        return _finish_sweep(cfg, out, args.workers)
    report = execute(cfg, out)
    est = report["entropy_per_cycle"]
    print(f"{cfg.name}: {report['convergence']['status']}, entropy per cycle {est['value']:.6e} "
          f"(noise floor {est['noise_floor']:.2e})")
    for name, v in report["invariants"].items():
        print(f"  {name}: {'ok' if v['ok'] else 'FAIL'} ({v['value']:.3e})")
    return EXIT_OK if report["ok"] else EXIT_FAIL


def _finish_sweep(cfg, out, workers):
    rows = sweep(cfg, out, workers)
    for r in rows:
        print(f"  point {r['index']}: {r.get('status')} {r.get('regime') or ''} {r.get('error') or ''}".rstrip())
    return EXIT_OK if all(r.get("status") == "ok" for r in rows) else EXIT_FAIL


def _cmd_sweep(args):
    cfg = _load(args.config, args.cycles)
    out = Path(args.out or cfg.data["output"].get("dir") or cfg.name)
    return _finish_sweep(cfg, out, args.workers)


def _cmd_resonances(args):
    cfg = _load(args.config)
    model = cfg.model()
    validate_assumptions(model).raise_for_failure()
    ks = range(-args.kmax, args.kmax + 1)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for conv in ("C", "standard"):
        tab = resonance_table(model, ks=ks, convention=conv)
        tab.to_csv(out / f"resonances_{conv}.csv")
        tab.to_json(out / f"resonances_{conv}.json")
    print(f"wrote resonance tables for k = {-args.kmax}..{args.kmax} to {out}")
    return EXIT_OK


def _cmd_plots(args):
    src = args.input or args.out
    src = Path(src)
    default = (src.parent if src.is_file() else src) / "plots"
    files = emit_plots(src, args.plot_dir or default)
    for f in files:
        print(f"  {f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cyclic-thermo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="TOML or JSON run configuration")
        if out:
            sp.add_argument("--out", help="output directory")
        sp.add_argument("--seedless", action="store_true",
                        help="accepted for scripts; every run is deterministic and uses no seed")

    sp = sub.add_parser("validate", help="check a configuration and the model assumptions")
    common(sp, out=False)
    sp.add_argument("--cycles", type=int)
    sp.set_defaults(func=_cmd_validate)
    for name, func, hlp in (("run", _cmd_run, "simulate one configuration"),
                            ("sweep", _cmd_sweep, "simulate every point of the sweep axes")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--cycles", type=int, help="override run.cycles")
        sp.add_argument("--workers", type=int, default=1, help="parallel sweep points")
        sp.set_defaults(func=func)
    sp = sub.add_parser("resonances", help="second-order resonance tables")
    common(sp)
    sp.add_argument("--kmax", type=int, default=2)
    sp.set_defaults(func=_cmd_resonances)
    sp = sub.add_parser("plots", help="plot-ready CSV files from run or sweep output")
    sp.add_argument("input", nargs="?", help="run directory, sweep directory or manifest.csv")
    sp.add_argument("--out", help="run or sweep directory (alternative to the positional input)")
    sp.add_argument("--plot-dir", help="where to write (default: <input>/plots)")
    sp.add_argument("--seedless", action="store_true")
    sp.set_defaults(func=_cmd_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plots" and not (args.input or args.out):
        print("error: plots needs an input directory or manifest", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(json.dumps(_plain_tree({"error": "assumptions", "failed": exc.failed,
                                      "checks": exc.report.to_dict()})), file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
