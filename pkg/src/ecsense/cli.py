"""Command-line front end: ``run``, ``sweep`` and ``check``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 a correctability check disagreeing with its declared expectation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .codes import ProtocolParams, check_correctability
from .config import ConfigError, RunConfig, load_config, sweep_point_config
from .engine import run_ensemble
from .estimators import (FringeNodeError, SensitivityParams, delta_g, delta_g_ec, delta_g_strong,
                         fit_coherence_time, optimal_time)
from .protocols import PROTOCOLS, build_protocol, check_protocol, make_ghz_decay_case

__all__ = ["main", "execute_run", "execute_sweep", "execute_check", "EXIT_OK", "EXIT_CONFIG",
           "EXIT_RUNTIME", "EXIT_MISMATCH"]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MISMATCH = 0, 1, 2, 3
WORKERS_ENV = "ECSENSE_WORKERS"

log = logging.getLogger("ecsense")


def _f17(x) -> str:
    return format(float(x), ".17g")


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_csv(path: Path, header: list[str], rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f17(x) if isinstance(x, (float, np.floating, int, np.integer))
                        and not isinstance(x, bool) else x for x in row])


def resolve_workers(flag: int | None) -> int:
    """Worker count: the environment variable wins over ``--workers``."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be at least 1")
        return n
    if flag is None:
        return 1
    if flag < 1:
        raise ConfigError("--workers must be at least 1")
    return flag


# -- run ------------------------------------------------------------------------------

def _run_sensitivity(cfg: RunConfig, out: Path | None) -> dict:
    p = cfg.curves[0].params
    T1 = 1.0 / p.gamma
    g = p.g
    n = cfg.sensitivity.get("n", 1.0)
    t_max = cfg.sensitivity.get("t_max", T1)
    T = cfg.sensitivity.get("T", t_max)
    t_opt, dg_opt = optimal_time(g, T1, n, T, t_max)
    dg_ec = delta_g_ec(T1, n, T)
    result = {"T1": T1, "g": g, "gT1": g * T1, "n": n, "T": T, "t_max": t_max, "t_opt": t_opt,
              "delta_g_bare": dg_opt, "delta_g_strong": delta_g_strong(g, T1, n, T),
              "delta_g_ec": dg_ec, "ratio_ec_over_bare": dg_ec / dg_opt}
    if out is not None:
        grid = cfg.sensitivity.get("grid", 200)
        ts = np.linspace(t_max / grid, t_max, grid)
        rows = []
        for t in ts:
            try:
                v = delta_g(SensitivityParams(t, T1, g, n, T))
            except FringeNodeError:
                v = math.nan
            rows.append((t, v))
        _write_csv(out / "timeseries.csv", ["time", "delta_g"], rows)
    return result


def execute_run(cfg: RunConfig, out: Path | None, workers: int = 1, dry_run: bool = False) -> dict:
    """Run every curve of ``cfg`` and write ``timeseries.csv`` and ``summary.json``."""
    if dry_run:
        return {"plan": cfg.plan()}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    summary = {"ecsense_version": __version__, "config": cfg.raw, "kind": cfg.kind,
               "master_seed": cfg.master_seed, "workers": workers}
    if cfg.kind == "sensitivity":
        summary["sensitivity"] = _run_sensitivity(cfg, out)
    else:
        columns, header, fits, photons = [], ["time"], {}, {}
        times = None
        for c in cfg.curves:
            spec = build_protocol(c.protocol, c.params)
            log.info("curve %s: %s, %d trajectories", c.label, c.protocol, cfg.n_traj)
            st = run_ensemble(spec, c.schedule, cfg.n_traj, cfg.master_seed, workers=workers,
                              ec=c.ec, keep_batch=False)
            times = st.times
            prefix = "" if len(cfg.curves) == 1 else f"{c.label}:"
            for o in cfg.outputs:
                header += [f"{prefix}{o}_mean", f"{prefix}{o}_stderr"]
                columns += [st.mean[o], st.stderr[o]]
            if spec.ideal_reference is not None:
                header.append(f"{prefix}reference")
                columns.append(np.array([spec.ideal_reference(t) for t in st.times]))
            photons[c.label] = st.photons_mean
            if cfg.fit and (cfg.fit["curves"] is None or c.label in cfg.fit["curves"]):
                try:
                    r = fit_coherence_time(st.times, st.mean[cfg.fit["observable"]],
                                           cfg.fit["period"], cfg.fit["mode"], cfg.fit["fit_amplitude"])
                    fits[c.label] = {"T2_star": r.as_dict()}
                except (ValueError, RuntimeError) as exc:
                    fits[c.label] = {"T2_star": None, "error": str(exc)}
        if out is not None:
            _write_csv(out / "timeseries.csv", header,
                       zip(times, *columns) if columns else ((t,) for t in times))
        summary.update(n_traj=cfg.n_traj, curves=[c.label for c in cfg.curves],
                       photons_mean=photons, fits=fits)
    summary["wall_clock_s"] = time.perf_counter() - t_start
    if out is not None:
        _write_json(out / "summary.json", summary)
    return summary


def execute_sweep(cfg: RunConfig, out: Path | None, workers: int = 1, dry_run: bool = False) -> dict:
    """One run per sweep point (seed ``master_seed + k``) plus ``sweep.csv``."""
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' block", source=cfg.source)
    pts = cfg.sweep["points"]
    resolved = [sweep_point_config(cfg, k) for k in range(len(pts))]
    if dry_run:
        return {"plan": [{"label": p["label"], "set": p["set"], **r.plan()}
                         for p, r in zip(pts, resolved)]}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows, results = [], []
    keys = sorted({k for p in pts for k in p["set"]})
    for k, (p, r) in enumerate(zip(pts, resolved)):
        sub = None if out is None else out / f"point_{k:03d}"
        log.info("sweep point %d/%d: %s", k + 1, len(pts), p["label"])
        s = execute_run(r, sub, workers)
        results.append(s)
        vals = [p["set"].get(key, "") for key in keys]
        if r.kind == "sensitivity":
            sens = s["sensitivity"]
            rows.append([k, p["label"], *vals, *(sens[c] for c in _SENS_COLS)])
        else:
            for label in r.curves:
                fit = s["fits"].get(label.label, {}).get("T2_star") or {}
                rows.append([k, p["label"], *vals, label.label, r.master_seed,
                             fit.get("fitted_value", math.nan), fit.get("stderr", math.nan),
                             fit.get("reliable", "")])
    if cfg.kind == "sensitivity":
        header = ["point", "label", *keys, *_SENS_COLS]
    else:
        header = ["point", "label", *keys, "curve", "seed", "T2_star", "T2_star_stderr", "T2_star_reliable"]
    if out is not None:
        _write_csv(out / "sweep.csv", header,
                   ([str(x) if isinstance(x, str) and not isinstance(x, bool) else x for x in row]
                    for row in rows))
    return {"header": header, "rows": rows, "points": results}


# generic, well-conditioned constants for the algebraic checks (verdicts do not
# depend on them; the Raman schemes just need a finite detuning)
CHECK_PARAMS = ProtocolParams(g=1.0, nu=0.1, omega=1.0, delta=20.0, gamma=1.0, omega_g=0.5)

_SENS_COLS = ["T1", "g", "gT1", "t_opt", "delta_g_bare", "delta_g_strong", "delta_g_ec",
              "ratio_ec_over_bare"]


# -- check ------------------------------------------------------------------------------

def execute_check(target: str) -> dict:
    """Correctability report for one protocol or ``all`` (plus the GHZ decay case)."""
    if target != "all" and target not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {target!r}; available: all, {', '.join(sorted(PROTOCOLS))}")
    names = sorted(PROTOCOLS) if target == "all" else [target]
    report = {}
    for name in names:
        report[name] = check_protocol(build_protocol(name, CHECK_PARAMS))
    if target == "all":
        code, errs = make_ghz_decay_case()
        reps = check_correctability(code, errs)
        verdict = all(r.correctable for r in reps)
        report["ghz_decay_case"] = {"decay": {"expected_correctable": False, "correctable": verdict,
                                              "matches_expectation": not verdict,
                                              "errors": [r.as_dict() for r in reps]}}
    return report


def _print_check(report: dict, stream):
    stream.write(f"{'protocol':<18} {'error set':<16} {'error':<22} {'correctable':<12} "
                 f"{'violation':<12} {'expected':<9}\n")
    for proto, sets in report.items():
        for set_name, r in sets.items():
            flag = "" if r["matches_expectation"] else "  MISMATCH"
            for e in r["errors"]:
                stream.write(f"{proto:<18} {set_name:<16} {e['error']:<22} "
                             f"{'yes' if r['correctable'] else 'no':<12} {e['violation_norm']:<12.3e} "
                             f"{'yes' if r['expected_correctable'] else 'no':<9}{flag}\n")


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecsense", description=(
        "Monte-Carlo simulation of error-corrected quantum sensing protocols."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a configuration"), ("sweep", "run a configuration's sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", default=None, help="output directory (default: ./out/<config name>)")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (overridden by ${WORKERS_ENV})")
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    p = sub.add_parser("check", help="Knill-Laflamme report for a protocol or 'all'")
    p.add_argument("target", help="protocol name or 'all'")
    p.add_argument("--out", default=None, help="directory for check.json (default: current)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "check":
            report = execute_check(args.target)
            _print_check(report, sys.stdout)
            out = Path(args.out) if args.out else Path.cwd()
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "check.json", report)
            ok = all(r["matches_expectation"] for sets in report.values() for r in sets.values())
            return EXIT_OK if ok else EXIT_MISMATCH
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.raw = dict(cfg.raw, master_seed=args.seed)
            cfg.master_seed = args.seed
        workers = resolve_workers(args.workers)
        out = Path(args.out) if args.out else Path("out") / Path(args.config).stem
        if args.command == "run":
            res = execute_run(cfg, None if args.dry_run else out, workers, args.dry_run)
        else:
            res = execute_sweep(cfg, None if args.dry_run else out, workers, args.dry_run)
        if args.dry_run:
            print(json.dumps(res["plan"], indent=2, default=_json_default))
        else:
            print(f"wrote {out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # runtime fault inside a run
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
