"""Command-line entry point: ``hflandau <subcommand> [--config PATH] [--out DIR] [--threads N] [--fast]``.

Exit codes: 0 success, 1 configuration parse error, 2 failed precondition,
3 numerical abort, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_PARSE, EXIT_PRECONDITION, EXIT_ABORT, EXIT_VERIFY = 1, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class PreconditionError(RuntimeError):
    pass


def _cap_threads(n):
    n = n or os.environ.get("HF_LANDAU_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = str(int(n))


def _version():
    from . import __version__
    return __version__


class Manifest:
    """Run manifest.  ``manifest.json`` is deterministic; wall-clock times go to ``timings.json``."""

    def __init__(self, command, cfg, warnings):
        from dataclasses import asdict
        self.data = {"command": command, "version": _version(), "config": asdict(cfg),
                     "config_sha256": cfg.digest(), "warnings": list(warnings), "results": {}, "checks": {}}
        self.times = {}

    def stage(self, name):
        manifest = self

        class _Stage:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                manifest.times[name] = time.perf_counter() - self.start
        return _Stage()

    def write(self, out: Path):
        (out / "manifest.json").write_text(json.dumps(_clean(self.data), indent=2, sort_keys=True) + "\n")
        (out / "timings.json").write_text(json.dumps(self.times, indent=2, sort_keys=True) + "\n")


def _clean(obj):
    import numpy as np
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _require(cfg, grid):
    from .model import assumption_check
    rep = assumption_check(cfg.profile(), cfg.potentials(), grid, cfg.eps1_threshold)
    if not rep.passed:
        raise PreconditionError("structural assumptions fail: " + ", ".join(
            f"{n} ({rep.checks[n].detail})" for n in rep.failed()))
    return rep


# ---------------------------------------------------------------- subcommands

def cmd_penrose(cfg, out, man, fast):
    import numpy as np
    from .numerics import MomentumGrid
    from .penrose import PenroseConfig, level_set_h, stability_scan
    d = 1 if fast else cfg.dimension
    _require(cfg, MomentumGrid(d, cfg.kmax, cfg.grid_points))
    prof, pots = cfg.profile(), cfg.potentials()
    with man.stage("penrose"):
        fld = cfg.field(for_scan=True, d=d)
        rep = stability_scan(fld, prof, pots, PenroseConfig(cfg.scan_lambda, cfg.scan_kmax, cfg.scan_nk))
    (out / "penrose.json").write_text(rep.to_json() + "\n")
    with man.stage("level_set"):
        for kn in (0.25, 1.0, 4.0):
            level_set_h(fld, prof, kn).write_csv(out / f"level_set_k{kn:g}.csv")
    man.data["results"]["penrose"] = {"c0": rep.c0, "min_re_D0": rep.min_re_D0,
                                      "winding": [w["count"] for w in rep.winding]}
    if not np.isfinite(rep.c0):
        raise FloatingPointError("non-finite stability constant")


def cmd_green(cfg, out, man, fast):
    from .green import green_decay_check, green_table
    from .numerics import MomentumGrid
    d = 1 if fast else cfg.dimension
    _require(cfg, MomentumGrid(d, cfg.kmax, cfg.grid_points))
    with man.stage("green"):
        fld = cfg.field(for_scan=True, d=d)
        table = green_table(fld, cfg.profile(), cfg.potentials().w1, cfg.green_ks())
    table.write_csv(out / "green.csv")
    (out / "green_meta.json").write_text(table.meta_json() + "\n")
    if table.G.any():
        man.data["results"]["green_decay"] = {f"{k:g}": f.exponent for k, f in
                                              zip(table.knorm, green_decay_check(table))}


def cmd_linear(cfg, out, man, fast):
    import csv
    import numpy as np
    from .dispersion import build_dispersion
    from .numerics import MomentumGrid
    from .response import LinearModel, gaussian_kernel, linear_volterra, ode_oracle
    from .simulate import auto_dt
    d = cfg.linear_dimension
    grid = MomentumGrid(d, cfg.linear_kmax, cfg.linear_grid_points)
    _require(cfg, grid)
    prof, pots = cfg.profile(), cfg.potentials()
    with man.stage("linear"):
        model = LinearModel(build_dispersion(prof, pots, grid=grid), prof, pots, grid)
        nu0 = gaussian_kernel(model, cfg.initial_amplitude, 1.0)
        dt = cfg.dt or auto_dt(model, cfg.horizon)
        oracle = ode_oracle(model, nu0, cfg.horizon, dt)
        volt = linear_volterra(model, oracle.t, nu0)
    scale = np.max(np.abs(oracle.rho), axis=0)
    err = np.max(np.abs(volt.rho - oracle.rho), axis=0) / np.where(scale > 1e-10, scale, 1.0)
    err = np.where(scale > 1e-10, err, 0.0)
    with open(out / "linear.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "kx", "ky", "kz", "re_rho_volterra", "im_rho_volterra", "re_rho_oracle",
                     "im_rho_oracle", "max_rel_err"])
        for j, t in enumerate(oracle.t):
            for i, k in enumerate(oracle.k):
                kk = list(k) + [0.0] * (3 - d)
                wr.writerow([repr(float(t))] + [repr(float(x)) for x in kk] +
                            [repr(float(v)) for v in (volt.rho[j, i].real, volt.rho[j, i].imag,
                                                      oracle.rho[j, i].real, oracle.rho[j, i].imag, err[i])])
    man.data["results"]["linear"] = {"max_rel_err": float(err.max()), "dt": dt}


def cmd_simulate(cfg, out, man, fast):
    import numpy as np
    from .dispersion import build_dispersion
    from .response import LinearModel, gaussian_kernel
    from .simulate import DiagnosticsParams, run_simulation, write_checkpoint
    grid = cfg.grid()
    _require(cfg, grid)
    prof, pots = cfg.profile(), cfg.potentials()
    with man.stage("simulate"):
        model = LinearModel(build_dispersion(prof, pots, grid=grid), prof, pots, grid)
        nu0 = gaussian_kernel(model, cfg.initial_amplitude, cfg.initial_width)
        params = DiagnosticsParams(sigma=cfg.sigma, N=cfg.weight_order, delta=cfg.delta)
        res = run_simulation(model, nu0, cfg.horizon, dt=cfg.dt or None, snapshot_every=cfg.snapshot_every,
                             params=params)
    res.density.write_csv(out / "density.csv")
    (out / "diagnostics.json").write_text(res.diagnostics.to_json() + "\n")
    sc = res.scattering
    scat = {"conclusive": sc.conclusive, "fit": None if sc.fit is None else
            sc.fit.as_dict(),
            "t": list(sc.t), "cauchy": list(sc.cauchy), "meta": sc.meta}
    (out / "scattering.json").write_text(json.dumps(_clean(scat), indent=2, sort_keys=True) + "\n")
    write_checkpoint(out / "final.ckpt", grid, float(res.snapshot_t[-1]), res.snapshots[-1])
    man.data["results"]["simulate"] = {"density_fit": res.diagnostics.density_fit,
                                       "mass_drift": res.mass_drift, "hermitian_defect": res.hermitian_defect,
                                       "scattering_exponent": None if sc.fit is None else sc.fit.exponent}
    if not np.isfinite(res.mass_drift):
        raise FloatingPointError("non-finite mass drift")


def cmd_verify(cfg, out, man, fast):
    from .acceptance import run_suite
    with man.stage("verify"):
        outcomes = run_suite(fast=fast, report=lambda s: print(s, flush=True))
    for o in outcomes:
        man.data["checks"][o.name] = {"passed": o.passed, "measured": o.measured, "criterion": o.criterion}
        man.times[o.name] = {"total": o.seconds, **o.timing}
    failed = [o.name for o in outcomes if not o.passed]
    print(f"{len(outcomes) - len(failed)}/{len(outcomes)} criteria passed")
    return EXIT_VERIFY if failed else 0


def cmd_report(cfg, out, man, fast):
    merged = {}
    for name in ("penrose.json", "green_meta.json", "diagnostics.json", "scattering.json", "manifest.json"):
        p = out / name
        if p.exists():
            merged[name.removesuffix(".json")] = json.loads(p.read_text())
    if not merged:
        raise PreconditionError(f"no results found in {out}")
    (out / "report.json").write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    man.data["results"]["report"] = sorted(merged)


COMMANDS = {"penrose": cmd_penrose, "green": cmd_green, "linear": cmd_linear, "simulate": cmd_simulate,
            "verify": cmd_verify, "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="hflandau", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--out", type=Path, default=Path("hflandau_out"), help="output directory")
    ap.add_argument("--threads", type=int, help="cap on BLAS/OpenMP worker threads")
    ap.add_argument("--fast", action="store_true", help="one-dimensional variants")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _cap_threads(args.threads)
    from .config import ConfigError, parse_config
    from .simulate import NumericalAbort
    try:
        cfg, warnings = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    args.out.mkdir(parents=True, exist_ok=True)
    command = args.command + (" --fast" if args.fast else "")
    man = Manifest(command, cfg, warnings)
    try:
        code = COMMANDS[args.command](cfg, args.out, man, args.fast) or 0
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    if args.command != "report":
        man.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
