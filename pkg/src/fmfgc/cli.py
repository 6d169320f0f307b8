"""Command line front end: solve, simulate, validate, sweep-theta.

Every command reads one config file, resolves it to a manifest, and
echoes that manifest into the output directory so the run is
reproducible from its artifacts alone.  Failures exit nonzero with a
JSON summary on stderr; successful runs print a JSON summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .artifacts import (
    emit_artifacts,
    emit_simulation,
    emit_theta_table,
    read_field,
    write_csv,
)
from .equilibrium import (
    analytic_base,
    equilibrium_certificate,
    equilibrium_drift,
    solve_equilibrium,
    sweep_theta,
)
from .errors import FmfgcError
from .manifest import RunManifest, default_manifest, parse_config
from .measures import GridMeasure, wasserstein_1d
from .particles import empirical_measure, holder_wasserstein_check, simulate_sde
from .validation import AcceptanceContext, run_all

_THREAD_HINTS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_hint(threads: int | None) -> None:
    # Hints for any pools spawned later; results never depend on them.
    if threads is not None:
        if threads < 1:
            raise FmfgcError(f"--threads must be at least 1, got {threads}")
        for var in _THREAD_HINTS:
            os.environ[var] = str(threads)


def _load_manifest(args) -> RunManifest:
    if args.config is not None:
        manifest = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        manifest = default_manifest()
    return manifest.with_overrides(outdir=args.out, seed=args.seed, theta=args.theta)


def _summary(payload: dict, ok: bool = True) -> None:
    print(json.dumps(payload), file=sys.stdout if ok else sys.stderr, flush=True)


def _cmd_solve(args) -> int:
    mf = _load_manifest(args)
    grid = mf.spatial_grid()
    tg = mf.time_grid()
    model = mf.model()
    m0 = mf.initial_measure(grid)
    u_t = mf.terminal_condition(grid)
    if mf.theta == 0.0:
        sol = analytic_base(model, m0, u_t, tg)
    else:
        sol = solve_equilibrium(
            model, m0, u_t, tg, theta_target=mf.theta, cfg=mf.loop_config()
        )
    emit_artifacts(sol, mf, mf.outdir)
    cert = equilibrium_certificate(sol, model)
    payload = {
        "command": "solve",
        "outdir": mf.outdir,
        "theta": mf.theta,
        "converged": sol.converged,
        "sweeps": sol.sweeps,
        "duality": cert.duality,
        "exploitability": cert.exploitability,
    }
    if not sol.converged:
        _summary(payload, ok=False)
        return 2
    _summary(payload)
    return 0


def _cmd_simulate(args) -> int:
    mf = _load_manifest(args)
    outdir = Path(mf.outdir)
    grid = mf.spatial_grid()
    tg = mf.time_grid()
    m0 = mf.initial_measure(grid)
    drift = read_field(outdir / "alpha.bin")
    expected = (tg.n_steps + 1, grid.dim) + grid.shape
    if drift.shape != expected:
        raise FmfgcError(
            f"stored control path has shape {drift.shape}, expected {expected}; "
            f"run solve with this config first"
        )
    m_path = read_field(outdir / "m.bin")
    path = simulate_sde(
        drift,
        m0,
        mf.particle_count,
        tg,
        seed=mf.seed,
        store_stride=mf.resolved_stride(),
    )
    emp = empirical_measure(path.terminal(), grid)
    terminal = GridMeasure(grid, m_path[-1])
    w1 = wasserstein_1d(emp, terminal)
    report = None
    if len(path.times) >= 8:
        report = holder_wasserstein_check(path, b_sup=float(np.max(np.abs(drift))))
    emit_simulation(path, report, outdir)
    (outdir / "manifest.cfg").write_text(mf.to_text())
    exponent = None
    if report is not None and not np.isnan(report.exponent):
        exponent = report.exponent
    payload = {
        "command": "simulate",
        "outdir": mf.outdir,
        "particles": mf.particle_count,
        "w1_terminal": w1,
        "holder_passed": None if report is None else report.passed,
        "holder_exponent": exponent,
    }
    _summary(payload)
    return 0


def _cmd_validate(args) -> int:
    ctx = AcceptanceContext()
    results = run_all(ctx, stream=sys.stdout)
    if args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_csv(
            outdir / "validation.csv",
            ["index", "name", "passed", "detail", "seconds"],
            [
                [r.index, r.name, int(r.passed), r.detail, f"{r.seconds:.3f}"]
                for r in results
            ],
        )
    failed = [r.index for r in results if not r.passed]
    payload = {
        "command": "validate",
        "total": len(results),
        "failed": failed,
    }
    if failed:
        _summary(payload, ok=False)
        return 2
    _summary(payload)
    return 0


def _cmd_sweep_theta(args) -> int:
    mf = _load_manifest(args)
    grid = mf.spatial_grid()
    tg = mf.time_grid()
    model = mf.model()
    m0 = mf.initial_measure(grid)
    u_t = mf.terminal_condition(grid)
    stages = sweep_theta(model, m0, u_t, tg, cfg=mf.loop_config())
    outdir = Path(mf.outdir)
    emit_theta_table(stages, outdir)
    (outdir / "manifest.cfg").write_text(mf.to_text())
    all_converged = all(stage.converged for stage in stages)
    payload = {
        "command": "sweep-theta",
        "outdir": mf.outdir,
        "thetas": [stage.theta for stage in stages],
        "converged": all_converged,
    }
    if not all_converged:
        _summary(payload, ok=False)
        return 2
    _summary(payload)
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
    "sweep-theta": _cmd_sweep_theta,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmfgc",
        description=(
            "Mean field games of controls under fractional diffusion: "
            "equilibrium solver, particle validation, acceptance suite."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "compute the equilibrium triple for a config and write artifacts",
        "simulate": "run the particle validator against stored solve artifacts",
        "validate": "execute the acceptance criteria; nonzero exit on any failure",
        "sweep-theta": "run the homotopy schedule and emit the scaling table",
    }
    for name, help_text in helps.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, default=None, help="config file path")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--seed", type=int, default=None, help="seed override")
        cmd.add_argument("--threads", type=int, default=None, help="thread-pool hint")
        cmd.add_argument("--theta", type=float, default=None, help="target theta override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_hint(args.threads)
        return _COMMANDS[args.command](args)
    except FmfgcError as exc:
        _summary(
            {
                "command": args.command,
                "error": type(exc).__name__,
                "message": str(exc),
            },
            ok=False,
        )
        return 1
    except OSError as exc:
        _summary(
            {
                "command": args.command,
                "error": type(exc).__name__,
                "message": str(exc),
            },
            ok=False,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
