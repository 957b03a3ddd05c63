"""Command line entry points.

Exit codes: 0 success, 1 verdict failure, 2 configuration error,
3 solver or step failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import parse_config
from .errors import ConfigurationError, SolverError, StepFailure
from .output import CHECKPOINT_NAME, default_outdir, resume as resume_run
from .reports import write_report
from .snapshots import read_snapshot, write_checkpoint

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bchsim",
        description="Pseudo-spectral Brinkman-Cahn-Hilliard simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", default=None, help="output directory (default: $BCHSIM_OUT or .)")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--threads", type=int, default=None, help="override [run] threads")
        p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                       help="reject unknown config keys (default on)")
        p.add_argument("--quiet", action="store_true")

    p_run = sub.add_parser("run", help="single simulation")
    common(p_run)

    p_sweep = sub.add_parser("sweep", help="harness experiments")
    p_sweep.add_argument("experiment", choices=("darcy", "galerkin", "beta", "dt"))
    common(p_sweep)
    p_sweep.add_argument("--levels", type=int, default=None,
                         help="level count for the darcy sweep")

    p_check = sub.add_parser("check", help="invariant suite on a snapshot or config")
    common(p_check)
    p_check.add_argument("--snapshot", default=None, help="CHBK snapshot to verify")

    p_resume = sub.add_parser("resume", help="continue from a checkpoint")
    common(p_resume)
    p_resume.add_argument("--checkpoint", default=None,
                          help=f"checkpoint path (default: <out>/{CHECKPOINT_NAME})")
    return parser


def _load_config(args):
    config = parse_config(args.config, strict=args.strict)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.threads is not None:
        config = replace(config, threads=args.threads)
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    outdir = default_outdir(args.out)
    from .evolution import run

    result = run(config, outdir=outdir)
    if not args.quiet:
        state = result.final_state
        print(f"run finished at t={state.t:g} after {state.step_index} steps; "
              f"E={state.energy.total:.6g}")
        print(f"outputs in {outdir}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from . import harness

    config = _load_config(args)
    outdir = default_outdir(args.out)
    if args.experiment == "darcy":
        levels = args.levels if args.levels is not None else config.sweep.levels
        report = harness.exp_darcy_limit(config, levels=levels)
    elif args.experiment == "galerkin":
        report = harness.exp_galerkin_refinement(config, config.sweep.cutoffs)
    elif args.experiment == "beta":
        report = harness.exp_regularization_ablation(config, config.sweep.betas)
    else:
        report = harness.exp_self_convergence(config, config.sweep.dts)
    path = write_report(report, outdir)
    if not args.quiet:
        for v in report.verdicts:
            mark = "pass" if v.passed else "FAIL"
            print(f"[{mark}] {v.name}: measured {v.measured:.6g} vs threshold {v.threshold:.6g}")
        print(f"report written to {path}")
    return EXIT_OK if report.all_passed else EXIT_VERDICT


def _cmd_check(args) -> int:
    config = _load_config(args)
    if not args.snapshot:
        if not args.quiet:
            print("config ok")
        return EXIT_OK

    import numpy as np

    from .energetics import compute_mu, compute_w, mean_mu
    from .spectral import ScalarField, VectorField, divergence_inf_norm

    grid, fields = read_snapshot(args.snapshot)
    if grid.sizes != config.grid.sizes or tuple(grid.lengths) != tuple(config.grid.lengths):
        raise ConfigurationError(
            f"snapshot grid {grid.sizes} does not match configured grid {config.grid.sizes}"
        )
    if "phi" not in fields:
        raise ConfigurationError(f"{args.snapshot}: no 'phi' field")
    phi = ScalarField(config.grid, fields["phi"])
    model = config.model
    w = compute_w(phi, model)
    mu = compute_mu(phi, model, w=w)

    failures = []

    def check(name, err, tol):
        ok = err <= tol
        if not ok:
            failures.append(name)
        if not args.quiet:
            print(f"[{'pass' if ok else 'FAIL'}] {name}: {err:.3e} (tol {tol:.1e})")

    scale = max(1.0, float(np.max(np.abs(mu.values))))
    if "w" in fields:
        check("w_consistency", float(np.max(np.abs(w.values - fields["w"]))),
              1e-10 * max(1.0, float(np.max(np.abs(w.values)))))
    if "mu" in fields:
        check("mu_consistency", float(np.max(np.abs(mu.values - fields["mu"]))), 1e-10 * scale)
    mu_bar = float(np.mean(mu.values))
    check("mean_mu_identity", abs(mu_bar - mean_mu(phi, model, w=w)),
          1e-10 * max(1.0, abs(mu_bar)))
    vnames = [f"v_{i}" for i in range(1, grid.ndim + 1)]
    if all(n in fields for n in vnames):
        v = VectorField.from_arrays(config.grid, [fields[n] for n in vnames])
        sup = float(np.max(np.abs(v.stack())))
        check("v_divergence_free", divergence_inf_norm(v),
              1e-10 * max(sup / min(grid.lengths), 1e-300))
    return EXIT_OK if not failures else EXIT_VERDICT


def _cmd_resume(args) -> int:
    config = _load_config(args)
    outdir = default_outdir(args.out)
    checkpoint = args.checkpoint or os.path.join(outdir, CHECKPOINT_NAME)
    result = resume_run(config, checkpoint, outdir)
    if not args.quiet:
        state = result.final_state
        print(f"resumed run finished at t={state.t:g} (step {state.step_index})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "resume":
            return _cmd_resume(args)
        parser.error(f"unknown command {args.command}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except StepFailure as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        if exc.state is not None and args.out:
            path = os.path.join(default_outdir(args.out), "failure.chbk")
            try:
                write_checkpoint(path, exc.state, dt=0.0, streak=0, seed=0)
                print(f"state snapshot written to {path}", file=sys.stderr)
            except OSError:
                pass
        return EXIT_SOLVER
    return EXIT_OK


def entrypoint() -> None:
    raise SystemExit(main())
