"""Command-line front end: ``analyze``, ``synthesize``, ``verify`` and ``simulate``.

Exit codes: 0 success, 1 file or argument error, 2 violated modelling
assumption or failed synthesis, 3 verification failure, 4 divergent
simulation.  The default tolerance can be overridden with the
``RETROFITCTL_TOL`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .coprime import DEFAULT_MARGIN, doubly_coprime, is_detectable, is_stabilizable, sample_environment
from .errors import (
    AssumptionViolation,
    CoordinateError,
    DimensionError,
    NumericalDegeneracy,
    RetrofitError,
    SimulationDivergence,
    SynthesisError,
)
from .geometry import DEFAULT_TOL, arrange_outputs, build_coords, relative_degree
from .modelio import (
    ModelFileError,
    dumps,
    read_controller,
    read_plant,
    trajectory_csv,
    write_controller,
)
from .retrofit import CONSTRAINT_TOL, check_output_rectifying, check_retrofit, synthesize
from .sim import close_loop, simulate
from .statespace import DEFAULT_RANK_TOL

EXIT_OK, EXIT_IO, EXIT_ASSUMPTION, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3, 4
TOL_ENV_VAR = "RETROFITCTL_TOL"


class UsageError(RetrofitError):
    pass


def _default_tol(fallback: float) -> float:
    raw = os.environ.get(TOL_ENV_VAR)
    if raw is None:
        return fallback
    try:
        value = float(raw)
    except ValueError:
        raise UsageError(f"{TOL_ENV_VAR}={raw!r} is not a number") from None
    if not value > 0:
        raise UsageError(f"{TOL_ENV_VAR} must be positive")
    return value


def _emit(args: argparse.Namespace, report: dict, lines: list[str]) -> None:
    if args.json:
        print(dumps(report))
    else:
        print("\n".join(lines))


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.6g}"


def _finite(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


def cmd_analyze(args: argparse.Namespace) -> int:
    plant = read_plant(args.model)
    tol = args.tol
    raw = relative_degree(plant, tol)
    report: dict[str, Any] = {
        "dims": {"n": plant.n, "v": plant.m, "w": plant.w_dim, "u": plant.q, "y": plant.p},
        "relative_degrees_raw": list(raw.r),
        "environment_loop": {
            "stabilizable": is_stabilizable(plant.A, plant.L),
            "detectable": is_detectable(plant.A, plant.Gamma),
        },
    }
    lines = [
        f"plant: n={plant.n} v={plant.m} w={plant.w_dim} u={plant.q} y={plant.p}",
        f"relative degrees (given order): {list(raw.r)}",
        f"(A, L) stabilizable: {report['environment_loop']['stabilizable']}, "
        f"(Gamma, A) detectable: {report['environment_loop']['detectable']}",
    ]
    try:
        if plant.m >= plant.p:
            raise AssumptionViolation(
                f"rectifier synthesis requires m < p (m={plant.m}, p={plant.p})"
            )
        profile = arrange_outputs(plant, tol)
        coords = build_coords(plant, profile)
    except (AssumptionViolation, CoordinateError) as exc:
        report.update(assumption_satisfied=False, diagnostic=str(exc))
        lines.append(f"assumption violated: {exc}")
        _emit(args, report, lines)
        return EXIT_ASSUMPTION
    report.update(
        assumption_satisfied=True,
        relative_degrees=list(profile.r),
        T=profile.T.tolist(),
        normal_form_condition=float(coords.condition),
    )
    lines += [
        f"relative degrees (reordered): {list(profile.r)}",
        "output transform T:",
        *("  " + " ".join(f"{v: .6g}" for v in row) for row in profile.T),
        f"normal-form condition number: {coords.condition:.6g}",
        "relative-degree ordering satisfied",
    ]
    _emit(args, report, lines)
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    plant = read_plant(args.model)
    ctrl = synthesize(plant, tol=args.tol, margin=args.margin, rank_tol=args.rank_tol)
    settings = {"tol": args.tol, "margin": args.margin, "rank_tol": args.rank_tol}
    write_controller(args.out, ctrl, settings)
    d = ctrl.diagnostics
    report = {
        "output": str(args.out),
        "controller_order": ctrl.K.n,
        "relative_degrees": list(ctrl.rect.degree_data["profile"].r),
        "kgyv_residual": d["kgyv_residual"],
        "qhat_abscissa": _finite(d["qhat"].spectral_abscissa),
        "qhat_gyv_abscissa": _finite(d["qhat_gyv"].spectral_abscissa),
    }
    lines = [
        f"controller written to {args.out} (order {ctrl.K.n})",
        f"K G_yv residual: {d['kgyv_residual']:.3e}",
        f"Qhat spectral abscissa: {_fmt(report['qhat_abscissa'])}",
        f"Qhat Ghat_yv spectral abscissa: {_fmt(report['qhat_gyv_abscissa'])}",
    ]
    _emit(args, report, lines)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    plant = read_plant(args.model)
    K, metadata = read_controller(args.controller)
    if K.shape != (plant.q, plant.p):
        raise DimensionError(f"controller is {K.shape[0]}x{K.shape[1]}, plant needs {plant.q}x{plant.p}")
    rectifying = check_output_rectifying(K, plant, args.tol)
    f_wv = doubly_coprime(plant.G_wv)
    verdict = check_retrofit(K, plant, f_wv, args.tol, args.trials, args.seed, workers=args.workers)
    recorded = metadata.get("verdict", {}).get("output_rectifying")
    consistent = recorded is None or bool(recorded) == rectifying.passed
    passed = verdict.overall and consistent
    report = {
        "output_rectifying": {
            "passed": rectifying.passed,
            "kgyv_residual": rectifying.constraint_residual,
            "q_abscissa": _finite(rectifying.q_stable.spectral_abscissa),
        },
        "retrofit": {
            "passed": verdict.overall,
            "constraint_residual": verdict.constraint_residual,
            "qtilde_abscissa": _finite(verdict.qtilde_stable.spectral_abscissa),
            "mwv_invariance_residual": verdict.mwv_invariance_residual,
            "trials": args.trials,
            "seed": args.seed,
            "unstable_trials": sum(not t.stable for t in verdict.monte_carlo),
            "worst_abscissa": _finite(verdict.worst_abscissa),
        },
        "metadata_consistent": consistent,
        "passed": passed,
    }
    r = report["retrofit"]
    lines = [
        f"K G_yv residual: {rectifying.constraint_residual:.3e}; "
        f"Q abscissa {_fmt(report['output_rectifying']['q_abscissa'])} -> "
        f"{'output-rectifying' if rectifying.passed else 'not output-rectifying'}",
        f"G_wu Qt G_yv residual: {verdict.constraint_residual:.3e}",
        f"Qt spectral abscissa: {_fmt(r['qtilde_abscissa'])}",
        f"M_wv invariance residual: {verdict.mwv_invariance_residual:.3e}",
        f"Monte Carlo: {args.trials} environments (seed {args.seed}), "
        f"{r['unstable_trials']} unstable, worst abscissa {_fmt(r['worst_abscissa'])}",
    ]
    if not consistent:
        lines.append("controller file verdict does not match re-verification")
    lines.append("PASS" if passed else "FAIL")
    _emit(args, report, lines)
    return EXIT_OK if passed else EXIT_VERIFY


def _parse_x0(text: str, n: int, seed: int) -> np.ndarray:
    if text == "random":
        return np.random.default_rng(seed).standard_normal(n)
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"--x0 must be 'random' or {n} comma-separated numbers") from None
    if values.shape != (n,) or not np.all(np.isfinite(values)):
        raise UsageError(f"--x0 needs {n} finite values for the plant state, got {text!r}")
    return values


def cmd_simulate(args: argparse.Namespace) -> int:
    plant = read_plant(args.model)
    K, _ = read_controller(args.controller)
    if not (args.dt > 0 and args.t_final > 0):
        raise UsageError("--dt and --t-final must be positive")
    env = sample_environment(doubly_coprime(plant.G_wv), args.env_order, args.env_seed)
    cl = close_loop(plant, env, K)
    x0 = np.zeros(cl.realization.n)
    x0[: plant.n] = _parse_x0(args.x0, plant.n, args.env_seed)
    try:
        traj = simulate(cl, x0, None, args.dt, args.t_final)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    text = trajectory_csv(cl, traj)
    if args.out == "-":
        sys.stdout.write(text)
        return EXIT_OK
    Path(args.out).write_text(text)
    norms = np.linalg.norm(traj.states, axis=1)
    report = {
        "output": str(args.out),
        "steps": len(traj.times) - 1,
        "closed_loop_abscissa": _finite(cl.stability().spectral_abscissa),
        "initial_state_norm": float(norms[0]),
        "final_state_norm": float(norms[-1]),
    }
    lines = [
        f"trajectory written to {args.out} ({report['steps']} steps)",
        f"closed-loop spectral abscissa: {_fmt(report['closed_loop_abscissa'])}",
        f"state norm: {norms[0]:.6g} -> {norms[-1]:.6g}",
    ]
    _emit(args, report, lines)
    return EXIT_OK


def build_parser(default_tol: float, verify_tol: float) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrofitctl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, tol: float | None) -> None:
        p.add_argument("model", help="plant JSON file")
        if tol is not None:
            p.add_argument("--tol", type=float, default=tol, help=f"tolerance (default {tol:g})")
        p.add_argument("--json", action="store_true", help="machine-readable report")

    p = sub.add_parser("analyze", help="relative-degree profile and structural checks")
    common(p, default_tol)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", help="build an output-rectifying retrofit controller")
    common(p, default_tol)
    p.add_argument("--out", required=True, help="controller JSON to write")
    p.add_argument("--margin", type=float, default=DEFAULT_MARGIN,
                   help="decay margin of the internal controller")
    p.add_argument("--rank-tol", type=float, default=DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="check a controller against the retrofit conditions")
    common(p, verify_tol)
    p.add_argument("controller", help="controller JSON file")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate the closed loop in a sampled environment")
    common(p, None)
    p.add_argument("controller", help="controller JSON file")
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument("--env-order", type=int, default=2)
    p.add_argument("--x0", default="random", help="'random' or comma-separated plant state")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-final", type=float, default=10.0)
    p.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser(_default_tol(DEFAULT_TOL), _default_tol(CONSTRAINT_TOL))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ModelFileError, UsageError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AssumptionViolation, CoordinateError, SynthesisError, NumericalDegeneracy) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except SimulationDivergence as exc:
        print(f"simulate: diverged at t={exc.time:.6g}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except RetrofitError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
