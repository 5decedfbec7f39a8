"""Command-line interface.

Subcommands ``solve``, ``oracle``, ``saddle``, ``diversity2d`` and
``sweep`` each write CSV files plus ``manifest.json`` into ``--out``
(default: ``$RSPO_OUT_DIR`` or ``./rspo_out``).

Exit status: 0 success, 2 invalid input or config, 3 solver/runtime
failure, 4 oracle non-convergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import SolverConfig, load_solver_config
from .divergences import RegularizerSpec
from .errors import NonConvergenceError, RangeError, RSPOError, ValidationError
from .experiments import (Diversity2DSpec, run_diversity2d, run_oracle, run_saddle, run_sweep,
                          write_diversity, write_gap_report, write_policy, write_saddle,
                          write_sweep, write_trajectory)
from .game import game_to_dict, load_game
from .metrics import SaddleSpec
from .outputs import write_manifest
from .solvers import run_solver

OUT_ENV = "RSPO_OUT_DIR"
DEFAULT_OUT = "rspo_out"

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_ORACLE = 0, 2, 3, 4


def _default_out():
    return os.environ.get(OUT_ENV, DEFAULT_OUT)


def _common(p, need_config=False, need_game=False):
    p.add_argument("--config", type=Path, required=need_config, help="JSON config file")
    p.add_argument("--game", type=Path, required=need_game, help="JSON game file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None,
                   help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--quiet", action="store_true", help="suppress the summary line")


def build_parser():
    parser = argparse.ArgumentParser(prog="rspo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a solver on a game and record its trajectory")
    _common(p, need_config=True, need_game=True)
    p.add_argument("--no-gap", action="store_true", help="skip the per-iteration duality gap")

    p = sub.add_parser("oracle", help="regularized equilibrium by damped best responses")
    _common(p, need_game=True)
    p.add_argument("--reg", default="reverse_kl",
                   choices=["reverse_kl", "forward_kl", "chi_square"])
    p.add_argument("--reg-weight", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-rounds", type=int, default=100_000)

    p = sub.add_parser("saddle", help="misspecified saddle: MWU vs regularized MWU")
    _common(p)
    d = SaddleSpec()
    p.add_argument("--alpha-true", type=float, default=d.alpha_true)
    p.add_argument("--alpha-surrogate", type=float, default=d.alpha_surrogate)
    p.add_argument("--bins", type=int, default=d.bins)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--iters", type=int, default=d.iters)
    p.add_argument("--center", type=float, nargs=2, default=list(d.reference_center),
                   metavar=("Y", "YPRIME"))
    p.add_argument("--width", type=float, default=d.reference_width,
                   help="reference standard deviation in grid cells")

    p = sub.add_parser("diversity2d", help="ring-reward grid game: MWU vs forward-KL RSPO")
    _common(p)
    p.add_argument("--grid", type=int)
    p.add_argument("--ring-radius", type=float)
    p.add_argument("--ring-width", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--lam", type=float, help="forward-KL loss weight of the RSPO arm")
    p.add_argument("--eta", type=float, help="learning rate of both arms")
    p.add_argument("--iters", type=int, help="iterations of both arms")

    p = sub.add_parser("sweep", help="one solve per value of a numeric config field")
    _common(p, need_config=True, need_game=True)
    p.add_argument("--param", required=True, help="dotted config path, e.g. tau or inner.step_size")
    p.add_argument("--values", required=True, help="comma-separated numbers")
    p.add_argument("--workers", type=int, default=None)
    return parser


def _parse_values(text):
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            out.append(int(tok) if tok.lstrip("+-").isdigit() else float(tok))
        except ValueError:
            raise ValidationError(f"sweep value {tok!r} is not a number") from None
    if not out:
        raise ValidationError("sweep needs at least one value")
    return out


def _cmd_solve(args, out):
    config = load_solver_config(args.config)
    game = load_game(args.game)
    traj = run_solver(game, config, args.seed, compute_gap=not args.no_gap)
    write_trajectory(traj, out / "trajectory.csv")
    write_policy(traj.final, game, out / "final_policy.csv")
    inputs = {"config": config.to_dict(), "game": game_to_dict(game), "gap": not args.no_gap}
    summary = f"final gap {traj.duality_gap[-1]:.6g}, policy {traj.final.round(6).tolist()}"
    for w in traj.warnings:
        summary += f"\nwarning: {w}"
    return inputs, summary


def _cmd_oracle(args, out):
    game = load_game(args.game)
    if not game.tau > 0:
        raise RangeError("oracle needs a game with tau > 0")
    reg = RegularizerSpec.single(args.reg, args.reg_weight)
    pi, report, residual = run_oracle(game, reg, args.tol, args.max_rounds)
    write_policy(pi, game, out / "oracle_policy.csv")
    write_gap_report(report, residual, out / "gap_report.csv")
    inputs = {"game": game_to_dict(game), "regularizer": reg.to_records(), "tol": args.tol,
              "max_rounds": args.max_rounds}
    return inputs, f"oracle gap {report.gap:.3g}, residual {residual:.3g}"


def _cmd_saddle(args, out):
    spec = SaddleSpec(alpha_true=args.alpha_true, alpha_surrogate=args.alpha_surrogate,
                      bins=args.bins, reference_center=tuple(args.center),
                      reference_width=args.width, eta=args.eta, tau=args.tau, iters=args.iters)
    res = run_saddle(spec)
    write_saddle(res, out / "saddle_trajectory.csv")
    inputs = {"spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__}}
    return inputs, (f"distance to true equilibrium: mwu {res.distances('mwu')[-1]:.4f}, "
                    f"regularized {res.distances('reg')[-1]:.4f}")


def _diversity_spec(args):
    """Defaults, then keys from ``--config``, then explicit flags."""
    doc = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ValidationError("diversity config must be a mapping")
    flags = {"grid": args.grid, "ring_radius": args.ring_radius, "ring_width": args.ring_width,
             "pref_beta": args.beta, "reward_jitter": args.jitter,
             "forward_kl_lambda": args.lam, "mwu_eta": args.eta, "rspo_eta": args.eta,
             "mwu_iters": args.iters, "rspo_iters": args.iters}
    doc.update({k: v for k, v in flags.items() if v is not None})
    return Diversity2DSpec.from_dict(doc)


def _cmd_diversity(args, out):
    spec = _diversity_spec(args)
    res = run_diversity2d(spec, args.seed)
    write_diversity(res, out)
    inputs = {"spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__}}
    return inputs, (f"final entropy: mwu {res.mwu.entropy[-1]:.4f}, rspo {res.rspo.entropy[-1]:.4f}; "
                    f"mwu mode mass {res.mwu_mode_mass[-1]:.4f}")


def _cmd_sweep(args, out):
    config = load_solver_config(args.config)
    game = load_game(args.game)
    values = _parse_values(args.values)
    rows = run_sweep(game, config, args.param, values, args.seed, args.workers)
    write_sweep(rows, out, game)
    inputs = {"config": config.to_dict(), "game": game_to_dict(game), "param": args.param,
              "values": values}
    ok = sum(r.status == "ok" for r in rows)
    summary = f"{ok}/{len(rows)} runs succeeded"
    for r in rows:
        if r.status != "ok":
            summary += f"\nrun {r.index} ({args.param}={r.value}): {r.message}"
    if ok == 0:
        raise _SweepFailed(summary)
    return inputs, summary


class _SweepFailed(RSPOError):
    pass


COMMANDS = {"solve": _cmd_solve, "oracle": _cmd_oracle, "saddle": _cmd_saddle,
            "diversity2d": _cmd_diversity, "sweep": _cmd_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out) if args.out is not None else Path(_default_out())
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs, summary = COMMANDS[args.command](args, out)
        write_manifest(out, args.command, inputs, args.seed, args.config, args.game)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        field = getattr(exc, "field", None)
        where = f" [{field}]" if field else ""
        print(f"error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RSPOError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if not args.quiet:
        print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
