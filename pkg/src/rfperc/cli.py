"""Command-line interface.

Subcommands: saddle, phase-diagram, fp-curve, solve, experiment,
local-energy.  Exit codes: 0 success, 2 convergence failure, 3 bad
configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import BracketError, DomainError, NonConvergenceError
from . import franz_parisi as fp
from . import harness, saddle, solvers
from .instance import TeacherStudentInstance, generalization_error_closed_form
from .rng import derive_seed

EXIT_OK = 0
EXIT_NONCONVERGED = 2
EXIT_SPEC = 3


def _float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _emit(rows, columns, fmt, out):
    if fmt == "json":
        payload = json.dumps(rows, indent=1, sort_keys=True)
        if out is None:
            print(payload)
        else:
            Path(out).write_text(payload + "\n")
    else:
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(harness._fmt(row.get(c, "")) for c in columns))
        text = "\n".join(lines) + "\n"
        if out is None:
            sys.stdout.write(text)
        else:
            Path(out).write_text(text)


def _cmd_saddle(args):
    alphas = _float_list(args.alpha)
    rows = []
    init = None
    for a in alphas:
        params = saddle.ModelParams(alpha=a, alpha_T=args.alpha_T,
                                    kappa=args.kappa, beta=args.beta)
        sol = saddle.solve_saddle(params, init=init)
        init = (sol.op, sol.cp)
        rows.append(sol.to_record())
    _emit(rows, saddle.RECORD_FIELDS, args.format, args.out)
    return EXIT_OK


def _cmd_phase_diagram(args):
    rows = []
    for at in _float_list(args.alpha_T):
        row = {"alpha_T": at, "alpha_c": saddle.critical_capacity(at)}
        if args.with_le:
            row["alpha_le"] = fp.local_entropy_transition(at)
        rows.append(row)
    cols = ("alpha_T", "alpha_c", "alpha_le") if args.with_le else ("alpha_T", "alpha_c")
    _emit(rows, cols, args.format, args.out)
    return EXIT_OK


def _cmd_fp_curve(args):
    kt = args.kappa_tilde
    if kt == "max":
        ktilde = saddle.max_margin(args.alpha, args.alpha_T)
    else:
        ktilde = float(kt)
    params = fp.FpModelParams(alpha=args.alpha, alpha_T=args.alpha_T,
                              kappa_tilde=ktilde, kappa=args.kappa)
    grid = (np.asarray(_float_list(args.distances))
            if args.distances else fp.default_distance_grid())
    curve = fp.local_entropy_curve(params, distances=grid)
    header = {"alpha": args.alpha, "alpha_T": args.alpha_T,
              "kappa_tilde": ktilde, "kappa": args.kappa,
              "classification": curve.classification}
    rows = list(curve.to_rows())
    if args.format == "json":
        _emit([{"header": header, "points": rows}], (), "json", args.out)
    else:
        text = "# " + json.dumps(header, sort_keys=True) + "\n"
        text += "d,t1,phi_fp,flag\n"
        for r in rows:
            text += f"{r['d']:.12g},{r['t1']:.12g},{r['phi_fp']:.12g},{r['flag']}\n"
        if args.out is None:
            sys.stdout.write(text)
        else:
            Path(args.out).write_text(text)
    return EXIT_OK if curve.converged.all() else EXIT_NONCONVERGED


def _cmd_solve(args):
    seed = args.seed if args.seed is not None else 0
    inst_seed = derive_seed(seed, 0, 0, 0, 0)
    inst = TeacherStudentInstance.generate(D=args.D, N=args.N, P=args.P,
                                           seed=inst_seed)
    options = json.loads(args.options) if args.options else {}
    res = harness.run_solver(args.algorithm, inst, args.kappa,
                             derive_seed(seed, 0, 0, 1, 0), 0, options)
    doc = res.to_json_dict(inst, include_weights=args.weights)
    print(json.dumps(doc, indent=1, sort_keys=True))
    return EXIT_OK if res.solved or args.algorithm in ("bp",) else EXIT_NONCONVERGED


def _cmd_experiment(args):
    with open(args.config) as fh:
        doc = json.load(fh)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    spec = harness.ExperimentSpec.from_json(doc)
    out = args.out or "experiment_out"
    harness.run_experiment(spec, out_dir=out)
    print(f"wrote {out}/spec.json, runs.csv, cells.csv")
    return EXIT_OK


def _cmd_local_energy(args):
    seed = args.seed if args.seed is not None else 0
    inst_seed = derive_seed(seed, 0, 0, 0, 0)
    inst = TeacherStudentInstance.generate(D=args.D, N=args.N, P=args.P,
                                           seed=inst_seed)
    options = json.loads(args.options) if args.options else {}
    res = harness.run_solver(args.algorithm, inst, args.kappa,
                             derive_seed(seed, 0, 0, 1, 0), 0, options)
    if not res.solved:
        print("solver did not reach zero training error", file=sys.stderr)
        return EXIT_NONCONVERGED
    levels = _float_list(args.noise_levels)
    curve = harness.local_energy_profile(res.weights, inst, levels,
                                         reps=args.reps, seed=seed)
    rows = [{"noise_level": nl, "distance": d, "energy": e, "stderr": s}
            for nl, d, e, s in zip(curve.noise_levels, curve.distances,
                                   curve.energies, curve.stderr)]
    _emit(rows, ("noise_level", "distance", "energy", "stderr"),
          args.format, args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rfperc",
                                description="binary random-features perceptron toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("saddle", help="replica-symmetric saddle point(s)")
    sp.add_argument("--alpha", required=True,
                    help="constraint density, comma-separated for a sweep")
    sp.add_argument("--alpha-T", dest="alpha_T", type=float, required=True)
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=math.inf)
    sp.set_defaults(fn=_cmd_saddle)

    sp = sub.add_parser("phase-diagram", help="alpha_c (and alpha_LE) vs alpha_T")
    sp.add_argument("--alpha-T", dest="alpha_T", required=True,
                    help="comma-separated alpha_T grid")
    sp.add_argument("--with-le", action="store_true",
                    help="also locate the local-entropy transition (slow)")
    sp.set_defaults(fn=_cmd_phase_diagram)

    sp = sub.add_parser("fp-curve", help="local-entropy curve")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--alpha-T", dest="alpha_T", type=float, required=True)
    sp.add_argument("--kappa-tilde", dest="kappa_tilde", default="max",
                    help="reference margin, or 'max'")
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--distances", default=None,
                    help="comma-separated distance grid")
    sp.set_defaults(fn=_cmd_fp_curve)

    sp = sub.add_parser("solve", help="run one algorithm on one instance")
    sp.add_argument("--algorithm", required=True,
                    choices=("sa", "mct0", "sbpi", "bp", "fbp"))
    sp.add_argument("--D", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--P", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--options", default=None, help="JSON dict of config options")
    sp.add_argument("--weights", action="store_true",
                    help="include run-length encoded weights in output")
    sp.set_defaults(fn=_cmd_solve)

    sp = sub.add_parser("experiment", help="run a full experiment spec")
    sp.add_argument("--config", required=True, help="JSON experiment spec")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(fn=_cmd_experiment)

    sp = sub.add_parser("local-energy", help="perturbation profile of a solution")
    sp.add_argument("--algorithm", required=True,
                    choices=("sa", "mct0", "sbpi", "bp", "fbp"))
    sp.add_argument("--D", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--P", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--noise-levels", dest="noise_levels",
                    default="0.2,0.3,0.45,0.6,0.8")
    sp.add_argument("--reps", type=int, default=10)
    sp.add_argument("--options", default=None)
    sp.set_defaults(fn=_cmd_local_energy)

    for spx in sub.choices.values():
        # None means "not given": experiment configs keep their own seed
        spx.add_argument("--seed", type=int, default=None)
        spx.add_argument("--out", default=None)
        spx.add_argument("--format", choices=("csv", "json"), default="csv")

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DomainError, FileNotFoundError, json.JSONDecodeError, KeyError,
            ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_SPEC
    except (NonConvergenceError, BracketError) as err:
        print(f"convergence failure: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
