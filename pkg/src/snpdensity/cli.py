"""Command-line front end.

Every subcommand writes a run manifest next to its output; ``replay``
re-executes one.  Exit codes: 0 success, 2 usage error, 3 numeric failure,
4 I/O or parse failure.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, _kernels
from .density import load_density, save_density
from .ensemble import (
    DEFAULT_STEP,
    GaussianInitial,
    LorenzParams,
    mc_box_probability,
    propagate_ensemble,
    read_ensemble,
    sample_gaussian,
    write_ensemble,
)
from .errors import (
    DegenerateEnsembleError,
    DivergenceError,
    EnsembleParseError,
    NonFiniteObjectiveError,
    SingularGradientError,
    SnpError,
)
from .experiments import evaluate_grid, run_density_va, run_quantile_vb, write_grid
from .fit import FitConfig, fit_snp, whiten_samples

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("snpdensity")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _pairs(text):
    """``lo:hi,lo:hi`` -> (lower, upper)."""
    lower, upper = [], []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"box entries look like lo:hi, got {item!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise UsageError(f"bad box entry {item!r}") from exc
        lower.append(lo)
        upper.append(hi)
    return lower, upper


def parse_grid(text):
    """``min:max:count`` per axis, comma separated."""
    axes = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid axes look like min:max:count, got {item!r}")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise UsageError(f"bad grid axis {item!r}") from exc
        if count < 1 or (count > 1 and not hi > lo):
            raise UsageError(f"grid axis {item!r} needs count >= 1 and max > min")
        axes.append(np.linspace(lo, hi, count))
    return axes


def _covariance(args, d):
    if args.cov_file:
        cov = np.loadtxt(args.cov_file, delimiter="," if args.cov_file.endswith(".csv") else None)
        return np.atleast_2d(cov)
    if args.cov_diag is None:
        raise UsageError("one of --cov-diag or --cov-file is required")
    diag = _floats(args.cov_diag)
    if len(diag) != d:
        raise UsageError(f"--cov-diag has {len(diag)} entries, --mean has {d}")
    return np.diag(diag)


def write_manifest(path, args, argv, params, inputs, outputs):
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "params": params,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
        "backend": _kernels.BACKEND,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest_path(output):
    return output + ".manifest.json"


def cmd_sample(args, argv):
    mean = _floats(args.mean)
    cov = _covariance(args, len(mean))
    try:
        init = GaussianInitial(np.array(mean), cov)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ens = sample_gaussian(init, args.n, args.seed)
    write_ensemble(ens, args.out)
    params = {"mean": mean, "covariance": cov.tolist(), "n": args.n, "seed": args.seed}
    write_manifest(_manifest_path(args.out), args, argv, params, {}, {"ensemble": args.out})
    return {"out": args.out, "n": args.n, "dimension": len(mean)}


def cmd_propagate(args, argv):
    ens = read_ensemble(args.input)
    params = LorenzParams(args.lorenz_s, args.lorenz_rho, args.lorenz_beta)
    if ens.dimension != 3:
        raise UsageError(f"the Lorenz system needs 3 columns, file has {ens.dimension}")
    out = propagate_ensemble(ens, params, args.tfinal, args.step)
    write_ensemble(out, args.out)
    resolved = {
        "system": args.system,
        "s": params.s,
        "rho": params.rho,
        "beta": params.beta,
        "tfinal": args.tfinal,
        "step": args.step,
    }
    write_manifest(_manifest_path(args.out), args, argv, resolved,
                   {"ensemble": args.input}, {"ensemble": args.out})
    return {"out": args.out, "n": len(out), "time": out.time}


def cmd_fit(args, argv):
    ens = read_ensemble(args.input)
    config = FitConfig(order=args.order, branch_policy=args.branch_policy,
                       max_iterations=args.max_iterations)
    density, report = fit_snp(ens.points, config, weights=ens.weights)
    save_density(density, args.out_density)
    with open(args.out_report, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    params = {"order": args.order, "branch_policy": args.branch_policy,
              "max_iterations": args.max_iterations, "samples": len(ens)}
    write_manifest(_manifest_path(args.out_density), args, argv, params,
                   {"ensemble": args.input},
                   {"density": args.out_density, "report": args.out_report})
    out = report.to_dict()
    out.pop("theta")
    return out


def cmd_eval(args, argv):
    density = load_density(args.density)
    axes = parse_grid(args.grid)
    if args.mode == "marginal":
        if not args.keep:
            raise UsageError("--keep is required for marginal mode")
        keep = _ints(args.keep)
        marg = density.marginal(keep)
        func, names = marg.pdf, [f"z{k}" for k in marg.keep]
    elif args.mode == "pdf":
        func = density.pdf if args.space == "raw" else density.pdf_whitened
        names = [("x" if args.space == "raw" else "z") + str(j) for j in range(density.dimension)]
    else:
        func = density.cdf if args.space == "raw" else density.cdf_whitened
        names = [("x" if args.space == "raw" else "z") + str(j) for j in range(density.dimension)]
    if len(axes) != len(names):
        raise UsageError(f"grid has {len(axes)} axes, evaluation needs {len(names)}")
    values = evaluate_grid(func, axes)
    write_grid(args.out, axes, values, names)
    params = {"mode": args.mode, "keep": args.keep, "grid": args.grid, "space": args.space}
    write_manifest(_manifest_path(args.out), args, argv, params,
                   {"density": args.density}, {"grid": args.out})
    return {"out": args.out, "points": int(values.size)}


def cmd_boxprob(args, argv):
    if bool(args.density) == bool(args.ensemble):
        raise UsageError("give exactly one of --density or --ensemble")
    lower, upper = _pairs(args.box)
    coords = _ints(args.coords) if args.coords else list(range(len(lower)))
    if args.density:
        density = load_density(args.density)
        prob = density.box_probability(lower, upper, coords=coords, space=args.space)
        method, source = "snp_cdf", {"density": args.density}
    else:
        ens = read_ensemble(args.ensemble)
        points = None
        if args.space == "whitened":
            points, _ = whiten_samples(ens.points, ens.weights)
        prob = mc_box_probability(ens, lower, upper, coords, points=points)
        method, source = "mc_count", {"ensemble": args.ensemble}
    result = {"method": method, "probability": prob, "lower": lower, "upper": upper,
              "coords": coords, "space": args.space}
    with open(args.out, "w") as fh:
        json.dump(result, fh, indent=1)
        fh.write("\n")
    write_manifest(_manifest_path(args.out), args, argv,
                   {"box": args.box, "coords": coords, "space": args.space},
                   source, {"result": args.out})
    return result


def cmd_reproduce(args, argv):
    out_dir = os.path.join(args.out_dir, args.experiment)
    if args.experiment == "density_va":
        summary = run_density_va(args.seed, out_dir)
    else:
        kwargs = {}
        if args.trials is not None:
            kwargs["trials"] = args.trials
        if args.mc_sizes:
            kwargs["mc_sizes"] = tuple(_ints(args.mc_sizes))
        summary = run_quantile_vb(args.seed, out_dir, **kwargs)
    write_manifest(os.path.join(out_dir, "manifest.json"), args, argv,
                   {"experiment": args.experiment, "seed": args.seed, "trials": args.trials,
                    "mc_sizes": args.mc_sizes},
                   {}, {"directory": out_dir})
    return summary


def cmd_replay(args, argv):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    recorded = manifest.get("argv")
    if not recorded or recorded[0] == "replay":
        raise UsageError("manifest has no replayable command line")
    try:
        recorded_args = build_parser().parse_args(recorded)
    except SystemExit as exc:
        raise UsageError(f"recorded command line does not parse: {recorded}") from exc
    return recorded_args.func(recorded_args, recorded)


def build_parser():
    parser = argparse.ArgumentParser(prog="snpdensity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--json", action="store_true", help="print a JSON result to stdout")
        p.set_defaults(func=func)
        return p

    p = add("sample", cmd_sample, "draw a Gaussian initial ensemble")
    p.add_argument("--mean", required=True, help="comma-separated mean vector")
    p.add_argument("--cov-diag", help="comma-separated covariance diagonal")
    p.add_argument("--cov-file", help="full covariance matrix file (whitespace or .csv)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("propagate", cmd_propagate, "propagate an ensemble through the dynamics")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--system", choices=["lorenz"], default="lorenz")
    p.add_argument("--lorenz-s", type=float, default=10.0)
    p.add_argument("--lorenz-rho", type=float, default=28.0)
    p.add_argument("--lorenz-beta", type=float, default=8.0 / 3.0)
    p.add_argument("--tfinal", type=float, required=True)
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit an SNP density to an ensemble")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("-K", "--order", type=int, required=True)
    p.add_argument("--branch-policy", choices=["both", "positive_only"], default="both")
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--out-density", required=True)
    p.add_argument("--out-report", required=True)

    p = add("eval", cmd_eval, "evaluate pdf, cdf or a marginal on a grid")
    p.add_argument("--density", required=True)
    p.add_argument("--mode", choices=["pdf", "cdf", "marginal"], required=True)
    p.add_argument("--keep", help="comma-separated 0-based coordinates for marginal mode")
    p.add_argument("--grid", required=True, help="min:max:count per axis, e.g. --grid=-3:3:50")
    p.add_argument("--space", choices=["whitened", "raw"], default="whitened")
    p.add_argument("--out", required=True)

    p = add("boxprob", cmd_boxprob, "probability of an axis-aligned box")
    p.add_argument("--density")
    p.add_argument("--ensemble")
    p.add_argument("--box", required=True, help="lo:hi per coordinate, e.g. --box=-1:-0.5,0:2")
    p.add_argument("--coords", help="comma-separated 0-based coordinates (default 0..m-1)")
    p.add_argument("--space", choices=["whitened", "raw"], default="whitened")
    p.add_argument("--out", required=True, help="result JSON path")

    p = add("reproduce", cmd_reproduce, "run a Lorenz experiment end to end")
    p.add_argument("experiment", choices=["density_va", "quantile_vb"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--trials", type=int, help="quantile_vb trials per setting (default 10)")
    p.add_argument("--mc-sizes", help="quantile_vb counting sample sizes (default 100,10000,1000000)")

    p = add("replay", cmd_replay, "re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return parser


def _print(result, as_json):
    if as_json:
        print(json.dumps(result, sort_keys=True))
    elif isinstance(result, dict) and "probability" in result:
        print(f"{result['method']}: {result['probability']!r}")
    else:
        for key, value in result.items():
            print(f"{key}: {value}")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        result = args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, DegenerateEnsembleError, NonFiniteObjectiveError,
            SingularGradientError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, EnsembleParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, SnpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _print(result, args.json)
    return EXIT_OK
