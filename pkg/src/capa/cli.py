"""``capa`` command line: fit, transform, synth, eval.

Exit status is 0 on success, 2 for invalid flags or unreadable input and
3 for numerical failures inside a fit or a projection.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io
from .core import (CapaError, ConfigurationError, ConvergenceError, Kind, Solver, center,
                   center_with, project, projection_matrix)
from .em import EmOptions, em_fit
from .ml import ml_fit
from .priors import Neighbourhood, NeighbourhoodSpec
from .sfa import sfa_em_fit, sfa_ml_fit
from .synthetic import (make_gaussian_clusters, make_slow_signals, make_swiss_roll,
                        nearest_mean_errors, slowness, subspace_angles)

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _gamma(text):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"gamma must be positive, got {text}")
    return value


def _lambdas(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capa", description="Probabilistic component analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV of samples")
    f.add_argument("--model", required=True, choices=[k.value for k in Kind])
    f.add_argument("--solver", required=True, choices=[s.value for s in Solver])
    f.add_argument("--dim", required=True, type=int)
    f.add_argument("--input", required=True)
    f.add_argument("--output", required=True)
    f.add_argument("--labels-col")
    f.add_argument("--sequence", action="store_true", help="rows are consecutive time steps")
    f.add_argument("--k", type=int, default=12)
    f.add_argument("--gamma", type=_gamma, help="heat-kernel width; constant weights if omitted")
    f.add_argument("--symmetrize", choices=["union", "mutual"], default="union")
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--lambda-policy", choices=["fixed", "free_sigma"], default="fixed")
    f.add_argument("--threads", type=int)

    t = sub.add_parser("transform", help="project samples with a fitted model")
    t.add_argument("--model", required=True)
    t.add_argument("--input", required=True)
    t.add_argument("--output", required=True)
    t.add_argument("--labels-col", help="column to ignore")

    s = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    s.add_argument("--dataset", required=True, choices=["swissroll", "clusters", "slow"])
    s.add_argument("--samples", required=True, type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="swissroll noise sd")
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--dim", type=int, help="clusters: feature dim; slow: observed dim")
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--within-sd", type=float, default=1.0)
    s.add_argument("--lambdas", type=_lambdas, default=[0.99, 0.5])
    s.add_argument("--noise-var", type=float, default=0.0, help="slow: observation noise")

    e = sub.add_parser("eval", help="evaluate fitted models")
    e.add_argument("--metric", required=True, choices=["angles", "slowness", "nearest-mean-error"])
    e.add_argument("--a", required=True)
    e.add_argument("--b")
    e.add_argument("--input")
    e.add_argument("--labels-col", default="label")
    return p


def cmd_fit(args) -> int:
    kind = Kind(args.model)
    if kind is Kind.LDA and not args.labels_col:
        raise UsageError("--model lda requires --labels-col")
    if kind is Kind.SFA and not args.sequence:
        raise UsageError("--model sfa requires --sequence")
    if args.max_iter < 1 or not args.tol > 0:
        raise UsageError("--max-iter must be >= 1 and --tol positive")
    raw, labels, _, _ = io.read_csv(args.input, args.labels_col)
    if not 1 <= args.dim <= raw.shape[0]:
        raise UsageError(f"--dim must lie in 1..{raw.shape[0]} (the number of features)")
    X = center(raw, labels=labels if kind is Kind.LDA else None, is_sequence=args.sequence)
    spec = NeighbourhoodSpec.default_for(kind)
    if kind is Kind.LPP:
        spec = NeighbourhoodSpec(Neighbourhood.KNN, k=args.k,
                                 weights="constant" if args.gamma is None else "heat",
                                 gamma="auto" if args.gamma is None else args.gamma,
                                 symmetrize=args.symmetrize)
    if args.solver == "ml":
        params = sfa_ml_fit(X, args.dim) if kind is Kind.SFA else ml_fit(X, kind, spec, args.dim)
    else:
        opts = EmOptions(max_iter=args.max_iter, tol=args.tol, seed=args.seed,
                         lambda_policy=args.lambda_policy, threads=args.threads)
        try:
            if kind is Kind.SFA:
                params, trace = sfa_em_fit(X, args.dim, opts)
            else:
                params, trace = em_fit(X, kind, spec, args.dim, opts)
        except ConvergenceError as exc:
            _print_trace(exc.trace)
            raise
        _print_trace(trace)
    io.save_model(params, args.output)
    return 0


def _print_trace(trace):
    if trace is None:
        return
    for i, obj in enumerate(trace.objective, 1):
        print(f"{i},{obj:.17g}", file=sys.stderr)


def cmd_transform(args) -> int:
    params = io.load_model(args.model)
    raw, _, _, _ = io.read_csv(args.input, args.labels_col)
    Y = project(params, center_with(params, raw))
    io.write_csv(args.output, [f"y{n + 1}" for n in range(Y.shape[0])], Y)
    return 0


def cmd_synth(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    if args.dataset == "swissroll":
        ds = make_swiss_roll(args.samples, args.noise, args.seed)
    elif args.dataset == "clusters":
        if args.samples % args.classes:
            raise UsageError("--samples must be a multiple of --classes")
        dim = args.dim or max(2, args.classes - 1)
        ds = make_gaussian_clusters(args.classes, args.samples // args.classes, dim,
                                    args.separation, args.within_sd, args.seed)
    else:
        lam = args.lambdas
        ds = make_slow_signals(len(lam), args.samples, lam, args.seed, args.dim, args.noise_var)
    header = [f"x{i + 1}" for i in range(ds.raw.shape[0])]
    extra = ("label", ds.labels) if ds.labels is not None else None
    io.write_csv(args.output, header, ds.raw, extra)
    return 0


def _latents(args, params, need_labels=False):
    if not args.input:
        raise UsageError(f"--metric {args.metric} requires --input")
    raw, labels, _, _ = io.read_csv(args.input, args.labels_col if need_labels else None)
    return project(params, center_with(params, raw)), labels


def cmd_eval(args) -> int:
    a = io.load_model(args.a)
    if args.metric == "angles":
        b = io.load_model(args.b) if args.b else a
        values = subspace_angles(projection_matrix(a), projection_matrix(b))
        for i, v in enumerate(values, 1):
            print(f"angle_{i}={v:.17g}")
    elif args.metric == "slowness":
        Y, _ = _latents(args, a)
        for i, v in enumerate(slowness(Y), 1):
            print(f"slowness_{i}={v:.17g}")
    else:
        Y, labels = _latents(args, a, need_labels=True)
        errors = nearest_mean_errors(Y, labels)
        print(f"errors={errors}")
        print(f"nearest_mean_error={errors / Y.shape[1]:.17g}")
    return 0


COMMANDS = {"fit": cmd_fit, "transform": cmd_transform, "synth": cmd_synth, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"capa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapaError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"capa {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
