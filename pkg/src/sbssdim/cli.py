"""Command line front-end.

Subcommands read a CSV file whose header starts with the coordinate columns
``x,y`` (optionally ``z``) followed by one or more value columns, and write a
JSON document holding the resolved configuration and the result. Exit status
is 0 on success, 2 for invalid input and 1 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bootstrap as bs
from .diag import fit
from .dimtest import asymptotic_test, check_kernels, statistics
from .errors import RankOutOfRange, SbssError, ValidationError
from .estimate import chi2_thresholds, divide_conquer, forward_estimate, threshold_estimate
from .geometry import LocationSet
from .kernels import parse_kernels
from .scatter import SpatialSample
from .simulate import (
    LatentModel,
    MaternParams,
    empirical_variogram,
    gen_coords,
    model_setting,
    random_mixing,
    sample_field,
)

SCHEMA_VERSION = 1
METHODS = ("asym", "param", "perm", "sp-param", "sp-perm")
STRATEGIES = ("divide-conquer", "forward", "threshold")
COORD_NAMES = ("x", "y", "z")


class InputError(ValidationError):
    """Malformed input file."""


def read_csv(path) -> tuple[SpatialSample, list[str]]:
    """Load a sample; returns it with the value column names."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    with handle:
        rows = csv.reader(handle)
        header = next(rows, None)
        if header is None:
            raise InputError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        d = 0
        while d < len(header) and d < 3 and header[d].lower() == COORD_NAMES[d]:
            d += 1
        if d < 2:
            raise InputError(f"{path}:1: header must start with coordinate columns x,y[,z]")
        if len(header) == d:
            raise InputError(f"{path}:1: no value columns after the coordinates")
        data = []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                data.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric field") from None
    if not data:
        raise InputError(f"{path}: no data rows")
    arr = np.array(data)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise InputError(f"{path}: non-finite value in data row {bad + 1}")
    return SpatialSample(LocationSet(arr[:, :d]), arr[:, d:]), header[d:]


def write_csv(path, coords, values, names):
    d = coords.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(COORD_NAMES[:d]) + list(names))
        for c, v in zip(coords, values):
            w.writerow([repr(float(a)) for a in c] + [repr(float(b)) for b in v])


def _dump(doc, out):
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _document(args, result):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return {"schema_version": SCHEMA_VERSION, "command": args.command, "config": config, "result": result}


def _export_latent(path, sample, sol):
    names = [f"IC.{j + 1}" for j in range(sol.p)]
    write_csv(path, sample.loc.coords, sol.latent, names)


def _method_spec(args, sample, method):
    noise = "parametric" if method.endswith("param") else "permute"
    spatial = None
    if method.startswith("sp-"):
        spatial = args.spatial
        if spatial is None:
            spatial = "regular" if sample.loc.grid.is_complete else "irregular"
        # echo the resolved regime and block size in the config
        args.spatial = spatial
        if args.m is None:
            args.m = bs.default_block_size(sample.loc, spatial)
    return bs.BootstrapSpec(
        B=args.B, noise_mode=noise, spatial=spatial, m=args.m, seed=args.seed, workers=args.workers
    )


def _test_fn(args, sample, kernels):
    """Map r to a TestResult under the selected method."""
    centered, normalized = not args.uncentered, not args.unnormalized
    if args.method == "asym":
        check_kernels(kernels, args.allow_ball)
        sol = fit(sample, kernels, centered=centered, normalized=normalized)

        def run(r):
            return asymptotic_test(
                sample, kernels, r, centered=centered, unnormalized=args.unnormalized,
                allow_ball=args.allow_ball, solution=sol,
            )

        return run
    spec = _method_spec(args, sample, args.method)

    def run(r):
        return bs.bootstrap_test(sample, kernels, r, spec, centered=centered, normalized=normalized)

    return run


def _load(args):
    sample, _ = read_csv(args.input)
    kernels = parse_kernels(args.kernels)
    return sample, kernels


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    if args.signals:
        signals = []
        for item in args.signals.split(","):
            try:
                nu, phi = (float(v) for v in item.split(":"))
            except ValueError:
                raise ValidationError(f"bad signal spec {item!r}; expected nu:phi") from None
            signals.append(MaternParams(nu, phi))
        model = LatentModel(signals, args.noise)
    else:
        model = model_setting(args.model, args.noise)
    if args.mixing == "random":
        model = LatentModel(model.signals, model.noise_count, random_mixing(model.p, rng))
    loc = gen_coords(args.pattern, args.edge, rng)
    sample = sample_field(loc, model, rng)
    if args.out in (None, "-"):
        raise ValidationError("simulate needs --out for the CSV file")
    write_csv(args.out, loc.coords, sample.values, [f"v{j + 1}" for j in range(model.p)])
    meta = _document(args, {"n": loc.n, "p": model.p, "q": model.q, "model": model.describe()})
    _dump(meta, args.out + ".json")
    return meta


def cmd_scatter(args):
    sample, kernels = _load(args)
    sol = fit(sample, kernels, centered=not args.uncentered, normalized=not args.unnormalized)
    if args.latent:
        _export_latent(args.latent, sample, sol)
    result = {
        "n": sample.n,
        "p": sample.p,
        "kernels": kernels.spec(),
        "normalizations": sol.normalizations.tolist(),
        "covariance": (np.linalg.inv(sol.whitener) @ np.linalg.inv(sol.whitener)).tolist(),
        "scatters": sol.scatters.tolist(),
        "unmixing": sol.gamma.tolist(),
        "pseudo_eigenvalues": sol.pseudo_eigenvalues.tolist(),
        "statistics": statistics(sol).tolist(),
    }
    doc = _document(args, result)
    _dump(doc, args.out)
    return doc


def cmd_test(args):
    sample, kernels = _load(args)
    if not 0 <= args.r <= sample.p - 1:
        raise RankOutOfRange(f"r must be in [0, {sample.p - 1}], got {args.r}")
    res = _test_fn(args, sample, kernels)(args.r)
    if args.latent:
        _export_latent(args.latent, sample, fit(sample, kernels, not args.uncentered, not args.unnormalized))
    doc = _document(args, res.to_dict())
    _dump(doc, args.out)
    return doc


def cmd_estimate(args):
    sample, kernels = _load(args)
    p = sample.p
    if args.strategy == "threshold":
        sol = fit(sample, kernels, centered=not args.uncentered, normalized=not args.unnormalized)
        c_n = args.c_n if args.c_n is not None else chi2_thresholds(p, len(kernels), args.alpha)
        est = threshold_estimate(statistics(sol), c_n, include_zero=args.include_zero)
    else:
        test = _test_fn(args, sample, kernels)
        search = divide_conquer if args.strategy == "divide-conquer" else forward_estimate
        est = search(lambda r: test(r).p_value, p, args.alpha, include_zero=args.include_zero)
    doc = _document(args, est.to_dict())
    _dump(doc, args.out)
    return doc


def _parse_bins(text):
    bins = []
    for item in text.split(","):
        try:
            lo, hi = (float(v) for v in item.split(":"))
        except ValueError:
            raise ValidationError(f"bad bin {item!r}; expected lo:hi") from None
        bins.append((lo, hi))
    return bins


def cmd_variogram(args):
    sample, names = read_csv(args.input)
    if args.kernels:
        sol = fit(sample, parse_kernels(args.kernels), not args.uncentered, not args.unnormalized)
        values, names = sol.latent, [f"IC.{j + 1}" for j in range(sol.p)]
    else:
        values = sample.values
    if args.bins:
        bins = _parse_bins(args.bins)
    else:
        edges = np.linspace(0.0, args.max_lag, args.n_bins + 1)
        bins = list(zip(edges[:-1], edges[1:]))
    result = {}
    rows = []
    for j, name in enumerate(names):
        vg = empirical_variogram(values[:, j], sample.loc, bins)
        result[name] = [
            {"lo": b.lo, "hi": b.hi, "h_mid": b.h_mid, "gamma": b.gamma, "pair_count": b.pair_count}
            for b in vg
        ]
        rows += [(name, b.lo, b.hi, b.h_mid, b.gamma, b.pair_count) for b in vg]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", "lo", "hi", "h_mid", "gamma", "pair_count"])
            w.writerows([r[0], *(repr(float(v)) for v in r[1:5]), r[5]] for r in rows)
    doc = _document(args, {"columns": list(names), "variogram": result})
    _dump(doc, args.out)
    return doc


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _alpha(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbssdim", description="Signal dimension testing for spatial blind source separation."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, kernels_required=True):
        p.add_argument("input", help="CSV file with columns x,y[,z],values...")
        p.add_argument("--kernels", required=kernels_required, help="e.g. ring:0:2,ring:2:4 or lag:1:1")
        p.add_argument("--uncentered", action="store_true", help="do not subtract the sample mean")
        p.add_argument("--unnormalized", action="store_true", help="scale local covariances by 1/n only")
        p.add_argument("--out", default="-", help="JSON output path (default stdout)")

    def testing(p):
        p.add_argument("--method", choices=METHODS, default="asym")
        p.add_argument("--B", type=_positive_int, default=200, help="bootstrap replicates")
        p.add_argument("--m", type=float, default=None, help="spatial block size")
        p.add_argument("--spatial", choices=("irregular", "regular"), default=None,
                       help="spatial bootstrap regime (default: regular for complete grids)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=_positive_int, default=bs.available_workers())
        p.add_argument("--allow-ball", action="store_true", help="accept kernels with f(0) != 0")

    p = sub.add_parser("simulate", help="simulate a field and write it as CSV")
    p.add_argument("--model", type=int, choices=(1, 2), default=1)
    p.add_argument("--signals", default=None, help="custom Matern signals nu:phi,nu:phi,...")
    p.add_argument("--noise", type=int, default=2, help="number of white-noise channels")
    p.add_argument("--pattern", choices=("uniform", "skewed", "grid"), default="uniform")
    p.add_argument("--edge", type=int, default=30, help="domain edge length n of [0,n]^2")
    p.add_argument("--mixing", choices=("identity", "random"), default="identity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output; metadata goes to <out>.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scatter", help="fit the unmixing matrix and report scatter matrices")
    common(p)
    p.add_argument("--latent", default=None, help="write latent components IC.1..IC.p as CSV")
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("test", help="test H0: signal dimension equals r")
    common(p)
    testing(p)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--latent", default=None, help="write latent components IC.1..IC.p as CSV")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("estimate", help="estimate the signal dimension")
    common(p)
    testing(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="divide-conquer")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--c-n", type=float, default=None, help="constant threshold for --strategy threshold")
    p.add_argument("--include-zero", action="store_true", help="also consider r = 0")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("variogram", help="empirical variograms of value columns or latent components")
    common(p, kernels_required=False)
    p.add_argument("--bins", default=None, help="lo:hi,lo:hi,... (default: even bins up to --max-lag)")
    p.add_argument("--max-lag", type=float, default=10.0)
    p.add_argument("--n-bins", type=_positive_int, default=10)
    p.add_argument("--csv", default=None, help="also write the bins as CSV")
    p.set_defaults(func=cmd_variogram)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except SbssError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
