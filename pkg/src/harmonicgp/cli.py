"""Command-line interface.

Commands
--------
basis      build and cache the harmonic feature basis for a mask
sample     draw from the constrained prior onto the grid
regress    reduced-rank GP regression (optionally with hyperparameter fit)
classify   variational binary classification with a Bernoulli likelihood
cox        log-Gaussian Cox intensity estimation from gridded counts
benchmark  compare against the dense baseline with boundary observations

Exit codes: 0 success, 1 argument/parse error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import data as dio
from .domain import boundary_points, load_mask
from .eigenbasis import evaluate_basis, load_basis, save_basis, solve_basis
from .errors import NumericalError
from .fullgp import DenseGP, gp_predict_full
from .kernels import KernelSpec, spectral_density
from .regression import ReducedRankModel, prior_coefficients, prior_draw
from .variational import (
    BernoulliLikelihood,
    FitOptions,
    PoissonLikelihood,
    bernoulli_probability,
    fit_variational,
    latent_marginals,
)


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _add_kernel_flags(p, default_kernel="matern32"):
    p.add_argument("--kernel", default=default_kernel,
                   choices=["se", "matern12", "matern32", "matern52"])
    p.add_argument("--lengthscale", type=float, default=0.1)
    p.add_argument("--variance", type=float, default=1.0)


def _kernel_from(args):
    return KernelSpec(args.kernel, variance=args.variance, lengthscale=args.lengthscale, d=2)


def build_parser():
    parser = _Parser(prog="harmonicgp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", help="build the harmonic feature basis cache")
    p.add_argument("--mask", required=True)
    p.add_argument("--width", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="draw from the constrained prior")
    p.add_argument("--basis", required=True)
    _add_kernel_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("regress", help="reduced-rank GP regression")
    p.add_argument("--basis", required=True)
    p.add_argument("--data", required=True, help="CSV with columns x,y,value")
    _add_kernel_flags(p)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--max-iters", type=int, default=1000)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--predict-grid", action="store_true",
                       help="predict at all interior grid nodes")
    group.add_argument("--predict", help="CSV of x,y test points")
    p.add_argument("--out", required=True)

    p = sub.add_parser("classify", help="variational binary classification")
    p.add_argument("--basis", required=True)
    p.add_argument("--data", required=True, help="CSV with columns x,y,label")
    p.add_argument("--likelihood", default="bernoulli", choices=["bernoulli"])
    p.add_argument("--link", default="logit", choices=["logit", "probit"])
    _add_kernel_flags(p)
    p.add_argument("--optimize", action="store_true",
                   help="learn kernel hyperparameters jointly with q")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cox", help="log-Gaussian Cox intensity from binned counts")
    p.add_argument("--basis", required=True)
    p.add_argument("--data", required=True, help="CSV with columns x,y,count at bin centers")
    p.add_argument("--bin-width", type=float, required=True)
    _add_kernel_flags(p)
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="MAE versus the dense boundary-observation baseline")
    p.add_argument("--mask", required=True)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--m-list", default="4,8,16,32,64,100")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--boundary-points", type=int, default=73)
    _add_kernel_flags(p, default_kernel="matern52")
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--truth-m", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_basis(args):
    t0 = time.perf_counter()
    grid = load_mask(args.mask, args.width)
    if not 1 <= args.m <= grid.n_int:
        raise ValueError(f"m must be in [1, {grid.n_int}], got {args.m}")
    basis = solve_basis(grid, args.m, tol=args.tol)
    save_basis(basis, args.out)
    dt = time.perf_counter() - t0
    print(f"m={basis.m} n_int={grid.n_int} "
          f"lambda_sq=[{basis.lambda_sq[0]:.6g}, {basis.lambda_sq[-1]:.6g}] "
          f"setup={dt:.2f}s -> {args.out}")
    return 0


def cmd_sample(args):
    basis = load_basis(args.basis)
    f = prior_draw(basis, _kernel_from(args), args.seed)
    pts = basis.grid.interior_points()
    dio.write_csv(args.out, ["x", "y", "f"], [pts[:, 0], pts[:, 1], f])
    print(f"wrote {pts.shape[0]} interior-node samples (seed {args.seed}) -> {args.out}")
    return 0


def cmd_regress(args):
    basis = load_basis(args.basis)
    ds = dio.read_dataset(args.data, "value")
    model = ReducedRankModel(basis, _kernel_from(args), args.noise)
    bound = model.bind(ds.points, ds.values)
    if args.optimize:
        bound = bound.fit(max_iters=args.max_iters)
        theta = bound.model.theta
        print(f"theta: log_variance={theta[0]:.6g} log_lengthscale={theta[1]:.6g} "
              f"log_noise={theta[2]:.6g}")
        print(f"nlml: {bound.nlml():.10g}")
    if args.predict_grid:
        xs = basis.grid.interior_points()
    else:
        xs = dio.read_points(args.predict)
    mean, var = bound.predict(xs)
    dio.write_csv(args.out, ["x", "y", "mean", "variance"], [xs[:, 0], xs[:, 1], mean, var])
    print(f"wrote {xs.shape[0]} predictions -> {args.out}")
    return 0


def _fit_latent(args, basis, ds, lik):
    phi = evaluate_basis(basis, ds.points)
    kernel = _kernel_from(args)
    lam = spectral_density(kernel, basis.frequencies())
    opts = FitOptions(max_iters=args.max_iters, kernel=kernel)
    if args.optimize:
        opts.learn_hyperparameters = True
        opts.frequencies = basis.frequencies()
    return fit_variational(phi, ds.values, lik, lam, opts)


def cmd_classify(args):
    basis = load_basis(args.basis)
    ds = dio.read_dataset(args.data, "label")
    lik = BernoulliLikelihood(link=args.link)
    lik.validate(ds.values)
    fit = _fit_latent(args, basis, ds, lik)
    print(f"elbo: {fit.elbo:.10g}")
    mu, v = latent_marginals(fit.q, basis.node_features())
    prob = bernoulli_probability(mu, v, link=args.link)
    pts = basis.grid.interior_points()
    dio.write_csv(args.out, ["x", "y", "probability"], [pts[:, 0], pts[:, 1], prob])
    print(f"wrote {pts.shape[0]} node probabilities -> {args.out}")
    return 0


def cmd_cox(args):
    basis = load_basis(args.basis)
    ds = dio.read_dataset(args.data, "count")
    if (ds.values < 0).any():
        raise ValueError("counts must be non-negative")
    lik = PoissonLikelihood(exposure=args.bin_width**2)
    lik.validate(ds.values)
    fit = _fit_latent(args, basis, ds, lik)
    print(f"elbo: {fit.elbo:.10g}")
    mu, v = latent_marginals(fit.q, basis.node_features())
    intensity = np.exp(mu + 0.5 * v)  # posterior mean intensity per unit area
    pts = basis.grid.interior_points()
    dio.write_csv(args.out, ["x", "y", "intensity"], [pts[:, 0], pts[:, 1], intensity])
    print(f"wrote {pts.shape[0]} node intensities -> {args.out}")
    return 0


def cmd_benchmark(args):
    m_list = sorted({int(tok) for tok in args.m_list.split(",") if tok.strip()})
    if not m_list:
        raise ValueError("--m-list is empty")
    grid = load_mask(args.mask, args.width)
    kernel = _kernel_from(args)
    m_basis = max(args.truth_m, max(m_list))
    if m_basis > grid.n_int:
        raise ValueError(f"basis size {m_basis} exceeds n_int={grid.n_int}")
    basis = solve_basis(grid, m_basis)
    nodes = grid.interior_points()
    bpts = boundary_points(grid, args.boundary_points)
    dense = DenseGP(kernel, args.noise)

    trials_col, m_col, mae_col = [], [], []
    for trial in range(args.trials):
        rng = np.random.default_rng(args.seed + trial)
        truth_basis = basis.truncate(args.truth_m)
        w = prior_coefficients(truth_basis, kernel, rng)
        X = _uniform_interior(grid, args.n, rng)
        f_data = evaluate_basis(truth_basis, X) @ w
        y = f_data + np.sqrt(args.noise) * rng.standard_normal(args.n)

        X_full = np.vstack([X, bpts])
        y_full = np.concatenate([y, np.zeros(bpts.shape[0])])
        noise_vec = np.concatenate([np.full(args.n, args.noise), np.zeros(bpts.shape[0])])
        full_mean, _ = gp_predict_full(dense, X_full, y_full, noise_vec, nodes)

        for m in m_list:
            sub = basis.truncate(m)
            bound = ReducedRankModel(sub, kernel, args.noise).bind(X, y)
            mean, _ = bound.predict(nodes)
            trials_col.append(trial)
            m_col.append(m)
            mae_col.append(float(np.mean(np.abs(mean - full_mean))))
    dio.write_csv(args.out, ["trial", "m", "mae"], [trials_col, m_col, mae_col])
    print(f"wrote {len(mae_col)} rows ({args.trials} trials x {len(m_list)} feature counts) "
          f"-> {args.out}")
    return 0


def _uniform_interior(grid, n, rng):
    """Rejection-sample n points uniformly over the domain interior."""
    x0, y0 = grid.origin
    lo = np.array([x0, y0])
    hi = np.array([x0 + (grid.nx - 1) * grid.h, y0 + (grid.ny - 1) * grid.h])
    out = np.empty((0, 2))
    while out.shape[0] < n:
        cand = lo + (hi - lo) * rng.random((4 * n, 2))
        out = np.vstack([out, cand[grid.contains(cand)]])
    return out[:n]


_COMMANDS = {
    "basis": cmd_basis,
    "sample": cmd_sample,
    "regress": cmd_regress,
    "classify": cmd_classify,
    "cox": cmd_cox,
    "benchmark": cmd_benchmark,
}


if __name__ == "__main__":
    sys.exit(main())
