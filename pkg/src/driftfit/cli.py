"""Command-line entry point: ``driftfit {fit, simulate, bench, ratio}``.

Exit codes: 0 success, 2 malformed input or flags, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .datamodel import EstimatorConfig, LabeledDataset, UnlabeledDataset, check_pair
from .density_ratio import ulsif_fit_cv
from .drcsa import dr_fit, fit_nuisances, sdb_fit
from .errors import DriftfitError, NoConvergence, NotPositiveDefinite
from .inference import confidence_interval, estimate_covariance, pointwise_se, weighted_ls_covariance
from .models import krr_fit_cv, ols_fit, resolve_basis, wls_fit
from .numkit import RngStream
from .simbench import (
    SimDesign,
    generate,
    parse_methods,
    run_benchmark,
    write_records_csv,
    write_summary_csv,
)

log = logging.getLogger("driftfit")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 2, 3
FIT_METHODS = ("ols", "wls", "np", "dr", "sdb", "scsa")


class InputError(Exception):
    """Malformed files or flags (exit 2)."""


def fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a float64."""
    return "nan" if math.isnan(x) else format(float(x), ".17g")


# ---------------------------------------------------------------------------
# CSV I/O


def _read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise InputError(f"{path}: no data rows")
    try:
        values = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if values.ndim != 2 or values.shape[1] != len(header):
        raise InputError(f"{path}: ragged rows or header width mismatch")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite values")
    return header, values


def _expect_covariates(path, names: Sequence[str]) -> None:
    wanted = [f"x{j + 1}" for j in range(len(names))]
    if list(names) != wanted:
        raise InputError(f"{path}: expected covariate columns {','.join(wanted)}, got {','.join(names)}")


def read_train_csv(path: str | Path) -> LabeledDataset:
    header, values = _read_table(path)
    if header[0] != "y" or len(header) < 2:
        raise InputError(f"{path}: header must be y,x1,...,xd")
    _expect_covariates(path, header[1:])
    return LabeledDataset(values[:, 1:], values[:, 0])


def read_test_csv(path: str | Path) -> UnlabeledDataset:
    """Covariates only; a leading ``y`` column (a train file) is ignored."""
    header, values = _read_table(path)
    if header and header[0] == "y":
        header, values = header[1:], values[:, 1:]
    _expect_covariates(path, header)
    return UnlabeledDataset(values)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_train_csv(path: Path, data: LabeledDataset) -> None:
    header = ["y"] + [f"x{j + 1}" for j in range(data.d)]
    write_csv(path, header, ([float(y), *map(float, x)] for y, x in zip(data.Y, data.X)))


def write_test_csv(path: Path, data: UnlabeledDataset) -> None:
    write_csv(path, [f"x{j + 1}" for j in range(data.d)], ([*map(float, x)] for x in data.X))


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, config: EstimatorConfig | None,
                   inputs: Sequence[str] = ()) -> None:
    skip = {"func", "out", "config"}
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
        "config": config.to_dict() if config is not None else None,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _load_config(args) -> EstimatorConfig:
    try:
        config = EstimatorConfig.load(args.config) if args.config else EstimatorConfig()
        if getattr(args, "xi", None) is not None:
            config = EstimatorConfig.from_dict({**config.to_dict(), "xi": args.xi})
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"bad configuration: {exc}") from None
    return config


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args)
    train, test = read_train_csv(args.train), read_test_csv(args.test)
    check_pair(train, test)
    out = _out_dir(args.out)
    stream = RngStream(args.seed)
    basis = resolve_basis(args.basis, train.d)
    method, kind = args.method, args.kind

    beta = se = model = cov = None
    if method == "np":
        f = krr_fit_cv(train, config.krr_sigma_grid, config.krr_lambda_grid,
                       stream.substream("krr").generator(), config.cv_folds)
        preds, pred_se = f(test.X), np.full(test.m, np.nan)
    else:
        if method == "ols":
            model = ols_fit(train, basis, kind, tol=config.optimizer_tol,
                            max_iter=config.optimizer_max_iter)
            cov = weighted_ls_covariance(model, train)
        elif method == "wls":
            ratio = ulsif_fit_cv(train.X, test.X, config.ulsif_sigma_grid, config.ulsif_lambda_grid,
                                 stream.substream("ulsif").generator(), config.cv_folds,
                                 config.ulsif_centers, config.ratio_clip)
            w = ratio(train.X)
            model = wls_fit(train, basis, w, kind, config.optimizer_tol, config.optimizer_max_iter)
            cov = weighted_ls_covariance(model, train, w)
        else:
            nuis = fit_nuisances(train, test, config, stream)
            if method == "dr":
                fit = dr_fit(train, test, basis, kind, config, nuisances=nuis)
            elif method == "scsa":
                alpha = config.scsa_alpha if args.alpha is None else args.alpha
                if not 0.0 <= alpha <= 1.0:
                    raise InputError("--alpha must lie in [0, 1]")
                fit = dr_fit(train, test, basis, kind, config, alpha=alpha, nuisances=nuis,
                             variant=f"SCSA({alpha:g})")
            else:
                fit = sdb_fit(train, test, basis, kind, config, nuisances=nuis)
            model = fit.model
            cov = estimate_covariance(fit, train, test)
        beta, se = model.beta, cov.se
        preds, pred_se = model(test.X), pointwise_se(cov, model, test.X)

    if beta is not None:
        lo, hi = confidence_interval(beta, se, args.level)
        write_csv(out / "beta.csv", ["coordinate", "estimate", "se", "ci_lo", "ci_hi"],
                  ([lab, float(b), float(s), float(a), float(c)]
                   for lab, b, s, a, c in zip(basis.labels, beta, se, lo, hi)))
    else:
        write_csv(out / "beta.csv", ["coordinate", "estimate", "se", "ci_lo", "ci_hi"], [])
    write_csv(out / "predictions.csv", ["row", "prediction", "se"],
              ([i, float(p), float(s)] for i, (p, s) in enumerate(zip(preds, pred_se))))
    write_manifest(out, "fit", args, config, [args.train, args.test])
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        design = SimDesign(model=args.model, cov_structure=args.cov, n=args.n, m=args.m,
                           replications=1, seed=args.seed, coef=args.coef)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = _out_dir(args.out)
    # same stream as replication 0 of ``bench --seed S``
    draw = generate(design, RngStream(args.seed, 0).substream("dgp"))
    write_train_csv(out / "train.csv", draw.train)
    write_test_csv(out / "test.csv", draw.test)
    write_csv(out / "test_hidden.csv", ["y"], ([float(y)] for y in draw.y_hidden))
    write_manifest(out, "simulate", args, None)
    return EXIT_OK


def _default_threads() -> int:
    env = os.environ.get("DRIFTFIT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InputError(f"DRIFTFIT_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise InputError("DRIFTFIT_THREADS must be >= 1")
        return value
    return os.cpu_count() or 1


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        methods = parse_methods(args.methods)
        design = SimDesign(model=args.model, cov_structure=args.cov, n=args.n, m=args.m,
                           replications=args.reps, seed=args.seed, coef=args.coef)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    threads = args.threads if args.threads is not None else _default_threads()
    if threads < 1:
        raise InputError("--threads must be >= 1")
    config = _load_config(args)
    out = _out_dir(args.out)
    result = run_benchmark(design, methods, config, threads=threads)
    write_records_csv(out / "records.csv", result.records)
    write_summary_csv(out / "summary.csv", [result])
    write_manifest(out, "bench", args, config)
    failed = sum(1 for r in result.records if r.error)
    if failed:
        log.warning("%d of %d cells failed; see the error column of records.csv",
                    failed, len(result.records))
    ok_reps = {r.replication for r in result.records if not r.error}
    if not ok_reps:
        print("error: every replication failed", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_ratio(args: argparse.Namespace) -> int:
    config = _load_config(args)
    train, test = read_train_csv(args.train), read_test_csv(args.test)
    check_pair(train, test)
    if args.sigma is not None and args.sigma <= 0:
        raise InputError("--sigma must be > 0")
    if args.lam is not None and args.lam < 0:
        raise InputError("--lambda must be >= 0")
    out = _out_dir(args.out)
    sigma_grid = (args.sigma,) if args.sigma is not None else config.ulsif_sigma_grid
    lambda_grid = (args.lam,) if args.lam is not None else config.ulsif_lambda_grid
    model = ulsif_fit_cv(train.X, test.X, sigma_grid, lambda_grid,
                         RngStream(args.seed).substream("ulsif").generator(), config.cv_folds,
                         config.ulsif_centers, config.ratio_clip)
    write_csv(out / "ratio.csv", ["row", "ratio"],
              ([i, float(r)] for i, r in enumerate(model(train.X))))
    params = {"sigma": model.sigma, "lambda": model.lam, "centers": model.n_centers,
              "clip": model.clip}
    (out / "ratio_params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    write_manifest(out, "ratio", args, config, [args.train, args.test])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftfit",
                                     description="Covariate shift adaptation by doubly robust regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="EstimatorConfig JSON file")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="fit one estimator on train/test CSVs")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=FIT_METHODS, default="dr")
    p.add_argument("--basis", default="affine",
                   help="affine, quad2d, or a term list such as '1,x1,x1^2,x1*x2'")
    p.add_argument("--kind", choices=("linear", "logistic"), default="linear")
    p.add_argument("--alpha", type=float, help="SCSA exponent (default from config)")
    p.add_argument("--xi", type=int, help="number of cross-fitting folds")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw one synthetic train/test pair")
    p.add_argument("--model", type=int, choices=(1, 2), default=1)
    p.add_argument("--cov", choices=("indep", "corr"), default="indep")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--coef", type=float, default=1.0, help="common Model 1 coefficient")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="Monte Carlo benchmark")
    p.add_argument("--model", type=int, choices=(1, 2), default=1)
    p.add_argument("--cov", choices=("indep", "corr"), default="indep")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--methods", default="ols,wls,np,dr")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--coef", type=float, default=1.0, help="common Model 1 coefficient")
    p.add_argument("--threads", type=int, help="worker processes (default: $DRIFTFIT_THREADS or all cores)")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ratio", help="density ratio diagnostics")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    common(p)
    p.set_defaults(func=cmd_ratio)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotPositiveDefinite, NoConvergence) as exc:
        print(f"estimation failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (DriftfitError, ValueError) as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
