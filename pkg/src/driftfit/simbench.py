"""Simulation designs and the Monte Carlo replication harness.

Two regression functions on two-dimensional Gaussian covariates whose means
are drawn afresh from ``Uniform[-1, 1]^2`` for every replication (separately
for train and test):

* Model 1: ``c + c x1 + c x1^2 + c x2 + c x2^2 + 2c x1 x2`` plus N(0, 1) noise.
* Model 2: ``1 / (1 + exp(0 + 2 x1 + 3 x2))`` with Bernoulli outcomes.

Each method is fitted with a misspecified affine class and a correctly
specified class and scored by MSE against the realized hidden test outcomes.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .datamodel import EstimatorConfig, LabeledDataset, UnlabeledDataset, single_fold_plan
from .drcsa import (
    assemble_nuisances,
    constant,
    csa_np_fit,
    dr_fit,
    fit_krr_f_models,
    fit_ratio_models,
    make_plan,
    sdb_fit,
    wls_cf_fit,
)
from .errors import LengthMismatch
from .models import Basis, ModelKind, ols_fit, wls_fit
from .numkit import RngLike, RngStream, as_generator, sample_mvnormal

log = logging.getLogger(__name__)

METHODS = ("OLS", "WLS", "NP", "DR", "WLS_CF", "CSA_NP_CF", "DR_noCF", "CSA_NP", "SDB", "SCSA")
SPECS = ("Misspecified", "Correct")
MODEL2_COEF = (0.0, 2.0, 3.0)
_TOKENS = {name.lower(): name for name in METHODS}


def parse_methods(spec: str | Iterable[str]) -> list[str]:
    """Map tokens like ``"ols,dr_nocf"`` onto canonical method names."""
    tokens = spec.split(",") if isinstance(spec, str) else list(spec)
    out = []
    for token in tokens:
        key = token.strip().lower()
        if not key:
            continue
        if key not in _TOKENS:
            raise ValueError(f"unknown method {token.strip()!r}")
        if _TOKENS[key] not in out:
            out.append(_TOKENS[key])
    if not out:
        raise ValueError("no methods given")
    return out


@dataclass(frozen=True)
class SimDesign:
    model: int = 1
    cov_structure: str = "indep"
    n: int = 1000
    m: int = 500
    replications: int = 100
    seed: int = 0
    coef: float = 1.0
    mean_support: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.model not in (1, 2):
            raise ValueError("model must be 1 or 2")
        if self.cov_structure not in ("indep", "corr"):
            raise ValueError("cov_structure must be 'indep' or 'corr'")
        if self.n < 1 or self.m < 1 or self.replications < 1:
            raise ValueError("n, m and replications must be >= 1")

    @property
    def cov(self) -> NDArray[np.float64]:
        rho = 0.0 if self.cov_structure == "indep" else 0.1
        return np.array([[1.0, rho], [rho, 1.0]])

    @property
    def beta_true(self) -> NDArray[np.float64]:
        """Coefficients of the correctly specified class.

        Model 1 in quad2d order (1, x1, x1^2, x2, x2^2, x1*x2); Model 2 as an
        affine logistic model with ``g = 1 / (1 + exp(-z @ beta))``.
        """
        if self.model == 1:
            c = self.coef
            return np.array([c, c, c, c, c, 2.0 * c])
        return -np.asarray(MODEL2_COEF)

    def basis_for(self, spec: str) -> tuple[Basis, ModelKind]:
        if spec == "Misspecified":
            return Basis.affine(2), "linear"
        if self.model == 1:
            return Basis.quad2d(), "linear"
        return Basis.affine(2), "logistic"

    def f0(self, X: ArrayLike) -> NDArray[np.float64]:
        X = np.atleast_2d(np.asarray(X, float))
        if self.model == 1:
            return Basis.quad2d()(X) @ self.beta_true
        z = MODEL2_COEF[0] + MODEL2_COEF[1] * X[:, 0] + MODEL2_COEF[2] * X[:, 1]
        return 1.0 / (1.0 + np.exp(z))


@dataclass(frozen=True)
class SimDraw:
    train: LabeledDataset
    test: UnlabeledDataset
    y_hidden: NDArray[np.float64]
    theta: NDArray[np.float64]
    theta_test: NDArray[np.float64]
    f0: Callable[[ArrayLike], NDArray[np.float64]]


def generate(design: SimDesign, rng: RngLike) -> SimDraw:
    """One synthetic train/test draw with hidden test outcomes."""
    gen = as_generator(rng)
    lo, hi = design.mean_support
    theta = gen.uniform(lo, hi, 2)
    theta_test = gen.uniform(lo, hi, 2)
    X = sample_mvnormal(gen, theta, design.cov, design.n)
    X_test = sample_mvnormal(gen, theta_test, design.cov, design.m)
    f_train, f_test = design.f0(X), design.f0(X_test)
    if design.model == 1:
        Y = f_train + gen.standard_normal(design.n)
        Y_hidden = f_test + gen.standard_normal(design.m)
    else:
        Y = (gen.random(design.n) < f_train).astype(float)
        Y_hidden = (gen.random(design.m) < f_test).astype(float)
    return SimDraw(LabeledDataset(X, Y), UnlabeledDataset(X_test), Y_hidden, theta, theta_test,
                   design.f0)


def evaluate_mse(predictions: ArrayLike, y_hidden: ArrayLike) -> float:
    p = np.asarray(predictions, float).reshape(-1)
    y = np.asarray(y_hidden, float).reshape(-1)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.size} predictions for {y.size} outcomes")
    return float(np.mean((p - y) ** 2))


@dataclass(frozen=True)
class BenchRecord:
    model: int
    cov_structure: str
    replication: int
    seed: int
    method: str
    spec: str
    mse: float
    error: str = ""


class _Replication:
    """Lazily fitted nuisances shared by all methods of one replication."""

    def __init__(self, design: SimDesign, index: int, config: EstimatorConfig):
        self.design = design
        self.config = config
        self.stream = RngStream(design.seed, index)
        self.draw = generate(design, self.stream.substream("dgp"))
        self.train, self.test = self.draw.train, self.draw.test

    @cached_property
    def plan(self):
        return make_plan(self.train, self.test, self.config, self.stream.substream("nuisance"))

    @cached_property
    def full_plan(self):
        return single_fold_plan(self.train.n, self.test.m)

    @cached_property
    def krr_cf(self):
        return fit_krr_f_models(self.train, self.plan, self.config, self.stream.substream("krr_cf"))

    @cached_property
    def ratio_cf(self):
        return fit_ratio_models(self.train, self.test, self.plan, self.config,
                                self.stream.substream("ulsif_cf"))

    @cached_property
    def krr_full(self):
        return fit_krr_f_models(self.train, self.full_plan, self.config,
                                self.stream.substream("krr_full"), cross_fit=False)

    @cached_property
    def ratio_full(self):
        return fit_ratio_models(self.train, self.test, self.full_plan, self.config,
                                self.stream.substream("ulsif_full"), cross_fit=False)

    def _zeros(self, plan):
        return [constant(0.0)] * len(plan.train_folds)

    def predict(self, method: str, spec: str) -> NDArray[np.float64]:
        train, test, config = self.train, self.test, self.config
        if method == "NP":
            return self.krr_full[0](test.X)
        basis, kind = self.design.basis_for(spec)
        opts = dict(tol=config.optimizer_tol, max_iter=config.optimizer_max_iter)
        if method == "OLS":
            return ols_fit(train, basis, kind, **opts)(test.X)
        if method == "WLS":
            return wls_fit(train, basis, self.ratio_full[0](train.X), kind, **opts)(test.X)
        cf = lambda f, r: assemble_nuisances(self.plan, f, r)  # noqa: E731
        full = lambda f, r: assemble_nuisances(self.full_plan, f, r, cross_fit=False)  # noqa: E731
        if method == "DR":
            fit = dr_fit(train, test, basis, kind, config, nuisances=cf(self.krr_cf, self.ratio_cf))
        elif method == "SCSA":
            fit = dr_fit(train, test, basis, kind, config, alpha=config.scsa_alpha,
                         nuisances=cf(self.krr_cf, self.ratio_cf), variant="SCSA")
        elif method == "DR_noCF":
            fit = dr_fit(train, test, basis, kind, config,
                         nuisances=full(self.krr_full, self.ratio_full))
        elif method == "CSA_NP_CF":
            fit = csa_np_fit(train, test, basis, kind, config,
                             nuisances=cf(self.krr_cf, self._zeros(self.plan)))
        elif method == "CSA_NP":
            fit = csa_np_fit(train, test, basis, kind, config,
                             nuisances=full(self.krr_full, self._zeros(self.full_plan)))
        elif method == "SDB":
            fit = sdb_fit(train, test, basis, kind, config,
                          nuisances=cf(self._zeros(self.plan), self.ratio_cf))
        elif method == "WLS_CF":
            model = wls_cf_fit(train, test, basis, kind, config,
                               nuisances=cf(self._zeros(self.plan), self.ratio_cf))
            return model(test.X)
        else:
            raise ValueError(f"unknown method {method!r}")
        return fit.predict(test.X)


def cells_for(methods: Sequence[str]) -> list[tuple[str, str]]:
    """(method, spec) pairs in table order; NP has no parametric spec."""
    out = []
    for method in methods:
        if method == "NP":
            out.append((method, "NA"))
        else:
            out.extend((method, spec) for spec in SPECS)
    return out


def run_replication(design: SimDesign, methods: Sequence[str], config: EstimatorConfig,
                    index: int) -> list[BenchRecord]:
    """Fit every (method, spec) cell on replication ``index``; failures are recorded."""
    rep = _Replication(design, index, config)
    records = []
    for method, spec in cells_for(methods):
        try:
            mse = evaluate_mse(rep.predict(method, spec), rep.draw.y_hidden)
            if not math.isfinite(mse):
                raise FloatingPointError("non-finite MSE")
            error = ""
        except Exception as exc:  # per-cell failures must not stop the run
            log.warning("replication %d %s/%s failed: %s", index, method, spec, exc)
            mse, error = float("nan"), f"{type(exc).__name__}: {exc}"
        records.append(BenchRecord(design.model, design.cov_structure, index, design.seed,
                                   method, spec, mse, error))
    return records


def _run_one(args):
    return run_replication(*args)


@dataclass(frozen=True)
class SummaryCell:
    method: str
    spec: str
    mean: float
    sd: float
    count: int
    failures: int


def summarize(records: Sequence[BenchRecord], methods: Sequence[str]) -> list[SummaryCell]:
    """Mean and sample standard deviation (ddof=1) of MSE per cell."""
    cells = []
    for method, spec in cells_for(methods):
        vals = [r.mse for r in records if r.method == method and r.spec == spec]
        ok = np.array([v for v in vals if math.isfinite(v)])
        mean = float(np.mean(ok)) if ok.size else float("nan")
        sd = float(np.std(ok, ddof=1)) if ok.size > 1 else (0.0 if ok.size else float("nan"))
        cells.append(SummaryCell(method, spec, mean, sd, int(ok.size), len(vals) - int(ok.size)))
    return cells


@dataclass
class BenchResult:
    design: SimDesign
    methods: list[str]
    records: list[BenchRecord]
    summary: list[SummaryCell] = field(default_factory=list)

    def cell(self, method: str, spec: str) -> SummaryCell:
        for c in self.summary:
            if c.method == method and c.spec == spec:
                return c
        raise KeyError((method, spec))


def run_benchmark(
    design: SimDesign,
    methods: Sequence[str] = ("OLS", "WLS", "NP", "DR"),
    config: EstimatorConfig | None = None,
    threads: int = 1,
    replications: Iterable[int] | None = None,
) -> BenchResult:
    """Run ``design.replications`` independent replications.

    Replication ``i`` draws all randomness from ``RngStream(design.seed, i)``,
    so its records do not depend on the batch it runs in or on ``threads``.
    """
    config = config or EstimatorConfig()
    methods = parse_methods(methods)
    indices = list(range(design.replications) if replications is None else replications)
    jobs = [(design, methods, config, i) for i in indices]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(_run_one, jobs))
    else:
        batches = [_run_one(job) for job in jobs]
    records = [r for batch in batches for r in batch]
    return BenchResult(design, methods, records, summarize(records, methods))


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.17g}"


RECORD_FIELDS = ("model", "cov", "replication", "seed", "method", "spec", "mse", "error")


def write_records_csv(path: str | Path, records: Sequence[BenchRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow([r.model, r.cov_structure, r.replication, r.seed, r.method, r.spec,
                             _fmt(r.mse), r.error])


def cell_label(method: str, spec: str) -> str:
    return f"{method}_{spec}"


def write_summary_csv(path: str | Path, results: Sequence[BenchResult]) -> None:
    """One ``mean`` row and one ``sd`` row per design; one column per cell."""
    labels = [cell_label(c.method, c.spec) for c in results[0].summary]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "cov", "stat"] + labels)
        for res in results:
            by_label = {cell_label(c.method, c.spec): c for c in res.summary}
            for stat in ("mean", "sd"):
                row = [res.design.model, res.design.cov_structure, stat]
                row += [_fmt(getattr(by_label[lab], stat)) if lab in by_label else "" for lab in labels]
                writer.writerow(row)
