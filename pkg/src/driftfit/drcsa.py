"""Cross-fitted doubly robust covariate shift adaptation.

For fold ``l`` with nuisances ``f`` (regression estimate) and ``r`` (density
ratio) fitted on the other folds, the fold risk is

    R_l(beta) = mean_i {(Y_i - g(X_i))^2 - (f(X_i) - g(X_i))^2} * r(X_i)^alpha
              + mean_j (f(Xt_j) - g(Xt_j))^2

with ``i`` over train points and ``j`` over test points of fold ``l``. The
estimator minimizes ``sum_l R_l``. ``alpha = 1`` is the DR estimator,
``alpha in [0, 1)`` the semi-covariate-shift (SCSA) variant, and replacing
``f`` by an OLS fit of the parametric class itself gives the self-debiased
(SDB) estimator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .datamodel import (
    EstimatorConfig,
    FoldPlan,
    LabeledDataset,
    UnlabeledDataset,
    check_pair,
    make_fold_plan,
    single_fold_plan,
)
from .density_ratio import ulsif_fit_cv
from .errors import NoConvergence
from .models import (
    Basis,
    ModelKind,
    ParametricModel,
    krr_fit_cv,
    ols_fit,
    resolve_basis,
    wls_fit,
)
from .numkit import RngStream, solve_spd
from .optim import OptimResult, newton_minimize

NuisanceFn = Callable[[NDArray[np.float64]], NDArray[np.float64]]
Override = Union[NuisanceFn, Sequence[NuisanceFn], None]


def constant(value: float) -> NuisanceFn:
    """Nuisance function returning ``value`` everywhere."""

    def fn(X):
        return np.full(np.atleast_2d(X).shape[0], float(value))

    fn.__name__ = f"constant({value:g})"
    return fn


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(0, 2**63)))
    raise TypeError(f"cannot derive an RngStream from {type(rng).__name__}")


# ---------------------------------------------------------------------------
# nuisances


@dataclass(frozen=True)
class FoldNuisance:
    fold: int
    train_fit_idx: NDArray[np.int64]
    test_fit_idx: NDArray[np.int64]
    train_eval_idx: NDArray[np.int64]
    test_eval_idx: NDArray[np.int64]
    f_model: NuisanceFn
    ratio_model: NuisanceFn


@dataclass(frozen=True)
class CrossFitNuisances:
    """Per-fold nuisance estimates together with the index sets they used."""

    plan: FoldPlan
    folds: tuple[FoldNuisance, ...]
    cross_fitted: bool

    def audit(self) -> None:
        """Check that no fold's nuisances were fitted on that fold's own samples."""
        if not self.cross_fitted:
            return
        for fn in self.folds:
            if np.intersect1d(fn.train_fit_idx, fn.train_eval_idx).size:
                raise AssertionError(f"fold {fn.fold}: train fit/eval index sets overlap")
            if np.intersect1d(fn.test_fit_idx, fn.test_eval_idx).size:
                raise AssertionError(f"fold {fn.fold}: test fit/eval index sets overlap")

    def with_models(
        self,
        f_models: Sequence[NuisanceFn] | None = None,
        ratio_models: Sequence[NuisanceFn] | None = None,
    ) -> "CrossFitNuisances":
        folds = []
        for k, fn in enumerate(self.folds):
            changes = {}
            if f_models is not None:
                changes["f_model"] = f_models[k]
            if ratio_models is not None:
                changes["ratio_model"] = ratio_models[k]
            folds.append(replace(fn, **changes))
        return replace(self, folds=tuple(folds))


def _fit_sets(plan: FoldPlan, cross_fit: bool, k: int):
    if not cross_fit:
        return plan.train_folds[0], plan.test_folds[0]
    return plan.train_complement(k), plan.test_complement(k)


def make_plan(train: LabeledDataset, test: UnlabeledDataset, config: EstimatorConfig,
              rng: RngStream, cross_fit: bool = True) -> FoldPlan:
    if not cross_fit:
        return single_fold_plan(train.n, test.m)
    return make_fold_plan(train.n, test.m, config.xi, rng.substream("folds"))


def fit_krr_f_models(train: LabeledDataset, plan: FoldPlan, config: EstimatorConfig,
                     rng: RngStream, cross_fit: bool = True) -> list:
    """Kernel ridge regression on each fold's complement, hyperparameters by CV."""
    models = []
    for k in range(len(plan.train_folds)):
        idx, _ = _fit_sets(plan, cross_fit, k)
        models.append(krr_fit_cv(train.subset(idx), config.krr_sigma_grid, config.krr_lambda_grid,
                                 rng.substream(f"krr/{k}").generator(), config.cv_folds))
    return models


def fit_parametric_f_models(train: LabeledDataset, plan: FoldPlan, basis: Basis,
                            kind: ModelKind, config: EstimatorConfig,
                            cross_fit: bool = True) -> list:
    """OLS of the parametric class itself on each fold's complement (SDB)."""
    models = []
    for k in range(len(plan.train_folds)):
        idx, _ = _fit_sets(plan, cross_fit, k)
        models.append(ols_fit(train.subset(idx), basis, kind, tol=config.optimizer_tol,
                              max_iter=config.optimizer_max_iter))
    return models


def fit_ratio_models(train: LabeledDataset, test: UnlabeledDataset, plan: FoldPlan,
                     config: EstimatorConfig, rng: RngStream, cross_fit: bool = True) -> list:
    """uLSIF on each fold's train and test complements, hyperparameters by CV."""
    models = []
    for k in range(len(plan.train_folds)):
        tr, te = _fit_sets(plan, cross_fit, k)
        models.append(ulsif_fit_cv(train.X[tr], test.X[te], config.ulsif_sigma_grid,
                                   config.ulsif_lambda_grid, rng.substream(f"ulsif/{k}").generator(),
                                   config.cv_folds, config.ulsif_centers, config.ratio_clip))
    return models


def _expand_override(override: Override, count: int) -> list[NuisanceFn] | None:
    if override is None:
        return None
    if callable(override):
        return [override] * count
    override = list(override)
    if len(override) != count:
        raise ValueError(f"expected {count} per-fold overrides, got {len(override)}")
    return override


def assemble_nuisances(plan: FoldPlan, f_models: Sequence[NuisanceFn],
                       ratio_models: Sequence[NuisanceFn], cross_fit: bool = True) -> CrossFitNuisances:
    folds = []
    for k in range(len(plan.train_folds)):
        tr, te = _fit_sets(plan, cross_fit, k)
        folds.append(FoldNuisance(k, tr, te, plan.train_folds[k], plan.test_folds[k],
                                  f_models[k], ratio_models[k]))
    nuis = CrossFitNuisances(plan, tuple(folds), cross_fit)
    nuis.audit()
    return nuis


def fit_nuisances(
    train: LabeledDataset,
    test: UnlabeledDataset,
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    cross_fit: bool = True,
    f_source: str = "krr",
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    f_override: Override = None,
    r_override: Override = None,
    plan: FoldPlan | None = None,
) -> CrossFitNuisances:
    """Build the fold plan and fit (or inject) both nuisances for every fold.

    ``f_source`` is ``"krr"`` (kernel ridge) or ``"ols"`` (parametric class
    given by ``basis``/``kind``). Overrides are a single function used for all
    folds or one function per fold; an overridden nuisance is not fitted.
    """
    config = config or EstimatorConfig()
    check_pair(train, test)
    rng = as_stream(rng)
    if plan is None:
        plan = make_plan(train, test, config, rng, cross_fit)
    count = len(plan.train_folds)
    f_models = _expand_override(f_override, count)
    if f_models is None:
        if f_source == "krr":
            f_models = fit_krr_f_models(train, plan, config, rng, cross_fit)
        elif f_source == "ols":
            f_models = fit_parametric_f_models(train, plan, resolve_basis(basis, train.d), kind,
                                               config, cross_fit)
        else:
            raise ValueError(f"unknown f_source {f_source!r}")
    ratio_models = _expand_override(r_override, count)
    if ratio_models is None:
        ratio_models = fit_ratio_models(train, test, plan, config, rng, cross_fit)
    return assemble_nuisances(plan, f_models, ratio_models, cross_fit)


# ---------------------------------------------------------------------------
# risk


def _ratio_weights(r: NDArray, alpha: float) -> NDArray:
    if alpha == 1.0:
        return r
    if alpha == 0.0:
        return np.ones_like(r)
    return np.power(r, alpha)


@dataclass(frozen=True)
class FoldTerms:
    """Nuisance values evaluated on one fold's own samples."""

    Z: NDArray         # basis features of train fold points
    Y: NDArray
    w: NDArray         # r(X_i)^alpha
    f_train: NDArray
    Z_test: NDArray
    f_test: NDArray


def fold_terms(basis: Basis, X, Y, X_test, f_model: NuisanceFn, ratio_model: NuisanceFn,
               alpha: float = 1.0) -> FoldTerms:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    X = np.atleast_2d(np.asarray(X, float))
    X_test = np.atleast_2d(np.asarray(X_test, float))
    if X.shape[0] == 0 or X_test.shape[0] == 0:
        raise ValueError("fold must be non-empty on both sides")
    r = np.asarray(ratio_model(X), float)
    return FoldTerms(basis(X), np.asarray(Y, float).reshape(-1), _ratio_weights(r, alpha),
                     np.asarray(f_model(X), float), basis(X_test), np.asarray(f_model(X_test), float))


def summed_risk(model: ParametricModel, beta: ArrayLike, terms: Sequence[FoldTerms],
                need_hess: bool = True):
    """Value, gradient and Hessian (wrt beta) of the risk summed over folds."""
    m = model.with_beta(beta)
    k = m.k
    value, grad, hess = 0.0, np.zeros(k), np.zeros((k, k))
    for t in terms:
        g, d1, d2 = m.link_derivs(t.Z)
        gt, d1t, d2t = m.link_derivs(t.Z_test)
        n_l, m_l = t.Z.shape[0], t.Z_test.shape[0]
        gap_test = t.f_test - gt
        value += np.mean(((t.Y - g) ** 2 - (t.f_train - g) ** 2) * t.w) + np.mean(gap_test**2)
        a = t.w * (t.Y - t.f_train)
        G, Gt = d1[:, None] * t.Z, d1t[:, None] * t.Z_test
        grad += -2.0 / n_l * (G.T @ a) - 2.0 / m_l * (Gt.T @ gap_test)
        if need_hess:
            hess += -2.0 / n_l * (t.Z * (a * d2)[:, None]).T @ t.Z
            hess += 2.0 / m_l * (Gt.T @ Gt - (t.Z_test * (gap_test * d2t)[:, None]).T @ t.Z_test)
    return float(value), grad, hess


def dr_risk(model: ParametricModel, beta: ArrayLike, X, Y, X_test, f_model: NuisanceFn,
            ratio_model: NuisanceFn, alpha: float = 1.0) -> float:
    """Fold risk R_l(beta) on train fold (X, Y) and test fold X_test."""
    terms = fold_terms(model.basis, X, Y, X_test, f_model, ratio_model, alpha)
    return summed_risk(model, beta, [terms], need_hess=False)[0]


def dr_risk_grad(model: ParametricModel, beta: ArrayLike, X, Y, X_test, f_model: NuisanceFn,
                 ratio_model: NuisanceFn, alpha: float = 1.0) -> NDArray[np.float64]:
    """Gradient of :func:`dr_risk` wrt beta.

    Equals ``-2`` times the first-order-condition vector of the fold risk.
    """
    terms = fold_terms(model.basis, X, Y, X_test, f_model, ratio_model, alpha)
    return summed_risk(model, beta, [terms], need_hess=False)[1]


def linear_closed_form(terms: Sequence[FoldTerms]) -> NDArray[np.float64]:
    """Minimizer of the summed risk when g is linear in the basis."""
    k = terms[0].Z.shape[1]
    A, b = np.zeros((k, k)), np.zeros(k)
    for t in terms:
        n_l, m_l = t.Z.shape[0], t.Z_test.shape[0]
        A += t.Z_test.T @ t.Z_test / m_l
        b += t.Z.T @ (t.w * (t.Y - t.f_train)) / n_l + t.Z_test.T @ t.f_test / m_l
    return solve_spd(A, b)


# ---------------------------------------------------------------------------
# estimators


@dataclass
class DrFitResult:
    beta: NDArray[np.float64]
    model: ParametricModel
    risk_value: float
    grad_norm: float
    iterations: int
    variant: str
    alpha: float
    nuisances: CrossFitNuisances
    converged: bool = True
    trace: list = field(default_factory=list)

    def predict(self, X: ArrayLike) -> NDArray[np.float64]:
        return self.model(X)

    def own_fold_values(self, train: LabeledDataset) -> tuple[NDArray, NDArray]:
        """Per train sample: f(X_i) and r(X_i)^alpha from that sample's own fold."""
        f = np.empty(train.n)
        w = np.empty(train.n)
        for fn in self.nuisances.folds:
            idx = fn.train_eval_idx
            f[idx] = fn.f_model(train.X[idx])
            w[idx] = _ratio_weights(np.asarray(fn.ratio_model(train.X[idx]), float), self.alpha)
        return f, w


def _all_terms(train, test, basis, nuis: CrossFitNuisances, alpha: float) -> list[FoldTerms]:
    return [
        fold_terms(basis, train.X[fn.train_eval_idx], train.Y[fn.train_eval_idx],
                   test.X[fn.test_eval_idx], fn.f_model, fn.ratio_model, alpha)
        for fn in nuis.folds
    ]


def _warm_start(train, basis, kind, terms, nuis, config) -> NDArray:
    w = np.empty(train.n)
    for fn, t in zip(nuis.folds, terms):
        w[fn.train_eval_idx] = t.w
    if not np.any(w > 0):
        w = np.ones(train.n)
    try:
        return wls_fit(train, basis, w, kind, config.optimizer_tol, config.optimizer_max_iter).beta
    except NoConvergence as exc:
        return exc.best.x if exc.best is not None else np.zeros(basis.k)


def minimize_summed_risk(train, test, basis: Basis, kind: ModelKind, nuis: CrossFitNuisances,
                         alpha: float, config: EstimatorConfig, variant: str) -> DrFitResult:
    terms = _all_terms(train, test, basis, nuis, alpha)
    template = ParametricModel.zeros(kind, basis)
    if kind == "linear":
        beta = linear_closed_form(terms)
        value, grad, _ = summed_risk(template, beta, terms, need_hess=False)
        res = OptimResult(beta, value, grad, 0, True)
    else:
        start = _warm_start(train, basis, kind, terms, nuis, config)
        try:
            res = newton_minimize(lambda b: summed_risk(template, b, terms), start,
                                  config.optimizer_tol, config.optimizer_max_iter)
        except NoConvergence as exc:
            best = exc.best
            partial = DrFitResult(best.x, template.with_beta(best.x), best.value, best.grad_norm,
                                  best.iterations, variant, alpha, nuis, False, best.trace)
            raise NoConvergence(str(exc), best=partial) from None
    return DrFitResult(res.x, template.with_beta(res.x), res.value, res.grad_norm, res.iterations,
                       variant, alpha, nuis, res.converged, res.trace)


def _prepare(train, test, basis, config):
    config = config or EstimatorConfig()
    check_pair(train, test)
    basis = resolve_basis(basis, train.d)
    need = config.xi * (basis.k + 1)
    if train.n < need or test.m < need:
        warnings.warn(f"n={train.n}, m={test.m} below the recommended xi*(k+1)={need}",
                      stacklevel=3)
    return basis, config


def dr_fit(
    train: LabeledDataset,
    test: UnlabeledDataset,
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    alpha: float = 1.0,
    f_override: Override = None,
    r_override: Override = None,
    nuisances: CrossFitNuisances | None = None,
    cross_fit: bool = True,
    variant: str | None = None,
) -> DrFitResult:
    """Cross-fitted DR estimator (KRR for f, uLSIF for r).

    Linear models use the closed-form solution; logistic models use damped
    Newton from a weighted least squares warm start. ``f_override`` and
    ``r_override`` inject known nuisance functions instead of fitting them.
    Precomputed ``nuisances`` are reused as-is.

    Raises:
        NotPositiveDefinite: singular test Gram matrix.
        NoConvergence: logistic minimization failed; ``best`` holds a DrFitResult.
    """
    basis, config = _prepare(train, test, basis, config)
    if nuisances is None:
        nuisances = fit_nuisances(train, test, config, rng, cross_fit=cross_fit,
                                  f_override=f_override, r_override=r_override)
    if variant is None:
        variant = "DR" if alpha == 1.0 else f"SCSA({alpha:g})"
        if not nuisances.cross_fitted:
            variant += "_noCF"
    return minimize_summed_risk(train, test, basis, kind, nuisances, alpha, config, variant)


def scsa_fit(
    train: LabeledDataset,
    test: UnlabeledDataset,
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    alpha: float | None = None,
    **kwargs,
) -> DrFitResult:
    """DR estimator with train-term weights r(x)^alpha (default ``config.scsa_alpha``)."""
    config = config or EstimatorConfig()
    alpha = config.scsa_alpha if alpha is None else float(alpha)
    return dr_fit(train, test, basis, kind, config, rng, alpha=alpha,
                  variant=f"SCSA({alpha:g})", **kwargs)


def sdb_fit(
    train: LabeledDataset,
    test: UnlabeledDataset,
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    r_override: Override = None,
    nuisances: CrossFitNuisances | None = None,
) -> DrFitResult:
    """Self-debiased estimator: f on each complement is OLS of the same class.

    When ``nuisances`` is given its plan and ratio models are kept and only
    the regression nuisance is replaced.
    """
    basis, config = _prepare(train, test, basis, config)
    if nuisances is None:
        nuisances = fit_nuisances(train, test, config, rng, f_source="ols", basis=basis,
                                  kind=kind, r_override=r_override)
    else:
        f_models = fit_parametric_f_models(train, nuisances.plan, basis, kind, config,
                                           nuisances.cross_fitted)
        nuisances = nuisances.with_models(f_models=f_models)
    return minimize_summed_risk(train, test, basis, kind, nuisances, 1.0, config, "SDB")


def csa_np_fit(
    train: LabeledDataset,
    test: UnlabeledDataset,
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    cross_fit: bool = True,
    nuisances: CrossFitNuisances | None = None,
) -> DrFitResult:
    """Project the nonparametric regression estimate onto the class over test covariates.

    Equivalent to the summed risk with the density ratio set to zero, so only
    the test-side term ``mean_j (f(Xt_j) - g(Xt_j))^2`` remains.
    """
    basis, config = _prepare(train, test, basis, config)
    zero = constant(0.0)
    if nuisances is None:
        nuisances = fit_nuisances(train, test, config, rng, cross_fit=cross_fit, r_override=zero)
    else:
        nuisances = nuisances.with_models(ratio_models=[zero] * len(nuisances.folds))
    variant = "CSA_NP_CF" if nuisances.cross_fitted else "CSA_NP"
    return minimize_summed_risk(train, test, basis, kind, nuisances, 1.0, config, variant)


def wls_cf_fit(
    train: LabeledDataset,
    test: UnlabeledDataset,
    basis: str | Basis = "affine",
    kind: ModelKind = "linear",
    config: EstimatorConfig | None = None,
    rng=0,
    *,
    nuisances: CrossFitNuisances | None = None,
) -> ParametricModel:
    """Importance-weighted least squares with cross-fitted density ratios.

    Minimizes sum_l mean_{i in fold l} r_{-l}(X_i) (Y_i - g(X_i))^2.
    """
    basis, config = _prepare(train, test, basis, config)
    if nuisances is None:
        nuisances = fit_nuisances(train, test, config, rng, f_override=constant(0.0))
    w = np.empty(train.n)
    for fn in nuisances.folds:
        idx = fn.train_eval_idx
        w[idx] = np.asarray(fn.ratio_model(train.X[idx]), float) / idx.size
    return wls_fit(train, basis, w, kind, config.optimizer_tol, config.optimizer_max_iter)
