import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from driftfit.density_ratio import (
    DensityRatioModel,
    gaussian_gram,
    gaussian_kernel,
    median_distance,
    ratio_predict,
    select_by_score,
    ulsif_cv,
    ulsif_fit,
    ulsif_fit_cv,
    ulsif_objective,
)
from driftfit.errors import DimensionMismatch
from driftfit.numkit import RngStream


def test_gaussian_kernel_values():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.7) == 1.0
    sigma = 0.8
    x = np.array([sigma * math.sqrt(2.0), 0.0])  # ||x - 0||^2 = 2 sigma^2
    assert gaussian_kernel(x, [0.0, 0.0], sigma) == pytest.approx(math.exp(-1), abs=1e-12)
    assert gaussian_kernel(x, [0.0, 0.0], sigma) == pytest.approx(0.367879, abs=1e-6)
    values = [gaussian_kernel([1.0], [3.0], s) for s in (0.5, 1, 2, 10, 100, 1e4)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(1.0, abs=1e-7)
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [0.0], 0.0)


def test_gram_matches_pointwise_kernel():
    gen = np.random.default_rng(0)
    X, C = gen.standard_normal((4, 3)), gen.standard_normal((2, 3))
    G = gaussian_gram(X, C, 1.3)
    for i in range(4):
        for j in range(2):
            assert G[i, j] == pytest.approx(gaussian_kernel(X[i], C[j], 1.3), rel=1e-12)


def test_one_center_hand_instance():
    # centre = first test row (0); phi(x) = exp(-x^2 / 2)
    train, test, lam = np.array([[0.0], [1.0]]), np.array([[0.0], [2.0]]), 0.1
    model = ulsif_fit(train, test, sigma=1.0, lam=lam, n_centers=1)
    H = (1.0 + math.exp(-1.0)) / 2.0
    h = (1.0 + math.exp(-2.0)) / 2.0
    assert model.theta[0] == pytest.approx(h / (H + lam), rel=1e-12)


def _oracle_normal_equations(train, centers, test, sigma):
    def phi(x):
        return np.array([math.exp(-np.sum((x - c) ** 2) / (2 * sigma**2)) for c in centers])

    H = sum(np.outer(phi(x), phi(x)) for x in train) / len(train)
    h = sum(phi(x) for x in test) / len(test)
    return H, h


@given(st.integers(0, 1000), st.sampled_from([1e-3, 1e-2, 0.1, 1.0]))
def test_normal_equation_residual(seed, lam):
    gen = np.random.default_rng(seed)
    train, test = gen.standard_normal((40, 2)), gen.standard_normal((30, 2)) + 0.5
    model = ulsif_fit(train, test, 1.0, lam, n_centers=10, rng=RngStream(seed))
    H, h = _oracle_normal_equations(train, model.centers, test, 1.0)
    assert np.max(np.abs((H + lam * np.eye(10)) @ model.theta - h)) <= 1e-8


def test_centers_are_test_rows_without_replacement():
    gen = np.random.default_rng(1)
    test = gen.standard_normal((50, 2))
    model = ulsif_fit(gen.standard_normal((60, 2)), test, 1.0, 0.1, 20, RngStream(3))
    rows = {tuple(r) for r in test}
    assert len({tuple(c) for c in model.centers}) == 20
    assert all(tuple(c) in rows for c in model.centers)


def test_identical_samples_give_ratio_near_one():
    # a wide kernel is needed for the sup-norm bound: narrow kernels decay to 0 in the tails
    X = np.random.default_rng(2).standard_normal((500, 2))
    model = ulsif_fit(X, X, 4 * median_distance(X), 1e-3, 100, RngStream(2))
    assert np.max(np.abs(model(X) - 1.0)) <= 0.15


def test_huge_lambda_gives_near_zero():
    gen = np.random.default_rng(3)
    model = ulsif_fit(gen.standard_normal((100, 2)), gen.standard_normal((80, 2)), 1.0, 1e6, 50,
                      RngStream(0))
    assert np.all(model(gen.standard_normal((200, 2))) <= 1e-4)


def test_ratio_predict_clamps():
    c = np.zeros((1, 1))
    assert ratio_predict(DensityRatioModel(c, np.array([0.0]), 1.0, 0.0), [0.3]) == 0.0
    assert ratio_predict(DensityRatioModel(c, np.array([-0.3]), 1.0, 0.0), [0.0]) == 0.0
    assert ratio_predict(DensityRatioModel(c, np.array([120.0]), 1.0, 0.0, clip=50), [0.0]) == 50.0
    assert DensityRatioModel(c, np.array([-0.3]), 1.0, 0.0).raw([[0.0]])[0] == pytest.approx(-0.3)
    with pytest.raises(DimensionMismatch):
        ratio_predict(DensityRatioModel(c, np.array([1.0]), 1.0, 0.0), [0.0, 1.0])


@given(st.integers(0, 10_000), st.floats(0.1, 100.0))
def test_clamp_property(seed, clip):
    gen = np.random.default_rng(seed)
    model = DensityRatioModel(gen.standard_normal((5, 2)), 100 * gen.standard_normal(5),
                              float(gen.uniform(0.1, 3)), 0.0, clip)
    r = model(5 * gen.standard_normal((50, 2)))
    assert np.all((r >= 0.0) & (r <= clip))


@given(st.integers(0, 1000))
def test_theta_norm_monotone_in_lambda(seed):
    gen = np.random.default_rng(seed)
    train, test = gen.standard_normal((40, 2)), gen.standard_normal((30, 2)) + 0.3
    norms = [np.linalg.norm(ulsif_fit(train, test, 0.8, lam, 10).theta)
             for lam in (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_fit_validates_arguments():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        ulsif_fit(X, X, 0.0, 0.1, 1)
    with pytest.raises(ValueError):
        ulsif_fit(X, X, 1.0, -1.0, 1)
    with pytest.raises(ValueError):
        ulsif_fit(X, X, 1.0, 0.1, 4)
    with pytest.raises(DimensionMismatch):
        ulsif_fit(X, np.zeros((3, 1)), 1.0, 0.1, 1)


def test_select_by_score_tie_rule():
    scores = {(1.0, 0.1): -1.0, (2.0, 0.1): -1.0, (3.0, 0.01): -1.0, (1.0, 1.0): -0.5}
    assert select_by_score(scores) == (2.0, 0.1)


def test_cv_single_element_grid():
    X = np.zeros((5, 1))
    assert ulsif_cv(X, X, [0.7], [0.3]) == (0.7, 0.3)


def test_cv_prefers_median_bandwidth_on_clusters():
    gen = np.random.default_rng(4)

    def mix(n, frac_a):
        a = int(frac_a * n)
        return np.vstack([gen.normal(0, 0.5, (a, 2)), gen.normal(6, 0.5, (n - a, 2))])

    train, test = mix(400, 0.8), mix(400, 0.2)
    sigma_star = median_distance(np.vstack([train, test]))
    (sigma, lam), scores = ulsif_cv(train, test, [sigma_star, 100 * sigma_star], [1e-2],
                                    rng=RngStream(1), return_scores=True)
    assert sigma == sigma_star
    assert scores[(sigma_star, 1e-2)] < scores[(100 * sigma_star, 1e-2)]
    # the oracle objective agrees with the selection
    m_star = ulsif_fit(train, test, sigma_star, 1e-2, 100, RngStream(2))
    m_wide = ulsif_fit(train, test, 100 * sigma_star, 1e-2, 100, RngStream(2))
    assert ulsif_objective(m_star, train, test) < ulsif_objective(m_wide, train, test)


def test_cv_degenerate_identical_samples():
    X = np.random.default_rng(5).standard_normal((300, 2))
    choice, scores = ulsif_cv(X, X, None, [1e-3, 1e-2, 0.1, 1.0], rng=RngStream(0),
                              return_scores=True)
    # the true ratio r = 1 scores 0.5 * 1 - 1 = -0.5 on any held-out split
    assert abs(scores[choice] - (-0.5)) <= 0.1
    model = ulsif_fit_cv(X, X, None, [1e-3, 1e-2, 0.1, 1.0], RngStream(0))
    assert abs(np.mean(model(X)) - 1.0) <= 0.15


def test_consistency_one_dimension():
    devs = []
    for seed in range(20):
        gen = np.random.default_rng(seed)
        train, test = gen.standard_normal((2000, 1)), gen.standard_normal((2000, 1))
        model = ulsif_fit_cv(train, test, None, [1e-3, 1e-2, 0.1, 1.0], RngStream(seed))
        devs.append(np.mean(np.abs(model(test) - 1.0)))
    assert np.mean(devs) <= 0.1


def test_median_distance_fallbacks():
    assert median_distance(np.zeros((1, 2))) == 1.0
    assert median_distance(np.zeros((5, 2))) == 1.0
    assert median_distance(np.array([[0.0], [3.0]])) == pytest.approx(3.0)
