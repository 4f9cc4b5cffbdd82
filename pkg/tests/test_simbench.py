import csv
import math

import numpy as np
import pytest

from driftfit import simbench
from driftfit.errors import LengthMismatch
from driftfit.numkit import RngStream
from driftfit.simbench import (
    SimDesign,
    cells_for,
    evaluate_mse,
    generate,
    parse_methods,
    run_benchmark,
    write_records_csv,
    write_summary_csv,
)


def test_design_covariances_and_validation():
    np.testing.assert_array_equal(SimDesign().cov, [[1, 0], [0, 1]])
    np.testing.assert_array_equal(SimDesign(cov_structure="corr").cov, [[1, 0.1], [0.1, 1]])
    for bad in ({"model": 3}, {"cov_structure": "x"}, {"n": 0}, {"replications": 0}):
        with pytest.raises(ValueError):
            SimDesign(**bad)


def test_true_functions():
    d1, d2 = SimDesign(model=1, coef=0.5), SimDesign(model=2)
    x = np.array([[1.0, 2.0]])
    # 0.5 * (1 + 1 + 1 + 2 + 4 + 2 * 2)
    assert d1.f0(x)[0] == pytest.approx(0.5 * 13)
    assert d2.f0(x)[0] == pytest.approx(1 / (1 + math.exp(2 + 6)))
    # the correct logistic class represents f0 exactly with beta_true
    from driftfit.models import ParametricModel

    basis, kind = d2.basis_for("Correct")
    assert ParametricModel(kind, basis, d2.beta_true)(x)[0] == pytest.approx(d2.f0(x)[0])
    basis, kind = d1.basis_for("Correct")
    assert ParametricModel(kind, basis, d1.beta_true)(x)[0] == pytest.approx(d1.f0(x)[0])
    assert d1.basis_for("Misspecified")[0].k == 3


def test_generate_shapes_and_means():
    draw = generate(SimDesign(n=40, m=30), RngStream(1))
    assert draw.train.n == 40 and draw.test.m == 30 and draw.y_hidden.shape == (30,)
    assert np.all(np.abs(draw.theta) <= 1) and np.all(np.abs(draw.theta_test) <= 1)


def test_generate_deterministic():
    a = generate(SimDesign(n=50, m=20), RngStream(3, 4))
    b = generate(SimDesign(n=50, m=20), RngStream(3, 4))
    assert a.train.X.tobytes() == b.train.X.tobytes()
    assert a.y_hidden.tobytes() == b.y_hidden.tobytes()


def test_model2_binned_conditional_mean():
    design = SimDesign(model=2, n=100_000, m=10)
    draw = generate(design, RngStream(5))
    X, Y = draw.train.X, draw.train.Y
    assert set(np.unique(Y)) <= {0.0, 1.0}
    index = 2 * X[:, 0] + 3 * X[:, 1]
    edges = np.quantile(index, np.linspace(0, 1, 21))
    bins = np.clip(np.searchsorted(edges, index, side="right") - 1, 0, 19)
    f = design.f0(X)
    for b in range(20):
        sel = bins == b
        assert abs(Y[sel].mean() - f[sel].mean()) <= 0.03


def test_model1_zero_coefficients_is_pure_noise():
    draw = generate(SimDesign(model=1, coef=0.0, n=10_000, m=10), RngStream(6))
    assert 0.9 <= np.var(draw.train.Y, ddof=1) <= 1.1


def test_evaluate_mse():
    y = np.array([1.0, -2.0, 3.5])
    assert evaluate_mse(y, y) == 0.0
    assert evaluate_mse(y + 0.7, y) == pytest.approx(0.49)
    with pytest.raises(LengthMismatch):
        evaluate_mse(y[:2], y)


def test_oracle_predictor_hits_noise_floor():
    design = SimDesign(model=1)
    draw = generate(design, RngStream(7))
    assert abs(evaluate_mse(design.f0(draw.test.X), draw.y_hidden) - 1.0) <= 0.13


def test_parse_methods():
    assert parse_methods("ols, DR_noCF,csa_np") == ["OLS", "DR_noCF", "CSA_NP"]
    assert parse_methods(["np", "np"]) == ["NP"]
    with pytest.raises(ValueError, match="bogus"):
        parse_methods("ols,bogus")
    with pytest.raises(ValueError):
        parse_methods("")


def test_cells_layout():
    assert cells_for(["OLS", "NP", "DR"]) == [("OLS", "Misspecified"), ("OLS", "Correct"),
                                             ("NP", "NA"), ("DR", "Misspecified"),
                                             ("DR", "Correct")]


SMALL = SimDesign(n=200, m=100, replications=3, seed=11)


def test_one_replication_bookkeeping():
    res = run_benchmark(SimDesign(n=200, m=100, replications=1), ["ols", "dr"])
    assert len(res.records) == 4
    assert all(r.mse >= 0 and not r.error for r in res.records)


def test_all_methods_run_on_both_models():
    for model in (1, 2):
        res = run_benchmark(SimDesign(model=model, n=200, m=100, replications=1), simbench.METHODS)
        assert len(res.records) == 19
        assert all(not r.error for r in res.records), [r.error for r in res.records if r.error]


def test_replication_independence():
    batch = run_benchmark(SMALL, ["ols", "wls", "dr"])
    alone = run_benchmark(SMALL, ["ols", "wls", "dr"], replications=[2])
    assert [r for r in batch.records if r.replication == 2] == alone.records


def test_thread_count_does_not_change_records():
    a = run_benchmark(SMALL, ["ols", "dr"], threads=1)
    b = run_benchmark(SMALL, ["ols", "dr"], threads=2)
    assert a.records == b.records


def test_summary_recomputable_from_records():
    res = run_benchmark(SMALL, ["ols", "np"])
    for cell in res.summary:
        vals = np.array([r.mse for r in res.records
                         if r.method == cell.method and r.spec == cell.spec])
        assert cell.mean == np.mean(vals) and cell.sd == np.std(vals, ddof=1)
        assert cell.count == 3 and cell.failures == 0


def test_cell_failure_is_recorded(monkeypatch):
    original = simbench._Replication.predict

    def flaky(self, method, spec):
        if method == "WLS" and spec == "Correct":
            raise RuntimeError("boom")
        return original(self, method, spec)

    monkeypatch.setattr(simbench._Replication, "predict", flaky)
    res = run_benchmark(SimDesign(n=200, m=100, replications=2), ["ols", "wls"])
    failed = [r for r in res.records if r.error]
    assert len(failed) == 2 and all("boom" in r.error and math.isnan(r.mse) for r in failed)
    cell = res.cell("WLS", "Correct")
    assert cell.failures == 2 and cell.count == 0 and math.isnan(cell.mean)
    assert res.cell("WLS", "Misspecified").count == 2


def test_csv_outputs(tmp_path):
    res = run_benchmark(SimDesign(n=200, m=100, replications=2), ["ols", "wls", "np", "dr"])
    write_records_csv(tmp_path / "records.csv", res.records)
    write_summary_csv(tmp_path / "summary.csv", [res])
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["model", "cov", "stat"] and len(rows[0]) == 3 + 7
    assert [r[2] for r in rows[1:]] == ["mean", "sd"]
    with open(tmp_path / "records.csv") as fh:
        recs = list(csv.DictReader(fh))
    assert len(recs) == 14
    assert float(recs[0]["mse"]) == res.records[0].mse  # 17 significant digits round-trip


def test_csa_np_tracks_np_with_correct_basis():
    res = run_benchmark(SimDesign(replications=30, seed=3), ["np", "csa_np"])
    assert abs(res.cell("CSA_NP", "Correct").mean - res.cell("NP", "NA").mean) <= 0.1
