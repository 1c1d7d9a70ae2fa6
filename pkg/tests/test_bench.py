import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pegm.bench import (METHODS, MetricsReport, SimDesign, frobenius_sq, generate_data,
                        generate_theta0, ggm_oracle_suite, ggm_theta, gibbs_vs_importance, mcc,
                        run_boltzmann, run_coverage, run_simulation)
from pegm.errors import ConfigurationError, ConstraintViolation, ResourceError
from pegm.families import variance_condition
from pegm.optimize import GraphEstimate

# frozen from an independent confusion-matrix computation
MCC_3_180_4_3 = 0.44399166881300706


def _graph(p, edges):
    a = np.zeros((p, p), dtype=bool)
    for j, k in edges:
        a[j, k] = a[k, j] = True
    return a


def test_mcc_examples():
    truth = _graph(4, [(0, 1), (2, 3)])
    assert mcc(truth, truth) == 1.0
    assert mcc(truth, ~truth & ~np.eye(4, dtype=bool)) == -1.0
    assert mcc(truth, np.zeros((4, 4))) == 0.0
    pairs = list(zip(*np.triu_indices(20, 1)))
    true_edges = pairs[:6]
    hat_edges = pairs[:3] + pairs[6:10]
    assert mcc(_graph(20, true_edges), _graph(20, hat_edges)) == pytest.approx(MCC_3_180_4_3)
    assert mcc(true_edges, hat_edges, p=20) == pytest.approx(MCC_3_180_4_3)
    est = GraphEstimate(p=20, selection_frequency=np.zeros((20, 20)), edges=hat_edges, pi_thr=0.5)
    assert mcc(_graph(20, true_edges), est) == pytest.approx(MCC_3_180_4_3)


@given(st.integers(0, 2**31 - 1))
def test_mcc_is_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a = r.random((6, 6)) < 0.3
    b = r.random((6, 6)) < 0.3
    a, b = a | a.T, b | b.T
    assert mcc(a, b) == pytest.approx(mcc(b, a))
    assert -1.0 <= mcc(a, b) <= 1.0


def test_theta0_generation():
    assert np.array_equal(generate_theta0(SimDesign("ising", 5, 10, 0.0, -0.8)), np.zeros((5, 5)))
    full = generate_theta0(SimDesign("ising", 4, 10, 1.0, -0.8))
    assert np.all(full[~np.eye(4, dtype=bool)] == -0.8) and np.all(np.diag(full) == 0)
    with pytest.raises(ConstraintViolation):
        generate_theta0(SimDesign("pgm", 4, 10, 0.5, 0.8))
    t = generate_theta0(SimDesign("ising", 30, 10, 0.05, -3.0, seed=4))
    assert np.array_equal(t, t.T)
    assert np.array_equal(t, generate_theta0(SimDesign("ising", 30, 10, 0.05, -3.0, seed=4)))
    with pytest.raises(ConfigurationError):
        SimDesign("ising", 4, 10, 1.5, -0.8)


def test_generate_data_and_frobenius():
    theta = np.array([[0.0, -0.5], [-0.5, 0.0]])
    x = generate_data("pgm", theta, 50, seed=1, method="accept_reject")
    assert x.shape == (50, 2)
    assert generate_data("ising", theta, 20, seed=1).shape == (20, 2)
    with pytest.raises(ConfigurationError):
        generate_data("ising", theta, 20, method="slice")
    assert frobenius_sq(theta, np.zeros((2, 2))) == pytest.approx(0.5)


def test_gaussian_designs():
    band = ggm_theta("band", 6)
    assert band[0, 1] == 0.3 and band[0, 2] == 0 and band[0, 0] == 3
    mixed = ggm_theta("mixed", 5, seed=2)
    assert variance_condition("gaussian", mixed, 0.1)
    with pytest.raises(ConfigurationError):
        ggm_theta("star", 4)


def test_oracle_suite_rows_and_report_write(tmp_path):
    rep = ggm_oracle_suite("band", p=5, N_list=(1000,), R=3, seed=0)
    assert len(rep.rows) == 3
    assert {"se_z", "fr_grad_z", "fr_grad_log_z", "ess", "runtime_ms"} <= set(rep.rows[0])
    rep.write(tmp_path, by=("N",))
    blob = json.loads((tmp_path / f"{rep.name}.json").read_text())
    assert blob["meta"]["seed"] == 0 and blob["meta"]["bit_generator"] == "Philox"
    assert blob["summary"]["1000"]["se_z"]["count"] == 3
    assert (tmp_path / f"{rep.name}.csv").read_text().startswith("design,p,N")


def test_gibbs_comparison_runs():
    rep = gibbs_vs_importance(p=5, N=500, R=1)
    assert {r["method"] for r in rep.rows} == {"importance", "gibbs"}


def test_simulation_guards_and_empty_methods():
    with pytest.raises(ResourceError):
        run_simulation("uhd", "ising")
    with pytest.raises(ConfigurationError):
        run_simulation("ld", "ising", methods=["lasso"])
    with pytest.raises(ConfigurationError):
        run_simulation("xl", "ising")
    assert run_simulation("ld", "ising", methods=[]).rows == []
    assert set(METHODS) == {"pmle", "pmple", "bayes"}


def test_low_dimensional_simulation_smoke():
    rep = run_simulation("ld", "ising", methods=["pmle", "pmple"], R=1, p_list=[3])
    assert len(rep.rows) == 2 and all("frobenius_sq" in r for r in rep.rows)
    again = run_simulation("ld", "ising", methods=["pmle", "pmple"], R=1, p_list=[3])
    assert [r["frobenius_sq"] for r in rep.rows] == [r["frobenius_sq"] for r in again.rows]


def test_coverage_and_boltzmann_smoke():
    rep = run_coverage(p=3, n=60, B=10, R=1, methods=("mple",))
    row = rep.rows[0]
    assert 0 <= row["coverage"] <= 1 and row["avg_width"] >= 0
    rep = run_boltzmann(p=2, m0=1, m=2, n=200, R=1)
    assert {r["method"] for r in rep.rows} == {"fl", "cd"}
    assert all(0 <= r["tv"] <= 2 for r in rep.rows)


def test_report_summary_and_mean():
    rep = MetricsReport("x", rows=[{"method": "a", "v": 1.0}, {"method": "a", "v": 3.0},
                                   {"method": "b", "v": 5.0}])
    s = rep.summary()
    assert s["a"]["v"]["mean"] == 2.0 and s["b"]["v"]["sd"] == 0.0
    assert rep.mean("v", method="a") == 2.0
    assert np.isnan(rep.mean("v", method="c"))
