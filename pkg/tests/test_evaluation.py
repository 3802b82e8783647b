import json

import numpy as np
import pytest

from voltpolicy import GridConditions, VoltVarPolicy, ZeroPolicy
from voltpolicy.evaluation import (
    deterministic_opf,
    eval_threads,
    evaluate_policy,
    opf_sweep,
    plot_extracts,
    timing_comparison,
    violation_probabilities,
    write_report,
)
from voltpolicy.feeder import feeder_from_dict
from voltpolicy.scenarios import ScenarioSet

from conftest import two_bus_dict


def test_violation_probability_formula():
    v = np.array([[0.96, 1.00], [1.00, 1.04], [1.03, 1.00], [0.97, 1.00]])
    low, high, either = violation_probabilities(v, 0.97, 1.03)
    np.testing.assert_allclose(low, [0.25, 0.0])
    np.testing.assert_allclose(high, [0.0, 0.25])
    np.testing.assert_allclose(either, [0.25, 0.25])


def test_zero_policy_report(feeder, dataset):
    report = evaluate_policy(None, feeder, dataset)
    assert report.n_evaluated + len(report.divergent) == len(dataset)
    p = report.violation_probability()
    assert np.all((0 <= p) & (p <= 1))
    # the high-solar window over-voltages part of the feeder most of the time
    assert report.violation_probability("high").max() > 0.5
    same = evaluate_policy(ZeroPolicy(feeder), feeder, dataset)
    np.testing.assert_array_equal(same.losses, report.losses)
    assert report.deviation_quantiles().shape == (5, 36)
    doc = report.to_dict(include_timing=False)
    assert "wall_clock_s" not in doc and doc["metadata"]["deviation"] == "v - 1.0 p.u."


def test_threaded_sweep_matches_sequential(feeder, dataset, monkeypatch):
    sub = dataset.subset(np.arange(30))
    seq = evaluate_policy(None, feeder, sub, threads=1)
    monkeypatch.setenv("VOLTPOLICY_THREADS", "3")
    assert eval_threads() == 3
    par = evaluate_policy(None, feeder, sub)
    np.testing.assert_array_equal(seq.voltages, par.voltages)
    monkeypatch.setenv("VOLTPOLICY_THREADS", "junk")
    assert eval_threads() == 1


def test_evaluate_errors(feeder, dataset, two_bus):
    with pytest.raises(ValueError):
        evaluate_policy(None, feeder, dataset.subset(np.arange(0)))
    with pytest.raises(ValueError):
        evaluate_policy(None, two_bus, dataset.subset(np.arange(2)))
    hopeless = ScenarioSet([[50.0]], [[50.0]], [[0.0]], [0])
    with pytest.raises(RuntimeError):
        evaluate_policy(None, two_bus, hopeless)


def test_divergent_scenarios_are_reported(two_bus):
    data = ScenarioSet([[0.2], [50.0]], [[0.1], [50.0]], [[0.0], [0.0]], [0, 1])
    report = evaluate_policy(None, two_bus, data)
    assert report.divergent == [1] and report.n_evaluated == 1


def test_opf_two_bus_overvoltage():
    fdr = feeder_from_dict(two_bus_dict(0.02, 0.02, s_max=2.5))
    res = deterministic_opf(fdr, GridConditions([0.1], [0.0], [2.0]))
    assert res.q[0] < 0
    assert res.feasible and abs(res.v[0] - 1.03) < 1e-4
    for sub in res.objective_trace:
        assert np.all(np.diff(sub) <= 1e-12 * abs(sub[0]))


def test_opf_unconstrained_optimum(two_bus):
    # voltages well inside limits: the optimum only trades a tiny loss change
    res = deterministic_opf(two_bus, GridConditions([0.1], [0.0], [0.0]))
    assert res.feasible and res.converged
    assert abs(res.q[0]) < 1e-3


def test_opf_flags_infeasible():
    fdr = feeder_from_dict(two_bus_dict(0.02, 0.02, s_max=2.01))
    res = deterministic_opf(fdr, GridConditions([0.0], [0.0], [2.0]))
    assert not res.feasible and res.v[0] > 1.03
    # least infeasible: all available absorption used
    assert res.q[0] == pytest.approx(-np.sqrt(2.01**2 - 4.0), rel=1e-6)


def test_opf_beats_feasible_policy(feeder, dataset):
    sub = dataset.subset(np.arange(0, 1200, 150))
    opf = opf_sweep(feeder, sub)
    assert not opf.metadata["infeasible"]
    assert np.all(opf.voltages <= 1.03 + 1e-4)
    zero = evaluate_policy(None, feeder, sub)
    feasible = np.all(zero.voltages <= 1.03 + 1e-9, axis=1) & np.all(zero.voltages >= 0.97 - 1e-9, axis=1)
    # wherever doing nothing is already feasible the OPF can only do better
    assert np.all(opf.losses[feasible] <= zero.losses[feasible] + 1e-6)


def test_timing_and_extracts(tmp_path, feeder, dataset):
    sub = dataset.subset(np.arange(3))
    est = VoltVarPolicy(feeder=feeder, epochs=0).fit(sub)
    assert timing_comparison(est, feeder, sub.subset(np.arange(0))) == (0.0, 0.0)
    t_dnn, t_opf = timing_comparison(est, feeder, sub)
    assert 0 < t_dnn < t_opf
    reports = {"policy": evaluate_policy(est, feeder, sub), "none": evaluate_policy(None, feeder, sub)}
    out = plot_extracts(reports)
    assert set(out) == {"losses_timeline.csv", "deviation_quantiles.csv", "radar.csv"}
    assert out["radar.csv"].splitlines()[0] == "strategy,bus,violation_probability"
    assert len(out["radar.csv"].splitlines()) == 1 + 2 * 36
    write_report(tmp_path / "r.json", reports)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert set(doc["strategies"]) == {"policy", "none"}
