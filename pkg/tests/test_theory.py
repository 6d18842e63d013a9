from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from biview.errors import StepTooLargeError
from biview.theory import (
    EntropyScenario,
    bound_A,
    bound_B,
    bound_grid_check,
    check_theorem2,
    entropy,
    entropy_derivative,
    monte_carlo_descent,
    sample_scenarios,
    slack_term,
    theorem1_gap,
    write_theory_report,
)


def test_entropy_maximum_and_symmetry():
    assert entropy(0.5) == pytest.approx(math.log(2.0), abs=1e-15)
    for mu in (0.1, 0.25, 0.33, 0.49):
        assert entropy(mu) == pytest.approx(entropy(1.0 - mu), rel=1e-12)
        assert entropy(mu) < entropy(0.5)


def test_entropy_domain_errors():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            entropy(bad)


def test_entropy_derivative_matches_finite_differences():
    h = 1e-7
    for mu in np.linspace(0.05, 0.95, 19):
        fd = (entropy(mu + h) - entropy(mu - h)) / (2.0 * h)
        assert abs(entropy_derivative(mu) - fd) < 1e-8
        assert entropy_derivative(mu) == pytest.approx(math.log((1 - mu) / mu), abs=1e-15)


def test_bounds_against_frozen_values():
    # frozen from a 30-digit evaluation of the closed forms
    assert slack_term(1e-4) == pytest.approx(-0.04605170185988091, abs=1e-15)
    assert bound_A(0.5, 1e-4) == pytest.approx(1.4323460629797715, abs=1e-12)
    assert bound_B(0.5, 1e-4) == pytest.approx(1.3402426592600097, abs=1e-12)


def test_bounds_vanishing_slack_limit():
    for mu in (0.2, 0.5, 0.8):
        assert bound_A(mu, 1e-18) == pytest.approx(2.0 * entropy(mu), abs=1e-7)
        assert bound_B(mu, 1e-18) == pytest.approx(2.0 * entropy(mu), abs=1e-7)


def test_bound_b_below_bound_a():
    for mu in np.linspace(0.05, 0.95, 19):
        for eps in (1e-6, 1e-4, 1e-2):
            assert bound_B(mu, eps) < bound_A(mu, eps)


def test_gap_value_symmetry_and_limit():
    assert theorem1_gap(1e-4, 1e-4) == pytest.approx(-0.09210340371976183, abs=1e-12)
    assert theorem1_gap(1e-6, 1e-3) == theorem1_gap(1e-3, 1e-6)
    assert -1e-4 < theorem1_gap(1e-12, 1e-12) < 0.0


def test_gap_domain():
    with pytest.raises(ValueError):
        theorem1_gap(0.0, 1e-4)
    with pytest.raises(ValueError):
        theorem1_gap(1e-4, 0.2)  # above e^-2


def test_grid_identity_and_negativity():
    result = bound_grid_check()
    assert result["identity_ok"]
    assert result["all_gaps_negative"]
    assert result["worst_identity_residual"] <= 1e-12


def test_scenario_validation():
    with pytest.raises(ValueError):
        EntropyScenario(mu=0.0, q=0.5, eps1=1e-4, eps2=1e-4, grad_task=0.1, lr=0.01)
    with pytest.raises(ValueError):
        EntropyScenario(mu=0.5, q=0.5, eps1=0.3, eps2=1e-4, grad_task=0.1, lr=0.01)
    with pytest.raises(ValueError):
        EntropyScenario(mu=0.5, q=0.5, eps1=1e-4, eps2=1e-4, grad_task=0.1, lr=0.0)


def test_theorem2_worked_example_low_side():
    s = EntropyScenario(mu=0.4, q=0.8, eps1=1e-4, eps2=1e-4, grad_task=0.5, lr=0.01)
    v = check_theorem2(s)
    assert v.conditions_hold
    assert v.mu_new == pytest.approx(0.391, abs=1e-12)
    assert v.entropy_after < v.entropy_before
    assert not v.crossed_midpoint


def test_theorem2_worked_example_high_side():
    s = EntropyScenario(mu=0.6, q=0.3, eps1=1e-4, eps2=1e-4, grad_task=-0.4, lr=0.01)
    v = check_theorem2(s)
    assert v.conditions_hold
    assert v.mu_new == pytest.approx(0.606, abs=1e-12)
    assert v.mu_new > 0.6
    assert v.entropy_decreased


def test_theorem2_midpoint_start_always_descends():
    for q in (0.2, 0.35, 0.65, 0.9):
        grad = 1.0 if q > 0.5 else -1.0
        s = EntropyScenario(mu=0.5, q=q, eps1=1e-4, eps2=1e-4, grad_task=grad, lr=0.005)
        v = check_theorem2(s)
        assert v.conditions_hold
        assert v.entropy_decreased


def test_theorem2_same_side_scenario_can_increase_entropy():
    # both probabilities below 0.5: the two sign/deviation conditions hold
    # but the inverse-consistency regime does not; the step moves mu
    # toward 0.5 and entropy rises
    s = EntropyScenario(mu=0.4, q=0.2, eps1=1e-4, eps2=1e-4, grad_task=-0.5, lr=0.01)
    v = check_theorem2(s)
    assert v.sign_match and v.deviation_ok and not v.opposite_sides
    assert not v.conditions_hold
    assert not v.entropy_decreased


def test_theorem2_step_too_large():
    s = EntropyScenario(mu=0.05, q=0.95, eps1=1e-4, eps2=1e-4, grad_task=1.0, lr=0.05)
    with pytest.raises(StepTooLargeError):
        check_theorem2(s)


def test_pseudo_sampling_respects_filters():
    rng = np.random.default_rng(0)
    for scenario in sample_scenarios(rng, 100, satisfying=True):
        v = check_theorem2(scenario)
        assert v.conditions_hold
    violating = sample_scenarios(rng, 100, satisfying=False)
    assert any(not check_theorem2(s).conditions_hold for s in violating)


def test_monte_carlo_small_run():
    summary, records = monte_carlo_descent(n_satisfying=2000, n_violating=500, seed=3)
    assert summary["satisfying_descents"] == 2000
    assert summary["satisfying_failures"] == 0
    assert summary["violating_counterexamples"] >= 1
    assert len(records) == 2500


def test_write_theory_report(tmp_path):
    summary = write_theory_report(tmp_path, n_satisfying=500, n_violating=100, seed=1)
    assert (tmp_path / "theory_report.csv").exists()
    assert (tmp_path / "theory_summary.json").exists()
    with open(tmp_path / "theory_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 600
    satisfying = [r for r in rows if r["conditions_hold"] == "1"]
    assert satisfying and all(r["entropy_decreased"] == "1" for r in satisfying)
    assert summary["theorem1_grid"]["identity_ok"]
