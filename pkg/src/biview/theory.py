"""Numerical verification of the entropy analysis behind background modeling.

Two decoder layouts are compared through per-cell binary entropies:
architecture A couples two foreground decoders with a consistency slack
eps1, architecture B couples a foreground and a background decoder with
an inverse-consistency slack eps2.  The module evaluates the lower
bound on A's entropy, the upper bound on B's entropy, the negative gap
separating them, and the gradient-step condition under which a
foreground probability provably moves away from 0.5 (entropy descent).
Natural logarithms throughout.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StepTooLargeError

__all__ = [
    "entropy",
    "entropy_derivative",
    "slack_term",
    "bound_A",
    "bound_B",
    "theorem1_gap",
    "EntropyScenario",
    "VerdictRecord",
    "check_theorem2",
    "bound_grid_check",
    "sample_scenarios",
    "monte_carlo_descent",
    "write_theory_report",
]

# slack must stay below exp(-2) so sqrt(e)*ln(sqrt(e)) is strictly
# negative and strictly decreasing in e
SLACK_LIMIT = math.exp(-2.0)


def entropy(mu: float) -> float:
    """Binary entropy -[mu*ln(mu) + (1-mu)*ln(1-mu)], maximal at mu=0.5."""
    mu = float(mu)
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie strictly inside (0, 1), got {mu}")
    return -(mu * math.log(mu) + (1.0 - mu) * math.log(1.0 - mu))


def entropy_derivative(mu: float) -> float:
    """d/dmu of the binary entropy: ln((1-mu)/mu)."""
    mu = float(mu)
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie strictly inside (0, 1), got {mu}")
    return math.log((1.0 - mu) / mu)


def slack_term(eps: float) -> float:
    """sqrt(eps) * ln(sqrt(eps)); strictly negative for eps in (0, 1)."""
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError(f"slack must be positive, got {eps}")
    root = math.sqrt(eps)
    return root * math.log(root)


def bound_A(mu: float, eps1: float) -> float:
    """Lower bound on the dual-foreground entropy: 2*H(mu) - slack_term(eps1)."""
    return 2.0 * entropy(mu) - slack_term(eps1)


def bound_B(mu: float, eps2: float) -> float:
    """Upper bound on the foreground+background entropy: 2*H(mu) + slack_term(eps2)."""
    return 2.0 * entropy(mu) + slack_term(eps2)


def theorem1_gap(eps1: float, eps2: float) -> float:
    """slack_term(eps2) + slack_term(eps1); strictly negative on (0, e^-2).

    The negated gap is the constant separating the B upper bound from
    the A lower bound.
    """
    for name, eps in (("eps1", eps1), ("eps2", eps2)):
        if not 0.0 < eps < SLACK_LIMIT:
            raise ValueError(f"{name} must lie in (0, e^-2), got {eps}")
    return slack_term(eps2) + slack_term(eps1)


@dataclass(frozen=True)
class EntropyScenario:
    """One gradient-step scenario for the descent check.

    `lr` is the gradient-descent step size (the loss-weighting alpha of
    the trainer is a different knob and deliberately not reused here).
    """

    mu: float
    q: float
    eps1: float
    eps2: float
    grad_task: float
    lr: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0 or not 0.0 < self.q < 1.0:
            raise ValueError("mu and q must lie strictly inside (0, 1)")
        for name, eps in (("eps1", self.eps1), ("eps2", self.eps2)):
            if not 0.0 < eps <= 0.25:
                raise ValueError(f"{name} must lie in (0, 0.25], got {eps}")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class VerdictRecord:
    """Outcome of one descent check."""

    scenario: EntropyScenario
    sign_match: bool
    deviation_ok: bool
    opposite_sides: bool
    conditions_hold: bool
    within_slack: bool
    mu_new: float
    entropy_before: float
    entropy_after: float
    entropy_decreased: bool
    crossed_midpoint: bool


def check_theorem2(s: EntropyScenario) -> VerdictRecord:
    """Apply one gradient step and report whether the entropy descended.

    The total gradient is grad_task + 2*(mu + q - 1), the task gradient
    plus the inverse-consistency penalty gradient.  The descent
    conditions are (i) the task gradient shares the sign of mu + q - 1,
    (ii) the background probability deviates further from 0.5 than the
    foreground one, and (iii) the two probabilities sit on opposite
    sides of 0.5 — the regime the inverse-consistency constraint pins
    down.  When all three hold and the step does not cross 0.5, the
    update moves mu away from the entropy maximum, so the entropy must
    strictly decrease.
    """
    residual = s.mu + s.q - 1.0
    sign_match = math.copysign(1.0, s.grad_task) == math.copysign(1.0, residual) and (
        s.grad_task != 0.0 and residual != 0.0
    )
    deviation_ok = abs(s.q - 0.5) > abs(s.mu - 0.5)
    opposite_sides = (s.mu - 0.5) * (s.q - 0.5) <= 0.0
    conditions_hold = sign_match and deviation_ok and opposite_sides
    within_slack = residual * residual <= s.eps2

    total_grad = s.grad_task + 2.0 * residual
    mu_new = s.mu - s.lr * total_grad
    if not 0.0 < mu_new < 1.0:
        raise StepTooLargeError(
            f"step lr={s.lr} moved mu from {s.mu} to {mu_new}, outside (0, 1)"
        )
    h_before = entropy(s.mu)
    h_after = entropy(mu_new)
    return VerdictRecord(
        scenario=s,
        sign_match=sign_match,
        deviation_ok=deviation_ok,
        opposite_sides=opposite_sides,
        conditions_hold=conditions_hold,
        within_slack=within_slack,
        mu_new=mu_new,
        entropy_before=h_before,
        entropy_after=h_after,
        entropy_decreased=h_after < h_before,
        crossed_midpoint=(s.mu - 0.5) * (mu_new - 0.5) < 0.0,
    )


# -- sweeps ---------------------------------------------------------------------


def bound_grid_check(
    mu_grid=None, eps_grid=(1e-6, 1e-4, 1e-2), atol: float = 1e-12
) -> dict:
    """Check gap negativity and the bound identity over a (mu, eps) grid.

    The identity bound_B(mu, e2) == bound_A(mu, e1) + gap(e1, e2) holds
    by construction; this confirms the implemented expressions agree to
    `atol` and that the gap stays strictly negative.
    """
    if mu_grid is None:
        mu_grid = np.round(np.arange(0.05, 0.951, 0.05), 10)
    worst_residual = 0.0
    max_gap = -math.inf
    count = 0
    for mu in mu_grid:
        for e1 in eps_grid:
            for e2 in eps_grid:
                gap = theorem1_gap(e1, e2)
                residual = abs(bound_B(mu, e2) - (bound_A(mu, e1) + gap))
                worst_residual = max(worst_residual, residual)
                max_gap = max(max_gap, gap)
                count += 1
    return {
        "points": count,
        "worst_identity_residual": worst_residual,
        "max_gap": max_gap,
        "identity_ok": worst_residual <= atol,
        "all_gaps_negative": max_gap < 0.0,
    }


def sample_scenarios(
    rng: np.random.Generator, n: int, satisfying: bool, lr_max: float = 1e-2
) -> list[EntropyScenario]:
    """Rejection-sample descent scenarios with or without the conditions."""
    out: list[EntropyScenario] = []
    while len(out) < n:
        batch = max(1024, 2 * (n - len(out)))
        mu = rng.uniform(0.05, 0.95, size=batch)
        q = rng.uniform(0.05, 0.95, size=batch)
        grad = rng.uniform(-1.0, 1.0, size=batch)
        lr = rng.uniform(1e-4, lr_max, size=batch)
        eps1 = rng.uniform(1e-6, 1e-2, size=batch)
        eps2 = rng.uniform(1e-6, 1e-2, size=batch)
        residual = mu + q - 1.0
        sign_match = (np.sign(grad) == np.sign(residual)) & (grad != 0) & (residual != 0)
        deviation = np.abs(q - 0.5) > np.abs(mu - 0.5)
        opposite = (mu - 0.5) * (q - 0.5) <= 0.0
        keep = sign_match & deviation & opposite
        if not satisfying:
            keep = ~keep
        # reject steps that would leave (0, 1)
        mu_new = mu - lr * (grad + 2.0 * residual)
        keep &= (mu_new > 0.0) & (mu_new < 1.0)
        for i in np.flatnonzero(keep)[: n - len(out)]:
            out.append(
                EntropyScenario(
                    mu=float(mu[i]),
                    q=float(q[i]),
                    eps1=float(eps1[i]),
                    eps2=float(eps2[i]),
                    grad_task=float(grad[i]),
                    lr=float(lr[i]),
                )
            )
    return out


def monte_carlo_descent(
    n_satisfying: int = 100_000,
    n_violating: int = 10_000,
    lr_max: float = 1e-2,
    seed: int = 0,
) -> tuple[dict, list[VerdictRecord]]:
    """Monte-Carlo sweep of the descent theorem.

    Every scenario satisfying the conditions (without crossing 0.5)
    must show a strict entropy decrease; among condition-violating
    scenarios, entropy increases must exist.
    """
    rng = np.random.default_rng(seed)
    records: list[VerdictRecord] = []
    for scenario in sample_scenarios(rng, n_satisfying, satisfying=True, lr_max=lr_max):
        records.append(check_theorem2(scenario))
    n_descent = sum(r.entropy_decreased for r in records)
    n_crossed = sum(r.crossed_midpoint for r in records)
    failures = [
        r for r in records if not r.crossed_midpoint and not r.entropy_decreased
    ]
    min_drop = min(
        (r.entropy_before - r.entropy_after for r in records if not r.crossed_midpoint),
        default=float("nan"),
    )

    violating = [
        check_theorem2(s)
        for s in sample_scenarios(rng, n_violating, satisfying=False, lr_max=lr_max)
    ]
    records.extend(violating)
    counterexamples = sum(not r.entropy_decreased for r in violating)

    summary = {
        "satisfying": n_satisfying,
        "satisfying_descents": n_descent,
        "satisfying_crossed_midpoint": n_crossed,
        "satisfying_failures": len(failures),
        "min_entropy_drop": min_drop,
        "violating": n_violating,
        "violating_counterexamples": counterexamples,
        "lr_max": lr_max,
        "seed": seed,
    }
    return summary, records


def write_theory_report(
    out_dir: Path | str,
    n_satisfying: int = 100_000,
    n_violating: int = 10_000,
    lr_max: float = 1e-2,
    seed: int = 0,
) -> dict:
    """Emit theory_report.csv (scenarios + verdicts) and a summary JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = bound_grid_check()
    mc_summary, records = monte_carlo_descent(n_satisfying, n_violating, lr_max, seed)

    report_path = out_dir / "theory_report.csv"
    scenario_cols = ("mu", "q", "eps1", "eps2", "grad_task", "lr")
    verdict_cols = (
        "sign_match",
        "deviation_ok",
        "opposite_sides",
        "conditions_hold",
        "within_slack",
        "mu_new",
        "entropy_before",
        "entropy_after",
        "entropy_decreased",
        "crossed_midpoint",
    )
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(scenario_cols + verdict_cols)
        for r in records:
            row = [getattr(r.scenario, c) for c in scenario_cols]
            row += [int(v) if isinstance(v, bool) else v for v in (getattr(r, c) for c in verdict_cols)]
            writer.writerow(row)

    summary = {"theorem1_grid": grid, "theorem2_monte_carlo": mc_summary}
    (out_dir / "theory_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
