"""Profit-only Stackelberg pricing.

Two solvers: a closed form for the strict two-consumer model and a
Lagrangian water-filling solve for weighted populations of any size.  Both
work in provided-energy space, where the problem is a strictly concave
quadratic over a box plus one aggregation-cap constraint, and recover
prices through the interior price response afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    ConvergenceError,
    EquilibriumSolution,
    FEAS_TOL,
    MarketParams,
    ModelInvariantError,
    Multipliers,
    Population,
    solution_from_demands,
    validate_market,
)

MAX_BISECT_ITERS = 200


@dataclass(frozen=True)
class WaterfillDiagnostics:
    """Shadow price of the aggregation cap and how it was found."""

    lam: float
    bisection_iters: int
    cap_binding: bool


def _stationary_demands(pop: Population, mkt: MarketParams, lam: float) -> np.ndarray:
    """Per-consumer optimizer of the cap-relaxed profit at multiplier lam."""
    a, b = pop.cost.a, pop.cost.b
    caps = pop.capacities
    raw = (mkt.pi - b - lam) / (2.0 * a) + caps / 2.0
    return np.clip(raw, 0.0, caps)


def _multipliers_from_lambda(
    pop: Population, mkt: MarketParams, demands: np.ndarray, lam: float
) -> Multipliers:
    """Recover box multipliers from stationarity and report the residual."""
    a, b = pop.cost.a, pop.cost.b
    w = pop.weights
    caps = pop.capacities
    grad = w * (mkt.pi - b + a * caps - 2.0 * a * demands)
    gap = grad - lam * w  # = nu - mu at the optimum
    mu = np.where(demands <= FEAS_TOL * np.maximum(1.0, caps), np.maximum(-gap, 0.0), 0.0)
    nu = np.where(
        demands >= caps * (1.0 - FEAS_TOL) - FEAS_TOL, np.maximum(gap, 0.0), 0.0
    )
    residual = float(np.max(np.abs(grad - lam * w + mu - nu)))
    return Multipliers(
        lam=lam, eta=None, mu=tuple(mu), nu=tuple(nu), residual=residual
    )


def solve_n(
    pop: Population, mkt: MarketParams, tol: float = FEAS_TOL
) -> tuple[EquilibriumSolution, WaterfillDiagnostics]:
    """Weighted profit maximization by bisection on the cap multiplier.

    For lam >= 0 each consumer's cap-relaxed optimum is the projection of
    (pi - b - lam)/(2a) + cap/2 onto [0, cap]; total weighted demand is
    continuous and nonincreasing in lam, so either lam = 0 is feasible or a
    unique lam equates it with the cap.
    """
    validate_market(pop, mkt)
    a, b = pop.cost.a, pop.cost.b
    w = pop.weights
    cap_tol = tol * max(1.0, mkt.d_s)

    d0 = _stationary_demands(pop, mkt, 0.0)
    if float(np.dot(w, d0)) <= mkt.d_s + cap_tol:
        diag = WaterfillDiagnostics(lam=0.0, bisection_iters=0, cap_binding=False)
        return (
            solution_from_demands(pop, mkt, d0, _multipliers_from_lambda(pop, mkt, d0, 0.0)),
            diag,
        )

    lam_lo, lam_hi = 0.0, mkt.pi - b + a * float(np.max(pop.capacities))
    iters = 0
    for iters in range(1, MAX_BISECT_ITERS + 1):
        lam = 0.5 * (lam_lo + lam_hi)
        total = float(np.dot(w, _stationary_demands(pop, mkt, lam)))
        if total > mkt.d_s:
            lam_lo = lam
        else:
            lam_hi = lam
        if lam_hi - lam_lo <= 1e-15 * max(1.0, lam_hi):
            break
    lam = 0.5 * (lam_lo + lam_hi)
    d = _stationary_demands(pop, mkt, lam)
    if abs(float(np.dot(w, d)) - mkt.d_s) > cap_tol:
        raise ConvergenceError(
            f"cap bisection stalled after {iters} iterations; residual "
            f"{float(np.dot(w, d)) - mkt.d_s:.3e} exceeds tolerance {cap_tol:.3e}"
        )
    diag = WaterfillDiagnostics(lam=lam, bisection_iters=iters, cap_binding=True)
    return (
        solution_from_demands(pop, mkt, d, _multipliers_from_lambda(pop, mkt, d, lam)),
        diag,
    )


def solve_two(pop: Population, mkt: MarketParams) -> EquilibriumSolution:
    """Closed-form profit-only optimum for two unit-weight consumers.

    Requires strictly increasing capacities.  When the candidate
    cap-relaxed demands fit under the cap they are optimal; otherwise the
    low-capacity consumer gets the projection of d_s/2 + (cap1 - cap2)/4
    onto its box and the rest of the cap goes to the other consumer.
    """
    validate_market(pop, mkt)
    if pop.n != 2:
        raise ModelInvariantError("solve_two needs exactly two consumers")
    if any(c.weight != 1 for c in pop.consumers):
        raise ModelInvariantError("solve_two needs unit weights")
    cap1, cap2 = (c.capacity for c in pop.consumers)
    if not cap1 < cap2:
        raise ModelInvariantError(
            "solve_two needs strictly increasing capacities; use solve_n for ties"
        )
    a, b = pop.cost.a, pop.cost.b
    c = (mkt.pi - b) / (2.0 * a)
    d1_free = min(c + cap1 / 2.0, cap1)
    d2_free = c + cap2 / 2.0
    if d1_free + d2_free <= mkt.d_s:
        d = np.array([d1_free, d2_free])
        lam = 0.0
    else:
        d1 = min(cap1, max(0.0, mkt.d_s / 2.0 + (cap1 - cap2) / 4.0))
        d = np.array([d1, mkt.d_s - d1])
        # consumer 2 is always interior when the cap binds
        lam = mkt.pi - b + a * cap2 - 2.0 * a * d[1]
    return solution_from_demands(
        pop, mkt, d, _multipliers_from_lambda(pop, mkt, d, lam)
    )
