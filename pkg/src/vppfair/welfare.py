"""Performance measures: consumer Nash welfare, total utility, social welfare.

Consumer Nash welfare (CNW) is the weighted sum of log utilities.  It is
undefined once any consumer's utility is non-positive; that state is carried
as an explicit ``NEG_INF`` sentinel rather than a floating -inf so it never
leaks into arithmetic comparisons unnoticed.  Serialization writes the
literal string ``-inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DomainError, EquilibriumSolution, MarketParams, Population

NEG_INF = float("-inf")


def is_neg_inf(x: float) -> bool:
    return x == NEG_INF


@dataclass(frozen=True)
class PerformanceReport:
    """CNW, total consumer utility, social welfare, profit and energy-CNW.

    ``cnw`` and ``dcnw`` use the ``NEG_INF`` sentinel when any consumer with
    positive weight has non-positive utility (resp. provision).
    ``social_welfare`` equals ``profit + total_utility`` exactly.
    """

    cnw: float
    total_utility: float
    social_welfare: float
    profit: float
    dcnw: float

    def to_dict(self) -> dict:
        def enc(x: float):
            return "-inf" if is_neg_inf(x) else x

        return {
            "cnw": enc(self.cnw),
            "total_utility": self.total_utility,
            "social_welfare": self.social_welfare,
            "profit": self.profit,
            "dcnw": enc(self.dcnw),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerformanceReport":
        def dec(x):
            return NEG_INF if x == "-inf" else float(x)

        return cls(
            cnw=dec(data["cnw"]),
            total_utility=float(data["total_utility"]),
            social_welfare=float(data["social_welfare"]),
            profit=float(data["profit"]),
            dcnw=dec(data["dcnw"]),
        )


def _weighted_log_sum(weights: np.ndarray, values: np.ndarray) -> float:
    """sum_i w_i log(v_i), NEG_INF when any v_i <= 0."""
    if np.any(values <= 0.0):
        return NEG_INF
    return float(np.dot(weights, np.log(values)))


def report(sol: EquilibriumSolution, pop: Population, mkt: MarketParams) -> PerformanceReport:
    """Evaluate all performance measures at a solution.

    Profit is recomputed from prices and demands, so a report stays
    consistent with its solution even if the solution's stored profit was
    rounded on serialization.
    """
    if len(sol.prices) != pop.n:
        raise DomainError("solution and population sizes differ")
    w = pop.weights
    p = np.asarray(sol.prices)
    d = np.asarray(sol.demands)
    u = np.asarray(sol.utilities)
    profit = float(np.dot(w, (mkt.pi - p) * d))
    total_utility = float(np.dot(w, u))
    return PerformanceReport(
        cnw=_weighted_log_sum(w, u),
        total_utility=total_utility,
        social_welfare=profit + total_utility,
        profit=profit,
        dcnw=_weighted_log_sum(w, d),
    )


def dcnw_cnw_offset(pop: Population) -> float:
    """Additive constant linking CNW to energy-based CNW.

    On the interior pricing branch each utility equals 0.5*a*d^2, so
    cnw = offset + 2*dcnw with offset = sum_i w_i * log(a/2).
    """
    return float(np.sum(pop.weights) * math.log(pop.cost.a / 2.0))
