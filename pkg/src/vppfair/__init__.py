"""Fairness-constrained incentive pricing for virtual-power-plant aggregators."""

from .fairness import (
    Branch,
    Criterion,
    FairnessSpec,
    baseline_disparity,
    check_perfect_fairness,
    grid_oracle,
    make_spec,
    profit_grid_oracle,
    solution_disparity,
    solve_energy_fair,
    solve_fair,
    solve_price_fair,
    solve_utility_fair,
)
from .model import (
    ConsumerParams,
    CostParams,
    EquilibriumSolution,
    MarketParams,
    Multipliers,
    Population,
    best_response,
    cost,
    recover_price,
    utility,
    validate_market,
)
from .profit import WaterfillDiagnostics, solve_n, solve_two
from .regimes import (
    RegimeSegment,
    Sign,
    SweepRecord,
    TransitionVerdict,
    classify,
    default_grid,
    sweep,
    validate_transitions,
)
from .welfare import NEG_INF, PerformanceReport, dcnw_cnw_offset, report

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "ConsumerParams",
    "CostParams",
    "Criterion",
    "EquilibriumSolution",
    "FairnessSpec",
    "MarketParams",
    "Multipliers",
    "NEG_INF",
    "PerformanceReport",
    "Population",
    "RegimeSegment",
    "Sign",
    "SweepRecord",
    "TransitionVerdict",
    "WaterfillDiagnostics",
    "baseline_disparity",
    "best_response",
    "check_perfect_fairness",
    "classify",
    "cost",
    "dcnw_cnw_offset",
    "default_grid",
    "grid_oracle",
    "make_spec",
    "profit_grid_oracle",
    "recover_price",
    "report",
    "solution_disparity",
    "solve_energy_fair",
    "solve_fair",
    "solve_n",
    "solve_price_fair",
    "solve_two",
    "solve_utility_fair",
    "sweep",
    "utility",
    "validate_market",
]
