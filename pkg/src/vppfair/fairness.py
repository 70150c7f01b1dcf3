"""Fairness-constrained aggregator pricing.

Each criterion caps the pairwise spread of a per-consumer metric at
``(1 - alpha) * baseline``:

* energy fairness: provided-energy ratios ``D_i / cap_i``,
* price fairness: incentive prices ``p_i``,
* utility fairness: consumer utilities ``U_i``.

Energy fairness is a convex program in provided energy and is solved
directly on the band engine.  Price and utility fairness have piecewise
price responses, so consumers are first assigned to response branches
(zero / interior / saturated); enumerating all 3^N assignments and solving
each branch-restricted subproblem yields the global optimum, with ties
between equal-profit assignments broken toward the lexicographically
smallest one so outputs are deterministic.  Subproblems are independent and
could run concurrently; they are evaluated in assignment order here so the
tie break never depends on scheduling.

A brute-force grid oracle over the same feasible set is included for
cross-checking; it is a test instrument, not a production path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np
from scipy.optimize import nnls

from . import bandqp
from .model import (
    EquilibriumSolution,
    FEAS_TOL,
    MarketParams,
    ModelInvariantError,
    Multipliers,
    Population,
    best_response,
    participation_threshold,
    profit_of,
    solution_from_demands,
    utility as consumer_utility,
    validate_market,
)
from .profit import solve_n

PARTICIPATION_TOL = 1e-9


class Criterion(str, Enum):
    ENERGY = "energy"
    PRICE = "price"
    UTILITY = "utility"


class Branch(IntEnum):
    """Response branch of one consumer: price below threshold, interior,
    or at/above the saturating price."""

    BELOW = 0
    INTERIOR = 1
    SATURATED = 2


Partition = tuple[Branch, ...]


@dataclass(frozen=True)
class FairnessSpec:
    """Criterion, enforcement level alpha in [0, 1] and baseline disparity.

    The baseline is the disparity of the profit-only optimum under the same
    criterion; :func:`make_spec` computes it.
    """

    criterion: Criterion
    alpha: float
    baseline: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ModelInvariantError(f"alpha={self.alpha} outside [0, 1]")
        if self.baseline < 0.0:
            raise ModelInvariantError(f"baseline={self.baseline} must be nonnegative")

    @property
    def width(self) -> float:
        """Allowed pairwise spread (1 - alpha) * baseline."""
        return (1.0 - self.alpha) * self.baseline


def baseline_disparity(
    criterion: Criterion, profit_sol: EquilibriumSolution, pop: Population
) -> float:
    """Maximum pairwise metric gap at the profit-only optimum.

    For price fairness, consumers providing nothing are excluded: any price
    at or below their participation threshold is profit-equivalent, so their
    canonical price carries no information and would inflate the gap.
    """
    d = np.asarray(profit_sol.demands)
    if criterion == Criterion.ENERGY:
        ratios = d / pop.capacities
        return float(ratios.max() - ratios.min())
    if criterion == Criterion.PRICE:
        active = d > PARTICIPATION_TOL * np.maximum(1.0, pop.capacities)
        if active.sum() < 2:
            return 0.0
        p = np.asarray(profit_sol.prices)[active]
        return float(p.max() - p.min())
    u = np.asarray(profit_sol.utilities)
    return float(u.max() - u.min())


def make_spec(
    pop: Population, mkt: MarketParams, criterion: Criterion, alpha: float
) -> FairnessSpec:
    """Build a spec with the baseline recomputed from the profit-only solve."""
    sol, _ = solve_n(pop, mkt)
    return FairnessSpec(
        criterion=Criterion(criterion),
        alpha=alpha,
        baseline=baseline_disparity(Criterion(criterion), sol, pop),
    )


def solution_disparity(
    criterion: Criterion, sol: EquilibriumSolution, pop: Population
) -> float:
    """Achieved pairwise metric spread of a solution, all consumers included."""
    if criterion == Criterion.ENERGY:
        r = np.asarray(sol.demands) / pop.capacities
        return float(r.max() - r.min())
    if criterion == Criterion.PRICE:
        p = np.asarray(sol.prices)
        return float(p.max() - p.min())
    u = np.asarray(sol.utilities)
    return float(u.max() - u.min())


def check_perfect_fairness(pop: Population, mkt: MarketParams) -> EquilibriumSolution:
    """The only point satisfying all three criteria at level one.

    A uniform price at the largest participation threshold keeps every
    consumer at zero provision: all disparities are exactly zero and so is
    the profit.
    """
    p_uni = participation_threshold(pop.cost, max(c.capacity for c in pop.consumers))
    zeros = (0.0,) * pop.n
    return EquilibriumSolution(
        prices=(p_uni,) * pop.n,
        demands=zeros,
        utilities=zeros,
        profit=0.0,
        multipliers=Multipliers(lam=0.0, eta=0.0, mu=zeros, nu=zeros, residual=0.0),
    )


# ---------------------------------------------------------------------------
# Energy fairness (convex in provided energy)
# ---------------------------------------------------------------------------

def solve_energy_fair(
    pop: Population, mkt: MarketParams, spec: FairnessSpec
) -> EquilibriumSolution:
    """Maximize profit subject to the provided-energy-ratio band.

    Works in ratio coordinates r_i = D_i / cap_i, where each profit term is
    concave quadratic, the cap is linear and the fairness constraint is the
    band max r - min r <= width; the band engine then solves it exactly.
    """
    if spec.criterion != Criterion.ENERGY:
        raise ModelInvariantError("spec criterion must be energy")
    validate_market(pop, mkt)
    a, b = pop.cost.a, pop.cost.b
    w, caps = pop.weights, pop.capacities

    variables = []
    bests = []
    for wi, ci in zip(w, caps):
        A = -a * wi * ci * ci
        B = wi * (mkt.pi - b + a * ci) * ci
        variables.append(
            bandqp.BandVariable(A=A, B=B, C=0.0, lo=0.0, hi=1.0, c=wi * ci, e=0.0)
        )
        bests.append(min(1.0, max(0.0, B / (-2.0 * A))))
    band = bandqp.solve_band_problem(
        variables, resource=mkt.d_s, width=spec.width, anchor_hi=max(bests)
    )
    if band is None:
        raise ModelInvariantError(
            "energy-fair problem infeasible; baseline inconsistent with population"
        )
    demands = np.asarray(band.x) * caps
    mults = _energy_kkt_multipliers(pop, mkt, demands, spec.width)
    return solution_from_demands(pop, mkt, demands, mults)


def _energy_kkt_multipliers(
    pop: Population, mkt: MarketParams, d: np.ndarray, width: float
) -> Multipliers:
    """Fit nonnegative multipliers to the stationarity system and report the
    max-norm residual.  Columns: aggregation cap, binding ratio-band pairs,
    active box bounds."""
    a, b = pop.cost.a, pop.cost.b
    w, caps = pop.weights, pop.capacities
    n = pop.n
    grad = w * (mkt.pi - b + a * caps - 2.0 * a * d)

    cols: list[np.ndarray] = [w.copy()]
    labels = ["lam"]
    ratios = d / caps
    spread = ratios.max() - ratios.min()
    act_tol = 1e-7 * max(1.0, width if width > 0 else 1.0)
    if spread >= width - act_tol:
        tops = np.where(ratios >= ratios.max() - act_tol)[0]
        bots = np.where(ratios <= ratios.min() + act_tol)[0]
        for i in tops:
            for j in bots:
                if i == j:
                    continue
                g = np.zeros(n)
                g[i] = 1.0 / caps[i]
                g[j] = -1.0 / caps[j]
                cols.append(g)
                labels.append(f"eta_{i}_{j}")
    for i in range(n):
        if d[i] <= 1e-7 * max(1.0, caps[i]):
            g = np.zeros(n)
            g[i] = -1.0
            cols.append(g)
            labels.append(f"mu_{i}")
        if d[i] >= caps[i] - 1e-7 * max(1.0, caps[i]):
            g = np.zeros(n)
            g[i] = 1.0
            cols.append(g)
            labels.append(f"nu_{i}")
    M = np.column_stack(cols)
    coef, _ = nnls(M, grad)
    residual = float(np.max(np.abs(M @ coef - grad)))

    lam = float(coef[0])
    eta = float(sum(c for c, lbl in zip(coef, labels) if lbl.startswith("eta")))
    mu = np.zeros(n)
    nu = np.zeros(n)
    for c, lbl in zip(coef, labels):
        if lbl.startswith("mu_"):
            mu[int(lbl.split("_")[1])] = c
        elif lbl.startswith("nu_"):
            nu[int(lbl.split("_")[1])] = c
    return Multipliers(
        lam=lam, eta=eta, mu=tuple(mu), nu=tuple(nu), residual=residual
    )


# ---------------------------------------------------------------------------
# Partition enumeration (price and utility fairness)
# ---------------------------------------------------------------------------

def _tie_better(candidate: float, incumbent: float) -> bool:
    return candidate > incumbent + 1e-9 * max(1.0, abs(incumbent))


def _partitions(n: int):
    for assignment in itertools.product(
        (Branch.BELOW, Branch.INTERIOR, Branch.SATURATED), repeat=n
    ):
        yield assignment


def _price_partition_variables(
    pop: Population, mkt: MarketParams, assignment: Partition, width: float
):
    """Band variables (coordinate = price) for one branch assignment."""
    a, b = pop.cost.a, pop.cost.b
    variables = []
    bests = []
    for consumer, branch in zip(pop.consumers, assignment):
        wi, ci = consumer.weight, consumer.capacity
        thr = b - a * ci
        if branch == Branch.BELOW:
            variables.append(
                bandqp.BandVariable(
                    A=0.0, B=0.0, C=0.0, lo=0.0, hi=thr, target=thr
                )
            )
            bests.append(thr)
        elif branch == Branch.INTERIOR:
            A = -wi / a
            B = wi * ((mkt.pi + b) / a - ci)
            C = wi * (mkt.pi * ci - mkt.pi * b / a)
            variables.append(
                bandqp.BandVariable(
                    A=A, B=B, C=C, lo=thr, hi=b, c=wi / a, e=wi * (ci - b / a)
                )
            )
            bests.append(min(b, max(thr, B / (-2.0 * A))))
        else:
            variables.append(
                bandqp.BandVariable(
                    A=0.0,
                    B=-wi * ci,
                    C=wi * mkt.pi * ci,
                    lo=b,
                    hi=b + width + 1.0,
                    e=wi * ci,
                    target=b,
                )
            )
            bests.append(b)
    return variables, max(bests)


def _utility_partition_variables(
    pop: Population, mkt: MarketParams, assignment: Partition, width: float
):
    """Band variables for utility fairness.

    Interior consumers use provided energy as the coordinate (utility is the
    quadratic metric 0.5*a*D^2); saturated consumers use utility itself,
    which their price tracks affinely; zero-branch consumers are pinned at
    utility zero.
    """
    a, b = pop.cost.a, pop.cost.b
    bests = []
    raw = []
    for consumer, branch in zip(pop.consumers, assignment):
        wi, ci = consumer.weight, consumer.capacity
        if branch == Branch.BELOW:
            raw.append(dict(A=0.0, B=0.0, C=0.0, lo=0.0, hi=0.0, target=0.0))
            bests.append(0.0)
        elif branch == Branch.INTERIOR:
            A = -a * wi
            B = wi * (mkt.pi - b + a * ci)
            raw.append(
                dict(
                    A=A, B=B, C=0.0, lo=0.0, hi=ci, c=wi, e=0.0,
                    metric=bandqp.QUADRATIC, curvature=a,
                )
            )
            s_best = min(ci, max(0.0, B / (-2.0 * A)))
            bests.append(0.5 * a * s_best * s_best)
        else:
            u_lo = 0.5 * a * ci * ci
            raw.append(
                dict(
                    A=0.0, B=-wi, C=wi * (mkt.pi * ci - b * ci + u_lo),
                    lo=u_lo, hi=None, e=wi * ci, target=u_lo,
                )
            )
            bests.append(u_lo)
    anchor_hi = max(bests)
    variables = []
    for spec in raw:
        if spec["hi"] is None:
            spec["hi"] = anchor_hi + width + 1.0
        variables.append(bandqp.BandVariable(**spec))
    return variables, anchor_hi


def _price_solution(
    pop: Population, mkt: MarketParams, assignment: Partition, band: bandqp.BandSolution
) -> EquilibriumSolution:
    a, b = pop.cost.a, pop.cost.b
    prices, demands, utils = [], [], []
    for consumer, branch, x in zip(pop.consumers, assignment, band.x):
        ci = consumer.capacity
        if branch == Branch.BELOW:
            p, d = x, 0.0
        elif branch == Branch.INTERIOR:
            p = x
            d = min(ci, max(0.0, (p - b) / a + ci))
        else:
            p, d = x, ci
        prices.append(p)
        demands.append(d)
        utils.append(consumer_utility(pop.cost, ci, p, d))
    return EquilibriumSolution(
        prices=tuple(prices),
        demands=tuple(demands),
        utilities=tuple(utils),
        profit=profit_of(pop, mkt, prices, demands),
        multipliers=Multipliers(lam=band.lam),
    )


def _utility_solution(
    pop: Population, mkt: MarketParams, assignment: Partition, band: bandqp.BandSolution
) -> EquilibriumSolution:
    a, b = pop.cost.a, pop.cost.b
    prices, demands, utils = [], [], []
    for consumer, branch, x in zip(pop.consumers, assignment, band.x):
        ci = consumer.capacity
        if branch == Branch.BELOW:
            p, d, u = b - a * ci, 0.0, 0.0
        elif branch == Branch.INTERIOR:
            d = x
            p = a * d + b - a * ci
            u = 0.5 * a * d * d
        else:
            u = x
            d = ci
            p = (u + b * ci - 0.5 * a * ci * ci) / ci
        prices.append(p)
        demands.append(d)
        utils.append(u)
    return EquilibriumSolution(
        prices=tuple(prices),
        demands=tuple(demands),
        utilities=tuple(utils),
        profit=profit_of(pop, mkt, prices, demands),
        multipliers=Multipliers(lam=band.lam),
    )


def _solve_by_partitions(
    pop: Population, mkt: MarketParams, spec: FairnessSpec, coarse: int
) -> EquilibriumSolution:
    validate_market(pop, mkt)
    width = spec.width
    build = (
        _price_partition_variables
        if spec.criterion == Criterion.PRICE
        else _utility_partition_variables
    )
    assemble = (
        _price_solution if spec.criterion == Criterion.PRICE else _utility_solution
    )

    best_sol: EquilibriumSolution | None = None
    for assignment in _partitions(pop.n):
        variables, anchor_hi = build(pop, mkt, assignment, width)
        band = bandqp.solve_band_problem(
            variables, resource=mkt.d_s, width=width, anchor_hi=anchor_hi,
            coarse=coarse,
        )
        if band is None:
            continue
        if best_sol is None or _tie_better(band.value, best_sol.profit):
            best_sol = assemble(pop, mkt, assignment, band)
    if best_sol is None:
        raise ModelInvariantError(
            "all branch assignments infeasible; this cannot happen for a valid model"
        )
    return best_sol


def solve_price_fair(
    pop: Population, mkt: MarketParams, spec: FairnessSpec, coarse: int = 257
) -> EquilibriumSolution:
    """Price-fair profit maximization by branch enumeration.

    Every branch subproblem is a concave program in prices (quadratic on the
    interior branch, linear on the others) over the price band, solved
    exactly.  Prices of zero-provision consumers are free within their
    non-participation range and are canonicalized toward b - a*cap.
    """
    if spec.criterion != Criterion.PRICE:
        raise ModelInvariantError("spec criterion must be price")
    return _solve_by_partitions(pop, mkt, spec, coarse)


def solve_utility_fair(
    pop: Population, mkt: MarketParams, spec: FairnessSpec, coarse: int = 769
) -> EquilibriumSolution:
    """Utility-fair profit maximization by branch enumeration.

    Branch subproblems are nonconvex as a whole (utility couples provided
    energy quadratically with saturated prices), but for a fixed band anchor
    they separate into a concave water-filling solve; the anchor itself is
    located by dense scan plus local refinement, and the result is
    cross-validated against the grid oracle in the test suite.
    """
    if spec.criterion != Criterion.UTILITY:
        raise ModelInvariantError("spec criterion must be utility")
    return _solve_by_partitions(pop, mkt, spec, coarse)


def solve_fair(
    pop: Population, mkt: MarketParams, spec: FairnessSpec
) -> EquilibriumSolution:
    """Dispatch to the criterion's solver."""
    if spec.criterion == Criterion.ENERGY:
        return solve_energy_fair(pop, mkt, spec)
    if spec.criterion == Criterion.PRICE:
        return solve_price_fair(pop, mkt, spec)
    return solve_utility_fair(pop, mkt, spec)


# ---------------------------------------------------------------------------
# Grid oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    """Brute-force reference values for one instance.

    ``profit``/``solution`` describe the best strictly feasible grid point:
    a true lower bound on the optimum, so a correct solver must match or
    beat it.  ``relaxed_profit``/``relaxed_solution`` allow one grid step
    of metric movement; the true optimizer rounds onto that set, so the
    relaxed profit plus ``error_bound`` is an upper reference (the solver
    must not exceed it).  At very tight fairness levels the strict set can
    be empty on a coarse grid; that is reported in ``status``, not fatal.
    """

    profit: float
    relaxed_profit: float
    solution: EquilibriumSolution | None
    relaxed_solution: EquilibriumSolution | None
    error_bound: float
    status: str
    n_evaluated: int = 0

    @property
    def found(self) -> bool:
        return self.profit > -np.inf


def _profit_gradient_bound(pop: Population, mkt: MarketParams) -> np.ndarray:
    a, b = pop.cost.a, pop.cost.b
    caps, w = pop.capacities, pop.weights
    return w * np.maximum(
        np.abs(mkt.pi - b + a * caps), np.abs(mkt.pi - b - a * caps)
    )


def profit_grid_oracle(
    pop: Population, mkt: MarketParams, step: float
) -> OracleResult:
    """Exhaustive profit-only search over per-consumer demand grids.

    Evaluates the full product grid through a max-plus fold over a shared
    budget axis, so the cost is near-linear in grid size instead of n^N.
    Usage is rounded up to budget bins, which keeps every reported point
    feasible; the error bound covers the induced rounding loss.
    """
    a, b = pop.cost.a, pop.cost.b
    w, caps = pop.weights, pop.capacities
    n_bins = int(math.floor(mkt.d_s / step)) + 1

    def values_on_grid(i: int):
        n_pts = int(math.ceil(caps[i] / step)) + 1
        d = np.minimum(np.arange(n_pts) * step, caps[i])
        f = w[i] * ((mkt.pi - b + a * caps[i]) * d - a * d * d)
        bins = np.ceil(w[i] * d / step - 1e-12).astype(int)
        return d, f, bins

    # fold from the last consumer backwards: best[b] = max value using the
    # suffix of consumers with at most b budget bins
    best = np.zeros(n_bins)
    evaluated = 0
    for i in range(pop.n - 1, 0, -1):
        d, f, bins = values_on_grid(i)
        evaluated += d.size
        layer = np.full(n_bins, -np.inf)
        if i == pop.n - 1:
            keep = bins < n_bins
            np.maximum.at(layer, bins[keep], f[keep])
            layer = np.maximum.accumulate(layer)
        else:
            for dv, fv, bv in zip(d, f, bins):
                if bv >= n_bins:
                    continue
                shifted = np.full(n_bins, -np.inf)
                shifted[bv:] = best[: n_bins - bv] + fv
                layer = np.maximum(layer, shifted)
        best = layer

    d0, f0, bins0 = values_on_grid(0)
    evaluated += d0.size
    remaining = n_bins - 1 - bins0
    valid = remaining >= 0
    totals = np.where(valid, f0 + best[np.maximum(remaining, 0)], -np.inf)
    i_star = int(np.argmax(totals))
    profit = float(totals[i_star])

    grad = _profit_gradient_bound(pop, mkt)
    bound = 2.0 * pop.n * step * float(grad.sum())

    solution = None
    if pop.n == 2:
        # recover the argmax pair exactly for the two-consumer case
        d1, f1, bins1 = values_on_grid(1)
        budget = n_bins - 1 - bins0[i_star]
        feas = bins1 <= budget
        j_star = int(np.argmax(np.where(feas, f1, -np.inf)))
        solution = solution_from_demands(pop, mkt, [d0[i_star], d1[j_star]])
    return OracleResult(
        profit=profit,
        relaxed_profit=profit,
        solution=solution,
        relaxed_solution=solution,
        error_bound=bound,
        status="ok",
        n_evaluated=evaluated,
    )


def grid_oracle(
    pop: Population, mkt: MarketParams, spec: FairnessSpec, resolution: float
) -> OracleResult:
    """Brute-force oracle for the fairness-constrained problem.

    Energy fairness grids provided energy; price and utility fairness grid
    prices across all three response branches per consumer.  Feasibility is
    checked with a slack that covers what one grid step can move the metric,
    so the rounded true optimizer is never rejected.  Intended for tests
    with N <= 4 (the grid is exponential in N).
    """
    if pop.n > 4:
        raise ModelInvariantError("grid oracle is limited to 4 consumers")
    validate_market(pop, mkt)
    a, b = pop.cost.a, pop.cost.b
    w, caps = pop.weights, pop.capacities
    width = spec.width
    h = resolution

    if spec.criterion == Criterion.ENERGY:
        axes = [np.arange(0.0, caps[i] + h / 2, h) for i in range(pop.n)]
        axes = [np.minimum(ax, caps[i]) for i, ax in enumerate(axes)]
        metric_slack = 2.0 * h * float(np.max(1.0 / caps))
        grad_bound = float(np.sum(_profit_gradient_bound(pop, mkt))) * h
    else:
        thr = b - a * caps
        lo = np.maximum(0.0, thr.min() - width - h)
        if spec.criterion == Criterion.PRICE:
            hi = b + width + h
            metric_slack = 2.0 * h
        else:
            u_hi = 0.5 * a * float(caps.max()) ** 2 + width
            hi = max(b, float(np.max((u_hi + b * caps - 0.5 * a * caps**2) / caps))) + h
            metric_slack = 2.0 * h * float(caps.max()) + 2.0 * h
        base_axis = np.arange(lo, hi + h / 2, h)
        axes = []
        for i in range(pop.n):
            # keep the branch breakpoints on the axis so saturated and
            # threshold prices are represented exactly
            ax = np.unique(np.concatenate([base_axis, [thr[i], b]]))
            axes.append(ax)
        grad_bound = h * float(
            np.sum(w * (caps + (abs(mkt.pi - b) / a + caps)))
        )

    cap_tol = FEAS_TOL * max(1.0, mkt.d_s)
    cap_slack = h * float(w.sum()) + cap_tol
    strict_tol = FEAS_TOL * max(1.0, width)
    best = {"strict": (-np.inf, None), "relaxed": (-np.inf, None)}
    evaluated = 0

    inner_axes = axes[1:]
    mesh = np.meshgrid(*inner_axes, indexing="ij") if inner_axes else []
    inner = [m.ravel() for m in mesh]
    for x0 in axes[0]:
        cols = [np.full(inner[0].shape if inner else (1,), x0)]
        cols.extend(inner)
        evaluated += cols[0].size
        if spec.criterion == Criterion.ENERGY:
            d_cols = cols
            metric = [c / caps[i] for i, c in enumerate(cols)]
            p_terms = [
                w[i] * ((mkt.pi - b + a * caps[i]) * c - a * c * c)
                for i, c in enumerate(cols)
            ]
        else:
            d_cols = [
                np.clip((c - b) / a + caps[i], 0.0, caps[i])
                for i, c in enumerate(cols)
            ]
            if spec.criterion == Criterion.PRICE:
                metric = cols
            else:
                metric = [
                    c * d - (0.5 * a * d * d + (b - a * caps[i]) * d)
                    for i, (c, d) in enumerate(zip(cols, d_cols))
                ]
            p_terms = [
                w[i] * (mkt.pi - c) * d for i, (c, d) in enumerate(zip(cols, d_cols))
            ]
        metric_hi = np.maximum.reduce(metric)
        metric_lo = np.minimum.reduce(metric)
        total_d = sum(w[i] * d for i, d in enumerate(d_cols))
        profit = sum(p_terms)
        gap = metric_hi - metric_lo
        under_cap = total_d <= mkt.d_s + cap_tol
        masks = {
            "strict": (gap <= width + strict_tol) & under_cap,
            "relaxed": (gap <= width + metric_slack)
            & (total_d <= mkt.d_s + cap_slack),
        }
        for kind, mask in masks.items():
            if not mask.any():
                continue
            masked = np.where(mask, profit, -np.inf)
            k = int(np.argmax(masked))
            if masked[k] > best[kind][0]:
                best[kind] = (float(masked[k]), tuple(float(c[k]) for c in cols))

    def to_solution(point):
        if point is None:
            return None
        if spec.criterion == Criterion.ENERGY:
            return solution_from_demands(pop, mkt, point)
        demands = [best_response(pop.cost, caps[i], p) for i, p in enumerate(point)]
        utils = [
            consumer_utility(pop.cost, caps[i], p, d)
            for i, (p, d) in enumerate(zip(point, demands))
        ]
        return EquilibriumSolution(
            prices=tuple(point),
            demands=tuple(demands),
            utilities=tuple(utils),
            profit=profit_of(pop, mkt, point, demands),
        )

    strict_sol = to_solution(best["strict"][1])
    relaxed_sol = to_solution(best["relaxed"][1])
    status = "ok"
    if strict_sol is None:
        status = "no strictly feasible grid point at this resolution"
    return OracleResult(
        profit=best["strict"][0],
        relaxed_profit=best["relaxed"][0],
        solution=strict_sol,
        relaxed_solution=relaxed_sol,
        error_bound=grad_bound,
        status=status,
        n_evaluated=evaluated,
    )
