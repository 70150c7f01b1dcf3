"""Domain types and consumer-side primitives.

A virtual-power-plant aggregator offers each consumer an incentive price
``p`` per unit of provided energy.  A consumer with capacity ``cap`` and
shared cost coefficients ``(a, b)`` incurs the quadratic provision cost

    C(d) = 0.5 * a * d**2 + (b - a * cap) * d,    0 <= d <= cap,

so the marginal cost at zero provision is ``b - a * cap`` and higher
capacity means a cheaper response.  All quantities are double-precision
reals; tolerances default to ``FEAS_TOL`` for feasibility checks and
``VALUE_TOL`` for equality-of-values assertions.

All types are immutable after construction and all operations are pure
functions, so everything here is safe to use concurrently.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FEAS_TOL = float(os.environ.get("VPPFAIR_TOL", 1e-9))
VALUE_TOL = 1e-6


class ModelInvariantError(ValueError):
    """A model parameter violates a structural invariant."""


class DomainError(ValueError):
    """An operation was evaluated outside its domain."""


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap before meeting tolerance."""


@dataclass(frozen=True)
class CostParams:
    """Shared quadratic cost coefficients.

    ``a`` is the cost curvature (currency per energy squared) and ``b`` the
    intercept coefficient (currency per energy).  Strict convexity requires
    ``a > 0``; positive marginal cost over every consumer's range
    additionally requires ``b / a`` to exceed the largest capacity, which is
    checked by :class:`Population` where capacities are known.
    """

    a: float
    b: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not (self.a > 0.0):
            raise ModelInvariantError(f"cost curvature a={self.a} must be positive")


@dataclass(frozen=True)
class ConsumerParams:
    """One consumer (or one cluster of identical consumers).

    ``weight`` is the multiplicity: a cluster of ``n`` identical households
    is represented once with ``weight=n`` instead of materializing copies.
    """

    id: str
    capacity: float
    weight: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacity", float(self.capacity))
        if not (self.capacity > 0.0):
            raise ModelInvariantError(
                f"consumer {self.id!r}: capacity={self.capacity} must be positive"
            )
        if int(self.weight) != self.weight or self.weight < 1:
            raise ModelInvariantError(
                f"consumer {self.id!r}: weight={self.weight} must be an integer >= 1"
            )


@dataclass(frozen=True)
class Population:
    """A shared cost function plus an ordered list of consumers.

    Consumers must be sorted weakly ascending by capacity (ties allowed).
    Use :meth:`from_consumers` to sort on construction.
    """

    cost: CostParams
    consumers: tuple[ConsumerParams, ...]

    def __post_init__(self) -> None:
        if len(self.consumers) < 2:
            raise ModelInvariantError("population needs at least 2 consumers")
        caps = [c.capacity for c in self.consumers]
        if any(lo > hi for lo, hi in zip(caps, caps[1:])):
            raise ModelInvariantError("consumers must be sorted ascending by capacity")
        if not (self.cost.b / self.cost.a > max(caps)):
            raise ModelInvariantError(
                f"b/a={self.cost.b / self.cost.a:.6g} must exceed the largest "
                f"capacity {max(caps):.6g}"
            )

    @classmethod
    def from_consumers(
        cls, cost: CostParams, consumers: Iterable[ConsumerParams]
    ) -> "Population":
        ordered = tuple(sorted(consumers, key=lambda c: (c.capacity, c.id)))
        return cls(cost=cost, consumers=ordered)

    @property
    def n(self) -> int:
        return len(self.consumers)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.consumers], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.consumers], dtype=float)

    @property
    def total_capacity(self) -> float:
        """Weighted capacity sum sum_i w_i * cap_i."""
        return float(np.dot(self.weights, self.capacities))


@dataclass(frozen=True)
class MarketParams:
    """Upper-market price ``pi`` and aggregation cap ``d_s``.

    Cross checks against a population (participation feasibility and
    ``d_s`` below total capacity) live in :func:`validate_market`.
    """

    pi: float
    d_s: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "pi", float(self.pi))
        object.__setattr__(self, "d_s", float(self.d_s))
        if not (self.d_s > 0.0):
            raise ModelInvariantError(f"aggregation cap d_s={self.d_s} must be positive")


def validate_market(pop: Population, mkt: MarketParams) -> None:
    """Check the joint population/market invariants, raising on violation."""
    a, b = pop.cost.a, pop.cost.b
    threshold = b - a * min(c.capacity for c in pop.consumers)
    if not (mkt.pi > threshold):
        raise ModelInvariantError(
            f"pi={mkt.pi:.6g} must exceed b - a*min(capacity) = {threshold:.6g} "
            "for participation to be feasible"
        )
    if not (mkt.d_s < pop.total_capacity):
        raise ModelInvariantError(
            f"d_s={mkt.d_s:.6g} must be below total weighted capacity "
            f"{pop.total_capacity:.6g}"
        )


@dataclass(frozen=True)
class Multipliers:
    """KKT diagnostics attached to a solution.

    ``lam`` is the shadow price of the aggregation cap, ``eta`` the fairness
    multiplier (None when the solve carries no fairness constraint or the
    solver did not recover it), ``mu``/``nu`` the per-consumer lower/upper
    box multipliers.  ``residual`` is the max-norm stationarity residual of
    the fitted KKT system, None when no fit was performed.
    """

    lam: float = 0.0
    eta: float | None = None
    mu: tuple[float, ...] | None = None
    nu: tuple[float, ...] | None = None
    residual: float | None = None


@dataclass(frozen=True)
class EquilibriumSolution:
    """Per-consumer prices, provided energy and utilities at an optimum."""

    prices: tuple[float, ...]
    demands: tuple[float, ...]
    utilities: tuple[float, ...]
    profit: float
    multipliers: Multipliers = field(default_factory=Multipliers)

    def verify(self, pop: Population, mkt: MarketParams, tol: float = FEAS_TOL) -> None:
        """Raise if the solution violates primal feasibility or consistency.

        Checks the box bounds, the aggregation cap (within ``tol`` scaled by
        max(1, d_s)) and Stackelberg consistency: each demand equals the
        best response to its price, with d=0 consistent under any price at
        or below the participation threshold.
        """
        if len(self.prices) != pop.n:
            raise DomainError("solution and population sizes differ")
        cap_tol = tol * max(1.0, mkt.d_s)
        total = 0.0
        for c, p, d in zip(pop.consumers, self.prices, self.demands):
            if d < -tol or d > c.capacity + tol:
                raise DomainError(
                    f"consumer {c.id!r}: demand {d:.6g} outside [0, {c.capacity:.6g}]"
                )
            total += c.weight * d
            if d <= tol:
                lo = pop.cost.b - pop.cost.a * c.capacity
                if p > lo + VALUE_TOL:
                    raise DomainError(
                        f"consumer {c.id!r}: zero provision but price {p:.6g} above "
                        f"participation threshold {lo:.6g}"
                    )
            else:
                br = best_response(pop.cost, c.capacity, p)
                if abs(br - d) > VALUE_TOL * max(1.0, c.capacity):
                    raise DomainError(
                        f"consumer {c.id!r}: demand {d:.6g} inconsistent with best "
                        f"response {br:.6g} at price {p:.6g}"
                    )
        if total > mkt.d_s + cap_tol:
            raise DomainError(
                f"aggregated energy {total:.9g} exceeds cap {mkt.d_s:.9g}"
            )

    def to_dict(self) -> dict:
        return {
            "prices": list(self.prices),
            "demands": list(self.demands),
            "utilities": list(self.utilities),
            "profit": self.profit,
            "multipliers": {
                "lambda": self.multipliers.lam,
                "eta": self.multipliers.eta,
                "mu": list(self.multipliers.mu) if self.multipliers.mu else None,
                "nu": list(self.multipliers.nu) if self.multipliers.nu else None,
                "residual": self.multipliers.residual,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EquilibriumSolution":
        m = data.get("multipliers") or {}
        return cls(
            prices=tuple(float(x) for x in data["prices"]),
            demands=tuple(float(x) for x in data["demands"]),
            utilities=tuple(float(x) for x in data["utilities"]),
            profit=float(data["profit"]),
            multipliers=Multipliers(
                lam=float(m.get("lambda", 0.0)),
                eta=m.get("eta"),
                mu=tuple(m["mu"]) if m.get("mu") else None,
                nu=tuple(m["nu"]) if m.get("nu") else None,
                residual=m.get("residual"),
            ),
        )


# ---------------------------------------------------------------------------
# Consumer-side operations
# ---------------------------------------------------------------------------

def _check_provision(capacity: float, d: float) -> None:
    if d < 0.0 or d > capacity * (1.0 + 1e-12) + 1e-12:
        raise DomainError(f"provision d={d} outside [0, {capacity}]")


def cost(cost_params: CostParams, capacity: float, d: float) -> float:
    """Provision cost 0.5*a*d^2 + (b - a*cap)*d, strictly convex on [0, cap]."""
    _check_provision(capacity, d)
    a, b = cost_params.a, cost_params.b
    return 0.5 * a * d * d + (b - a * capacity) * d


def best_response(cost_params: CostParams, capacity: float, p: float) -> float:
    """Profit-maximizing provision at price ``p``.

    Returns min(cap, max(0, (p - b)/a + cap)): zero below the participation
    threshold ``b - a*cap``, the interior stationary point between the
    threshold and ``b``, and the full capacity at or above ``b``.
    """
    a, b = cost_params.a, cost_params.b
    return min(capacity, max(0.0, (p - b) / a + capacity))


def utility(cost_params: CostParams, capacity: float, p: float, d: float) -> float:
    """Consumer surplus p*d - C(d) at provision ``d``."""
    return p * d - cost(cost_params, capacity, d)


def recover_price(cost_params: CostParams, capacity: float, d: float) -> float:
    """Inverse of the interior price response.

    For d > 0 returns ``a*d + b - a*cap``.  For d = 0 every price at or
    below ``b - a*cap`` induces zero provision and identical profit, so the
    canonical representative ``b - a*cap`` is returned to keep outputs
    deterministic.
    """
    _check_provision(capacity, d)
    a, b = cost_params.a, cost_params.b
    return a * d + b - a * capacity


def participation_threshold(cost_params: CostParams, capacity: float) -> float:
    """Lowest price with a positive response, b - a*cap."""
    return cost_params.b - cost_params.a * capacity


def best_response_vec(pop: Population, prices: np.ndarray) -> np.ndarray:
    """Vectorized best response for every consumer in ``pop``."""
    caps = pop.capacities
    raw = (np.asarray(prices, dtype=float) - pop.cost.b) / pop.cost.a + caps
    return np.clip(raw, 0.0, caps)


def profit_of(pop: Population, mkt: MarketParams,
              prices: Sequence[float], demands: Sequence[float]) -> float:
    """Aggregator profit pi * sum(w*D) - sum(w*p*D)."""
    w = pop.weights
    p = np.asarray(prices, dtype=float)
    d = np.asarray(demands, dtype=float)
    return float(np.dot(w, (mkt.pi - p) * d))


def solution_from_demands(
    pop: Population,
    mkt: MarketParams,
    demands: Sequence[float],
    multipliers: Multipliers | None = None,
) -> EquilibriumSolution:
    """Assemble a solution from provided-energy levels.

    Prices come from :func:`recover_price` (canonical for zero provision)
    and utilities from the envelope identity of the interior branch, which
    holds on all three branches under the recovered prices.
    """
    a = pop.cost.a
    d = np.asarray(demands, dtype=float)
    prices = [recover_price(pop.cost, c.capacity, di) for c, di in zip(pop.consumers, d)]
    utils = 0.5 * a * d * d
    return EquilibriumSolution(
        prices=tuple(float(p) for p in prices),
        demands=tuple(float(x) for x in d),
        utilities=tuple(float(u) for u in utils),
        profit=profit_of(pop, mkt, prices, d),
        multipliers=multipliers or Multipliers(),
    )


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------

def load_population(path: str) -> Population:
    """Read a population from JSON or CSV.

    JSON: ``{"a": ..., "b": ..., "consumers": [{"id", "capacity", "weight"}]}``.
    CSV: columns ``id, capacity, weight`` with ``a`` and ``b`` given as
    ``# a=... b=...`` on the first comment line, or a JSON sidecar; for CSV
    the coefficients may also be embedded as a row with id ``__cost__`` and
    capacity/weight columns holding ``a``/``b``.
    """
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        cost_params = CostParams(a=float(data["a"]), b=float(data["b"]))
        consumers = [
            ConsumerParams(
                id=str(c["id"]),
                capacity=float(c["capacity"]),
                weight=int(c.get("weight", 1)),
            )
            for c in data["consumers"]
        ]
        return Population.from_consumers(cost_params, consumers)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ModelInvariantError(
                "population CSV needs a first line '# a=<a> b=<b>'"
            )
        coeffs = dict(
            tok.split("=") for tok in first.lstrip("#").split() if "=" in tok
        )
        cost_params = CostParams(a=float(coeffs["a"]), b=float(coeffs["b"]))
        consumers = [
            ConsumerParams(
                id=str(row["id"]),
                capacity=float(row["capacity"]),
                weight=int(row.get("weight") or 1),
            )
            for row in csv.DictReader(fh)
        ]
    return Population.from_consumers(cost_params, consumers)


def load_market(path: str, pop: Population | None = None) -> MarketParams:
    """Read market parameters from JSON.

    Accepts ``{"pi": ..., "d_s": ...}`` or ``{"pi": ..., "d_s_fraction": f}``
    where the cap is ``f`` times the population's total weighted capacity
    (requires ``pop``).
    """
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    pi = float(data["pi"])
    if "d_s" in data:
        return MarketParams(pi=pi, d_s=float(data["d_s"]))
    if "d_s_fraction" in data:
        if pop is None:
            raise ModelInvariantError("d_s_fraction needs a population for scaling")
        return MarketParams(pi=pi, d_s=float(data["d_s_fraction"]) * pop.total_capacity)
    raise ModelInvariantError("market file needs d_s or d_s_fraction")
