import pytest

from vppfair.model import ConsumerParams, CostParams, MarketParams, Population


def make_pop(a, b, caps, weights=None, ids=None):
    weights = weights or [1] * len(caps)
    ids = ids or [f"c{i + 1}" for i in range(len(caps))]
    return Population.from_consumers(
        CostParams(a, b),
        [ConsumerParams(i, c, w) for i, c, w in zip(ids, caps, weights)],
    )


@pytest.fixture
def fig1():
    """Two-consumer energy-fairness reference set."""
    return make_pop(1, 5, (3, 4)), MarketParams(8.5, 6.93)


@pytest.fixture
def fig2():
    """Two-consumer price-fairness reference set."""
    return make_pop(1, 9, (1, 8)), MarketParams(12, 8)


@pytest.fixture
def fig3():
    """Two-consumer utility-fairness reference set."""
    return make_pop(1, 9, (1.2, 3.5)), MarketParams(9.4, 4.5)


@pytest.fixture
def fig4():
    return make_pop(1, 5, (1, 3, 4)), MarketParams(8.5, 7.92)


@pytest.fixture
def fig5():
    return make_pop(1, 9, (1, 5, 8)), MarketParams(12, 10)


@pytest.fixture
def fig6():
    return make_pop(1, 9, (1, 2, 3.5)), MarketParams(9.4, 6.4)


@pytest.fixture
def case_study():
    """Published cluster table: means (0.907, 2.692, 4.991), counts
    (505, 497, 231), fitted cost (0.0408, 4.5686), pi = 5, cap at 80% of
    total weighted capacity."""
    pop = make_pop(
        0.0408,
        4.5686,
        (0.907, 2.692, 4.991),
        weights=(505, 497, 231),
        ids=("cluster1", "cluster2", "cluster3"),
    )
    mkt = MarketParams(5.0, 0.8 * pop.total_capacity)
    return pop, mkt


def draw_two_consumer(rng, cap_margin=0.0, require_interior_binding=False):
    """Random valid two-consumer instance (strict capacities).

    With ``require_interior_binding`` the draw is resampled until the
    profit-only optimum has a binding aggregation cap with the small
    consumer strictly inside its box, with enough margin that widening the
    capacity gap by 0.1 keeps the same structure.
    """
    while True:
        a = float(rng.uniform(0.4, 2.5))
        c1 = float(rng.uniform(0.5, 3.0))
        c2 = c1 + float(rng.uniform(0.2, 4.0))
        b = float(rng.uniform(a * (c2 + cap_margin) * 1.05, a * (c2 + cap_margin) * 3.0))
        pi = float(rng.uniform(b - a * c1 + 0.05, b + a * c2))
        ds = float(rng.uniform(0.2, 0.95)) * (c1 + c2)
        if not require_interior_binding:
            break
        free1 = min((pi - b) / (2 * a) + c1 / 2, c1)
        free2 = (pi - b) / (2 * a) + c2 / 2
        if free1 + free2 <= ds + 0.2:
            continue
        d1 = min(c1, max(0.0, ds / 2 + (c1 - c2) / 4))
        if 0.05 < d1 < c1 - 0.05:
            break
    pop = make_pop(a, b, (c1, c2))
    return pop, MarketParams(pi, ds)
