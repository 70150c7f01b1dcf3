"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced.  Tolerances are fixed here, not configurable.
"""

import os
import time

import numpy as np
import pytest

from vppfair.casestudy import (
    cluster_households,
    estimate_capacities,
    estimate_hourly,
    filter_sample,
    load_hourly_csv,
    load_participants_csv,
)
from vppfair.fairness import (
    Criterion,
    FairnessSpec,
    check_perfect_fairness,
    make_spec,
    profit_grid_oracle,
    solution_disparity,
    solve_fair,
)
from vppfair.model import MarketParams
from vppfair.profit import solve_n, solve_two
from vppfair.regimes import (
    Sign,
    classify,
    default_grid,
    segment_boundaries,
    sweep,
    utilities_converge_alpha,
    utility_hits_zero_alpha,
    validate_transitions,
)
from vppfair.welfare import dcnw_cnw_offset, is_neg_inf, report

from conftest import draw_two_consumer, make_pop


def gate(name: str, ok: bool, detail: str = "") -> None:
    print(f"acceptance {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def test_criterion_01_closed_form_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for _ in range(200):
        pop, mkt = draw_two_consumer(rng)
        sol = solve_two(pop, mkt)
        res = profit_grid_oracle(pop, mkt, step=1e-3)
        worst = max(worst, abs(sol.profit - res.profit) - res.error_bound)
    elapsed = time.time() - t0
    gate(
        "1 closed-form vs demand-grid oracle",
        worst <= 0.0 and elapsed < 10.0,
        f"(worst excess {worst:.2e}, {elapsed:.1f}s)",
    )


def test_criterion_02_profit_only_ordering_and_statics():
    rng = np.random.default_rng(102)
    ordering_ok = True
    for _ in range(1000):
        pop, mkt = draw_two_consumer(rng)
        sol = solve_two(pop, mkt)
        if not sol.demands[0] < sol.demands[1]:
            ordering_ok = False
            break
    statics_ok = True
    for _ in range(200):
        pop, mkt = draw_two_consumer(rng, cap_margin=0.2, require_interior_binding=True)
        rep = report(solve_two(pop, mkt), pop, mkt)
        caps = pop.capacities
        pop2 = make_pop(pop.cost.a, pop.cost.b, (caps[0], caps[1] + 0.1))
        rep2 = report(solve_two(pop2, mkt), pop2, mkt)
        if not (
            rep2.cnw < rep.cnw - 1e-9
            and rep2.total_utility > rep.total_utility + 1e-9
            and rep2.social_welfare > rep.social_welfare + 1e-9
        ):
            statics_ok = False
            break
    gate(
        "2 profit-only ordering and comparative statics",
        ordering_ok and statics_ok,
        f"(ordering {ordering_ok}, statics {statics_ok})",
    )


def test_criterion_03_perfect_fairness(case_study):
    rng = np.random.default_rng(103)
    pops = [case_study, (make_pop(1, 5, (3, 4)), MarketParams(8.5, 6.93))]
    pops += [draw_two_consumer(rng) for _ in range(50)]
    ok = True
    for pop, mkt in pops:
        sol = check_perfect_fairness(pop, mkt)
        if sol.profit != 0.0:
            ok = False
        for criterion in Criterion:
            if solution_disparity(criterion, sol, pop) != 0.0:
                ok = False
    gate("3 perfect fairness is zero-profit and zero-disparity", ok)


def test_criterion_04_energy_figure_reproduction(fig1):
    pop, mkt = fig1
    t0 = time.time()
    records = sweep(pop, mkt, Criterion.ENERGY, default_grid(0.01))
    segments = classify(records, pop, Criterion.ENERGY)
    elapsed = time.time() - t0
    labels = [s.label for s in segments]
    boundary = segment_boundaries(segments)[0] if len(segments) > 1 else float("nan")
    expected_r1 = {
        "U1": Sign.CONSTANT, "U2": Sign.INCREASING, "CNW": Sign.INCREASING,
        "U": Sign.INCREASING, "W_SW": Sign.INCREASING,
    }
    expected_r2 = {
        "U1": Sign.DECREASING, "U2": Sign.INCREASING, "CNW": Sign.DECREASING,
        "U": Sign.INCREASING, "W_SW": Sign.INCREASING,
    }
    ok = (
        labels == [1, 2]
        and abs(boundary - 0.72) <= 0.005
        and segments[0].signs == expected_r1
        and segments[1].signs == expected_r2
        and elapsed < 5.0
    )
    gate(
        "4 energy-fairness figure",
        ok,
        f"(labels {labels}, boundary {boundary:.3f}, {elapsed:.1f}s)",
    )


def test_criterion_05_price_figure_reproduction(fig2):
    pop, mkt = fig2
    t0 = time.time()
    records = sweep(pop, mkt, Criterion.PRICE, default_grid(0.01))
    segments = classify(records, pop, Criterion.PRICE)
    elapsed = time.time() - t0
    labels = [s.label for s in segments]
    ok = labels == [1, 2, 3] and elapsed < 30.0
    if ok:
        r3 = segments[-1]
        tail = [r for r in records if r.alpha >= r3.alpha_lo + 0.01]
        ok &= all(r.solution.utilities[0] <= 1e-9 for r in tail)
        ok &= all(is_neg_inf(r.report.cnw) for r in tail)
        head = [r for r in records if r.alpha <= r3.alpha_lo - 0.01]
        sw = [r.report.social_welfare for r in head]
        scale = max(1.0, max(abs(s) for s in sw))
        ok &= all(s2 >= s1 - 1e-9 * scale for s1, s2 in zip(sw, sw[1:]))
    gate("5 price-fairness figure", ok, f"(labels {labels}, {elapsed:.1f}s)")


def test_criterion_06_utility_figure_reproduction(fig3):
    pop, mkt = fig3
    t0 = time.time()
    records = sweep(pop, mkt, Criterion.UTILITY, default_grid(0.01))
    segments = classify(records, pop, Criterion.UTILITY)
    verdict = validate_transitions(segments, Criterion.UTILITY)
    elapsed = time.time() - t0
    final = records[-1].solution
    end_gap = abs(final.utilities[0] - final.utilities[1])
    ok = verdict.passed and end_gap <= 1e-4 and elapsed < 120.0
    gate(
        "6 utility-fairness figure",
        ok,
        f"(labels {[s.label for s in segments]}, end gap {end_gap:.2e}, {elapsed:.1f}s)",
    )


def test_criterion_07_multi_consumer_thresholds(fig4, fig5, fig6):
    pop4, mkt4 = fig4
    records4 = sweep(pop4, mkt4, Criterion.ENERGY, default_grid(0.005))
    segments4 = classify(records4, pop4, Criterion.ENERGY)
    b4 = segment_boundaries(segments4)[0] if len(segments4) > 1 else float("nan")
    ok4 = abs(b4 - 0.68) <= 0.005

    # the published 0.7 / 0.9 markers for the price and utility figures are
    # read off plots, so they are checked on a commensurate grid
    step = 0.025
    pop5, mkt5 = fig5
    records5 = sweep(pop5, mkt5, Criterion.PRICE, default_grid(step))
    zero_at = utility_hits_zero_alpha(records5, 0)
    ok5 = zero_at is not None and abs(zero_at - 0.7) <= step + 1e-12

    pop6, mkt6 = fig6
    records6 = sweep(pop6, mkt6, Criterion.UTILITY, default_grid(step))
    conv_at = utilities_converge_alpha(records6, 0, 1, tol=1e-5)
    ok6 = conv_at is not None and abs(conv_at - 0.9) <= step + 1e-12

    gate(
        "7 multi-consumer thresholds",
        ok4 and ok5 and ok6,
        f"(energy {b4:.3f}, price-zero {zero_at}, utility-converge {conv_at})",
    )


def test_criterion_08_case_study_reproduction(case_study):
    pop, mkt = case_study
    t0 = time.time()
    base, _ = solve_n(pop, mkt)
    base_rep = report(base, pop, mkt)
    targets = {
        Criterion.ENERGY: (-0.69, 11.91, 0.50),
        Criterion.PRICE: (-2.32, 29.42, 0.68),
        Criterion.UTILITY: (-6.45, 50.47, -1.06),
    }
    details = []
    ok = True
    for criterion, (t_profit, t_util, t_sw) in targets.items():
        spec = make_spec(pop, mkt, criterion, 1.0)
        rep = report(solve_fair(pop, mkt, spec), pop, mkt)
        d_profit = 100 * (rep.profit - base_rep.profit) / abs(base_rep.profit)
        d_util = 100 * (rep.total_utility - base_rep.total_utility) / abs(
            base_rep.total_utility
        )
        d_sw = 100 * (rep.social_welfare - base_rep.social_welfare) / abs(
            base_rep.social_welfare
        )
        ok &= abs(d_profit - t_profit) <= 0.25
        ok &= abs(d_util - t_util) <= 0.25
        ok &= abs(d_sw - t_sw) <= 0.25
        details.append(f"{criterion.value} {d_profit:+.2f}/{d_util:+.2f}/{d_sw:+.2f}")
    elapsed = time.time() - t0
    ok &= elapsed < 60.0
    gate("8 case-study deltas", ok, f"({'; '.join(details)}, {elapsed:.1f}s)")


def _iflex_dir() -> str | None:
    candidates = [
        os.environ.get("VPPFAIR_IFLEX_DIR"),
        os.path.join(os.path.dirname(__file__), "..", "data", "iflex"),
    ]
    for cand in candidates:
        if cand and os.path.isfile(os.path.join(cand, "participants.csv")) and \
                os.path.isfile(os.path.join(cand, "data_hourly.csv")):
            return cand
    return None


def test_criterion_09_raw_data_pipeline():
    data_dir = _iflex_dir()
    if data_dir is None:
        print("acceptance 9 raw-data pipeline: SKIP (public dataset not present; "
              "set VPPFAIR_IFLEX_DIR to a directory holding participants.csv and "
              "data_hourly.csv)")
        pytest.skip("iFlex dataset not present")
    participants, _ = load_participants_csv(os.path.join(data_dir, "participants.csv"))
    filtered = filter_sample(participants)
    ok = filtered.stage_counts == (7410, 4429, 3687, 2694, 1233)
    frame = load_hourly_csv(os.path.join(data_dir, "data_hourly.csv"), ids=filtered.ids)
    est = estimate_hourly(frame, 13)
    ok &= abs(est.a_hat - 0.0408) <= 0.0005 and est.p_value < 0.05
    capacities = estimate_capacities(frame, 13)
    clusters, _ = cluster_households(capacities, k=3, seed=0)
    ok &= [c.count for c in clusters] == [505, 497, 231]
    for got, want in zip(clusters, (0.907, 2.692, 4.991)):
        ok &= abs(got.mean_capacity - want) <= 0.01
    gate("9 raw-data pipeline", ok, f"(counts {filtered.stage_counts})")


def test_criterion_10_cross_solver_invariants():
    rng = np.random.default_rng(110)
    alphas = [i / 10 for i in range(11)]
    ok = True
    notes = []
    for trial in range(10):
        if trial < 6:
            pop, mkt = draw_two_consumer(rng)
        else:
            a = float(rng.uniform(0.5, 2.0))
            caps = np.sort(rng.uniform(0.5, 5.0, size=3))
            caps[1:] += np.arange(1, 3) * 0.2  # keep capacities apart
            b = float(rng.uniform(a * caps[-1] * 1.1, a * caps[-1] * 2.0))
            pi = float(rng.uniform(b - a * caps[0] + 0.05, b + a * caps[-1]))
            ds = float(rng.uniform(0.3, 0.9)) * float(caps.sum())
            pop, mkt = make_pop(a, b, tuple(caps)), MarketParams(pi, ds)
        base, _ = solve_n(pop, mkt)
        base_rep = report(base, pop, mkt)
        offset = dcnw_cnw_offset(pop)
        for criterion in Criterion:
            spec0 = make_spec(pop, mkt, criterion, 0.0)
            profits = []
            for alpha in alphas:
                spec = FairnessSpec(criterion, alpha, spec0.baseline)
                sol = solve_fair(pop, mkt, spec)
                rep = report(sol, pop, mkt)
                profits.append(rep.profit)
                try:
                    sol.verify(pop, mkt)
                except Exception as exc:
                    ok = False
                    notes.append(f"verify: {exc}")
                disp = solution_disparity(criterion, sol, pop)
                if disp > spec.width + 1e-6 * max(1.0, spec.baseline):
                    ok = False
                    notes.append(f"feasibility {criterion} {alpha}")
                interior = all(
                    d > 1e-9 and p <= pop.cost.b + 1e-12
                    for d, p in zip(sol.demands, sol.prices)
                )
                if interior and not is_neg_inf(rep.cnw):
                    gap = abs(rep.cnw - (offset + 2 * rep.dcnw))
                    if gap > 1e-9 * max(1.0, abs(rep.cnw)):
                        ok = False
                        notes.append(f"offset {criterion} {alpha} {gap}")
            scale = max(1.0, abs(base_rep.profit))
            if abs(profits[0] - base_rep.profit) > 1e-8 * scale:
                ok = False
                notes.append(f"alpha0 {criterion}: {profits[0]} vs {base_rep.profit}")
            if any(p2 > p1 + 1e-6 * scale for p1, p2 in zip(profits, profits[1:])):
                ok = False
                notes.append(f"monotone {criterion}")
    gate("10 cross-solver invariants", ok, f"({'; '.join(notes[:3])})" if notes else "")
