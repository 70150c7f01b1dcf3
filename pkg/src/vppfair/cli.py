"""Command-line front end.

Subcommands: ``solve`` (one pricing problem), ``sweep`` (alpha sweep to a
plot-ready CSV), ``regimes`` (classification and transition validation),
``casestudy-estimate`` / ``casestudy-cluster`` / ``casestudy-solve`` (the
field-data chain), and ``verify`` (grid-oracle cross checks).

Outputs are deterministic for identical inputs: no timestamps, sorted JSON
keys, repr-formatted floats, atomic file writes.  All failures exit nonzero
with a structured JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import casestudy
from .fairness import (
    Criterion,
    FairnessSpec,
    baseline_disparity,
    grid_oracle,
    make_spec,
    profit_grid_oracle,
    solution_disparity,
    solve_fair,
)
from .model import (
    ConsumerParams,
    CostParams,
    EquilibriumSolution,
    MarketParams,
    Population,
    load_market,
    load_population,
)
from .profit import solve_n, solve_two
from .regimes import (
    SweepRecord,
    classify,
    default_grid,
    read_sweep_csv,
    segment_boundaries,
    sweep,
    validate_transitions,
    write_sweep_csv,
)
from .welfare import PerformanceReport, report


@dataclass
class RunConfig:
    """Normalized invocation; mirrors the CLI flags."""

    command: str
    pop_file: str | None = None
    market_file: str | None = None
    a: float | None = None
    b: float | None = None
    caps: list[float] = field(default_factory=list)
    weights: list[int] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)
    pi: float | None = None
    ds: float | None = None
    ds_fraction: float | None = None
    criterion: str | None = None
    alpha: float = 0.0
    profit_only: bool = False
    grid_step: float = 0.005
    eps_sign: float = 1e-6
    seed: int = 0
    out: str | None = None
    extra: dict = field(default_factory=dict)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _build_population(cfg: RunConfig) -> Population:
    if cfg.pop_file:
        return load_population(cfg.pop_file)
    if cfg.a is None or cfg.b is None or not cfg.caps:
        raise ValueError("need --pop-file or all of --a, --b, --cap")
    ids = cfg.ids or [f"c{i + 1}" for i in range(len(cfg.caps))]
    weights = cfg.weights or [1] * len(cfg.caps)
    if not (len(ids) == len(cfg.caps) == len(weights)):
        raise ValueError("--cap, --weights and --ids lengths differ")
    consumers = [
        ConsumerParams(id=i, capacity=c, weight=w)
        for i, c, w in zip(ids, cfg.caps, weights)
    ]
    return Population.from_consumers(CostParams(a=cfg.a, b=cfg.b), consumers)


def _build_market(cfg: RunConfig, pop: Population) -> MarketParams:
    if cfg.market_file:
        return load_market(cfg.market_file, pop)
    if cfg.pi is None:
        raise ValueError("need --market-file or --pi with --ds/--ds-fraction")
    if cfg.ds is not None:
        return MarketParams(pi=cfg.pi, d_s=cfg.ds)
    if cfg.ds_fraction is not None:
        return MarketParams(pi=cfg.pi, d_s=cfg.ds_fraction * pop.total_capacity)
    raise ValueError("need --ds or --ds-fraction")


def _model_echo(pop: Population, mkt: MarketParams) -> dict:
    return {
        "a": pop.cost.a,
        "b": pop.cost.b,
        "consumers": [
            {"id": c.id, "capacity": c.capacity, "weight": c.weight}
            for c in pop.consumers
        ],
        "pi": mkt.pi,
        "d_s": mkt.d_s,
    }


def _solution_payload(
    pop: Population, mkt: MarketParams, sol: EquilibriumSolution
) -> dict:
    return {
        "model": _model_echo(pop, mkt),
        "solution": sol.to_dict(),
        "report": report(sol, pop, mkt).to_dict(),
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> dict:
    pop = _build_population(cfg)
    mkt = _build_market(cfg, pop)
    if cfg.profit_only:
        sol, diag = solve_n(pop, mkt)
        payload = _solution_payload(pop, mkt, sol)
        payload["diagnostics"] = {
            "lambda": diag.lam,
            "bisection_iters": diag.bisection_iters,
            "cap_binding": diag.cap_binding,
        }
    else:
        spec = make_spec(pop, mkt, Criterion(cfg.criterion), cfg.alpha)
        sol = solve_fair(pop, mkt, spec)
        payload = _solution_payload(pop, mkt, sol)
        payload["fairness"] = {
            "criterion": spec.criterion.value,
            "alpha": spec.alpha,
            "baseline": spec.baseline,
            "disparity": solution_disparity(spec.criterion, sol, pop),
        }
    return payload


def cmd_sweep(cfg: RunConfig) -> dict:
    pop = _build_population(cfg)
    mkt = _build_market(cfg, pop)
    criterion = Criterion(cfg.criterion)
    records = sweep(pop, mkt, criterion, default_grid(cfg.grid_step))
    segments = classify(records, pop, criterion, cfg.eps_sign)
    verdict = validate_transitions(segments, criterion)
    if cfg.out:
        write_sweep_csv(cfg.out, records, pop, segments)
    return {
        "model": _model_echo(pop, mkt),
        "criterion": criterion.value,
        "rows": len(records),
        "segments": [
            {
                "alpha_lo": s.alpha_lo,
                "alpha_hi": s.alpha_hi,
                "label": s.label_name,
                "signs": {k: v.value for k, v in s.signs.items()},
            }
            for s in segments
        ],
        "boundaries": segment_boundaries(segments),
        "transitions_valid": verdict.passed,
        "failures": list(verdict.failures),
        "out": cfg.out,
    }


def _records_from_sweep_rows(rows: list[dict], pop: Population, mkt: MarketParams):
    ids = [c.id for c in pop.consumers]
    records = []
    for row in rows:
        sol = EquilibriumSolution(
            prices=tuple(row[f"p_{i}"] for i in ids),
            demands=tuple(row[f"D_{i}"] for i in ids),
            utilities=tuple(row[f"U_{i}"] for i in ids),
            profit=row["profit"],
        )
        records.append(
            SweepRecord(alpha=row["alpha"], solution=sol, report=report(sol, pop, mkt))
        )
    return records


def cmd_regimes(cfg: RunConfig) -> dict:
    pop = _build_population(cfg)
    mkt = _build_market(cfg, pop)
    source = cfg.extra.get("from_sweep")
    solve_json = cfg.extra.get("from_solve")
    if solve_json:
        with open(solve_json, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        sol = EquilibriumSolution.from_dict(stored["solution"])
        rep = report(sol, pop, mkt)
        stored_rep = PerformanceReport.from_dict(stored["report"])
        return {
            "report": rep.to_dict(),
            "matches_stored_report": rep == stored_rep,
        }
    criterion = Criterion(cfg.criterion)
    if source:
        rows, _ = read_sweep_csv(source)
        records = _records_from_sweep_rows(rows, pop, mkt)
    else:
        records = sweep(pop, mkt, criterion, default_grid(cfg.grid_step))
    segments = classify(records, pop, criterion, cfg.eps_sign)
    verdict = validate_transitions(segments, criterion)
    lines = ["alpha_lo,alpha_hi,label,U1,U2,CNW,U,W_SW"]
    for s in segments:
        signs = [s.signs.get(k).value if s.signs else "" for k in ("U1", "U2", "CNW", "U", "W_SW")]
        lines.append(
            ",".join(
                [repr(s.alpha_lo), repr(s.alpha_hi), s.label_name, *signs]
            )
        )
    lines.append(f"verdict,{'pass' if verdict.passed else 'fail'}")
    if cfg.out:
        _atomic_write_text(cfg.out, "\n".join(lines) + "\n")
    return {
        "segments": [
            {"alpha_lo": s.alpha_lo, "alpha_hi": s.alpha_hi, "label": s.label_name}
            for s in segments
        ],
        "boundaries": segment_boundaries(segments),
        "transitions_valid": verdict.passed,
        "failures": list(verdict.failures),
        "warnings": list(verdict.warnings),
        "out": cfg.out,
    }


def cmd_casestudy_estimate(cfg: RunConfig) -> dict:
    participants, errors = casestudy.load_participants_csv(cfg.extra["participants"])
    filtered = casestudy.filter_sample(participants)
    frame = casestudy.load_hourly_csv(cfg.extra["hourly"], ids=filtered.ids)
    estimates = casestudy.estimate_all_hours(frame)
    significance = cfg.extra.get("significance", 0.05)
    hour = casestudy.select_hour(estimates, significance)
    if cfg.out:
        lines = ["hour,a_hat,b_hat,p_value,n_obs"]
        lines += [
            f"{e.hour},{e.a_hat!r},{e.b_hat!r},{e.p_value!r},{e.n_obs}"
            for e in estimates
        ]
        _atomic_write_text(cfg.out, "\n".join(lines) + "\n")
    return {
        "stage_counts": list(filtered.stage_counts),
        "schema_errors": errors,
        "selected_hour": hour,
        "estimates": [
            {
                "hour": e.hour,
                "a_hat": e.a_hat,
                "b_hat": e.b_hat,
                "p_value": e.p_value,
                "n_obs": e.n_obs,
            }
            for e in estimates
        ],
        "out": cfg.out,
    }


def cmd_casestudy_cluster(cfg: RunConfig) -> dict:
    participants, _ = casestudy.load_participants_csv(cfg.extra["participants"])
    filtered = casestudy.filter_sample(participants)
    frame = casestudy.load_hourly_csv(cfg.extra["hourly"], ids=filtered.ids)
    hour = cfg.extra.get("hour")
    if hour is None:
        hour = casestudy.select_hour(casestudy.estimate_all_hours(frame))
    capacities = casestudy.estimate_capacities(frame, int(hour))
    clusters, elbow = casestudy.cluster_households(
        capacities, k=cfg.extra.get("k", 3), seed=cfg.seed
    )
    if cfg.out:
        casestudy.write_cluster_csv(cfg.out, clusters)
    elbow_out = cfg.extra.get("elbow_out")
    if elbow_out:
        lines = ["k,within_cluster_sse"] + [f"{k},{v!r}" for k, v in sorted(elbow.items())]
        _atomic_write_text(elbow_out, "\n".join(lines) + "\n")
    return {
        "hour": int(hour),
        "clusters": [
            {"cluster_id": c.cluster_id, "mean_capacity": c.mean_capacity, "count": c.count}
            for c in clusters
        ],
        "elbow": {str(k): v for k, v in elbow.items()},
        "out": cfg.out,
    }


def cmd_casestudy_solve(cfg: RunConfig) -> dict:
    clusters = casestudy.read_cluster_csv(cfg.extra["clusters"])
    pop = casestudy.build_population(clusters, a=cfg.a, b=cfg.b)
    mkt = _build_market(cfg, pop)
    base_sol, _ = solve_n(pop, mkt)
    base_rep = report(base_sol, pop, mkt)
    payload = {
        "model": _model_echo(pop, mkt),
        "profit_only": {
            "solution": base_sol.to_dict(),
            "report": base_rep.to_dict(),
        },
    }
    if cfg.profit_only:
        return payload
    criterion = Criterion(cfg.criterion)
    baseline = baseline_disparity(criterion, base_sol, pop)
    spec = FairnessSpec(criterion=criterion, alpha=cfg.alpha, baseline=baseline)
    sol = solve_fair(pop, mkt, spec)
    rep = report(sol, pop, mkt)

    def pct(now: float, base: float) -> float:
        return 100.0 * (now - base) / abs(base)

    payload["fair"] = {
        "criterion": criterion.value,
        "alpha": cfg.alpha,
        "baseline": baseline,
        "solution": sol.to_dict(),
        "report": rep.to_dict(),
    }
    payload["percent_change_vs_alpha0"] = {
        "profit": pct(rep.profit, base_rep.profit),
        "total_utility": pct(rep.total_utility, base_rep.total_utility),
        "social_welfare": pct(rep.social_welfare, base_rep.social_welfare),
    }
    return payload


def cmd_verify(cfg: RunConfig) -> dict:
    """Cross-check solvers against the brute-force oracles.

    Runs the bundled reference parameter sets at several fairness levels
    plus a randomized profit-only battery, and reports the worst deviation
    seen for each check.
    """
    rng = np.random.default_rng(cfg.seed)
    checks: dict[str, dict] = {}

    def two_pop(a, b, caps):
        return Population.from_consumers(
            CostParams(a, b),
            [ConsumerParams(f"c{i + 1}", c) for i, c in enumerate(caps)],
        )

    reference = [
        ("energy", two_pop(1, 5, (3, 4)), MarketParams(8.5, 6.93), Criterion.ENERGY, 0.05),
        ("price", two_pop(1, 9, (1, 8)), MarketParams(12, 8), Criterion.PRICE, 0.02),
        ("utility", two_pop(1, 9, (1.2, 3.5)), MarketParams(9.4, 4.5), Criterion.UTILITY, 0.02),
    ]
    for name, pop, mkt, criterion, res in reference:
        worst_dom = 0.0  # strictly feasible grid point beating the solver
        worst_cov = 0.0  # solver exceeding the relaxed grid max + rounding
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            spec = make_spec(pop, mkt, criterion, alpha)
            sol = solve_fair(pop, mkt, spec)
            oracle = grid_oracle(pop, mkt, spec, resolution=res)
            if oracle.found:
                worst_dom = max(
                    worst_dom, oracle.profit - sol.profit - 1e-7 * max(1.0, abs(sol.profit))
                )
            worst_cov = max(
                worst_cov, sol.profit - oracle.relaxed_profit - oracle.error_bound
            )
        checks[f"oracle_{name}"] = {
            "worst_dominance_excess": worst_dom,
            "worst_coverage_excess": worst_cov,
            "ok": worst_dom <= 0.0 and worst_cov <= 0.0,
        }

    worst_two = 0.0
    for _ in range(cfg.extra.get("n_random", 25)):
        a = float(rng.uniform(0.5, 2.0))
        c1 = float(rng.uniform(0.5, 3.0))
        c2 = c1 + float(rng.uniform(0.2, 4.0))
        b = float(rng.uniform(a * c2 * 1.05, a * c2 * 3.0))
        pi = float(rng.uniform(b - a * c1 + 0.05, b + a * c2))
        ds = float(rng.uniform(0.2, 0.95)) * (c1 + c2)
        pop = two_pop(a, b, (c1, c2))
        mkt = MarketParams(pi, ds)
        sol = solve_two(pop, mkt)
        oracle = profit_grid_oracle(pop, mkt, step=1e-3)
        gap = abs(oracle.profit - sol.profit)
        worst_two = max(worst_two, gap - oracle.error_bound)
    checks["two_consumer_closed_form_vs_grid"] = {
        "worst_excess": worst_two,
        "ok": worst_two <= 1e-9,
    }

    ok = all(c["ok"] for c in checks.values())
    return {"checks": checks, "all_ok": ok, "seed": cfg.seed}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pop-file", help="population JSON/CSV")
    p.add_argument("--market-file", help="market JSON")
    p.add_argument("--a", type=float, help="cost curvature")
    p.add_argument("--b", type=float, help="cost intercept coefficient")
    p.add_argument("--cap", help="comma-separated capacities")
    p.add_argument("--weights", help="comma-separated integer weights")
    p.add_argument("--ids", help="comma-separated consumer ids")
    p.add_argument("--pi", type=float, help="upper-market price")
    p.add_argument("--ds", type=float, help="aggregation cap")
    p.add_argument("--ds-fraction", type=float, help="cap as a fraction of capacity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vppfair",
        description="Fairness-constrained incentive pricing for VPP aggregators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one pricing problem")
    _add_model_flags(p)
    p.add_argument("--profit-only", action="store_true")
    p.add_argument("--criterion", choices=[c.value for c in Criterion])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--out", help="output JSON path")

    p = sub.add_parser("sweep", help="sweep alpha and write the plot table")
    _add_model_flags(p)
    p.add_argument("--criterion", choices=[c.value for c in Criterion], required=True)
    p.add_argument("--grid", type=float, default=0.005, help="alpha grid step")
    p.add_argument("--eps-sign", type=float, default=1e-6)
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("regimes", help="classify regimes and validate transitions")
    _add_model_flags(p)
    p.add_argument("--criterion", choices=[c.value for c in Criterion])
    p.add_argument("--grid", type=float, default=0.005)
    p.add_argument("--eps-sign", type=float, default=1e-6)
    p.add_argument("--from-sweep", help="classify an existing sweep CSV")
    p.add_argument("--from-solve", help="re-ingest a solve JSON and verify its report")
    p.add_argument("--out", help="segments CSV path")

    p = sub.add_parser("casestudy-estimate", help="filter sample and fit hourly response")
    p.add_argument("--participants", required=True)
    p.add_argument("--hourly", required=True)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--out", help="per-hour estimates CSV")

    p = sub.add_parser("casestudy-cluster", help="estimate capacities and cluster")
    p.add_argument("--participants", required=True)
    p.add_argument("--hourly", required=True)
    p.add_argument("--hour", type=int)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="cluster summary CSV")
    p.add_argument("--elbow-out", help="elbow diagnostic CSV")

    p = sub.add_parser("casestudy-solve", help="solve pricing on a cluster summary")
    p.add_argument("--clusters", required=True, help="cluster summary CSV")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--pi", type=float, required=True)
    p.add_argument("--ds", type=float)
    p.add_argument("--ds-fraction", type=float)
    p.add_argument("--profit-only", action="store_true")
    p.add_argument("--criterion", choices=[c.value for c in Criterion])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", help="output JSON path")

    p = sub.add_parser("verify", help="grid-oracle cross checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-random", type=int, default=25)
    p.add_argument("--out", help="output JSON path")

    return parser


def _csv_floats(text: str | None) -> list[float]:
    return [float(x) for x in text.split(",")] if text else []


def _csv_ints(text: str | None) -> list[int]:
    return [int(x) for x in text.split(",")] if text else []


def _csv_strs(text: str | None) -> list[str]:
    return [x.strip() for x in text.split(",")] if text else []


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for name in ("pop_file", "market_file", "a", "b", "pi", "ds", "ds_fraction",
                 "criterion", "alpha", "profit_only", "seed", "out"):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "cap", None):
        cfg.caps = _csv_floats(args.cap)
    if getattr(args, "weights", None):
        cfg.weights = _csv_ints(args.weights)
    if getattr(args, "ids", None):
        cfg.ids = _csv_strs(args.ids)
    if hasattr(args, "grid"):
        cfg.grid_step = args.grid
    if hasattr(args, "eps_sign"):
        cfg.eps_sign = args.eps_sign
    for name in ("participants", "hourly", "significance", "hour", "k",
                 "elbow_out", "clusters", "from_sweep", "from_solve", "n_random"):
        if hasattr(args, name) and getattr(args, name) is not None:
            cfg.extra[name] = getattr(args, name)
    return cfg


_HANDLERS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "regimes": cmd_regimes,
    "casestudy-estimate": cmd_casestudy_estimate,
    "casestudy-cluster": cmd_casestudy_cluster,
    "casestudy-solve": cmd_casestudy_solve,
    "verify": cmd_verify,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    try:
        payload = _HANDLERS[cfg.command](cfg)
    except Exception as exc:
        sys.stderr.write(
            _dump_json({"error": type(exc).__name__, "message": str(exc)})
        )
        return 1
    text = _dump_json(payload)
    # sweep/regimes/casestudy-estimate/casestudy-cluster write their own
    # tabular --out inside the handler; the rest store the JSON payload
    if cfg.out and cfg.command in ("solve", "casestudy-solve", "verify"):
        _atomic_write_text(cfg.out, text)
    sys.stdout.write(text)
    if cfg.command == "verify" and not payload.get("all_ok", False):
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
