"""Sweeping the fairness level and classifying welfare regimes.

A sweep solves the fair pricing problem on an ascending alpha grid and
records per-consumer outcomes plus the performance report.  Classification
computes the direction of change of (U1, U2, CNW, U, W_SW) on every grid
cell, merges cells with identical sign vectors into maximal segments, and
matches each segment against the regime catalog of the active criterion.
Populations with more than two consumers are reduced to two groups per
cell by the sign of each consumer's provided-energy change; the group
containing the highest-capacity consumer plays the flexible role (U2).

A regime switch that falls strictly inside one grid cell makes that cell's
differences a mixture of both neighbors, so a lone interior cell whose sign
vector matches neither neighbor is folded into the boundary, which is then
reported at the cell midpoint (half-step uncertainty).
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .fairness import Criterion, FairnessSpec, baseline_disparity, solve_fair
from .model import EquilibriumSolution, MarketParams, ModelInvariantError, Population
from .profit import solve_n
from .welfare import NEG_INF, PerformanceReport, is_neg_inf, report

MEASURES = ("U1", "U2", "CNW", "U", "W_SW")


class Sign(str, Enum):
    INCREASING = "increasing"
    CONSTANT = "constant"
    DECREASING = "decreasing"
    NEG_INFINITY = "neg_infinity"


# catalog templates: constants carry a value predicate (positive / zero)
_CONST_POS = "constant_positive"
_CONST_ZERO = "constant_zero"

_REGIME_TABLES: dict[Criterion, dict[int, tuple]] = {
    Criterion.ENERGY: {
        1: (_CONST_POS, Sign.INCREASING, Sign.INCREASING, Sign.INCREASING, Sign.INCREASING),
        2: (Sign.DECREASING, Sign.INCREASING, Sign.DECREASING, Sign.INCREASING, Sign.INCREASING),
        3: (Sign.DECREASING, Sign.INCREASING, Sign.DECREASING, Sign.DECREASING, Sign.DECREASING),
        4: (Sign.INCREASING, Sign.DECREASING, Sign.INCREASING, Sign.DECREASING, Sign.DECREASING),
    },
    Criterion.PRICE: {
        1: (_CONST_POS, Sign.INCREASING, Sign.INCREASING, Sign.INCREASING, Sign.INCREASING),
        2: (Sign.DECREASING, Sign.INCREASING, Sign.DECREASING, Sign.INCREASING, Sign.INCREASING),
        3: (_CONST_ZERO, _CONST_POS, Sign.NEG_INFINITY, _CONST_POS, _CONST_POS),
    },
    Criterion.UTILITY: {
        1: (Sign.INCREASING, Sign.DECREASING, Sign.INCREASING, Sign.DECREASING, Sign.DECREASING),
        2: (Sign.INCREASING, Sign.DECREASING, Sign.INCREASING, Sign.INCREASING, Sign.DECREASING),
        3: (_CONST_POS, Sign.DECREASING, Sign.DECREASING, Sign.DECREASING, Sign.DECREASING),
        4: (Sign.INCREASING, _CONST_POS, Sign.INCREASING, Sign.INCREASING, _CONST_POS),
    },
}

TRANSITION_EDGES: dict[Criterion, frozenset[tuple[int, int]]] = {
    Criterion.ENERGY: frozenset({(1, 2), (1, 3)}),
    Criterion.PRICE: frozenset({(1, 2), (2, 3)}),
    Criterion.UTILITY: frozenset({(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)}),
}

ALLOWED_TERMINALS: dict[Criterion, frozenset[int]] = {
    Criterion.ENERGY: frozenset({2, 3, 4}),
    Criterion.PRICE: frozenset({1, 2, 3}),
    Criterion.UTILITY: frozenset({1, 2, 4}),
}

ALLOWED_STARTS: dict[Criterion, frozenset[int]] = {
    Criterion.ENERGY: frozenset({1, 2, 3, 4}),
    Criterion.PRICE: frozenset({1, 2, 3}),
    Criterion.UTILITY: frozenset({1, 3, 4}),
}


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    solution: EquilibriumSolution
    report: PerformanceReport


@dataclass(frozen=True)
class RegimeSegment:
    alpha_lo: float
    alpha_hi: float
    signs: dict[str, Sign]
    label: int | None
    groups: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    flags: tuple[str, ...] = ()

    @property
    def label_name(self) -> str:
        return f"Regime {self.label}" if self.label is not None else "unmatched"


@dataclass(frozen=True)
class TransitionVerdict:
    passed: bool
    failures: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def sweep(
    pop: Population,
    mkt: MarketParams,
    criterion: Criterion,
    grid: Sequence[float],
) -> list[SweepRecord]:
    """Solve the fair problem at every alpha on the grid.

    The grid must be strictly ascending within [0, 1] and contain both
    endpoints.  The baseline disparity is computed once from the alpha = 0
    profit-only solve and reused for every level.
    """
    alphas = [float(a) for a in grid]
    if any(a2 <= a1 for a1, a2 in zip(alphas, alphas[1:])):
        raise ModelInvariantError("alpha grid must be strictly ascending")
    if alphas[0] != 0.0 or alphas[-1] != 1.0 or any(a < 0 or a > 1 for a in alphas):
        raise ModelInvariantError("alpha grid must lie in [0, 1] and include 0 and 1")

    profit_sol, _ = solve_n(pop, mkt)
    baseline = baseline_disparity(criterion, profit_sol, pop)
    records = []
    for alpha in alphas:
        spec = FairnessSpec(criterion=criterion, alpha=alpha, baseline=baseline)
        try:
            sol = solve_fair(pop, mkt, spec)
        except Exception as exc:  # annotate with the failing level
            raise type(exc)(f"alpha={alpha}: {exc}") from exc
        records.append(SweepRecord(alpha=alpha, solution=sol, report=report(sol, pop, mkt)))
    return records


def default_grid(step: float = 0.005) -> list[float]:
    """Uniform grid over [0, 1] with the given step (201 points by default)."""
    n = int(round(1.0 / step))
    return [i / n for i in range(n + 1)]


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def _consumer_groups(diff: np.ndarray, thresholds: np.ndarray, n: int):
    """Two-group split of one cell by the sign of each demand change."""
    if n == 2:
        return ((0,), (1,))
    inc = [i for i in range(n) if diff[i] > thresholds[i]]
    rest = [i for i in range(n) if i not in inc]
    if not inc or not rest:
        return None
    if (n - 1) in inc:
        return (tuple(rest), tuple(inc))
    return (tuple(inc), tuple(rest))


def _sign_of(lo: float, hi: float, threshold: float) -> Sign:
    if is_neg_inf(lo) and is_neg_inf(hi):
        return Sign.NEG_INFINITY
    if is_neg_inf(hi):
        return Sign.DECREASING
    if is_neg_inf(lo):
        return Sign.INCREASING
    if hi - lo > threshold:
        return Sign.INCREASING
    if lo - hi > threshold:
        return Sign.DECREASING
    return Sign.CONSTANT


class _Cell:
    __slots__ = ("k", "signs", "groups", "values")

    def __init__(self, k, signs, groups, values):
        self.k = k
        self.signs = signs
        self.groups = groups
        self.values = values  # per-measure (lo, hi) pairs for predicates


def classify(
    records: Sequence[SweepRecord],
    pop: Population,
    criterion: Criterion,
    eps_sign: float = 1e-6,
) -> list[RegimeSegment]:
    """Partition the sweep into labeled constant-direction segments.

    Differences below ``eps_sign`` times each measure's range over the
    sweep count as constant.  Sign vectors outside the criterion's catalog
    are labeled unmatched rather than guessed; catalog entries demanding
    constancy at a positive (or zero) value get a side check whose failure
    is recorded as a flag, not a relabeling.
    """
    if len(records) < 3:
        raise ModelInvariantError("classification needs at least 3 records")
    n = pop.n
    w = pop.weights
    alphas = np.array([r.alpha for r in records])
    demands = np.array([r.solution.demands for r in records])
    wutils = np.array([r.solution.utilities for r in records]) * w

    d_thresholds = eps_sign * np.maximum(
        demands.max(axis=0) - demands.min(axis=0),
        1e-9 * np.maximum(1.0, pop.capacities),
    )
    u_ranges = np.maximum(wutils.max(axis=0) - wutils.min(axis=0), 0.0)

    cnw = np.array([r.report.cnw for r in records])
    total_u = np.array([r.report.total_utility for r in records])
    sw = np.array([r.report.social_welfare for r in records])

    def scalar_threshold(series: np.ndarray) -> float:
        finite = series[np.isfinite(series)]
        rng = float(finite.max() - finite.min()) if finite.size else 0.0
        return eps_sign * max(rng, 1e-9)

    thr_cnw = scalar_threshold(cnw)
    thr_u = scalar_threshold(total_u)
    thr_sw = scalar_threshold(sw)

    cells: list[_Cell] = []
    for k in range(len(records) - 1):
        groups = _consumer_groups(demands[k + 1] - demands[k], d_thresholds, n)
        if groups is None:
            cells.append(_Cell(k, None, None, None))
            continue
        g1, g2 = groups
        u1 = (float(wutils[k, list(g1)].sum()), float(wutils[k + 1, list(g1)].sum()))
        u2 = (float(wutils[k, list(g2)].sum()), float(wutils[k + 1, list(g2)].sum()))
        thr1 = eps_sign * max(float(u_ranges[list(g1)].sum()), 1e-9)
        thr2 = eps_sign * max(float(u_ranges[list(g2)].sum()), 1e-9)
        signs = {
            "U1": _sign_of(u1[0], u1[1], thr1),
            "U2": _sign_of(u2[0], u2[1], thr2),
            "CNW": _sign_of(cnw[k], cnw[k + 1], thr_cnw),
            "U": _sign_of(total_u[k], total_u[k + 1], thr_u),
            "W_SW": _sign_of(sw[k], sw[k + 1], thr_sw),
        }
        values = {
            "U1": u1,
            "U2": u2,
            "U": (float(total_u[k]), float(total_u[k + 1])),
            "W_SW": (float(sw[k]), float(sw[k + 1])),
        }
        cells.append(_Cell(k, signs, groups, values))

    # merge adjacent cells with identical sign vectors
    runs: list[list[_Cell]] = []
    for cell in cells:
        if runs and runs[-1][-1].signs == cell.signs:
            runs[-1].append(cell)
        else:
            runs.append([cell])

    # fold lone interior runs into the neighboring boundary (runs are
    # maximal, so a lone interior run always differs from both neighbors)
    boundaries: dict[int, float] = {}
    if len(runs) >= 3:
        kept: list[list[_Cell]] = [runs[0]]
        for idx in range(1, len(runs)):
            run = runs[idx]
            if idx < len(runs) - 1 and len(run) == 1:
                k = run[0].k
                boundaries[id(kept[-1])] = 0.5 * (alphas[k] + alphas[k + 1])
                continue
            kept.append(run)
        # folding can expose equal-sign neighbors (a one-cell blip inside a
        # regime); merge them back into one segment
        merged: list[list[_Cell]] = [kept[0]]
        for run in kept[1:]:
            if merged[-1][-1].signs == run[0].signs:
                boundaries.pop(id(merged[-1]), None)
                if id(run) in boundaries:
                    boundaries[id(merged[-1])] = boundaries.pop(id(run))
                merged[-1].extend(run)
            else:
                merged.append(run)
        runs = merged

    table = _REGIME_TABLES[criterion]
    segments: list[RegimeSegment] = []
    prev_hi = float(alphas[0])
    for idx, run in enumerate(runs):
        lo = prev_hi
        hi = boundaries.get(id(run), float(alphas[run[-1].k + 1]))
        prev_hi = hi
        if run[0].signs is None:
            segments.append(RegimeSegment(lo, hi, {}, None, None, ("ungroupable",)))
            continue
        signs = run[0].signs
        label = None
        flags: list[str] = []
        for cand, template in table.items():
            ok = True
            notes: list[str] = []
            for name, tmpl in zip(MEASURES, template):
                got = signs[name]
                if tmpl in (Sign.INCREASING, Sign.DECREASING, Sign.NEG_INFINITY):
                    if got != tmpl:
                        ok = False
                        break
                    continue
                if got != Sign.CONSTANT:
                    ok = False
                    break
                if name == "CNW":
                    continue
                vals = [v for cell in run for v in cell.values[name]]
                vmin, vmax = min(vals), max(vals)
                scale = max(1.0, abs(vmax))
                if tmpl == _CONST_POS and vmin <= 1e-7 * scale:
                    notes.append(f"{name} constant but not positive")
                if tmpl == _CONST_ZERO and max(abs(vmin), abs(vmax)) > 1e-6 * scale:
                    notes.append(f"{name} constant but not zero")
            if ok:
                label = cand
                flags.extend(notes)
                break
        segments.append(
            RegimeSegment(lo, hi, dict(signs), label, run[0].groups, tuple(flags))
        )
    return segments


def validate_transitions(
    segments: Sequence[RegimeSegment], criterion: Criterion
) -> TransitionVerdict:
    """Check the observed label sequence against the regime catalog's DAG.

    Passes iff every segment is labeled, consecutive labels follow an
    allowed arrow, the first label is an allowed start and the last an
    allowed terminal.  Predicate flags are surfaced as warnings.
    """
    failures: list[str] = []
    warnings: list[str] = []
    labels = []
    for seg in segments:
        if seg.label is None:
            failures.append(
                f"segment [{seg.alpha_lo:.4g}, {seg.alpha_hi:.4g}] unmatched"
            )
        else:
            labels.append(seg.label)
        warnings.extend(
            f"[{seg.alpha_lo:.4g}, {seg.alpha_hi:.4g}] {f}" for f in seg.flags
        )
    if not labels:
        failures.append("no labeled segments")
        return TransitionVerdict(False, tuple(failures), tuple(warnings))
    edges = TRANSITION_EDGES[criterion]
    for l1, l2 in zip(labels, labels[1:]):
        if (l1, l2) not in edges:
            failures.append(f"transition {l1} -> {l2} has no arrow")
    if labels[0] not in ALLOWED_STARTS[criterion]:
        failures.append(f"start regime {labels[0]} not allowed")
    if labels[-1] not in ALLOWED_TERMINALS[criterion]:
        failures.append(f"terminal regime {labels[-1]} not allowed")
    return TransitionVerdict(not failures, tuple(failures), tuple(warnings))


def segment_boundaries(segments: Sequence[RegimeSegment]) -> list[float]:
    """Interior alpha boundaries between consecutive segments."""
    return [seg.alpha_hi for seg in segments[:-1]]


def first_alpha_where(
    records: Sequence[SweepRecord], predicate: Callable[[SweepRecord], bool]
) -> float | None:
    for rec in records:
        if predicate(rec):
            return rec.alpha
    return None


def utility_hits_zero_alpha(
    records: Sequence[SweepRecord], consumer: int, tol: float = 1e-6
) -> float | None:
    """First alpha where the consumer's utility has dropped to zero."""
    scale = max(max(r.solution.utilities[consumer] for r in records), 1.0)
    return first_alpha_where(
        records, lambda r: r.solution.utilities[consumer] <= tol * scale
    )


def utilities_converge_alpha(
    records: Sequence[SweepRecord], i: int, j: int, tol: float = 1e-6
) -> float | None:
    """First alpha where utilities i and j coincide."""
    scale = max(
        max(abs(r.solution.utilities[i]) for r in records),
        max(abs(r.solution.utilities[j]) for r in records),
        1.0,
    )
    return first_alpha_where(
        records,
        lambda r: abs(r.solution.utilities[i] - r.solution.utilities[j]) <= tol * scale,
    )


# ---------------------------------------------------------------------------
# Sweep table I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    if is_neg_inf(x):
        return "-inf"
    return repr(float(x))


def sweep_header(pop: Population) -> list[str]:
    ids = [c.id for c in pop.consumers]
    cols = ["alpha"]
    cols += [f"p_{i}" for i in ids]
    cols += [f"D_{i}" for i in ids]
    cols += [f"U_{i}" for i in ids]
    cols += ["profit", "total_utility", "cnw", "social_welfare", "regime_label"]
    return cols


def write_sweep_csv(
    path: str,
    records: Sequence[SweepRecord],
    pop: Population,
    segments: Sequence[RegimeSegment] | None = None,
) -> None:
    """Write the plot-ready sweep table atomically (temp file + rename)."""

    def label_at(alpha: float) -> str:
        if not segments:
            return ""
        for seg in segments:
            if seg.alpha_lo <= alpha <= seg.alpha_hi:
                return seg.label_name
        return ""

    rows = [sweep_header(pop)]
    for rec in records:
        row = [_fmt(rec.alpha)]
        row += [_fmt(p) for p in rec.solution.prices]
        row += [_fmt(d) for d in rec.solution.demands]
        row += [_fmt(u) for u in rec.solution.utilities]
        row += [
            _fmt(rec.report.profit),
            _fmt(rec.report.total_utility),
            _fmt(rec.report.cnw),
            _fmt(rec.report.social_welfare),
            label_at(rec.alpha),
        ]
        rows.append(row)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_sweep_csv(path: str) -> tuple[list[dict], list[str]]:
    """Read a sweep table back; -inf sentinels are restored."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fieldnames = list(reader.fieldnames or [])
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if key == "regime_label":
                    row[key] = val
                elif val == "-inf":
                    row[key] = NEG_INF
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows, fieldnames
