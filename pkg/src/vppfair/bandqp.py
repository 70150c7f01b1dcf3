"""Band-constrained separable concave maximization.

Engine behind the fairness solvers.  The problem it solves:

    maximize    sum_i  A_i x_i^2 + B_i x_i + C_i
    subject to  x_i in [lo_i, hi_i]
                sum_i c_i x_i + e_i  <=  resource
                y_i(x_i) in [m, m + width]  for some common anchor m,

where every pairwise fairness constraint |y_i - y_j| <= width has been
rewritten through the band anchor m (the two are equivalent: take
m = min_i y_i).  Each metric map y_i is monotone nondecreasing in the
consumer's own coordinate, either the identity or the quadratic
y = 0.5 * curvature * x^2, so for a fixed anchor the band is a per-consumer
box and the inner problem is a separable concave program with one linear
constraint, solved exactly by bisection on the cap multiplier.

The anchor is located by a dense scan over its feasible window followed by
iterated grid refinement around the incumbent.  The scan is vectorized over
anchor values, so a whole solve costs a few milliseconds.

Only coordinates with strictly concave value terms may consume resource
(c_i > 0 requires A_i < 0); this keeps total usage continuous and monotone
in the multiplier, which makes the bisection exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

IDENTITY = "identity"
QUADRATIC = "quadratic"

_BISECT_ITERS = 90
_EMPTY_SLACK = 1e-12


@dataclass(frozen=True)
class BandVariable:
    """One decision coordinate of a band problem.

    value(x) = A x^2 + B x + C on [lo, hi]; resource usage c*x + e.
    ``metric`` declares how the fairness metric depends on x and
    ``curvature`` is the quadratic-map coefficient (y = 0.5*curvature*x^2).
    ``target`` breaks ties on flat value pieces (A = B = 0) so outputs are
    deterministic.
    """

    A: float
    B: float
    C: float
    lo: float
    hi: float
    c: float = 0.0
    e: float = 0.0
    metric: str = IDENTITY
    curvature: float = 1.0
    target: float | None = None

    def __post_init__(self) -> None:
        if self.c > 0.0 and not self.A < 0.0:
            raise ValueError("resource-consuming coordinates must be strictly concave")
        if self.A > 0.0:
            raise ValueError("value pieces must be concave")

    def metric_of(self, x: float) -> float:
        if self.metric == QUADRATIC:
            return 0.5 * self.curvature * x * x
        return x

    def metric_lo(self) -> float:
        return self.metric_of(self.lo)

    def metric_hi(self) -> float:
        return self.metric_of(self.hi)


@dataclass(frozen=True)
class BandSolution:
    x: tuple[float, ...]
    m: float
    lam: float
    value: float
    usage: float


class _Arrays:
    """Column-wise view of the variables for vectorized evaluation."""

    def __init__(self, variables: Sequence[BandVariable]):
        self.A = np.array([v.A for v in variables])
        self.B = np.array([v.B for v in variables])
        self.C = np.array([v.C for v in variables])
        self.lo = np.array([v.lo for v in variables])
        self.hi = np.array([v.hi for v in variables])
        self.c = np.array([v.c for v in variables])
        self.e = np.array([v.e for v in variables])
        self.quad = np.array([v.metric == QUADRATIC for v in variables])
        self.curv = np.array([v.curvature for v in variables])
        self.target = np.array(
            [v.target if v.target is not None else v.lo for v in variables]
        )
        self.concave = self.A < 0.0


def _band_intervals(arr: _Arrays, m: np.ndarray, width: float):
    """Per-(anchor, variable) coordinate intervals implied by the band."""
    y_lo = m[:, None]
    y_hi = m[:, None] + width
    if arr.quad.any():
        inv_lo = np.sqrt(2.0 * np.maximum(y_lo, 0.0) / arr.curv)
        inv_hi = np.sqrt(2.0 * np.maximum(y_hi, 0.0) / arr.curv)
        bx_lo = np.where(arr.quad, inv_lo, y_lo)
        bx_hi = np.where(arr.quad, np.where(y_hi >= 0.0, inv_hi, -np.inf), y_hi)
    else:
        bx_lo, bx_hi = y_lo, y_hi
    L = np.maximum(arr.lo, bx_lo)
    H = np.minimum(arr.hi, bx_hi)
    return L, H


def _solve_inner(arr: _Arrays, L: np.ndarray, H: np.ndarray, resource: float):
    """Water-filling over fixed intervals, vectorized across anchor rows.

    Returns (x, lam, value, usage, ok); rows where some interval is empty or
    the minimal usage exceeds the resource are marked infeasible.
    """
    ok = np.all(L <= H + _EMPTY_SLACK, axis=1)
    Lc = np.minimum(L, H)  # collapse empty intervals; masked by ok anyway

    def x_at(lam):
        # lam: (M, 1); concave coordinates track their shifted vertex,
        # flat/linear ones sit at an endpoint (or the tie-break target).
        vert = np.where(
            arr.concave, (arr.B - lam * arr.c) / np.where(arr.concave, -2.0 * arr.A, 1.0), 0.0
        )
        x = np.clip(vert, Lc, H)
        flat = ~arr.concave
        if flat.any():
            xf = np.where(arr.B > 0.0, H, np.where(arr.B < 0.0, Lc, np.clip(arr.target, Lc, H)))
            x = np.where(flat, xf, x)
        return x

    zeros = np.zeros((L.shape[0], 1))
    x0 = x_at(zeros)
    usage0 = x0 @ arr.c + arr.e.sum()
    rtol = 1e-9 * max(1.0, abs(resource))
    need = ok & (usage0 > resource + rtol)

    x = x0
    lam = np.zeros(L.shape[0])
    if need.any():
        min_usage = Lc @ arr.c + arr.e.sum()
        ok &= ~(need & (min_usage > resource + rtol))
        need &= ok
    if need.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_cap = np.where(arr.c > 0.0, (arr.B - (-2.0 * arr.A) * Lc) / np.where(arr.c > 0.0, arr.c, 1.0), 0.0)
        lam_hi = np.maximum(lam_cap.max(axis=1), 0.0) + 1.0
        lam_lo = np.zeros_like(lam_hi)
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lam_lo + lam_hi)
            usage = x_at(mid[:, None]) @ arr.c + arr.e.sum()
            too_big = usage > resource
            lam_lo = np.where(too_big, mid, lam_lo)
            lam_hi = np.where(too_big, lam_hi, mid)
        lam_mid = 0.5 * (lam_lo + lam_hi)
        x_need = x_at(lam_mid[:, None])
        x = np.where(need[:, None], x_need, x)
        lam = np.where(need, lam_mid, 0.0)

    value = np.einsum("mn,n->m", x * x, arr.A) + x @ arr.B + arr.C.sum()
    usage = x @ arr.c + arr.e.sum()
    return x, lam, value, usage, ok


def feasible_anchor_window(
    variables: Sequence[BandVariable], width: float
) -> tuple[float, float] | None:
    """Exact anchor range for which every variable can reach the band.

    Variable i is reachable iff m in [y_i(lo_i) - width, y_i(hi_i)]; the
    window is the intersection.  None when empty.
    """
    lo = max(v.metric_lo() for v in variables) - width
    hi = min(v.metric_hi() for v in variables)
    if lo > hi + _EMPTY_SLACK:
        return None
    return lo, max(hi, lo)


def solve_band_problem(
    variables: Sequence[BandVariable],
    resource: float,
    width: float,
    anchor_hi: float | None = None,
    extra_anchors: Sequence[float] = (),
    coarse: int = 257,
    refine_rounds: int = 8,
    refine_points: int = 33,
) -> BandSolution | None:
    """Maximize the banded problem; None when no anchor is feasible.

    ``anchor_hi`` optionally caps the scanned anchor range (callers pass the
    largest unconstrained-optimal metric value, above which shifting the
    band up only loses value).  Structural anchors, box corners and vertex
    metric values are always scanned exactly, then the incumbent's
    neighborhood is re-gridded ``refine_rounds`` times.
    """
    window = feasible_anchor_window(variables, width)
    if window is None:
        return None
    w_lo, w_hi = window
    if anchor_hi is not None:
        w_hi = min(w_hi, max(anchor_hi, w_lo))
    arr = _Arrays(variables)

    anchors = [w_lo, w_hi]
    anchors.extend(a for a in extra_anchors if w_lo <= a <= w_hi)
    for v in variables:
        for y in (v.metric_lo(), v.metric_hi(), v.metric_of(np.clip(
                (v.B / (-2.0 * v.A)) if v.A < 0.0 else v.lo, v.lo, v.hi))):
            for cand in (y, y - width):
                if w_lo <= cand <= w_hi:
                    anchors.append(cand)
    if w_hi > w_lo:
        anchors.extend(np.linspace(w_lo, w_hi, coarse))
    m_grid = np.unique(np.asarray(anchors, dtype=float))

    best = None  # (value, m, x, lam, usage)

    def scan(m_values: np.ndarray):
        nonlocal best
        L, H = _band_intervals(arr, m_values, width)
        x, lam, value, usage, ok = _solve_inner(arr, L, H, resource)
        if not ok.any():
            return
        value = np.where(ok, value, -np.inf)
        idx = int(np.argmax(value))
        if best is None or value[idx] > best[0]:
            best = (float(value[idx]), float(m_values[idx]), x[idx].copy(),
                    float(lam[idx]), float(usage[idx]))

    scan(m_grid)
    if best is None:
        return None

    if w_hi > w_lo:
        step = (w_hi - w_lo) / max(coarse - 1, 1)
        for _ in range(refine_rounds):
            lo = max(w_lo, best[1] - step)
            hi = min(w_hi, best[1] + step)
            if hi <= lo:
                break
            scan(np.linspace(lo, hi, refine_points))
            step = (hi - lo) / (refine_points - 1)

    value, m, x, lam, usage = best
    return BandSolution(x=tuple(float(v) for v in x), m=m, lam=lam,
                        value=value, usage=usage)
